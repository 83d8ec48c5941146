"""
Setup script for the federated embedding simulator
"""
import os
import shutil
import subprocess
import sys
from pathlib import Path

MODULES = [
    'tensor_ops',
    'corpus_builder',
    'embedding_engine',
    'homomorphic',
    'federated_engine',
    'retrieval_engine',
    'text_metrics',
    'run_config',
    'main_fedembed',
]


def install_requirements():
    """Install required packages"""
    print("📦 Installing required packages...")

    try:
        subprocess.check_call([sys.executable, "-m", "pip", "install", "-r", "requirements.txt"])
        print("✅ All packages installed successfully!")
        return True
    except subprocess.CalledProcessError as e:
        print(f"❌ Error installing packages: {e}")
        print("   gmpy2 needs the GMP/MPFR libraries on some platforms (e.g. apt install libgmp-dev libmpfr-dev libmpc-dev)")
        return False


def create_directories():
    """Create the default output directory"""
    print("📁 Creating directories...")
    output_dir = os.getenv('FEDEMBED_OUTPUT_DIR', 'runs')
    Path(output_dir).mkdir(exist_ok=True)
    print(f"  ✓ Created {output_dir}/")


def setup_environment():
    """Copy .env.example to .env unless one exists"""
    print("🔧 Setting up environment...")

    if os.path.exists('.env'):
        print("  ✓ .env file already exists")
    elif os.path.exists('.env.example'):
        shutil.copy('.env.example', '.env')
        print("  ✓ Created .env file from template")
    else:
        print("  ⚠️  No .env.example found; built-in defaults will be used")


def test_imports():
    """Test if all modules can be imported"""
    print("🧪 Testing module imports...")

    failed_imports = []
    for module in MODULES:
        try:
            __import__(module)
            print(f"  ✓ {module}")
        except ImportError as e:
            print(f"  ❌ {module}: {e}")
            failed_imports.append(module)

    if failed_imports:
        print(f"❌ Failed to import: {', '.join(failed_imports)}")
        return False
    print("✅ All modules imported successfully!")
    return True


def display_usage_instructions():
    print("\n" + "=" * 60)
    print("🎉 SETUP COMPLETE!")
    print("=" * 60)
    print()
    print("📋 NEXT STEPS:")
    print("1. Generate the synthetic dataset:")
    print("   python main_fedembed.py gen --out runs/data")
    print()
    print("2. Train the strategies you want to compare:")
    print("   python main_fedembed.py train --data runs/data --mode vanilla")
    print("   python main_fedembed.py train --data runs/data --mode fedavg")
    print("   python main_fedembed.py train --data runs/data --mode fede4rag")
    print()
    print("3. Evaluate and compare:")
    print("   python main_fedembed.py eval-retrieval --checkpoint runs/fede4rag/final_params.json --data runs/data")
    print("   python main_fedembed.py compare runs/fedavg/report.json runs/fede4rag/report.json")
    print()
    print("4. Run the tests:")
    print("   pytest -m 'not slow'")


def main():
    print("🚀 Setting up the federated embedding simulator...")
    print()

    create_directories()
    print()

    if not install_requirements():
        print("❌ Setup failed at package installation")
        return False
    print()

    setup_environment()
    print()

    if not test_imports():
        print("❌ Setup failed at import testing")
        return False

    display_usage_instructions()
    return True


if __name__ == "__main__":
    success = main()
    if not success:
        sys.exit(1)
