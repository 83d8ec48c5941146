"""
Federated Embedding Simulator - command line entry point

    python main_fedembed.py gen            --config run.json --out data/
    python main_fedembed.py train          --data data/ --mode fede4rag --out runs/fede4rag
    python main_fedembed.py eval-retrieval --checkpoint runs/fede4rag/final_params.json --data data/
    python main_fedembed.py eval-text      answers.jsonl --out runs/gen
    python main_fedembed.py compare        runs/fedavg/report.json runs/fede4rag/report.json
    python main_fedembed.py sweep          --data data/ --out runs/sweep

Exit codes: 0 success, 2 config, 3 I/O, 4 numeric, 5 data integrity.
"""
import argparse
import csv
import dataclasses
import io
import logging
import os
import sys
from typing import Dict, List, Optional, Sequence

from rich.console import Console
from rich.panel import Panel
from rich.table import Table

from config import *
from corpus_builder import dataset_files, generate, load_dataset, load_eval, partition_report, save_dataset
from embedding_engine import FeatureExtractor, ModelParams
from errors import ConfigError, FedEmbedError
from federated_engine import EvalSet, FederatedSimulator, build_clients
from jsonl_store import ensure_dir, file_manifest, write_json, write_text
from retrieval_engine import build_index, evaluate, load_report
from run_config import RunConfig, load_run_config
from text_metrics import evaluate_text, load_answers

console = Console()
logger = logging.getLogger(__name__)


def write_manifest(out_dir: str, command: str, run_config: Optional[RunConfig], paths: List[str],
                   dataset: Optional[Dict[str, str]] = None) -> str:
    """manifest.json: the command, input hashes, SHA-256 of every output and the resolved config"""
    manifest = {"command": command}
    if dataset is not None:
        manifest["dataset"] = dataset
    manifest["files"] = file_manifest(paths, out_dir)
    if run_config is not None:
        manifest["config"] = run_config.to_dict()
    path = os.path.join(out_dir, MANIFEST_FILE)
    write_json(path, manifest)
    return path


def cmd_gen(run_config: RunConfig, out_dir: str) -> List[str]:
    """Generate the synthetic dataset into out_dir"""
    pairs, eval_queries, corpus = generate(run_config.corpus)
    ensure_dir(out_dir)
    written = save_dataset(out_dir, pairs, eval_queries, corpus)
    write_manifest(out_dir, "gen", run_config, written)

    partition_report(pairs).display()
    console.print(f"[green]✅ {len(pairs)} training pairs, {len(eval_queries)} eval queries, "
                  f"{len(corpus)} corpus chunks written to {out_dir}[/green]")
    return written


def _extractor(run_config: RunConfig, d_in: Optional[int] = None) -> FeatureExtractor:
    return FeatureExtractor(d_in or run_config.fed.d_in, run_config.fed.hash_seed)


def cmd_train(run_config: RunConfig, data_dir: str, out_dir: str, quiet: bool = False) -> ModelParams:
    """Train one strategy on the dataset in data_dir; write params, round log and manifest

    The manifest is written before the first round with the dataset hashes
    and config, then rewritten with the output hashes once training ends.
    """
    cfg = run_config.fed
    pairs, eval_queries, corpus = load_dataset(data_dir)
    dataset = file_manifest(dataset_files(data_dir), data_dir)
    clients = build_clients(pairs, _extractor(run_config))
    eval_set = EvalSet(eval_queries, corpus)

    ensure_dir(out_dir)
    simulator = FederatedSimulator(cfg, clients, eval_set, run_config.he, out_dir=out_dir, quiet=quiet)
    write_manifest(out_dir, "train", run_config, [], dataset)
    params, records = simulator.run()

    final_path = os.path.join(out_dir, FINAL_PARAMS_FILE)
    params.save(final_path)
    written = [final_path]
    for client_id, local in sorted(simulator.local_models.items()):
        path = os.path.join(out_dir, CLIENT_MODEL_DIR, f"client_{client_id}.json")
        local.save(path)
        written.append(path)
    if records:
        written.append(os.path.join(out_dir, ROUND_LOG_FILE))
        written.extend(os.path.join(out_dir, CHECKPOINT_DIR, f"round_{r.round}.json") for r in records)
    write_manifest(out_dir, "train", run_config, written, dataset)

    if not quiet and records:
        simulator.display_summary()
    console.print(f"[green]✅ {cfg.mode} model written to {final_path}[/green]")
    return params


def cmd_eval_retrieval(run_config: RunConfig, checkpoint: str, data_dir: str, out_dir: str,
                       run_name: Optional[str] = None):
    """Evaluate a checkpoint on eval.jsonl / corpus.jsonl; write JSON and CSV reports"""
    params = ModelParams.load(checkpoint)
    eval_queries, corpus = load_eval(os.path.join(data_dir, EVAL_FILE), os.path.join(data_dir, CORPUS_FILE))
    extractor = _extractor(run_config, params.d_in)

    index = build_index(params, extractor, corpus)
    settings = run_config.eval
    report = evaluate(index, params, extractor, eval_queries, settings.ks, settings.theta, settings.acc_mode)

    run_name = run_name or os.path.basename(os.path.dirname(os.path.abspath(checkpoint)))
    json_path = os.path.join(out_dir, REPORT_JSON_FILE)
    csv_path = os.path.join(out_dir, REPORT_CSV_FILE)
    write_text(json_path, report.to_json(settings.percent))
    write_text(csv_path, report.to_csv(run_name, settings.percent))

    report.display(f"Retrieval Metrics ({run_name})", settings.percent)
    return report


def cmd_eval_text(answers_path: str, out_dir: str, percent: bool = False):
    report = evaluate_text(load_answers(answers_path))
    path = os.path.join(out_dir, GEN_REPORT_FILE)
    write_text(path, report.to_json(percent))
    report.display(percent)
    return report


def _run_names(paths: Sequence[str]) -> List[str]:
    names = []
    for path in paths:
        name = os.path.basename(os.path.dirname(os.path.abspath(path))) or os.path.splitext(os.path.basename(path))[0]
        if name in names:
            name = f"{name}_{len(names)}"
        names.append(name)
    return names


def cmd_compare(report_paths: Sequence[str], out_path: str, names: Optional[Sequence[str]] = None) -> str:
    """Side-by-side CSV: one row per metric, one column per run"""
    if len(report_paths) < 2:
        raise ConfigError("compare needs at least two reports")
    names = list(names) if names else _run_names(report_paths)
    if len(names) != len(report_paths):
        raise ConfigError(f"{len(names)} run names for {len(report_paths)} reports")

    reports = [load_report(p) for p in report_paths]
    metrics = list(reports[0])
    for path, report in zip(report_paths[1:], reports[1:]):
        if set(report) != set(metrics):
            differing = sorted(set(report) ^ set(metrics))
            raise ConfigError(f"{path}: metric set differs from {report_paths[0]} ({', '.join(differing)})")

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["metric"] + names)
    for metric in metrics:
        writer.writerow([metric] + [repr(r[metric]) for r in reports])
    write_text(out_path, buffer.getvalue())

    table = Table(title="⚖️ Run Comparison")
    table.add_column("Metric", style="cyan")
    for name in names:
        table.add_column(name, style="green")
    for metric in metrics:
        table.add_row(metric, *[f"{r[metric]:.4f}" for r in reports])
    console.print(table)
    return out_path


def cmd_sweep(run_config: RunConfig, data_dir: str, out_dir: str,
              rounds_grid: Sequence[int] = tuple(SWEEP_ROUNDS),
              batch_grid: Sequence[int] = tuple(SWEEP_BATCH_SIZES)) -> str:
    """Retrieval metrics over a rounds x batch-size grid, one CSV row per metric"""
    pairs, eval_queries, corpus = load_dataset(data_dir)
    extractor = _extractor(run_config)
    clients = build_clients(pairs, extractor)
    settings = run_config.eval

    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["rounds", "batch_size", "metric", "value"])
    for rounds in rounds_grid:
        for batch_size in batch_grid:
            cfg = dataclasses.replace(run_config.fed, rounds=rounds, batch_size=batch_size)
            console.print(f"[blue]🔬 Sweep point: rounds={rounds} batch_size={batch_size}[/blue]")
            params, _ = FederatedSimulator(cfg, clients, he_params=run_config.he, quiet=True).run()
            index = build_index(params, extractor, corpus)
            report = evaluate(index, params, extractor, eval_queries, settings.ks, settings.theta, settings.acc_mode)
            for metric, value in report.scaled(settings.percent).items():
                writer.writerow([rounds, batch_size, metric, repr(value)])

    path = os.path.join(out_dir, SWEEP_FILE)
    write_text(path, buffer.getvalue())
    write_manifest(out_dir, "sweep", run_config, [path])
    console.print(f"[green]✅ Sweep written to {path}[/green]")
    return path


def _int_or_selector(value: str):
    if value in ("max", "min"):
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, 'max' or 'min', got {value!r}")


def _int_list(value: str) -> List[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {value!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="main_fedembed.py",
        description="Federated embedding learning simulator with encrypted aggregation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration JSON")
    common.add_argument("--seed", type=int, help="seed for corpus generation and training")

    training = argparse.ArgumentParser(add_help=False)
    training.add_argument("--data", required=True, help="dataset directory written by gen")
    training.add_argument("--mode", help=f"one of {', '.join(TRAINING_MODES)}")
    training.add_argument("--rounds", type=int)
    training.add_argument("--client-id", type=_int_or_selector,
                          help="independent mode: client id, 'max' or 'min'")
    he_group = training.add_mutually_exclusive_group()
    he_group.add_argument("--no-he", dest="he_enabled", action="store_false", default=None,
                          help="plaintext aggregation")
    he_group.add_argument("--he", dest="he_enabled", action="store_true", default=None,
                          help="encrypted aggregation (fede4rag default)")

    reporting = argparse.ArgumentParser(add_help=False)
    reporting.add_argument("--percent", action="store_true", default=None, help="scale metrics to 0-100")
    reporting.add_argument("--acc-theta", type=float, dest="theta", help="similarity threshold for acc@k")
    reporting.add_argument("--acc-mode", help=f"one of {', '.join(ACC_MODES)}")

    gen = sub.add_parser("gen", parents=[common], help="generate the synthetic dataset")
    gen.add_argument("--out", default=os.path.join(OUTPUT_DIR, "data"))

    train = sub.add_parser("train", parents=[common, training], help="train one strategy")
    train.add_argument("--out", help="run directory (default: <output dir>/<mode>)")
    train.add_argument("--quiet", action="store_true", help="no per-round output")

    ev = sub.add_parser("eval-retrieval", parents=[common, reporting], help="retrieval metrics of a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True, help="directory holding eval.jsonl and corpus.jsonl")
    ev.add_argument("--out", help="report directory (default: the checkpoint's directory)")
    ev.add_argument("--name", help="run name in the CSV report")

    text = sub.add_parser("eval-text", help="generation metrics of an answers file")
    text.add_argument("answers")
    text.add_argument("--out", default=".")
    text.add_argument("--percent", action="store_true")

    compare = sub.add_parser("compare", help="side-by-side CSV of retrieval reports")
    compare.add_argument("reports", nargs="+")
    compare.add_argument("--out", default=os.path.join(OUTPUT_DIR, COMPARE_FILE))
    compare.add_argument("--names", help="comma-separated run names")

    sweep = sub.add_parser("sweep", parents=[common, training, reporting], help="rounds x batch-size grid")
    sweep.add_argument("--out", default=os.path.join(OUTPUT_DIR, "sweep"))
    sweep.add_argument("--rounds-grid", type=_int_list, default=list(SWEEP_ROUNDS))
    sweep.add_argument("--batch-grid", type=_int_list, default=list(SWEEP_BATCH_SIZES))
    return parser


def _resolve(args) -> RunConfig:
    overrides = {"seed": getattr(args, "seed", None)}
    for key in ("mode", "rounds", "he_enabled", "client_id", "theta", "acc_mode", "percent"):
        overrides[key] = getattr(args, key, None)
    return load_run_config(getattr(args, "config", None)).with_overrides(**overrides)


def dispatch(args) -> int:
    if args.command == "gen":
        cmd_gen(_resolve(args), args.out)
    elif args.command == "train":
        run_config = _resolve(args)
        out_dir = args.out or os.path.join(OUTPUT_DIR, run_config.fed.mode)
        cmd_train(run_config, args.data, out_dir, quiet=args.quiet)
    elif args.command == "eval-retrieval":
        out_dir = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
        cmd_eval_retrieval(_resolve(args), args.checkpoint, args.data, out_dir, args.name)
    elif args.command == "eval-text":
        cmd_eval_text(args.answers, args.out, args.percent)
    elif args.command == "compare":
        names = [n.strip() for n in args.names.split(",")] if args.names else None
        cmd_compare(args.reports, args.out, names)
    elif args.command == "sweep":
        cmd_sweep(_resolve(args), args.data, args.out, args.rounds_grid, args.batch_grid)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Run one command; returns the process exit code"""
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        return dispatch(args)
    except FedEmbedError as e:
        console.print(Panel(f"[red]{type(e).__name__}: {e}[/red]", title="❌ Error", expand=False))
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
