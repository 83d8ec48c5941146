"""
JSON / JSONL persistence helpers
Every file the simulator writes is UTF-8 with "\n" line endings.
"""
import hashlib
import json
import os
from typing import Any, Dict, Iterable, Iterator, List, Tuple

from errors import DataIOError, ParseError, SchemaError


def ensure_dir(path: str):
    """Create a directory (and parents), mapping OS failures to DataIOError"""
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"cannot create directory {path}: {e}") from e


def dump_line(record: Dict[str, Any]) -> str:
    return json.dumps(record, ensure_ascii=False)


def write_jsonl(path: str, records: Iterable[Dict[str, Any]]):
    parent = os.path.dirname(path)
    if parent:
        ensure_dir(parent)
    try:
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            for record in records:
                f.write(dump_line(record) + "\n")
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e


def append_jsonl(path: str, record: Dict[str, Any]):
    try:
        with open(path, 'a', encoding='utf-8', newline='\n') as f:
            f.write(dump_line(record) + "\n")
    except OSError as e:
        raise DataIOError(f"cannot append to {path}: {e}") from e


def _read_text(path: str) -> str:
    """Whole file as UTF-8; bad bytes become a ParseError at their line"""
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e}") from e
    try:
        return raw.decode('utf-8')
    except UnicodeDecodeError as e:
        raise ParseError(path, raw.count(b"\n", 0, e.start) + 1, f"invalid UTF-8 at byte {e.start}") from e


def read_jsonl(path: str) -> Iterator[Tuple[int, Dict[str, Any]]]:
    """Yield (line_number, record) pairs; blank lines are skipped"""
    if not os.path.exists(path):
        raise DataIOError(f"file not found: {path}")
    lines = _read_text(path).split("\n")

    for line_no, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(path, line_no, f"invalid JSON ({e.msg})") from e
        if not isinstance(record, dict):
            raise ParseError(path, line_no, "expected a JSON object")
        yield line_no, record


def require_field(record: Dict[str, Any], field: str, kind: type, path: str, line_no: int):
    """Fetch a typed field or raise SchemaError naming it"""
    if field not in record:
        raise SchemaError(path, line_no, field)
    value = record[field]
    if kind is int and isinstance(value, bool):
        raise SchemaError(path, line_no, field, "expected int for")
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if not isinstance(value, kind):
        raise SchemaError(path, line_no, field, f"expected {kind.__name__} for")
    return value


def write_json(path: str, data: Any, indent: int = 2):
    parent = os.path.dirname(path)
    if parent:
        ensure_dir(parent)
    try:
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            json.dump(data, f, indent=indent, ensure_ascii=False)
            f.write("\n")
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e


def write_text(path: str, text: str):
    parent = os.path.dirname(path)
    if parent:
        ensure_dir(parent)
    try:
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            f.write(text)
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e


def read_json(path: str) -> Any:
    if not os.path.exists(path):
        raise DataIOError(f"file not found: {path}")
    text = _read_text(path)
    try:
        return json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(path, e.lineno, f"invalid JSON ({e.msg})") from e


def sha256_file(path: str) -> str:
    digest = hashlib.sha256()
    try:
        with open(path, 'rb') as f:
            for block in iter(lambda: f.read(1 << 16), b''):
                digest.update(block)
    except OSError as e:
        raise DataIOError(f"cannot hash {path}: {e}") from e
    return digest.hexdigest()


def file_manifest(paths: List[str], root: str) -> Dict[str, str]:
    """Map each path (relative to root) to its SHA-256"""
    return {os.path.relpath(p, root).replace(os.sep, '/'): sha256_file(p) for p in sorted(paths)}
