"""
Loading and saving pipeline artifacts: versioned JSON, JSONL datasets and
CSV tables. Writers are byte-stable (sorted keys, fixed float formatting).
"""
from __future__ import annotations

import hashlib
import json
import os
from typing import Any, Iterable, Iterator

import pandas as pd

from .errors import DataError

FORMAT_VERSION = 1
CSV_FLOAT_FORMAT = "%.6g"

# --------------------------------------------------------------------
# PATH CONFIGURATION
# --------------------------------------------------------------------
CURRENT_DIR = os.path.dirname(os.path.abspath(__file__))
PROJECT_ROOT = os.path.abspath(os.path.join(CURRENT_DIR, os.pardir, os.pardir))
DEFAULT_CONFIG_PATH = os.path.join(PROJECT_ROOT, "config", "default.ini")


def _dumps(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def ensure_dir(path: str) -> str:
    os.makedirs(path, exist_ok=True)
    return path


# --------------------------------------------------------------------
# JSON
# --------------------------------------------------------------------
def save_json(path: str, payload: dict, kind: str) -> None:
    """Write a versioned JSON document tagged with ``kind``."""
    doc = {"format_version": FORMAT_VERSION, "kind": kind, **payload}
    ensure_dir(os.path.dirname(os.path.abspath(path)))
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(_dumps(doc))
        f.write("\n")


def load_json(path: str, kind: str) -> dict:
    """Read a versioned JSON document and check its kind and version."""
    if not os.path.exists(path):
        raise DataError(f"{kind} file not found at {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise DataError(f"{path}: invalid JSON ({e})") from e
    if doc.get("kind") != kind:
        raise DataError(f"{path}: expected kind {kind!r}, found {doc.get('kind')!r}")
    if doc.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported format_version {doc.get('format_version')!r}")
    return doc


# --------------------------------------------------------------------
# JSONL
# --------------------------------------------------------------------
def save_jsonl(path: str, rows: Iterable[dict]) -> int:
    ensure_dir(os.path.dirname(os.path.abspath(path)))
    n = 0
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        for row in rows:
            f.write(_dumps(row))
            f.write("\n")
            n += 1
    return n


def iter_jsonl(path: str) -> Iterator[dict]:
    if not os.path.exists(path):
        raise DataError(f"dataset not found at {path}")
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e})") from e


def load_jsonl(path: str) -> list[dict]:
    return list(iter_jsonl(path))


# --------------------------------------------------------------------
# CSV
# --------------------------------------------------------------------
def save_csv(path: str, df: pd.DataFrame) -> None:
    ensure_dir(os.path.dirname(os.path.abspath(path)))
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")


def load_csv(path: str, required: Iterable[str] = ()) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DataError(f"table not found at {path}")
    df = pd.read_csv(path)
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    return df


def file_fingerprint(path: str) -> str:
    """SHA-256 of a file's bytes, used to tie checkpoints to their data."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def payload_fingerprint(obj: Any) -> str:
    return hashlib.sha256(_dumps(obj).encode("utf-8")).hexdigest()
