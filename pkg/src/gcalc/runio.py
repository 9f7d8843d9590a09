"""Deterministic result emission: canonical config hashing and CSV/JSON
writers that embed the hash and seed, so identical (config, seed) runs
produce byte-identical files."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from . import __version__


def config_hash(obj) -> str:
    """sha256 of the canonical JSON encoding (sorted keys, no whitespace)."""
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(blob.encode()).hexdigest()


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    raise TypeError(f"not JSON-serializable: {type(v)}")


def standard_comments(cfg_hash: str, seed) -> list:
    return [f"config_hash={cfg_hash}", f"seed={seed}", f"artifact_version={__version__}"]


def write_table(target, header, rows, comments=()) -> None:
    """CSV with '#'-prefixed comment lines before the header row."""
    close = False
    if isinstance(target, (str, Path)):
        fh = open(target, "w", newline="")
        close = True
    else:
        fh = target
    try:
        for line in comments:
            fh.write(f"# {line}\n")
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_format(v) for v in row) + "\n")
    finally:
        if close:
            fh.close()


def _format(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{float(v):.17g}"


def write_json(target, obj, comments=None) -> None:
    doc = dict(obj)
    if comments:
        doc = {"meta": comments, **doc}
    text = json.dumps(doc, indent=2, default=_jsonable) + "\n"
    if isinstance(target, (str, Path)):
        Path(target).write_text(text)
    else:
        target.write(text)
