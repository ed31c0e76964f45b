"""Config hashing and run logs.

Artifacts embed the hash of the semantic configuration that produced them
(plus the seed), never wall-clock times, so reruns are byte-comparable.
Timing and input digests go into a sidecar run log instead.
"""

from __future__ import annotations

import hashlib
import json
import platform
import sys

import numpy as np

RUNLOG_FORMAT_VERSION = "1"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_hash(params: dict) -> str:
    """Hex digest of the semantic parameters of a run.

    Callers must exclude anything that may legitimately differ between
    equivalent runs: output paths, worker counts, timestamps.
    """
    return hashlib.sha256(canonical_json(params).encode("utf-8")).hexdigest()[:16]


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict:
    from . import __version__

    return {
        "package": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
    }


def write_run_log(path, command: str, params: dict, seed: int | None,
                  inputs: dict[str, str], outputs: list[str],
                  runtime_s: float, notes: list[str] | None = None) -> None:
    """Machine-readable record of one command invocation.

    ``inputs`` maps role names to file paths; each file is hashed here.
    """
    obj = {
        "format_version": RUNLOG_FORMAT_VERSION,
        "command": command,
        "config_hash": config_hash(params),
        "params": params,
        "seed": seed,
        "inputs": {name: {"path": str(p), "sha256": file_sha256(p)}
                   for name, p in inputs.items()},
        "outputs": [str(p) for p in outputs],
        "runtime_s": round(runtime_s, 3),
        "versions": versions(),
    }
    if notes:
        obj["notes"] = notes
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")
