"""Run manifests: one JSON sidecar per CLI invocation.

The manifest records what ran (command, argv, tool version), the fully
resolved configuration after flag / config-file / default precedence, and
SHA-256 digests of every input and output file, so a run can be audited or
reproduced from the sidecar alone.  Wall-clock duration is informational
and is the one field expected to differ between otherwise identical runs;
reproducibility comparisons therefore target the data outputs, not the
manifest file.
"""

from __future__ import annotations

import json
import os

from . import __version__
from .errors import FormatError, IoError
from .fileio import atomic_write_bytes, sha256_file

MANIFEST_SUFFIX = ".run.json"


def _digest_map(paths) -> dict[str, str]:
    out = {}
    for path in paths:
        out[os.fspath(path)] = sha256_file(path)
    return out


def write_run_manifest(path, command: str, argv: list[str], config: dict,
                       inputs, outputs, duration_seconds: float) -> dict:
    """Write the sidecar and return the document that was written."""
    doc = {
        "command": command,
        "argv": list(argv),
        "config": config,
        "inputs": _digest_map(inputs),
        "outputs": _digest_map(outputs),
        "tool_version": __version__,
        "duration_seconds": float(duration_seconds),
    }
    payload = json.dumps(doc, indent=1, sort_keys=True).encode() + b"\n"
    atomic_write_bytes(path, payload)
    return doc


def read_run_manifest(path) -> dict:
    try:
        with open(path, "rb") as f:
            doc = json.loads(f.read().decode("utf-8"))
    except FileNotFoundError as exc:
        raise IoError(f"file not found: {path}", tag="IO_NOT_FOUND") from exc
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable run manifest {path}: {exc}") from exc
    required = {"command", "argv", "config", "inputs", "outputs",
                "tool_version", "duration_seconds"}
    if not isinstance(doc, dict) or not required.issubset(doc):
        raise FormatError(f"run manifest {path} is missing required fields")
    return doc
