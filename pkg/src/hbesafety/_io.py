"""File plumbing: atomic writes, CSV emission, content hashes, run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Sequence

from . import __version__


def fmt_float(x: float) -> str:
    # shortest repr round-trips exactly through float()
    return repr(float(x))


def atomic_write_text(path, text: str) -> Path:
    """Write ``text`` to ``path`` via a sibling temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def csv_text(header: Sequence[str], rows: Iterable[Sequence[object]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence[object]]) -> Path:
    return atomic_write_text(path, csv_text(header, rows))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(command: str, inputs: dict[str, str | os.PathLike], config: dict) -> dict:
    """Audit record: tool version, command, input paths with content hashes, config."""
    return {
        "tool": "hbesafety",
        "version": __version__,
        "command": command,
        "inputs": {
            role: {"path": str(p), "sha256": sha256_file(p)} for role, p in sorted(inputs.items())
        },
        "config": config,
    }


def write_manifest(path, manifest: dict) -> Path:
    return atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
