"""Run directories, manifests and data export.

Every float is written with 17 significant digits so files round-trip
exactly. A run lives in ``<root>/<kind>-<id>`` where the id is a hash of the
resolved configuration, so identical configs map to the same directory.
"""
from __future__ import annotations

import csv
import hashlib
import math
import os
from pathlib import Path

import numpy as np

from .errors import ConfigError

ENV_OUT = "SOLITON_LAB_OUT"
DEFAULT_ROOT = "runs"


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _float(float(v))
    return str(v)


def _float(x: float) -> str:
    s = format(x, ".17g")
    if s.lstrip("-").isdigit():
        s += ".0"
    return s


def _json(obj, indent: int = 0) -> str:
    pad, inner = "  " * indent, "  " * (indent + 1)
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "NaN"
        if math.isinf(x):
            return "Infinity" if x > 0 else "-Infinity"
        return _float(x)
    if isinstance(obj, str):
        import json
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{_json(str(k))}: {_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(_json(v) for v in seq) + "]"
        return "[\n" + ",\n".join(inner + _json(v, indent + 1) for v in seq) + "\n" + pad + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj) -> str:
    return _json(obj) + "\n"


def run_id(kind: str, config: dict) -> str:
    return hashlib.sha1((kind + "\n" + dumps(config)).encode()).hexdigest()[:12]


def output_root(out: str | None = None) -> Path:
    return Path(out or os.environ.get(ENV_OUT) or DEFAULT_ROOT)


class RunDir:
    """A run directory. Files can only be written directly inside it."""

    def __init__(self, root, kind: str, config: dict):
        self.kind = kind
        self.config = config
        self.id = run_id(kind, config)
        self.path = Path(root) / f"{kind}-{self.id}"

    def file(self, name: str) -> Path:
        if Path(name).name != name or name in ("", ".", ".."):
            raise ConfigError(f"refusing to write outside the run directory: {name!r}")
        self.path.mkdir(parents=True, exist_ok=True)
        return self.path / name

    def write_json(self, name: str, obj) -> Path:
        p = self.file(name)
        p.write_text(dumps(obj))
        return p

    def write_csv(self, name: str, rows: list[dict]) -> Path:
        keys: list[str] = []
        for r in rows:
            keys += [k for k in r if k not in keys]
        p = self.file(name)
        with p.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(keys)
            for r in rows:
                w.writerow([fmt(r[k]) if k in r else "" for k in keys])
        return p

    def write_columns(self, name: str, columns: dict) -> Path:
        n = len(next(iter(columns.values())))
        rows = [{k: v[i] for k, v in columns.items()} for i in range(n)]
        return self.write_csv(name, rows)

    def write_manifest(self, overrides: list[str], outputs: list[str], summary: dict | None = None):
        from . import __version__
        return self.write_json("manifest.json", {
            "kind": self.kind, "id": self.id, "version": __version__,
            "config": self.config, "overrides": overrides, "outputs": sorted(outputs),
            "summary": summary or {},
        })


def read_csv(path) -> list[dict]:
    with Path(path).open() as fh:
        return [{k: _parse(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def _parse(s: str):
    try:
        return int(s)
    except ValueError:
        pass
    try:
        return float(s)
    except ValueError:
        return s
