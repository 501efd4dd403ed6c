"""Model archives: named real matrices plus a metadata record.

Binary layout: a NumPy ``.npz`` file with one array per parameter
(``mu1, mu2, U0, U1, U2, V1, V2, A1, A2``) and a ``meta`` entry holding a
UTF-8 JSON string.  Text layout: a directory containing ``<name>.csv`` for
each parameter (no header, one matrix row per line, vectors as one column)
and ``meta.json``.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .model import GasParams

FORMAT_VERSION = 1
NAMES = ("mu1", "mu2", "U0", "U1", "U2", "V1", "V2", "A1", "A2")


def _meta(meta: dict | None, params: GasParams) -> dict:
    out = {"format_version": FORMAT_VERSION, "ranks": list(params.ranks)}
    out.update(meta or {})
    return out


def save_model(path, params: GasParams, meta: dict | None = None) -> Path:
    """Write ``.npz`` when ``path`` ends in ``.npz``; otherwise a text directory."""
    path = Path(path)
    record = _meta(meta, params)
    arrays = params.as_dict()
    if path.suffix == ".npz":
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savez(path, meta=np.array(json.dumps(record)), **arrays)
        return path
    path.mkdir(parents=True, exist_ok=True)
    for name in NAMES:
        a = arrays[name]
        a2 = a[:, None] if a.ndim == 1 else a
        # keep the column count for empty-rank matrices in a header comment
        np.savetxt(path / f"{name}.csv", a2, delimiter=",", fmt="%.17g",
                   header=f"shape={a.shape[0]}x{a2.shape[1]}")
    (path / "meta.json").write_text(json.dumps(record, indent=2))
    return path


def _read_csv_matrix(file: Path, vector: bool) -> np.ndarray:
    with open(file) as fh:
        head = fh.readline()
    r, c = (int(t) for t in head.split("shape=")[1].strip().split("x"))
    if r * c == 0:
        return np.zeros(r) if vector else np.zeros((r, c))
    a = np.loadtxt(file, delimiter=",", ndmin=2)
    return a[:, 0] if vector else a.reshape(r, c)


def load_model(path) -> tuple[GasParams, dict]:
    path = Path(path)
    if path.is_file():
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            params = GasParams(**{k: z[k] for k in NAMES})
        return params, meta
    if not path.is_dir():
        raise FileNotFoundError(path)
    meta = json.loads((path / "meta.json").read_text())
    params = GasParams(**{k: _read_csv_matrix(path / f"{k}.csv", k.startswith("mu")) for k in NAMES})
    return params, meta
