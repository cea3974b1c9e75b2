"""CSV and JSON serialization for sequences, kernels and affine CLMs.

Formats
-------
Sequence CSV
    Header ``t,<name>0,<name>1,...`` followed by one row per time step.
Kernel CSV
    A first comment line ``# out_dim=..,in_dim=..,horizon=..,fir_horizon=..``
    (``fir_horizon=none`` when unbounded), a header ``t,k,b0,b1,...`` and one
    row per stored block holding ``t``, ``k`` and the block flattened in
    row-major order.
Affine CLM directory
    ``clm.json`` with the dimensions and horizons, ``R.csv`` and ``M.csv``
    kernels, and optional ``r.csv`` and ``m.csv`` offset sequences.

Floats are written with 17 significant digits so files round-trip exactly.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import numpy as np

from .operators import LinearCausalKernel, Sequence

_FMT = "%.17g"


def _fmt(x: float) -> str:
    return _FMT % x


def write_sequence_csv(seq: Sequence, path, name: str = "v") -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t"] + [f"{name}{i}" for i in range(seq.dim)])
        for t, row in enumerate(seq.values):
            writer.writerow([t] + [_fmt(v) for v in row])
    return path


def read_sequence_csv(path) -> Sequence:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if len(rows) < 2:
        raise ValueError(f"{path}: no data rows")
    data = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return Sequence(data)


def write_columns_csv(path, columns: dict) -> Path:
    """Write named sequences side by side with a shared ``t`` column.

    Each entry maps a group name to a :class:`Sequence`; column headers are
    ``<group>_<index>``.
    """
    path = Path(path)
    seqs = list(columns.items())
    horizon = seqs[0][1].horizon
    header = ["t"]
    for name, seq in seqs:
        if seq.horizon != horizon:
            raise ValueError("all column groups must share the horizon")
        header += [f"{name}_{i}" for i in range(seq.dim)]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for t in range(horizon + 1):
            row = [t]
            for _, seq in seqs:
                row += [_fmt(v) for v in seq.values[t]]
            writer.writerow(row)
    return path


def read_columns_csv(path) -> dict:
    """Inverse of :func:`write_columns_csv`."""
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], np.array([[float(v) for v in r] for r in rows[1:]])
    groups: dict = {}
    for j, col in enumerate(header[1:], start=1):
        name, _, _ = col.rpartition("_")
        groups.setdefault(name, []).append(j)
    return {name: Sequence(body[:, idx]) for name, idx in groups.items()}


def write_kernel_csv(kernel: LinearCausalKernel, path) -> Path:
    path = Path(path)
    fir = "none" if kernel.fir_horizon is None else str(kernel.fir_horizon)
    with path.open("w", newline="") as fh:
        fh.write(
            f"# out_dim={kernel.out_dim},in_dim={kernel.in_dim},"
            f"horizon={kernel.horizon},fir_horizon={fir}\n"
        )
        writer = csv.writer(fh, lineterminator="\n")
        nb = kernel.out_dim * kernel.in_dim
        writer.writerow(["t", "k"] + [f"b{i}" for i in range(nb)])
        for t in range(kernel.horizon + 1):
            for k in range(1, min(t + 1, kernel.num_blocks) + 1):
                block = kernel.blocks[t, k - 1].ravel()
                writer.writerow([t, k] + [_fmt(v) for v in block])
    return path


def read_kernel_csv(path, identity_leading: bool = False) -> LinearCausalKernel:
    path = Path(path)
    with path.open(newline="") as fh:
        first = fh.readline().strip()
        if not first.startswith("#"):
            raise ValueError(f"{path}: missing kernel metadata line")
        meta = dict(item.split("=") for item in first[1:].strip().split(","))
        rows = list(csv.reader(fh))[1:]
    out_dim, in_dim = int(meta["out_dim"]), int(meta["in_dim"])
    horizon = int(meta["horizon"])
    fir = None if meta["fir_horizon"] == "none" else int(meta["fir_horizon"])
    cap = horizon + 1 if fir is None else min(horizon + 1, fir)
    blocks = np.zeros((horizon + 1, cap, out_dim, in_dim))
    for r in rows:
        if not r:
            continue
        t, k = int(r[0]), int(r[1])
        blocks[t, k - 1] = np.array([float(v) for v in r[2:]]).reshape(out_dim, in_dim)
    return LinearCausalKernel(blocks, fir, identity_leading=identity_leading)


def save_affine_clm(clm, directory, extra: Optional[dict] = None) -> list:
    """Write an :class:`~nlsls.clm.AffineClm` to ``directory``.

    Returns the list of written paths.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    header = {
        "n": clm.n,
        "m": clm.m,
        "horizon": clm.horizon,
        "fir_horizon": clm.fir_horizon,
        "has_r": clm.r_offset is not None,
        "has_m": clm.m_offset is not None,
    }
    if extra:
        header.update(extra)
    written = [directory / "clm.json"]
    written[0].write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    written.append(write_kernel_csv(clm.R, directory / "R.csv"))
    written.append(write_kernel_csv(clm.M, directory / "M.csv"))
    if clm.r_offset is not None:
        written.append(write_sequence_csv(clm.r_offset, directory / "r.csv", "r"))
    if clm.m_offset is not None:
        written.append(write_sequence_csv(clm.m_offset, directory / "m.csv", "m"))
    return written


def load_affine_clm(directory):
    from .clm import AffineClm

    directory = Path(directory)
    header = json.loads((directory / "clm.json").read_text())
    R = read_kernel_csv(directory / "R.csv")
    M = read_kernel_csv(directory / "M.csv")
    r = read_sequence_csv(directory / "r.csv") if header.get("has_r") else None
    m = read_sequence_csv(directory / "m.csv") if header.get("has_m") else None
    return AffineClm(R, M, r, m)


__all__ = [
    "load_affine_clm",
    "read_columns_csv",
    "read_kernel_csv",
    "read_sequence_csv",
    "save_affine_clm",
    "write_columns_csv",
    "write_kernel_csv",
    "write_sequence_csv",
]
