"""Posterior draw container with CSV and binary serialisation.

Binary layout (little-endian), version 1::

    offset 0   8 bytes   magic b"THNRDRAW"
    offset 8   uint16    format version
    offset 10  uint16    reserved (0)
    offset 12  uint32    header length H
    offset 16  H bytes   UTF-8 JSON header
    then       payload   arrays in C order, each starting on an 8-byte boundary

The header holds ``names``, ``stats`` and an ``arrays`` index of
``{"name", "dtype", "shape", "offset", "nbytes"}`` with offsets relative to
the payload start. ``draws`` is always present; latent fields follow as
``extra:<key>``.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from ..errors import ValidationError

MAGIC = b"THNRDRAW"
VERSION = 1


@dataclass
class DrawStore:
    """Constrained draws shaped ``(chains, draws, parameters)`` plus per-draw latent fields."""

    draws: np.ndarray
    names: list[str]
    stats: list[dict] = field(default_factory=list)
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        if self.draws.ndim != 3:
            raise ValidationError("draws must be (chains, draws, parameters)")
        if self.draws.shape[2] != len(self.names):
            raise ValidationError("one name per parameter column is required")
        for k, v in self.extras.items():
            if v.shape[:2] != self.draws.shape[:2]:
                raise ValidationError(f"extra {k!r} is not aligned with the draws")

    @property
    def n_chains(self) -> int:
        return self.draws.shape[0]

    @property
    def n_draws(self) -> int:
        return self.draws.shape[1]

    def column(self, name: str) -> np.ndarray:
        """``(chains, draws)`` array for one parameter."""
        try:
            return self.draws[:, :, self.names.index(name)]
        except ValueError as exc:
            raise ValidationError(f"unknown parameter {name!r}") from exc

    def pooled(self, name: str) -> np.ndarray:
        return self.column(name).reshape(-1)

    @classmethod
    def merge(cls, stores: list["DrawStore"]) -> "DrawStore":
        """Concatenate single-chain (or multi-chain) stores along the chain axis."""
        names = stores[0].names
        if any(s.names != names for s in stores):
            raise ValidationError("cannot merge stores with different parameters")
        extras = {k: np.concatenate([s.extras[k] for s in stores]) for k in stores[0].extras}
        stats = [st for s in stores for st in s.stats]
        return cls(np.concatenate([s.draws for s in stores]), list(names), stats, extras)

    # -- CSV ----------------------------------------------------------------------------

    def to_frame(self, include_extras: bool = False) -> pd.DataFrame:
        C, N, P = self.draws.shape
        chain = np.repeat(np.arange(1, C + 1), N * P)
        it = np.tile(np.repeat(np.arange(1, N + 1), P), C)
        par = np.tile(np.asarray(self.names, dtype=object), C * N)
        frames = [pd.DataFrame({"chain": chain, "iter": it, "parameter": par, "value": self.draws.reshape(-1)})]
        if include_extras:
            for key, arr in self.extras.items():
                idx = np.indices(arr.shape[2:]).reshape(arr.ndim - 2, -1).T + 1
                labels = np.array([f"{key}[{','.join(map(str, i))}]" for i in idx], dtype=object)
                K = labels.size
                frames.append(pd.DataFrame({
                    "chain": np.repeat(np.arange(1, C + 1), N * K),
                    "iter": np.tile(np.repeat(np.arange(1, N + 1), K), C),
                    "parameter": np.tile(labels, C * N),
                    "value": arr.reshape(-1).astype(float),
                }))
        return pd.concat(frames, ignore_index=True)

    def write_csv(self, path, include_extras: bool = False) -> None:
        self.to_frame(include_extras).to_csv(Path(path), index=False)

    @classmethod
    def read_csv(cls, path) -> "DrawStore":
        """Read parameter draws written by :meth:`write_csv` (latent fields are not restored)."""
        df = pd.read_csv(path)
        for col in ("chain", "iter", "parameter", "value"):
            if col not in df.columns:
                raise ValidationError(f"{path}: missing column {col!r}")
        df = df[~df["parameter"].str.contains(r"\[\d+,", regex=True)]
        names = list(dict.fromkeys(df["parameter"]))
        C, N = int(df["chain"].max()), int(df["iter"].max())
        wide = df.pivot_table(index=["chain", "iter"], columns="parameter", values="value", sort=True)
        wide = wide[names]
        if len(wide) != C * N:
            raise ValidationError(f"{path}: ragged draws")
        return cls(wide.to_numpy().reshape(C, N, len(names)), names)

    # -- binary -------------------------------------------------------------------------

    def write_binary(self, path) -> None:
        arrays = [("draws", np.ascontiguousarray(self.draws, dtype="<f8"))]
        for k, v in self.extras.items():
            dt = "<i8" if np.issubdtype(v.dtype, np.integer) else "<f8"
            arrays.append((f"extra:{k}", np.ascontiguousarray(v, dtype=dt)))
        index, offset = [], 0
        for name, arr in arrays:
            index.append({"name": name, "dtype": arr.dtype.str, "shape": list(arr.shape),
                          "offset": offset, "nbytes": arr.nbytes})
            offset += -(-arr.nbytes // 8) * 8
        header = json.dumps({"names": self.names, "stats": _jsonable(self.stats), "arrays": index}).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC + struct.pack("<HHI", VERSION, 0, len(header)) + header)
            for (_, arr), meta in zip(arrays, index):
                fh.write(arr.tobytes())
                fh.write(b"\0" * (-(-meta["nbytes"] // 8) * 8 - meta["nbytes"]))

    @classmethod
    def read_binary(cls, path) -> "DrawStore":
        raw = Path(path).read_bytes()
        if raw[:8] != MAGIC:
            raise ValidationError(f"{path}: not a draw file (bad magic)")
        version, _, hlen = struct.unpack("<HHI", raw[8:16])
        if version != VERSION:
            raise ValidationError(f"{path}: unsupported draw-file version {version}")
        header = json.loads(raw[16:16 + hlen].decode())
        base = 16 + hlen
        out = {}
        for meta in header["arrays"]:
            start = base + meta["offset"]
            buf = raw[start:start + meta["nbytes"]]
            out[meta["name"]] = np.frombuffer(buf, dtype=np.dtype(meta["dtype"])).reshape(meta["shape"]).copy()
        extras = {k.split(":", 1)[1]: v for k, v in out.items() if k.startswith("extra:")}
        return cls(out["draws"], header["names"], header.get("stats", []), extras)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj
