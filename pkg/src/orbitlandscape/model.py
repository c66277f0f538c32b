"""Synthetic orbit observations ``Y = g theta_star + sigma eps`` and dataset files.

Random numbers come from the Philox4x64-10 counter-based generator keyed by
``(seed, stream)``.  Uniform doubles are the top 53 bits of each 64-bit output
(numpy's documented ``random()`` conversion) and normals are produced by the
Box-Muller transform, so every stream is reproducible from its key alone.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence, Union

import numpy as np

from .groups import GroupAction

DATA_STREAM = 0
NOISE_STREAM = 1
START_STREAM_BASE = 1 << 32

BIN_MAGIC = b"ORBDATA1"
_HEADER = struct.Struct("<8sQQdQ")


class DatasetError(ValueError):
    """Raised for invalid dataset parameters or malformed dataset files."""


def philox(seed: int, stream: int = 0) -> np.random.Generator:
    """Counter-based generator for the given ``(seed, stream)`` key."""
    key = np.array([seed % (1 << 64), stream % (1 << 64)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def box_muller(u1: np.ndarray, u2: np.ndarray) -> np.ndarray:
    """Map two uniform arrays in ``[0, 1)`` to an array of twice as many normals."""
    radius = np.sqrt(-2.0 * np.log1p(-u1))
    angle = 2.0 * np.pi * u2
    return np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=-1)


def standard_normals(seed: int, stream: int, shape: tuple[int, ...]) -> np.ndarray:
    """Standard normal array drawn via Box-Muller from one Philox stream."""
    count = int(np.prod(shape))
    u = philox(seed, stream).random(2 * ((count + 1) // 2)).reshape(-1, 2)
    return box_muller(u[:, 0], u[:, 1]).reshape(-1)[:count].reshape(shape)


@dataclass(frozen=True)
class HLaw:
    """Law of the latent group element: ``uniform``, ``fixed`` or ``weights``."""

    kind: str = "uniform"
    index: int = 0
    weights: tuple[float, ...] = ()

    def probabilities(self, K: int) -> np.ndarray:
        if self.kind == "uniform":
            return np.full(K, 1.0 / K)
        if self.kind == "fixed":
            if not 0 <= self.index < K:
                raise DatasetError(f"fixed element index {self.index} outside 0..{K - 1}")
            p = np.zeros(K)
            p[self.index] = 1.0
            return p
        if self.kind == "weights":
            p = np.asarray(self.weights, dtype=float)
            if p.shape != (K,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
                raise DatasetError("group weights must be K nonnegative numbers summing to 1")
            return p
        raise DatasetError(f"unknown h_law kind {self.kind!r}")

    def to_record(self) -> dict[str, Any]:
        if self.kind == "uniform":
            return {"kind": "uniform"}
        if self.kind == "fixed":
            return {"kind": "fixed", "index": self.index}
        return {"kind": "weights", "weights": list(self.weights)}

    @classmethod
    def from_record(cls, rec: dict[str, Any] | str | None) -> "HLaw":
        if rec is None:
            return cls()
        if isinstance(rec, str):
            return cls(rec)
        return cls(rec["kind"], int(rec.get("index", 0)), tuple(rec.get("weights", ())))


@dataclass(frozen=True)
class Dataset:
    Y: np.ndarray = field(repr=False)
    sigma: float
    seed: int = 0
    meta: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        Y = np.array(self.Y, dtype=float, copy=True)
        if Y.ndim != 2 or Y.shape[0] < 1:
            raise DatasetError(f"Y must be a non-empty (n, d) array, got shape {Y.shape}")
        if not self.sigma > 0:
            raise DatasetError(f"sigma must be positive, got {self.sigma}")
        Y.setflags(write=False)
        object.__setattr__(self, "Y", Y)

    @property
    def n(self) -> int:
        return self.Y.shape[0]

    @property
    def d(self) -> int:
        return self.Y.shape[1]


def sample_dataset(
    G: GroupAction,
    theta_star: Sequence[float],
    sigma: float,
    n: int,
    seed: int,
    h_law: HLaw | None = None,
) -> Dataset:
    """Draw ``n`` observations ``g_i theta_star + sigma eps_i``.

    Sample ``i`` consumes its own block of ``1 + 2 ceil(d / 2)`` uniforms: one
    selects ``g_i`` by inverse CDF and the rest feed Box-Muller.
    """
    h_law = h_law or HLaw()
    theta_star = np.asarray(theta_star, dtype=float)
    if theta_star.shape != (G.d,):
        raise DatasetError(f"theta_star must have length {G.d}")
    if not sigma > 0:
        raise DatasetError(f"sigma must be positive, got {sigma}")
    if n < 1:
        raise DatasetError(f"n must be >= 1, got {n}")
    probs = h_law.probabilities(G.K)
    d = G.d
    pairs = (d + 1) // 2
    u = philox(seed, DATA_STREAM).random(n * (1 + 2 * pairs)).reshape(n, 1 + 2 * pairs)
    cdf = np.cumsum(probs)
    cdf[-1] = 1.0
    idx = np.minimum(np.searchsorted(cdf, u[:, 0], side="right"), G.K - 1)
    eps = box_muller(u[:, 1::2], u[:, 2::2]).reshape(n, 2 * pairs)[:, :d]
    Y = G.act(theta_star)[idx] + sigma * eps
    meta = {
        "theta_star": theta_star.tolist(),
        "group": G.name,
        "h_law": h_law.to_record(),
    }
    return Dataset(Y, float(sigma), int(seed), meta)


PathLike = Union[str, Path]


def save_dataset(ds: Dataset, path: PathLike) -> None:
    """Write ``.bin`` (little-endian binary) or CSV with a ``#META`` JSON header."""
    path = Path(path)
    if path.suffix == ".bin":
        meta = json.dumps(ds.meta).encode()
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(BIN_MAGIC, ds.n, ds.d, ds.sigma, ds.seed))
            fh.write(ds.Y.astype("<f8").tobytes())
            fh.write(struct.pack("<Q", len(meta)))
            fh.write(meta)
        return
    header = {"n": ds.n, "d": ds.d, "sigma": ds.sigma, "seed": ds.seed, **ds.meta}
    with open(path, "w") as fh:
        fh.write("#META " + json.dumps(header) + "\n")
        for row in ds.Y:
            fh.write(",".join(f"{x:.17g}" for x in row) + "\n")


def _validate_rows(Y: np.ndarray) -> None:
    bad = np.flatnonzero(~np.isfinite(Y).all(axis=1))
    if bad.size:
        raise DatasetError(f"non-finite value in data row {int(bad[0])}")


def load_dataset(path: PathLike) -> Dataset:
    path = Path(path)
    if path.suffix == ".bin":
        raw = path.read_bytes()
        if len(raw) < _HEADER.size:
            raise DatasetError("file too short for the binary header")
        magic, n, d, sigma, seed = _HEADER.unpack_from(raw)
        if magic != BIN_MAGIC:
            raise DatasetError("bad magic bytes in binary dataset")
        end = _HEADER.size + 8 * n * d
        if len(raw) < end:
            raise DatasetError(f"header declares {n}x{d} values but the file is shorter")
        Y = np.frombuffer(raw, dtype="<f8", count=n * d, offset=_HEADER.size).reshape(n, d)
        meta: dict[str, Any] = {}
        if len(raw) >= end + 8:
            (mlen,) = struct.unpack_from("<Q", raw, end)
            meta = json.loads(raw[end + 8 : end + 8 + mlen].decode())
        _validate_rows(Y)
        return Dataset(Y.astype(float), sigma, seed, meta)
    with open(path) as fh:
        first = fh.readline()
        if not first.startswith("#META "):
            raise DatasetError("missing #META header line")
        try:
            header = json.loads(first[len("#META ") :])
        except json.JSONDecodeError as exc:
            raise DatasetError(f"malformed #META header: {exc}") from None
        rows = [line for line in fh if line.strip()]
    try:
        n, d, sigma, seed = int(header["n"]), int(header["d"]), float(header["sigma"]), int(header["seed"])
    except KeyError as exc:
        raise DatasetError(f"#META header lacks field {exc}") from None
    if len(rows) != n:
        raise DatasetError(f"header declares n={n} but the file has {len(rows)} rows")
    Y = np.empty((n, d))
    for i, line in enumerate(rows):
        vals = line.split(",")
        if len(vals) != d:
            raise DatasetError(f"row {i} has {len(vals)} columns, expected {d}")
        Y[i] = [float(v) for v in vals]
    _validate_rows(Y)
    meta = {k: v for k, v in header.items() if k not in ("n", "d", "sigma", "seed")}
    return Dataset(Y, sigma, seed, meta)
