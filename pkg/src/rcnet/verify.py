"""Oracles and error metrics for the constructed networks.

trifling_mask marks points in the thin slabs next to the grid hyperplanes,
measure_errors reports sup errors on a uniform grid (with and without the
slabs) and a seeded Monte-Carlo L^p error, and sequential_pipeline_oracle
evaluates a two-stage pipeline without merging so merged nets can be checked
against it.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import ValidationError
from .intervals import IntervalBox, interval_bound
from .netcore import AffineMap, FeedForwardNet, RCNet, eval_affine, eval_net
from .targets import MODULUS_SEED, TargetFunction

__all__ = ["ErrorReport", "IntervalBox", "default_grid", "interval_bound", "measure_errors",
           "sequential_pipeline_oracle", "trifling_mask"]

GRID_SIZES = {1: 4001, 2: 201, 3: 51}
MC_SAMPLES = 100_000
CHUNK = 20_000


def trifling_mask(x, K: int, delta: float, d: int) -> np.ndarray:
    """True where some coordinate lies in an open slab (k/K - delta, k/K), 1 <= k <= K-1."""
    if int(K) != K or K < 1:
        raise ValidationError("K must be a positive integer")
    if not delta >= 0:
        raise ValidationError("delta must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim <= 1 and d == 1:
        x = x.reshape(-1, 1)
    x = np.atleast_2d(x)
    if x.shape[1] != d:
        raise ValidationError(f"expected points of dimension {d}, got shape {x.shape}")
    K = int(K)
    base = np.floor(x * K)
    hit = np.zeros(x.shape, dtype=bool)
    # x*K may round onto an integer, so test the two nearest grid points
    for k in (base, base + 1):
        ok = (k >= 1) & (k <= K - 1)
        hit |= ok & (x > k / K - delta) & (x < k / K)
    return np.any(hit, axis=1)


@dataclass(frozen=True)
class ErrorReport:
    sup_error_off_trifling: float
    sup_error_full: float
    lp_error: float
    p: Optional[float]
    samples_used: int
    theoretical_bound: float
    grid_points: int = 0
    seed: int = MODULUS_SEED

    def __post_init__(self):
        for name in ("sup_error_off_trifling", "sup_error_full", "lp_error", "theoretical_bound"):
            if not getattr(self, name) >= 0:
                raise ValidationError(f"{name} must be nonnegative")
        if self.sup_error_off_trifling > self.sup_error_full:
            raise ValidationError("masked sup error exceeds the full sup error")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def from_dict(cls, data: dict) -> "ErrorReport":
        return cls(**{k: data[k] for k in cls.__dataclass_fields__ if k in data})


def default_grid(d: int, size: Optional[int] = None) -> np.ndarray:
    """Uniform grid of [0,1]^d with both endpoints, size points per axis."""
    n = GRID_SIZES.get(d) if size is None else size
    if n is None:
        raise ValidationError(f"no default grid for d = {d}; pass a size")
    if n < 1:
        raise ValidationError("grid is empty")
    axis = np.linspace(0.0, 1.0, n) if n > 1 else np.array([0.5])
    mesh = np.meshgrid(*[axis] * d, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)


def _evaluate(net, x: np.ndarray, backend: str) -> np.ndarray:
    out = np.empty(len(x))
    for start in range(0, len(x), CHUNK):
        part = x[start:start + CHUNK]
        y = net(part, backend=backend) if isinstance(net, RCNet) else net(part)
        out[start:start + CHUNK] = np.asarray(y, dtype=np.float64).reshape(len(part), -1)[:, 0]
    return out


def measure_errors(net, f: TargetFunction, *, K: int = 1, delta: float = 0.0,
                   p: Optional[float] = None, grid: Optional[np.ndarray] = None,
                   grid_size: Optional[int] = None, samples: int = MC_SAMPLES,
                   seed: int = MODULUS_SEED, theoretical_bound: float = 0.0,
                   backend: str = "auto") -> ErrorReport:
    """Sup errors on a grid (full and off the slabs for K, delta) and, when p
    is given, the Monte-Carlo L^p error over `samples` uniform points."""
    d = f.d
    x = default_grid(d, grid_size) if grid is None else np.atleast_2d(np.asarray(grid, float))
    if x.size == 0:
        raise ValidationError("grid is empty")
    if x.shape[1] != d:
        raise ValidationError(f"grid has dimension {x.shape[1]}, target has {d}")
    err = np.abs(_evaluate(net, x, backend) - f(x))
    if not np.all(np.isfinite(err)):
        raise ValidationError("network or target produced non-finite values on the grid")
    keep = ~trifling_mask(x, K, delta, d)
    sup_full = float(err.max())
    sup_off = float(err[keep].max()) if keep.any() else 0.0

    lp, used = 0.0, 0
    if p is not None:
        if not (p >= 1 and math.isfinite(p)):
            raise ValidationError("p must lie in [1, inf)")
        if samples < 1:
            raise ValidationError("samples must be positive")
        pts = np.random.default_rng(seed).random((samples, d))
        e = np.abs(_evaluate(net, pts, backend) - f(pts)) ** p
        lp = math.fsum(e.tolist()) / samples
        lp = lp ** (1.0 / p)
        used = samples
    return ErrorReport(sup_off, sup_full, lp, p, used, float(theoretical_bound), len(x), seed)


def sequential_pipeline_oracle(L1: AffineMap, g1: FeedForwardNet, r1: int, L2: AffineMap,
                               g2: FeedForwardNet, r2: int, L3: AffineMap, x) -> np.ndarray:
    """L3(g2^r2(L2(g1^r1(L1(x))))) evaluated stage by stage."""
    chain: Sequence = (L1, g1, L2, g2, L3)
    for a, b in zip(chain, chain[1:]):
        if a.out_dim != b.in_dim:
            raise ValidationError(f"dimension mismatch: {a.out_dim} feeds {b.in_dim}")
    for name, g in (("g1", g1), ("g2", g2)):
        if g.in_dim != g.out_dim:
            raise ValidationError(f"{name} must be square")
    for name, r in (("r1", r1), ("r2", r2)):
        if int(r) != r or r < 0:
            raise ValidationError(f"{name} must be a nonnegative integer")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = eval_affine(L1, np.atleast_2d(x))
    for _ in range(int(r1)):
        h = eval_net(g1, h)
    h = eval_affine(L2, h)
    for _ in range(int(r2)):
        h = eval_net(g2, h)
    h = eval_affine(L3, h)
    return h[0] if single else h
