"""Target functions on [0,1]^d with a modulus of continuity.

omega(t) bounds |f(x) - f(y)| over pairs with |x - y|_2 <= t. Bundled analytic
targets supply it in closed form; anything else gets a sampled estimate
inflated by 10%.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import ValidationError

MODULUS_PAIRS = 100_000
MODULUS_INFLATION = 1.1
MODULUS_SEED = 0x5EED


def _points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0:
        x = x.reshape(1)
    if x.shape[-1] != d:
        if d == 1 and x.ndim == 1:
            x = x[:, None]
        else:
            raise ValidationError(f"expected points of dimension {d}, got shape {x.shape}")
    return np.atleast_2d(x)


def estimate_modulus(func: Callable[[np.ndarray], np.ndarray], d: int, t: float,
                     pairs: int = MODULUS_PAIRS, seed: int = MODULUS_SEED) -> float:
    """1.1 * max |f(x) - f(y)| over random pairs in [0,1]^d with |x - y|_2 <= t."""
    if t <= 0:
        return 0.0
    rng = np.random.default_rng(seed)
    x = rng.random((pairs, d))
    v = rng.normal(size=(pairs, d))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    # most pairs at full distance (the sup sits there for monotone moduli), the rest inside
    radius = np.where(rng.random(pairs) < 0.75, t, t * rng.random(pairs) ** (1.0 / d))
    y = np.clip(x + radius[:, None] * v, 0.0, 1.0)
    gap = np.abs(func(x) - func(y))
    return MODULUS_INFLATION * float(np.max(gap))


@dataclass(frozen=True, eq=False)
class TargetFunction:
    """f: [0,1]^d -> R, vectorized over rows, with omega(t)."""

    name: str
    d: int
    func: Callable[[np.ndarray], np.ndarray]
    modulus: Optional[Callable[[float], float]] = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ValidationError("d must be a positive integer")

    def __call__(self, x) -> np.ndarray:
        return np.asarray(self.func(_points(x, self.d)), dtype=np.float64).reshape(-1)

    def omega(self, t: float) -> float:
        t = float(t)
        if self.modulus is not None:
            return float(self.modulus(t))
        if t not in self._cache:
            self._cache[t] = estimate_modulus(self.func, self.d, t)
        return self._cache[t]

    def omega_estimate(self, t: float) -> float:
        """The sampled estimate even when a closed form exists (for cross-checks)."""
        return estimate_modulus(self.func, self.d, t)

    @property
    def value_at_zero(self) -> float:
        return float(self(np.zeros(self.d))[0])

    @property
    def shift(self) -> float:
        """c with f - c >= 0 on the cube: f(0) - omega(sqrt d)."""
        return self.value_at_zero - self.omega(math.sqrt(self.d))

    def shifted(self, x) -> np.ndarray:
        return self(x) - self.shift

    def sup_norm(self, samples: int = 20_000) -> float:
        """max |f| over a seeded sample plus the cube corners."""
        rng = np.random.default_rng(MODULUS_SEED)
        corners = np.array(np.meshgrid(*[[0.0, 1.0]] * self.d)).reshape(self.d, -1).T
        pts = np.vstack([rng.random((samples, self.d)), corners])
        return float(np.max(np.abs(self(pts))))


def abs1(d: int) -> TargetFunction:
    """|x|_1 / d; |f(x) - f(y)| <= |x - y|_2 / sqrt(d), and the range is [0, 1]."""
    root = math.sqrt(d)
    return TargetFunction("abs1", d, lambda x: np.sum(np.abs(x), axis=1) / d,
                          lambda t: min(t / root, 1.0))


def sinpi(d: int) -> TargetFunction:
    """sin(pi x_1) / pi; the sup over |a - b| <= t is sin(pi t) up to t = 1/2."""
    return TargetFunction("sinpi", d, lambda x: np.sin(np.pi * x[:, 0]) / np.pi,
                          lambda t: math.sin(math.pi * min(max(t, 0.0), 0.5)) / math.pi)


def constant(d: int, c: float) -> TargetFunction:
    c = float(c)
    return TargetFunction(f"const:{c!r}", d, lambda x: np.full(x.shape[0], c), lambda t: 0.0)


TRIG_A = np.array([[0.3, 0.2], [0.2, 0.3]])
TRIG_B = np.array([2 * np.pi, 4 * np.pi])
TRIG_C = np.array([[2 * np.pi, 4 * np.pi], [8 * np.pi, 4 * np.pi]])
TRIG_D = np.array([[4 * np.pi, 6 * np.pi], [8 * np.pi, 6 * np.pi]])


def paper_trig_values(x: np.ndarray) -> np.ndarray:
    """sum_{i,j} a_ij sin(b_i x_i + c_ij x_i x_j) cos(b_j x_j + d_ij x_i^2) on rows of x."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    out = np.zeros(x.shape[0])
    for i in range(2):
        for j in range(2):
            xi, xj = x[:, i], x[:, j]
            out += TRIG_A[i, j] * np.sin(TRIG_B[i] * xi + TRIG_C[i, j] * xi * xj) \
                * np.cos(TRIG_B[j] * xj + TRIG_D[i, j] * xi ** 2)
    return out


def paper_trig(d: int = 2) -> TargetFunction:
    if d != 2:
        raise ValidationError("the trigonometric target is defined on [0,1]^2")
    return TargetFunction("paper-trig", 2, paper_trig_values)


def from_grid(values: np.ndarray, d: int, name: str = "grid") -> TargetFunction:
    """Linear interpolation of samples on a uniform grid of [0,1]^d."""
    values = np.asarray(values, dtype=np.float64)
    if d == 1:
        values = values.reshape(-1)
    if values.ndim != d or min(values.shape) < 2:
        raise ValidationError(f"need a grid with at least 2 points per axis in {d} dimensions")
    if not np.all(np.isfinite(values)):
        raise ValidationError("grid values must be finite")
    axes = [np.linspace(0.0, 1.0, n) for n in values.shape]
    if d == 1:
        xs = axes[0]
        return TargetFunction(name, 1, lambda x: np.interp(x[:, 0], xs, values))
    interp = RegularGridInterpolator(axes, values)
    return TargetFunction(name, d, lambda x: interp(np.clip(x, 0.0, 1.0)))


def load_csv_target(path, d: int) -> TargetFunction:
    """d = 1: one value per line (or one row); d = 2: a matrix, rows along x_1."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"no such file: {path}")
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from None
    if d == 1:
        values = values.reshape(-1)
    elif d != 2:
        raise ValidationError("csv targets support d = 1 or d = 2")
    return from_grid(values, d, name=f"csv:{path}")


def parse_target(spec: str, d: int) -> TargetFunction:
    """abs1 | sinpi | paper-trig | const:C | csv:FILE."""
    if spec == "abs1":
        return abs1(d)
    if spec == "sinpi":
        return sinpi(d)
    if spec == "paper-trig":
        return paper_trig(d)
    if spec.startswith("const:"):
        try:
            return constant(d, float(spec[6:]))
        except ValueError:
            raise ValidationError(f"bad constant in target {spec!r}") from None
    if spec.startswith("csv:"):
        return load_csv_target(spec[4:], d)
    raise ValidationError(f"unknown target {spec!r} (abs1, sinpi, paper-trig, const:C, csv:FILE)")
