"""End-to-end approximators of continuous functions on [0,1]^d.

gap:  x -> cube index beta (stacked floor nets) -> integer node j_beta (base-K
      map) -> point fit of a piecewise-linear h through f(x_beta). Accurate off
      the thin slabs next to the grid hyperplanes.
lp:   the gap net followed by a clamp to [-M, M], so the slabs cost little in L^p.
linf: median of three shifted copies, one coordinate at a time, which repairs
      the slabs and gives a uniform bound.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .bits import PointFitSpec, build_point_fit_rcnet
from .errors import ValidationError
from .floor import FloorNetSpec, build_hk_block, floor_pre_slope
from .merge import merge_with_affines
from .netcore import (AffineMap, FeedForwardNet, RCNet, block_diag, compose_affine, concat,
                      embed_net, pad_width, selection_map, stack_parallel)
from .targets import TargetFunction

# largest input dimension for which the uniform construction is attempted
LINF_MAX_D = 2


def integer_root(r: int, d: int) -> int:
    """Largest K with K**d <= r."""
    if int(r) != r or r < 1:
        raise ValidationError("r must be a positive integer")
    if int(d) != d or d < 1:
        raise ValidationError("d must be a positive integer")
    k = max(1, int(round(r ** (1.0 / d))))
    while k ** d > r:
        k -= 1
    while (k + 1) ** d <= r:
        k += 1
    return k


@dataclass(frozen=True)
class CubePartition:
    """Cubes Q_beta = prod [beta_i/K, (beta_i+1)/K - delta 1{beta_i <= K-2}] and
    the slabs between them."""

    d: int
    K: int
    delta: float

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1 or int(self.K) != self.K or self.K < 1:
            raise ValidationError("d and K must be positive integers")
        if not 0 < self.delta <= 1.0 / (3 * self.K) * (1 + 1e-12):
            raise ValidationError("delta must lie in (0, 1/(3K)]")

    def indices(self) -> np.ndarray:
        """All beta in lexicographic order, shape (K^d, d)."""
        return np.array(list(itertools.product(range(self.K), repeat=self.d)), dtype=np.int64)

    def representatives(self) -> np.ndarray:
        return self.indices() / self.K

    def coordinate_cells(self, x: np.ndarray) -> np.ndarray:
        """Per-coordinate cube index, or -1 inside a slab."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        K = self.K
        k = np.clip(np.floor(x * K), 0, K - 1).astype(np.int64)
        k = np.where((k < K - 1) & (x >= (k + 1) / K), k + 1, k)
        k = np.where((k > 0) & (x < k / K), k - 1, k)
        in_gap = (k <= K - 2) & (x > (k + 1) / K - self.delta)
        return np.where(in_gap, -1, k)

    def trifling(self, x) -> np.ndarray:
        return np.any(self.coordinate_cells(x) < 0, axis=1)

    def cube_of(self, x) -> np.ndarray:
        """beta for each point, rows of -1 for points in a slab."""
        cells = self.coordinate_cells(x)
        bad = np.any(cells < 0, axis=1)
        cells[bad] = -1
        return cells


def base_k_index_map(d: int, K: int) -> AffineMap:
    """x -> x_d / (2K^d) + sum_{i<d} x_i / K^i, injective on {0..K-1}^d."""
    if d < 1 or K < 1:
        raise ValidationError("d and K must be positive")
    w = [1.0 / K ** i for i in range(1, d)] + [1.0 / (2 * K ** d)]
    return AffineMap(np.array([w]), np.zeros(1))


def node_index(beta: np.ndarray, K: int) -> np.ndarray:
    """2K^d times the base-K map: the integer j_beta."""
    beta = np.atleast_2d(beta)
    d = beta.shape[1]
    weights = np.array([2 * K ** (d - i) for i in range(1, d)] + [1], dtype=np.int64)
    return beta @ weights


# ----------------------------------------------------------------------------
# stage 1: cube index
# ----------------------------------------------------------------------------

def build_phi1(d: int, r: int, delta: float) -> RCNet:
    """R^d -> R^d with value beta on every cube Q_beta (K = integer root of r)."""
    K = integer_root(r, d)
    CubePartition(d, K, delta)
    spec = FloorNetSpec(K, r, K * delta)
    slope, offset, inner = floor_pre_slope(spec.n, spec.delta)
    col = np.array([slope * K, 0, 0, slope * K, 0])
    one = np.array([offset, 1, 1, offset, 0])
    pre = AffineMap(block_diag([col[:, None]] * d), np.tile(one, d))
    block = stack_parallel([build_hk_block(inner)] * d)
    post = AffineMap(block_diag([np.array([[0, 0, 0, 0, 1.0]])] * d), np.zeros(d))
    return RCNet(pre, block, r - 1, post)


# ----------------------------------------------------------------------------
# stage 2: piecewise-linear table and point fit
# ----------------------------------------------------------------------------

class PLTable:
    """h on the grid j / (2K^d), j = 0..2K^d, interpolating shifted f at the nodes
    j_beta (value f~(x_beta)) and at j = 2K^d (value f~(1,...,1))."""

    def __init__(self, f: TargetFunction, K: int):
        self.f = f
        self.d = f.d
        self.K = int(K)
        part = CubePartition(self.d, self.K, 1.0 / (3 * self.K))
        betas = part.indices()
        nodes = node_index(betas, self.K)
        order = np.argsort(nodes)
        self.nodes = np.append(nodes[order], 2 * self.K ** self.d)
        reps = np.vstack([part.representatives()[order], np.ones((1, self.d))])
        self.node_values = f.shifted(reps)
        self.size = 2 * self.K ** self.d
        self.values = np.interp(np.arange(self.size + 1), self.nodes, self.node_values)
        if np.any(self.values < -1e-12):
            raise ValidationError(
                "shifted target went negative: the modulus of continuity is underestimated")
        self.values = np.maximum(self.values, 0.0)

    @property
    def max_step(self) -> float:
        return float(np.max(np.abs(np.diff(self.values)), initial=0.0))

    @property
    def epsilon(self) -> float:
        """Point-fit tolerance: max(omega(sqrt d / K), omega(sqrt d) / K), never below
        the largest actual step (the fit needs adjacent values within epsilon)."""
        root = math.sqrt(self.d)
        eps = max(self.f.omega(root / self.K), self.f.omega(root) / self.K, self.max_step)
        if eps > 0:
            return eps
        c = float(self.values[0])
        return c if c > 0 else 1.0

    def at(self, j) -> np.ndarray:
        return np.interp(j, np.arange(self.size + 1), self.values)


def build_phi2(table: PLTable, r: int) -> RCNet:
    """t -> point fit at j = 2K^d t, i.e. eps * floor(h(j) / eps) at the integer nodes."""
    n = table.size
    if n > 2 * r:
        raise ValidationError(f"2K^d = {n} exceeds 2r = {2 * r}")
    spec = PointFitSpec(tuple(table.values[:n]), table.epsilon, 2 * r)
    fit = build_point_fit_rcnet(spec)
    pre = compose_affine(fit.pre, AffineMap(np.array([[float(n)]]), np.zeros(1)), exact=True)
    return RCNet(pre, fit.block, fit.reps, fit.post, fit.required_bits)


# ----------------------------------------------------------------------------
# assembled approximators
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class GapPlan:
    d: int
    r: int
    K: int
    delta: float
    epsilon: float
    shift: float
    bound: float          # 5 sqrt(d) omega(r^{-1/d}) off the slabs


def gap_plan(f: TargetFunction, r: int, delta: float | None = None) -> GapPlan:
    d = f.d
    K = integer_root(r, d)
    delta = 1.0 / (3 * K) if delta is None else float(delta)
    CubePartition(d, K, delta)
    table = PLTable(f, K)
    return GapPlan(d, r, K, delta, table.epsilon, f.shift,
                   5 * math.sqrt(d) * f.omega(r ** (-1.0 / d)))


def build_gap_rcnet(f: TargetFunction, d: int, r: int, delta: float | None = None,
                    A: float = 1.0) -> RCNet:
    """Block NN(39d+24, 3, 5d+3, 5d+3), 3r-1 applications, off-slab error
    at most 5 sqrt(d) omega(r^{-1/d})."""
    if f.d != d:
        raise ValidationError(f"target has dimension {f.d}, asked for d = {d}")
    K = integer_root(r, d)
    delta = 1.0 / (3 * K) if delta is None else float(delta)
    CubePartition(d, K, delta)
    phi1 = build_phi1(d, r, delta)
    table = PLTable(f, K)
    spec = PointFitSpec(tuple(table.values[:table.size]), table.epsilon, 2 * r)
    fit = build_point_fit_rcnet(spec)
    # integer node index straight from the floor channels, fed to the fit's pre map
    index = AffineMap(node_index(np.eye(d, dtype=np.int64), K).astype(np.float64)[None, :],
                      np.zeros(1))
    to_fit = compose_affine(fit.pre, compose_affine(index, phi1.post, exact=True), exact=True)
    out = AffineMap(fit.post.weights, fit.post.bias + f.shift)
    return merge_with_affines(phi1.pre, phi1.block, phi1.reps, to_fit, fit.block, fit.reps,
                              out, A, 5 * d + 1, bits=fit.required_bits)


def build_clip_net(M: float) -> FeedForwardNet:
    """clamp(x, -M, M) = min(relu(x + M), 2M) - M, width 4 and depth 2, using
    min(a, b) = (relu(a+b) - relu(-a-b) - relu(a-b) - relu(b-a)) / 2."""
    if not M > 0:
        raise ValidationError("M must be positive")
    M = float(M)
    first = AffineMap(np.array([[1.0]]), np.array([M]))
    second = AffineMap(np.array([[1.0], [-1.0], [1.0], [-1.0]]),
                       np.array([2 * M, -2 * M, -2 * M, 2 * M]))
    out = AffineMap(np.array([[0.5, -0.5, -0.5, -0.5]]), np.array([-M]))
    return FeedForwardNet((first, second, out))


def lp_delta(f: TargetFunction, r: int, p: float, M: float) -> float:
    """Largest delta <= 1/(3K) with K d delta (2M)^p <= omega(r^{-1/d})^p."""
    d = f.d
    K = integer_root(r, d)
    w = f.omega(r ** (-1.0 / d))
    cap = 1.0 / (3 * K)
    if w <= 0:
        return cap
    return min(cap, w ** p / (K * d * (2 * M) ** p))


def clip_level(f: TargetFunction) -> float:
    """M = |f|_inf + 5 sqrt(d) omega(1)."""
    return f.sup_norm() + 5 * math.sqrt(f.d) * f.omega(1.0) or 1.0


def build_lp_rcnet(f: TargetFunction, d: int, r: int, p: float) -> RCNet:
    """Block NN(69d+48, 5, 5d+5, 5d+5), 3r+1 applications, L^p error at most
    6 sqrt(d) omega(r^{-1/d})."""
    if not p >= 1 or not math.isfinite(p):
        raise ValidationError("p must lie in [1, inf)")
    M = clip_level(f)
    gap = build_gap_rcnet(f, d, r, lp_delta(f, r, p, M))
    return merge_with_affines(gap.pre, gap.block, gap.reps, gap.post, build_clip_net(M), 1,
                              AffineMap.identity(1), 1.0, 5 * d + 3, bits=payload_bits(gap))


def build_mid_net() -> FeedForwardNet:
    """Median of three, width 6 and depth 2.

    With p = max(a, b), q = min(a, b): mid = (a + b)/2 - |p - c|/2 + |q - c|/2.
    """
    first = AffineMap(np.array([[1.0, 1, 0], [-1, -1, 0], [1, -1, 0], [-1, 1, 0],
                                [0, 0, 1], [0, 0, -1]]), np.zeros(6))
    # in first-layer units: a+b = u1-u2, |a-b| = u3+u4, c = u5-u6
    s = np.array([1.0, -1, 0, 0, 0, 0])
    m = np.array([0, 0, 1.0, 1, 0, 0])
    c = np.array([0, 0, 0, 0, 1.0, -1])
    p, q = (s + m) / 2, (s - m) / 2
    second = AffineMap(np.array([p - c, c - p, q - c, c - q, s, -s]), np.zeros(6))
    out = AffineMap(np.array([[-0.5, -0.5, 0.5, 0.5, 0.5, -0.5]]), np.zeros(1))
    return FeedForwardNet((first, second, out))


def linf_delta(f: TargetFunction, r: int) -> float:
    """Halve 1/(3K) until d omega(delta) <= omega(r^{-1/d})."""
    d = f.d
    K = integer_root(r, d)
    target = f.omega(r ** (-1.0 / d))
    delta = 1.0 / (3 * K)
    for _ in range(200):
        if d * f.omega(delta) <= target:
            return delta
        delta /= 2
    raise ValidationError("could not find delta with d omega(delta) <= omega(r^{-1/d})")


def payload_bits(net: RCNet) -> int:
    """Precision of the stored bit strings inside a merged net (its required
    bits minus the selector headroom)."""
    cert = getattr(net, "certificate", None)
    return cert.payload_bits if cert is not None else net.required_bits


def median_step(net: RCNet, d: int, axis: int, delta: float, A: float) -> RCNet:
    """x -> mid(net(x - delta e_axis), net(x), net(x + delta e_axis)) as one RCNet."""
    pre = net.pre
    w, b = pre.numeric
    shift = delta * w[:, axis]
    pre3 = AffineMap(np.vstack([w, w, w]), np.concatenate([b - shift, b, b + shift]))
    block3 = stack_parallel([net.block] * 3)
    post3 = AffineMap(block_diag([net.post.weights] * 3), concat([net.post.bias] * 3))
    mid = embed_net(build_mid_net(), 3)
    return merge_with_affines(pre3, block3, net.reps, post3, mid, 1, selection_map(3, [0]),
                              A, 3 * net.d_block, bits=payload_bits(net))


def build_linf_rcnet(f: TargetFunction, d: int, r: int) -> RCNet:
    """Uniform approximation: block width 4^{d+5} d at d = 1, depth 3 + 2d,
    dims 3^d (5d+4) - 1, 3r + 2d - 1 applications."""
    if f.d != d:
        raise ValidationError(f"target has dimension {f.d}, asked for d = {d}")
    if d > LINF_MAX_D:
        raise ValidationError(
            f"d = {d} exceeds the cap {LINF_MAX_D}: the block would need width "
            f"{4 ** (d + 5) * d} and {3 ** d * (5 * d + 4) - 1} channels")
    delta = linf_delta(f, r)
    net = build_gap_rcnet(f, d, r, delta, A=float(d + 1))
    for axis in range(d):
        net = median_step(net, d, axis, delta, float(d - axis))
    if d == 1:
        net = RCNet(net.pre, pad_width(net.block, 4 ** (d + 5) * d, 0), net.reps, net.post,
                    net.required_bits)
    return net
