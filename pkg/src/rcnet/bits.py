"""Bit extraction and point fitting.

A single real bin 0.t1 t2 ... tr stores r bits. The extraction block peels
off the leading bit each application (beta -> 2 beta - T(beta - 1/2)) and adds
it to a running sum while a countdown channel is still nonnegative, so after
r applications the third channel holds t1 + ... + tk.

Point fitting stacks two extractors: one for the up-steps and one for the
down-steps of floor(y_k / eps).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ValidationError
from .netcore import AffineMap, FeedForwardNet, RCNet, as_entries, stack_parallel

# Largest bit count a single extraction block accepts; the block has weight 2**r.
MAX_BITS = 1000


@dataclass(frozen=True)
class BitString:
    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if any(b not in (0, 1) for b in bits):
            raise ValidationError("bits must be 0 or 1")
        object.__setattr__(self, "bits", bits)

    def __len__(self):
        return len(self.bits)

    @property
    def value(self) -> Fraction:
        """sum bits[i] * 2**-(i+1), exactly."""
        num = 0
        for b in self.bits:
            num = 2 * num + b
        return Fraction(num, 1 << len(self.bits))

    def encode(self):
        """The value as a float when exact (always for r <= 52), else a Fraction."""
        return as_entries(np.array([self.value], dtype=object))[0]

    @property
    def significant(self) -> int:
        """Position of the last 1 bit (0 if all bits are zero)."""
        for i in range(len(self.bits), 0, -1):
            if self.bits[i - 1]:
                return i
        return 0


@dataclass(frozen=True)
class PointFitSpec:
    values: tuple[float, ...]
    epsilon: float
    m: int

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", values)
        if not values:
            raise ValidationError("need at least one value")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")
        if int(self.m) != self.m or self.m < len(values):
            raise ValidationError("m must be an integer with m >= number of values")
        if any(v < 0 for v in values):
            raise ValidationError("values must be nonnegative")
        for i in range(1, len(values)):
            if abs(values[i] - values[i - 1]) > self.epsilon:
                raise ValidationError(
                    f"|y_{i} - y_{i - 1}| = {abs(values[i] - values[i - 1])} exceeds epsilon")


def build_bit_extract_block(r: int) -> FeedForwardNet:
    """Block g: R^3 -> R^3, width 8, depth 2, reading bits at resolution 2**-r.

    g(x1, x2, x3) = (x1 - 1, 2 x2 - T(x2 - 1/2), relu(T(x2 - 1/2) + S(x1) - 1) + x3)
    with T(t) = relu(t 2**r + 1) - relu(t 2**r) and S(t) = relu(t + 1) - relu(t).
    S equals T on the integer countdown values but keeps slope 1, so small
    errors in x1 stay small.
    """
    if int(r) != r or r < 1:
        raise ValidationError("r must be a positive integer")
    if r > MAX_BITS:
        raise ValidationError(f"r = {r} exceeds the bit cap {MAX_BITS}")
    scale = Fraction(2) ** r
    half = scale / 2
    F = Fraction
    first_w = np.array([
        [0, scale, 0],    # A = relu((x2 - 1/2) 2^r + 1)
        [0, scale, 0],    # B = relu((x2 - 1/2) 2^r)
        [1, 0, 0],        # C = relu(x1 + 1)
        [1, 0, 0],        # D = relu(x1)
        [-1, 0, 0],       # E = relu(-x1)
        [0, 1, 0],        # F = relu(x2)
        [0, -1, 0],       # G = relu(-x2)
        [0, 0, 1],        # H = relu(x3)
    ], dtype=object)
    first_b = np.array([1 - half, -half, 1, 0, 0, 0, 0, 0], dtype=object)
    # T = A - B, S = C - D, x1 = D - E, x2 = F - G
    second_w = np.array([
        [0, 0, 0, 1, -1, 0, 0, 0],      # relu(x1 - 1)
        [0, 0, 0, -1, 1, 0, 0, 0],      # relu(1 - x1)
        [-1, 1, 0, 0, 0, 2, -2, 0],     # relu(2 x2 - T)
        [1, -1, 0, 0, 0, -2, 2, 0],     # relu(T - 2 x2)
        [1, -1, 1, -1, 0, 0, 0, 0],     # relu(T + S - 1)
        [0, 0, 0, 0, 0, 0, 0, 1],       # relu(x3)
    ], dtype=object)
    second_b = np.array([-1, 1, 0, 0, -1, 0], dtype=object)
    out_w = np.array([
        [1, -1, 0, 0, 0, 0],
        [0, 0, 1, -1, 0, 0],
        [0, 0, 0, 0, 1, 1],
    ], dtype=np.float64)

    def exact(a):
        return np.vectorize(F, otypes=[object])(a)

    return FeedForwardNet((
        AffineMap(exact(first_w), exact(first_b)),
        AffineMap(exact(second_w), exact(second_b)),
        AffineMap(out_w, np.zeros(3)),
    ))


def build_prefix_sum_rcnet(r: int) -> RCNet:
    """(k, bin 0.t1..tr) -> t1 + ... + tk after r applications of the block."""
    pre = AffineMap(np.array([[1.0, 0], [0, 1], [0, 0]]), np.array([-1.0, 0, 0]))
    post = AffineMap(np.array([[0, 0, 1.0]]), np.zeros(1))
    return RCNet(pre, build_bit_extract_block(r), r, post, required_bits=r + 1)


def extract_prefix_sum(r: int, k: int, bits: BitString):
    """Network value of t1 + ... + tk for the r-bit string (equals it exactly
    up to rounding; returned unrounded so callers can measure the error)."""
    if len(bits) != r:
        raise ValidationError(f"expected {r} bits, got {len(bits)}")
    if int(k) != k or not 0 <= k <= r:
        raise ValidationError(f"k must be an integer in [0, {r}]")
    net = build_prefix_sum_rcnet(r)
    value = bits.value
    if r <= 52:
        return float(net(np.array([float(k), float(value)]))[0])
    # the stored bits exceed binary64: feed the exact value through the pre map
    pre = AffineMap(np.array([[0.0], [0], [0]], dtype=np.float64),
                    np.array([Fraction(k - 1), value, Fraction(0)], dtype=object))
    exact_net = RCNet(pre, net.block, net.reps, net.post, net.required_bits)
    return float(exact_net(np.zeros(1))[0])


def bit_decompose_values(values: Sequence[float], epsilon: float):
    """(a0, c, d) with a0 + sum_{i<=k} c_i - sum_{i<=k} d_i = floor(y_k / eps)."""
    if not epsilon > 0:
        raise ValidationError("epsilon must be positive")
    a = [math.floor(v / epsilon) for v in values]
    if any(v < 0 for v in values):
        raise ValidationError("values must be nonnegative")
    c, d = [], []
    for i in range(1, len(a)):
        step = a[i] - a[i - 1]
        if abs(step) > 1:
            raise ValidationError(
                f"floor(y/eps) jumps by {step} at index {i}; adjacent values differ by more than eps")
        c.append(1 if step == 1 else 0)
        d.append(1 if step == -1 else 0)
    return a[0], BitString(tuple(c)), BitString(tuple(d))


def build_point_fit_rcnet(spec: PointFitSpec) -> RCNet:
    """Scalar net with value eps * floor(y_k / eps) at every integer k < n."""
    values = list(spec.values) + [spec.values[-1]] * (spec.m - len(spec.values))
    a0, c, d = bit_decompose_values(values, spec.epsilon)
    width = max(1, c.significant, d.significant)
    one = build_bit_extract_block(width)
    block = stack_parallel([one, one])
    # bits past the last 1 are zero, so a width-bit block reads both strings fully
    bc, bd = c.value, d.value
    pre = AffineMap(np.array([[1.0], [0], [0], [1], [0], [0]]),
                    np.array([Fraction(-1), bc, Fraction(0), Fraction(-1), bd, Fraction(0)],
                             dtype=object))
    eps = spec.epsilon
    post = AffineMap(np.array([[0, 0, eps, 0, 0, -eps]]), np.array([eps * a0]))
    return RCNet(pre, block, spec.m - 1, post, required_bits=width)
