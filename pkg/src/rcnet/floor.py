"""Step-function nets: a 9-unit block whose repeated composition computes floor(x).

The state after k-1 applications is (k*x, k^2, k, x, h_0(x)+...+h_{k-1}(x)),
where h_k is a trapezoid equal to k on [k, k+1-delta] and 0 away from it.
Summing the trapezoids gives floor(x) on the plateaus.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .netcore import AffineMap, FeedForwardNet, RCNet


@dataclass(frozen=True)
class FloorNetSpec:
    """n plateaus [k, k+1-delta] (the last one is [n-1, n]) and m >= n compositions."""

    n: int
    m: int
    delta: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError("n must be a positive integer")
        if int(self.m) != self.m or self.m < self.n:
            raise ValidationError("m must be an integer with m >= n")
        if not 0.0 < self.delta < 1.0:
            raise ValidationError("delta must lie in (0,1)")


def build_hk_block(delta: float) -> FeedForwardNet:
    """The block g: R^5 -> R^5 with one hidden layer of 9 units.

    g(x) = (relu(x1+x4), relu(x2+2x3+1), relu(x3)+1, relu(x4), relu(x5)+h(x1,x2,x3)),
    and h(k*x, k^2, k) is the k-th trapezoid. relu(x3) is shared between the
    counter channel and the trapezoid's "-k" term.
    """
    if not 0.0 < delta < 1.0:
        raise ValidationError("delta must lie in (0,1)")
    s = 1.0 / delta
    hidden = np.array([
        [1, 0, 0, 1, 0],        # u1 = relu(x1 + x4)
        [0, 1, 2, 0, 0],        # u2 = relu(x2 + 2 x3 + 1)
        [0, 0, 1, 0, 0],        # u3 = relu(x3)
        [0, 0, 0, 1, 0],        # u4 = relu(x4)
        [0, 0, 0, 0, 1],        # u5 = relu(x5)
        [s, -s, 1, 0, 0],       # rising edge, upper
        [s, -s, 0, 0, 0],       # rising edge, lower
        [-s, s, s, 0, 0],       # falling edge, upper
        [-s, s, s - 1, 0, 0],   # falling edge, lower
    ], dtype=np.float64)
    hidden_bias = np.array([0, 1, 0, 0, 0, 0, 0, 0, 0], dtype=np.float64)
    out = np.zeros((5, 9))
    out[0, 0] = out[1, 1] = out[2, 2] = out[3, 3] = 1.0
    out[4, 4] = 1.0
    out[4, 5:9] = [1, -1, 1, -1]
    out[4, 2] = -1.0
    out_bias = np.array([0, 0, 1, 0, 0], dtype=np.float64)
    return FeedForwardNet((AffineMap(hidden, hidden_bias), AffineMap(out, out_bias)))


def floor_pre_slope(n: int, delta: float) -> tuple[float, float, float]:
    """(slope, offset, inner delta) of the map that shrinks each plateau into the
    region where the block's own trapezoids are flat."""
    inner = (1.0 - delta) * delta / n
    return (n - delta - inner) / n, delta, inner


def build_floor_rcnet(spec: FloorNetSpec) -> RCNet:
    """Scalar net equal to k on [k, k+1-delta] for k < n-1 and on [n-1, n]."""
    slope, offset, inner = floor_pre_slope(spec.n, spec.delta)
    pre = AffineMap(np.array([[slope], [0], [0], [slope], [0]]),
                    np.array([offset, 1, 1, offset, 0]))
    post = AffineMap(np.array([[0, 0, 0, 0, 1.0]]), np.zeros(1))
    return RCNet(pre, build_hk_block(inner), spec.m - 1, post)


def floor_plateau_oracle(x: float, n: int, delta: float):
    """k if x lies in the k-th closed plateau, otherwise the string "outside"."""
    for k in range(n):
        upper = k + 1 - (delta if k <= n - 2 else 0.0)
        if k <= x <= upper:
            return k
    return "outside"
