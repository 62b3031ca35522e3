"""Merging two repeated-composition stages into one repeated block.

A countdown channel t starts at 2 r1 + 1 and drops by 2 per application. A
selector reads t: while t >= 1 the merged block applies g1, afterwards g2.
Both branches are computed every time (padded to a common depth), so the
selector needs a bound M on every state either branch can produce; it is
certified by interval propagation along the actual schedule, including the
branch that gets discarded at each step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError
from .intervals import IntervalBox, arithmetic, net_plan, propagate
from .netcore import (AffineMap, FeedForwardNet, RCNet, _zeros, affine_net, chain, concat,
                      embed_net, pad_depth, pad_width, precompose, stack_parallel, to_exact)


@dataclass(frozen=True)
class MergeCertificate:
    domain_box: IntervalBox
    bound_M: float
    merged_dims: int
    merged_reps: int
    required_bits: int = 0
    payload_bits: int = 0


def build_selector(d: int, M: float) -> FeedForwardNet:
    """(x, y, t) -> (x, t) for t >= 1 and (y, t) for t <= -1, when x, y in [-M, M]^d.

    Hidden units relu(x_i + M t), relu(y_i - M t), relu(t), relu(-t).
    """
    if int(d) != d or d < 1:
        raise ValidationError("d must be a positive integer")
    if not M > 0:
        raise ValidationError("M must be positive")
    d = int(d)
    M = float(M)
    w1 = np.zeros((2 * d + 2, 2 * d + 1))
    w1[:d, :d] = np.eye(d)
    w1[:d, 2 * d] = M
    w1[d:2 * d, d:2 * d] = np.eye(d)
    w1[d:2 * d, 2 * d] = -M
    w1[2 * d, 2 * d] = 1.0
    w1[2 * d + 1, 2 * d] = -1.0
    w2 = np.zeros((d + 1, 2 * d + 2))
    w2[:d, :d] = np.eye(d)
    w2[:d, d:2 * d] = np.eye(d)
    w2[:d, 2 * d] = -M
    w2[:d, 2 * d + 1] = -M
    w2[d, 2 * d] = 1.0
    w2[d, 2 * d + 1] = -1.0
    return FeedForwardNet((AffineMap(w1, np.zeros(2 * d + 2)), AffineMap(w2, np.zeros(d + 1))))


def _pow2_ceil(x: float) -> float:
    return 2.0 ** math.ceil(math.log2(x))


def schedule_bound(g1: FeedForwardNet, r1: int, g2: FeedForwardNet, r2: int,
                   start: IntervalBox, bits: int = 0) -> float:
    """Largest |state| over the schedule g1^r1 then g2^r2 from the start box,
    counting the branch not taken at every step."""
    ar = arithmetic(bits)
    p1, p2 = net_plan(g1, ar), net_plan(g2, ar)
    lo, hi = ar.lift(start.lower, start.upper)
    bound = ar.magnitude(lo, hi)
    for k in range(1, r1 + r2 + 1):
        act, other = (p1, p2) if k <= r1 else (p2, p1)
        olo, ohi, _ = other.run(lo, hi, track=False)
        lo, hi, _ = act.run(lo, hi, track=False)
        bound = max(bound, ar.magnitude(lo, hi), ar.magnitude(olo, ohi))
    return bound


def count_bound(reps: int) -> float:
    """Padding bound for the countdown channel, which stays within 2 reps + 5."""
    return _pow2_ceil(2 * reps + 5)


def merged_bits(bits: int, M: float, reps: int) -> int:
    """Significant bits the merged block needs: the payload plus the partial
    sums of the selector layer (x + M t with t carried as relu(t + B) - B),
    which stay below 4 M B; one more bit covers a merge nested inside another."""
    if not bits:
        return 0
    return int(bits + math.ceil(math.log2(8 * M * count_bound(reps))))


def merge_two_stages(g1: FeedForwardNet, r1: int, g2: FeedForwardNet, r2: int, A: float,
                     start: IntervalBox | None = None, bits: int = 0):
    """Phi on R^{d+1} with Phi^(r1+r2)(x, 2 r1 + 1) = (g2^r2(g1^r1(x)), 1 - 2 r2).

    `start` overrides the domain box [-A, A]^d when the reachable inputs are
    known more tightly (the certificate is then over `start`). `bits` is the
    payload precision of the stages (0 for plain binary64 nets).
    Returns (Phi, MergeCertificate).
    """
    for name, g in (("g1", g1), ("g2", g2)):
        if g.in_dim != g.out_dim:
            raise ValidationError(f"{name} must map R^d to R^d")
    if g1.in_dim != g2.in_dim:
        raise ValidationError(f"stage dimensions differ ({g1.in_dim} vs {g2.in_dim})")
    for name, r in (("r1", r1), ("r2", r2)):
        if int(r) != r or r < 0:
            raise ValidationError(f"{name} must be a nonnegative integer")
    if not A > 0:
        raise ValidationError("A must be positive")
    r1, r2 = int(r1), int(r2)
    d = g1.in_dim
    box = IntervalBox.cube(d, A) if start is None else start
    if box.dim != d:
        raise ValidationError(f"start box has dimension {box.dim}, expected {d}")
    reach = schedule_bound(g1, r1, g2, r2, box, bits)
    M = _pow2_ceil(max(float(A), 100.0 * (r1 + r2 + 1), reach))

    depth = max(g1.depth, g2.depth, 1)
    p1, p2 = pad_depth(g1, depth, M), pad_depth(g2, depth, M)
    count = pad_depth(affine_net(AffineMap(np.array([[1.0]]), np.array([-2.0]))), depth,
                      count_bound(r1 + r2))
    # G(x, t) = (g1(x), g2(x), t - 2) reading x twice
    fan = AffineMap(np.vstack([np.hstack([np.eye(d), np.zeros((d, 1))]),
                               np.hstack([np.eye(d), np.zeros((d, 1))]),
                               np.hstack([np.zeros((1, d)), np.ones((1, 1))])]),
                    np.zeros(2 * d + 1))
    G = precompose(stack_parallel([p1, p2, count]), fan)
    phi = chain(build_selector(d, M), G)
    target = g1.width + g2.width + 2 * d
    if phi.layers[0].out_dim < target:
        phi = pad_width(phi, target, 0)
    cert = MergeCertificate(box, M, d + 1, r1 + r2, merged_bits(bits, M, r1 + r2), bits)
    return phi, cert


def _embedded_affine_net(amap: AffineMap, dim: int) -> FeedForwardNet:
    """u -> (L(u[:k]), 0) on R^dim as relu(L u) - relu(-L u)."""
    k, m = amap.in_dim, amap.out_dim
    exact = amap.is_exact
    w = to_exact(amap.weights) if exact else amap.weights
    b = to_exact(amap.bias) if exact else amap.bias
    first = AffineMap(np.concatenate([w, -w]), concat([b, -b]))
    second = AffineMap(np.hstack([np.eye(m), -np.eye(m)]), np.zeros(m))
    return embed_net(FeedForwardNet((first, second)), dim)


def merge_with_affines(L1: AffineMap, g1: FeedForwardNet, r1: int, L2: AffineMap,
                       g2: FeedForwardNet, r2: int, L3: AffineMap, A: float, d: int,
                       bits: int = 0) -> RCNet:
    """One RCNet equal to L3 o g2^r2 o L2 o g1^r1 o L1 on [-A, A]^d0.

    The block has width N1 + N2 + 6d + 2, depth max(L1 + 2, L2 + 1), dims
    d + 2, and the net runs r1 + r2 + 1 applications. The certificate of the
    outer merge is attached as the `certificate` attribute of the result.
    """
    d1, d2 = g1.in_dim, g2.in_dim
    if L1.out_dim != d1 or L2.in_dim != d1 or L2.out_dim != d2 or L3.in_dim != d2:
        raise ValidationError("dimension chain L1 -> g1 -> L2 -> g2 -> L3 is broken")
    if g1.out_dim != d1 or g2.out_dim != d2:
        raise ValidationError("stages must be square")
    if int(d) != d or d < max(d1, d2):
        raise ValidationError(f"d = {d} is below max(d1, d2) = {max(d1, d2)}")
    if not A > 0:
        raise ValidationError("A must be positive")
    d, r1, r2 = int(d), int(r1), int(r2)
    d0 = L1.in_dim

    # reachable starting states: L1 of the domain box, zero padded
    img, _ = propagate(affine_net(L1), IntervalBox.cube(d0, A), bits=bits)
    pad0 = np.zeros(d - d1)
    start = IntervalBox(np.concatenate([img.lower[0], pad0]), np.concatenate([img.upper[0], pad0]))
    a_inner = 100.0 * (r1 + r2 + 1) + start.magnitude()

    g1_hat = embed_net(g1, d)
    step = _embedded_affine_net(L2, d)
    inner, inner_cert = merge_two_stages(g1_hat, r1, step, 1, a_inner, start=start, bits=bits)

    g2_hat = embed_net(g2, d + 1)
    t0 = float(2 * r1 + 1)
    start2 = IntervalBox(np.append(start.lower, t0), np.append(start.upper, t0))
    outer, cert = merge_two_stages(inner, r1 + 1, g2_hat, r2, a_inner, start=start2, bits=bits)
    cert = replace(cert, required_bits=max(cert.required_bits, inner_cert.required_bits))
    width = g1.width + g2.width + 6 * d + 2
    if outer.layers[0].out_dim > width or outer.width > width:
        raise ValidationError(f"merged block is wider than {width}")
    outer = pad_width(outer, width, 0)

    exact1, exact3 = L1.is_exact, L3.is_exact
    w_pre = np.concatenate([to_exact(L1.weights) if exact1 else L1.weights,
                            _zeros((d + 2 - d1, d0), exact1)])
    b_pre = concat([L1.bias, np.zeros(d - d1), np.array([t0, float(2 * r1 + 3)])])
    pre = AffineMap(w_pre, b_pre)
    w_post = np.concatenate([to_exact(L3.weights) if exact3 else L3.weights,
                             _zeros((L3.out_dim, d + 2 - d2), exact3)], axis=1)
    post = AffineMap(w_post, L3.bias)
    net = RCNet(pre, outer, r1 + r2 + 1, post, required_bits=cert.required_bits)
    object.__setattr__(net, "certificate", cert)
    return net
