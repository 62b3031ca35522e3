"""Interval propagation through ReLU nets.

Boxes are pushed through each affine layer (lower and upper endpoints via the
positive and negative parts of the weights) and through ReLU (monotone, so
endpoint-wise). Plain interval arithmetic forgets that two hidden units share
an input, which makes differences such as relu(t + 1) - relu(t) look far wider
than they are. A structural pairing step recovers most of that: when a row
combines w * relu(z_a) - w * lam * relu(z_b) and z_a - lam z_b is a short
affine expression, the pair is bounded by

    relu(z_a) - relu(lam z_b)  in  [min(0, lo(z_a - lam z_b)), max(0, hi(...))]

intersected with the plain bound. Pair values become extra features of the
layer, so later differences can use them too.

Two arithmetics are provided. Binary64 endpoints with outward inflation are
fast. Nets carrying long bit strings (a residual that is doubled on every
application) need endpoints at the precision of the bit string, otherwise the
rounding width doubles every step; those use Python integers on a fixed binary
scale with directed rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import sparse

from .errors import NumericError, ValidationError
from .netcore import AffineMap, FeedForwardNet, RCNet, to_exact

_U = 2.0 ** -52
_TINY = 2.0 ** -1000
# rows whose pairing search would touch more than this many entries are left unpaired
_PAIR_BUDGET = 4_000_000


@dataclass(frozen=True, eq=False)
class IntervalBox:
    """Closed per-coordinate intervals; 2-D arrays hold several boxes (one per row)."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lower, dtype=np.float64)
        hi = np.array(self.upper, dtype=np.float64)
        if lo.shape != hi.shape or lo.ndim not in (1, 2):
            raise ValidationError("box endpoints must be 1-D or 2-D arrays of equal shape")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise ValidationError("box needs lower <= upper in every coordinate")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, dim: int, a: float) -> "IntervalBox":
        return cls(np.full(dim, -float(a)), np.full(dim, float(a)))

    @classmethod
    def point(cls, x) -> "IntervalBox":
        x = np.asarray(x, dtype=np.float64)
        return cls(x, x)

    @property
    def dim(self) -> int:
        return self.lower.shape[-1]

    def magnitude(self) -> float:
        return float(max(np.max(np.abs(self.lower)), np.max(np.abs(self.upper))))

    def split(self, pieces: int) -> "IntervalBox":
        """Cut the widest coordinates so there are at most `pieces` sub-boxes."""
        lo, hi = np.atleast_2d(self.lower), np.atleast_2d(self.upper)
        while lo.shape[0] * 2 <= pieces:
            j = int(np.argmax(np.max(hi - lo, axis=0)))
            mid = (lo[:, j] + hi[:, j]) / 2
            lo2, hi2 = lo.copy(), hi.copy()
            hi2[:, j] = mid
            lo[:, j] = mid
            lo, hi = np.concatenate([lo2, lo]), np.concatenate([hi2, hi])
        return IntervalBox(lo, hi)


# ----------------------------------------------------------------------------
# arithmetics
# ----------------------------------------------------------------------------

class _FloatArith:
    """Binary64 endpoints, inflated outward to cover rounding."""

    wide = False

    def lift(self, lo, hi):
        return np.atleast_2d(lo).astype(np.float64), np.atleast_2d(hi).astype(np.float64)

    def prepare(self, w, b):
        wf = np.array([[float(v) for v in row] for row in w]) if w.dtype == object \
            else np.asarray(w, dtype=np.float64)
        bf = np.array([float(v) for v in b]) if b.dtype == object else np.asarray(b, np.float64)
        terms = int(np.max(np.count_nonzero(wf, axis=1), initial=0)) + 2
        pos, neg = np.maximum(wf, 0), np.minimum(wf, 0)
        if wf.size >= 4096 and np.count_nonzero(wf) < 0.15 * wf.size:
            pos, neg = sparse.csr_matrix(pos), sparse.csr_matrix(neg)
            absw = pos - neg
        else:
            absw = pos - neg
        return pos, neg, absw, bf, terms

    @staticmethod
    def _mm(m, x):
        # overflow shows up as inf and is reported by the caller as NumericError
        with np.errstate(over="ignore", invalid="ignore"):
            return (m @ x.T).T

    def affine(self, plan, lo, hi):
        pos, neg, absw, b, terms = plan
        ylo = self._mm(pos, lo) + self._mm(neg, hi) + b
        yhi = self._mm(pos, hi) + self._mm(neg, lo) + b
        mag = np.maximum(np.abs(lo), np.abs(hi))
        err = terms * _U * (self._mm(absw, mag) + np.abs(b)) + _TINY
        return ylo - err, yhi + err

    def relu(self, lo, hi):
        return np.maximum(lo, 0), np.maximum(hi, 0)

    def prepare_lambda(self, lam):
        return np.array([float(v) for v in lam])

    def pair(self, hlo, hhi, a, b, lam, dlo, dhi):
        plo = hlo[:, a] - lam * hhi[:, b]
        phi = hhi[:, a] - lam * hlo[:, b]
        slack = 4 * _U * (np.abs(hhi[:, a]) + lam * np.abs(hhi[:, b])) + _TINY
        plo, phi = plo - slack, phi + slack
        qlo = np.maximum(plo, np.minimum(dlo, 0))
        qhi = np.minimum(phi, np.maximum(dhi, 0))
        bad = qlo > qhi
        return np.where(bad, plo, qlo), np.where(bad, phi, qhi)

    def concat(self, x, y):
        return np.concatenate([x, y], axis=1)

    def magnitude(self, lo, hi) -> float:
        m = float(max(np.max(np.abs(lo), initial=0.0), np.max(np.abs(hi), initial=0.0)))
        if not math.isfinite(m):
            raise NumericError("interval bound overflowed binary64")
        return m

    def to_float(self, lo, hi):
        return lo, hi


class _WideArith:
    """Integer endpoints n * 2**-scale with floor/ceil rounding, so bounds are
    exact up to one unit of 2**-scale per layer."""

    wide = True

    def __init__(self, scale: int):
        self.scale = int(scale)
        self.one = 1 << self.scale

    def _ints(self, x, up):
        x = np.asarray(x, dtype=np.float64)
        out = np.empty(x.shape, dtype=object)
        flat = out.reshape(-1)
        for i, v in enumerate(x.reshape(-1)):
            q = Fraction(float(v)) * self.one
            flat[i] = math.ceil(q) if up else math.floor(q)
        return out

    def lift(self, lo, hi):
        return self._ints(np.atleast_2d(lo), False), self._ints(np.atleast_2d(hi), True)

    def prepare(self, w, b):
        w = to_exact(w)
        b = to_exact(b)
        den = 1
        for v in w.ravel():
            if v:
                den = math.lcm(den, v.denominator)
        for v in b:
            den = math.lcm(den, v.denominator)
        rows, cols = np.nonzero(w != 0)
        vals = np.array([int(w[i, j] * den) for i, j in zip(rows, cols)], dtype=object)
        bias = np.array([int(v * den * self.one) if (v * den * self.one).denominator == 1
                         else None for v in b], dtype=object)
        if any(v is None for v in bias):
            # a bias finer than the scale: round it outward separately
            lo_b = np.array([math.floor(v * den * self.one) for v in b], dtype=object)
            hi_b = np.array([math.ceil(v * den * self.one) for v in b], dtype=object)
        else:
            lo_b = hi_b = bias
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        present, starts = np.unique(rows, return_index=True)
        return (w.shape[0], rows, cols, vals, vals > 0, present, starts, den, lo_b, hi_b)

    def affine(self, plan, lo, hi):
        n_out, rows, cols, vals, pos, present, starts, den, lo_b, hi_b = plan
        nb = lo.shape[0]
        acc_lo = np.empty((nb, n_out), dtype=object)
        acc_hi = np.empty((nb, n_out), dtype=object)
        acc_lo[:] = lo_b
        acc_hi[:] = hi_b
        if len(vals):
            tlo = np.where(pos, vals * lo[:, cols], vals * hi[:, cols])
            thi = np.where(pos, vals * hi[:, cols], vals * lo[:, cols])
            acc_lo[:, present] += np.add.reduceat(tlo, starts, axis=1)
            acc_hi[:, present] += np.add.reduceat(thi, starts, axis=1)
        return acc_lo // den, -((-acc_hi) // den)

    def relu(self, lo, hi):
        return np.maximum(lo, 0), np.maximum(hi, 0)

    def prepare_lambda(self, lam):
        p = np.array([Fraction(v).numerator for v in lam], dtype=object)
        q = np.array([Fraction(v).denominator for v in lam], dtype=object)
        return p, q

    def pair(self, hlo, hhi, a, b, lam, dlo, dhi):
        p, q = lam
        plo = hlo[:, a] - (-((-(p * hhi[:, b])) // q))
        phi = hhi[:, a] - (p * hlo[:, b]) // q
        qlo = np.maximum(plo, np.minimum(dlo, 0))
        qhi = np.minimum(phi, np.maximum(dhi, 0))
        return qlo, qhi

    def concat(self, x, y):
        return np.concatenate([x, y], axis=1)

    def magnitude(self, lo, hi) -> float:
        m = 0
        for arr in (lo, hi):
            if arr.size:
                m = max(m, int(np.max(np.abs(arr))))
        return float(Fraction(m, self.one)) * (1 + 2.0 ** -50)

    def to_float(self, lo, hi):
        f = np.vectorize(lambda v: float(Fraction(v, self.one)), otypes=[np.float64])
        return f(lo), f(hi)


def arithmetic(bits: int = 0):
    """Binary64 for plain nets; integer endpoints when bit payloads are present."""
    if bits and bits > 0:
        return _WideArith(bits + 64)
    return _FloatArith()


# ----------------------------------------------------------------------------
# layer plans with paired units
# ----------------------------------------------------------------------------

def _find_pairs(w, prev):
    """Greedy structural pairing of positive and negative units in each row of w.

    Returns a list per row of (a, b, lam) meaning w[i,a] (relu(z_a) - lam relu(z_b))
    with lam = -w[i,b] / w[i,a] > 0, chosen to minimize |prev[a] - lam prev[b]|_1.
    """
    wf = np.array([[float(v) for v in row] for row in w]) if w.dtype == object \
        else np.asarray(w, dtype=np.float64)
    pw = np.array([[float(v) for v in row] for row in prev]) if prev.dtype == object \
        else np.asarray(prev, dtype=np.float64)
    norms = np.abs(pw).sum(axis=1)
    out = []
    for i in range(wf.shape[0]):
        row = wf[i]
        pos = np.nonzero(row > 0)[0]
        neg = np.nonzero(row < 0)[0]
        found = []
        if len(pos) and len(neg) and len(pos) * len(neg) * pw.shape[1] <= _PAIR_BUDGET:
            lam = -row[neg][None, :] / row[pos][:, None]
            diff = pw[pos][:, None, :] - lam[:, :, None] * pw[neg][None, :, :]
            cost = np.abs(diff).sum(axis=2)
            useful = cost < 0.999 * (norms[pos][:, None] + lam * norms[neg][None, :])
            order = np.argsort(cost, axis=None)
            used_a, used_b = set(), set()
            for flat in order:
                ia, ib = divmod(int(flat), len(neg))
                if not useful[ia, ib]:
                    continue
                a, b = int(pos[ia]), int(neg[ib])
                if a in used_a or b in used_b:
                    continue
                used_a.add(a)
                used_b.add(b)
                found.append((a, b))
        out.append(found)
    return out


class _NetPlan:
    """Prepared layers of one FeedForwardNet for a given arithmetic."""

    def __init__(self, net: FeedForwardNet, arith):
        self.arith = arith
        self.layers = []      # (affine plan over augmented input, pair spec or None)
        aug_prev = None       # augmented weights/bias of the previous layer
        exact = arith.wide
        for idx, layer in enumerate(net.layers):
            w = to_exact(layer.weights) if exact else layer.numeric[0]
            b = to_exact(layer.bias) if exact else layer.numeric[1]
            pair_spec = None
            if idx > 0:
                pairs = _find_pairs(layer.weights, net.layers[idx - 1].weights)
                keys, a_idx, b_idx, lams, cols_of = {}, [], [], [], []
                w_aug = w.copy()
                extra = []
                for i, found in enumerate(pairs):
                    for a, bb in found:
                        wa, wb = w[i, a], w[i, bb]
                        lam = Fraction(-wb) / Fraction(wa) if exact else -wb / wa
                        key = (a, bb, lam)
                        if key not in keys:
                            keys[key] = len(a_idx)
                            a_idx.append(a)
                            b_idx.append(bb)
                            lams.append(lam)
                        extra.append((i, keys[key], wa))
                        w_aug[i, a] = 0
                        w_aug[i, bb] = 0
                if a_idx:
                    cols = np.zeros((w.shape[0], len(a_idx)), dtype=w.dtype)
                    if exact:
                        cols[:] = Fraction(0)
                    for i, k, wa in extra:
                        cols[i, k] = wa
                    w_aug = np.concatenate([w_aug, cols], axis=1)
                    pw, pb = aug_prev
                    lam_col = np.array(lams, dtype=object if exact else np.float64)
                    dw = pw[a_idx] - lam_col[:, None] * pw[b_idx]
                    db = pb[a_idx] - lam_col * pb[b_idx]
                    pair_spec = (np.array(a_idx), np.array(b_idx),
                                 arith.prepare_lambda(lams), arith.prepare(dw, db))
                w = w_aug
            self.layers.append((arith.prepare(w, b), pair_spec))
            aug_prev = (w, b)

    def run(self, lo, hi, track: bool = True):
        """Push lifted boxes through; returns (out_lo, out_hi, magnitude)."""
        ar = self.arith
        mag = 0.0
        feat_lo, feat_hi = lo, hi
        z_lo = z_hi = None
        for idx, (plan, pair_spec) in enumerate(self.layers):
            if idx > 0:
                h_lo, h_hi = ar.relu(z_lo, z_hi)
                if pair_spec is not None:
                    a, b, lam, dplan = pair_spec
                    d_lo, d_hi = ar.affine(dplan, prev_lo, prev_hi)
                    p_lo, p_hi = ar.pair(h_lo, h_hi, a, b, lam, d_lo, d_hi)
                    h_lo, h_hi = ar.concat(h_lo, p_lo), ar.concat(h_hi, p_hi)
                feat_lo, feat_hi = h_lo, h_hi
            z_lo, z_hi = ar.affine(plan, feat_lo, feat_hi)
            prev_lo, prev_hi = feat_lo, feat_hi
            if track:
                mag = max(mag, ar.magnitude(z_lo, z_hi))
        return z_lo, z_hi, mag


_PLAN_CACHE: dict = {}


def net_plan(net: FeedForwardNet, arith) -> _NetPlan:
    key = (id(net), arith.wide, getattr(arith, "scale", 0))
    hit = _PLAN_CACHE.get(key)
    if hit is not None and hit[0] is net:
        return hit[1]
    plan = _NetPlan(net, arith)
    if len(_PLAN_CACHE) > 64:
        _PLAN_CACHE.clear()
    _PLAN_CACHE[key] = (net, plan)
    return plan


def propagate(net: FeedForwardNet, box: IntervalBox, bits: int = 0) -> tuple[IntervalBox, float]:
    """Image box of net over box, and the largest |pre-activation| seen."""
    ar = arithmetic(bits)
    lo, hi = ar.lift(box.lower, box.upper)
    z_lo, z_hi, mag = net_plan(net, ar).run(lo, hi)
    flo, fhi = ar.to_float(z_lo, z_hi)
    return IntervalBox(flo, fhi), mag


def interval_bound(net, box: IntervalBox, bits: int | None = None) -> float:
    """Sound upper bound on |every pre-activation and output| over the box.

    For an RCNet this covers the pre map, every block application, and post.
    Raises NumericError when the bound is not finite.
    """
    if isinstance(net, RCNet):
        if box.dim != net.d_in:
            raise ValidationError(f"box has dimension {box.dim}, net expects {net.d_in}")
        bits = net.required_bits if bits is None else bits
        ar = arithmetic(bits)
        lo, hi = ar.lift(box.lower, box.upper)
        pre = net_plan(FeedForwardNet((net.pre,)), ar)
        lo, hi, mag = pre.run(lo, hi)
        block = net_plan(net.block, ar)
        for _ in range(net.reps):
            lo, hi, m = block.run(lo, hi)
            mag = max(mag, m)
        _, _, m = net_plan(FeedForwardNet((net.post,)), ar).run(lo, hi)
        return max(mag, m)
    if isinstance(net, AffineMap):
        net = FeedForwardNet((net,))
    if box.dim != net.in_dim:
        raise ValidationError(f"box has dimension {box.dim}, net expects {net.in_dim}")
    ar = arithmetic(bits or 0)
    lo, hi = ar.lift(box.lower, box.upper)
    return net_plan(net, ar).run(lo, hi)[2]
