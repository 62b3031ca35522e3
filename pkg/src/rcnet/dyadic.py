"""Multi-limb fixed-point evaluation of repeated-composition nets.

Some constructions store a long binary expansion in a single real number
(bit extraction reads off 100+ bits one at a time), which binary64 cannot
hold. This evaluator keeps every coordinate as a signed integer split into
30-bit limbs times a per-coordinate power of two. Weights are dyadic
rationals, so products and sums are formed exactly and each layer output is
rounded once, far below the resolution the construction relies on.

Layout: a value is ``sum(limb[k] * 2**(30*k)) * 2**e`` with limbs 0..L-2 in
[0, 2**30) and a signed top limb in [-2**29, 2**29). The exponent ``e`` is
fixed per coordinate from a magnitude bound, so a whole batch shares it.
"""
from __future__ import annotations

import math
from fractions import Fraction

import numpy as np
from numba import njit

from .errors import NumericError

LIMB_BITS = 30
MASK = (1 << LIMB_BITS) - 1
_TOP = 1 << (LIMB_BITS - 1)
_SAFE = 1 << (LIMB_BITS + 1)

# Extra precision carried beyond a net's declared requirement.
MARGIN_BITS = 32
CHUNK = 2048
PROBE = 192


# ----------------------------------------------------------------------------
# kernel
# ----------------------------------------------------------------------------

@njit(cache=True)
def _affine_kernel(x, indptr, cols, c_off, c_ptr, c_len, c_limbs, bias, g, L, relu, out):
    """out = round(W x + b) in the output exponent grid. Returns the overflow count."""
    P, _, Lx = x.shape
    n_out, A = bias.shape
    acc = np.empty(A, np.int64)
    overflow = 0
    for p in range(P):
        for i in range(n_out):
            for q in range(A):
                acc[q] = bias[i, q]
            for t in range(indptr[i], indptr[i + 1]):
                j = cols[t]
                off = c_off[t]
                base = c_ptr[t]
                n = c_len[t]
                for a in range(Lx):
                    xa = x[p, j, a]
                    if xa == 0:
                        continue
                    for b in range(n):
                        prod = xa * c_limbs[base + b]
                        k = a + b + off
                        acc[k] += prod & MASK
                        acc[k + 1] += prod >> LIMB_BITS
            for q in range(A - 1):
                carry = acc[q] >> LIMB_BITS
                acc[q] -= carry << LIMB_BITS
                acc[q + 1] += carry
            if relu and acc[A - 1] < 0:
                for q in range(L):
                    out[p, i, q] = 0
                continue
            s = acc[A - 1]
            bad = False
            for q in range(A - 2, g + L - 2, -1):
                if s >= _SAFE or s < -_SAFE:
                    bad = True
                    break
                s = (s << LIMB_BITS) + acc[q]
            if bad or s >= _TOP or s < -_TOP:
                overflow += 1
                s = 0
            for q in range(L - 1):
                out[p, i, q] = acc[g + q]
            out[p, i, L - 1] = s
    return overflow


# ----------------------------------------------------------------------------
# exact integer helpers
# ----------------------------------------------------------------------------

def _dyadic_parts(v) -> tuple[int, int]:
    """(num, k) with v == num / 2**k exactly."""
    if isinstance(v, Fraction):
        num, den = v.numerator, v.denominator
    else:
        num, den = float(v).as_integer_ratio()
    k = den.bit_length() - 1
    if den != 1 << k:
        raise NumericError(f"weight {v!r} is not a dyadic rational")
    return num, k


def _scaled_int(num: int, k: int, shift: int) -> int:
    """round(num / 2**k * 2**shift) as an integer."""
    s = shift - k
    if s >= 0:
        return num << s
    return (num + (1 << (-s - 1))) >> (-s)


def _split(value: int) -> tuple[int, list[int]]:
    """(offset, limbs): value == sum(limbs[b] * 2**(30*(offset+b)))."""
    if value == 0:
        return 0, [0]
    off = 0
    while value & MASK == 0:
        value >>= LIMB_BITS
        off += 1
    limbs = []
    while True:
        low = value & MASK
        value >>= LIMB_BITS
        if value == 0 and low < _TOP:
            limbs.append(low)
            return off, limbs
        if value == -1 and low >= _TOP:
            limbs.append(low - (1 << LIMB_BITS))
            return off, limbs
        limbs.append(low)


def _limbs_fixed(value: int, n: int) -> list[int]:
    """n limbs, the lower ones in [0, 2**30) and a signed top limb."""
    limbs = []
    for _ in range(n - 1):
        limbs.append(value & MASK)
        value >>= LIMB_BITS
    if not -(1 << 62) <= value < (1 << 62):
        raise NumericError("bias does not fit the accumulator")
    limbs.append(value)
    return limbs


def _entries(amap):
    """Nonzero weights as (row, col, num, k) plus bias parts."""
    w, b = amap.weights, amap.bias
    rows, cols = np.nonzero(to_bool(w))
    entries = [(int(i), int(j), *_dyadic_parts(w[i, j])) for i, j in zip(rows, cols)]
    bias = [_dyadic_parts(v) for v in b]
    return entries, bias


def to_bool(w):
    if w.dtype == object:
        return np.array([[v != 0 for v in row] for row in w], dtype=bool).reshape(w.shape)
    return w != 0


# ----------------------------------------------------------------------------
# plan
# ----------------------------------------------------------------------------

class _Compiled:
    __slots__ = ("indptr", "cols", "c_off", "c_ptr", "c_len", "c_limbs", "bias", "g", "relu")


def _compile(entries, bias_parts, n_out, e_in, e_out, Lx, L, relu) -> _Compiled:
    g = Lx + 2
    G = LIMB_BITS * g
    per_row = [[] for _ in range(n_out)]
    width = 1
    for i, j, num, k in entries:
        c = _scaled_int(num, k, int(e_in[j]) - int(e_out[i]) + G)
        if c == 0:
            continue
        off, limbs = _split(c)
        per_row[i].append((j, off, limbs))
        width = max(width, off + len(limbs))
    A = max(Lx + width + 1, g + L)
    biases = []
    for i, (num, k) in enumerate(bias_parts):
        bint = _scaled_int(num, k, G - int(e_out[i]))
        need = (abs(bint).bit_length() + LIMB_BITS) // LIMB_BITS + 1
        A = max(A, need)
        biases.append(bint)
    comp = _Compiled()
    indptr, cols, c_off, c_ptr, c_len, c_limbs = [0], [], [], [], [], []
    for row in per_row:
        for j, off, limbs in row:
            cols.append(j)
            c_off.append(off)
            c_ptr.append(len(c_limbs))
            c_len.append(len(limbs))
            c_limbs.extend(limbs)
        indptr.append(len(cols))
    comp.indptr = np.array(indptr, np.int64)
    comp.cols = np.array(cols, np.int64)
    comp.c_off = np.array(c_off, np.int64)
    comp.c_ptr = np.array(c_ptr, np.int64)
    comp.c_len = np.array(c_len, np.int64)
    comp.c_limbs = np.array(c_limbs or [0], np.int64)
    comp.bias = np.array([_limbs_fixed(b, A) for b in biases], np.int64).reshape(n_out, A)
    comp.g = g
    comp.relu = relu
    return comp


def _exponents(bound: np.ndarray, L: int) -> np.ndarray:
    """Per-row exponent e with 2*bound < 2**(30L-1+e)."""
    bound = np.maximum(np.asarray(bound, dtype=np.float64), 1.0)
    _, ex = np.frexp(bound)  # bound < 2**ex
    return (ex.astype(np.int64) + 1) - (LIMB_BITS * L - 1)


def _to_limbs(values: np.ndarray, e: np.ndarray, L: int) -> np.ndarray:
    """Fixed-point image (floor) of float values; shape (P, n) -> (P, n, L).

    Each value is scaled exactly and split as a Python integer; splitting in
    floating point loses the low bits of negative values.
    """
    out = np.zeros(values.shape + (L,), np.int64)
    for idx, v in np.ndenumerate(values):
        q = math.floor(math.ldexp(float(v), -int(e[idx[-1]])))
        out[idx] = _limbs_fixed(q, L)
    return out


def _to_float(limbs: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Nearest binary64 values. The limbs are joined as exact integers first:
    summing them in floating point cancels badly for small negative values."""
    L = limbs.shape[-1]
    total = limbs[..., L - 1].astype(object)
    for k in range(L - 2, -1, -1):
        total = total * (1 << LIMB_BITS) + limbs[..., k].astype(object)
    out = np.empty(total.shape)
    for idx, v in np.ndenumerate(total):
        shift = max(0, abs(v).bit_length() - 1000)
        out[idx] = math.ldexp(float(v >> shift), shift + int(e[idx[-1]]))
    return out


def _magnitude(limbs: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Per-coordinate max |value|. Computed from the exact value: the top two
    limbs alone overstate small negative numbers (-1 * 2**30 + (2**30 - 1))."""
    return np.abs(_to_float(limbs, e)).max(axis=0)


class DyadicPlan:
    """Everything about a net that does not depend on the evaluation points."""

    def __init__(self, net):
        self.net = net
        block = net.block.layers
        # slots: 0 input, 1 state, 2.. hidden layers of the block, last output
        self.slot_sizes = [net.d_in, net.d_block, *net.block.hidden_widths, net.d_out]
        out_slot = len(self.slot_sizes) - 1
        hidden = list(range(2, 2 + len(block) - 1))
        self.pre = (0, 1, _entries(net.pre), False)
        chain = [1, *hidden, 1]
        self.block = [(chain[i], chain[i + 1], _entries(layer), i < len(block) - 1)
                      for i, layer in enumerate(block)]
        self.post = (1, out_slot, _entries(net.post), False)
        self._cache = {}

    def compile(self, exps, L):
        key = (tuple(tuple(e.tolist()) for e in exps), L)
        if key not in self._cache:
            def comp(spec):
                src, dst, (entries, bias), relu = spec
                return _compile(entries, bias, self.slot_sizes[dst], exps[src], exps[dst],
                                L, L, relu)
            self._cache = {key: (comp(self.pre), [comp(s) for s in self.block],
                                 comp(self.post))}
        return self._cache[key]

    def run(self, x, bounds, L, track=False):
        """Evaluate on x with per-slot bounds. Returns (values, overflow, maxima)."""
        exps = [_exponents(b, L) for b in bounds]
        pre, block, post = self.compile(exps, L)
        maxima = [np.zeros(n) for n in self.slot_sizes] if track else None
        overflow = 0

        def step(comp, state, dst):
            nonlocal overflow
            out = np.empty((state.shape[0], self.slot_sizes[dst], L), np.int64)
            overflow += _affine_kernel(state, comp.indptr, comp.cols, comp.c_off, comp.c_ptr,
                                       comp.c_len, comp.c_limbs, comp.bias, comp.g, L,
                                       comp.relu, out)
            if track:
                np.maximum(maxima[dst], _magnitude(out, exps[dst]), out=maxima[dst])
            return out

        state = _to_limbs(x, exps[0], L)
        if track:
            maxima[0] = np.abs(x).max(axis=0)
        state = step(pre, state, 1)
        for _ in range(self.net.reps):
            for comp, (_, dst, _, _) in zip(block, self.block):
                state = step(comp, state, dst)
        state = step(post, state, len(self.slot_sizes) - 1)
        return _to_float(state, exps[-1]), overflow, maxima


def limbs_for(bits: int) -> int:
    return max(2, math.ceil((bits + MARGIN_BITS) / LIMB_BITS))


def eval_rcnet_dyadic(net, x, bits: int | None = None, chunk: int = CHUNK) -> np.ndarray:
    """Evaluate post(block^reps(pre(x))) with bits + 32 significant bits per coordinate."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    bits = net.required_bits if bits is None else bits
    L = limbs_for(bits)
    plan = DyadicPlan(net)

    # A small probe fixes the magnitude of every coordinate. It runs with a
    # uniform bound of 2**(bits+64) (binary64 magnitudes are unreliable exactly
    # where this evaluator is needed) and extra limbs to keep the resolution.
    idx = np.unique(np.linspace(0, len(x) - 1, min(len(x), PROBE)).astype(int))
    probe = x[idx]
    cap_bits = bits + 64
    Lp = L + math.ceil(cap_bits / LIMB_BITS) + 1
    safe = [np.full(n, 2.0 ** cap_bits) for n in plan.slot_sizes]
    safe[0] = np.maximum(np.abs(x).max(axis=0), 1.0)
    _, overflow, maxima = plan.run(probe, safe, Lp, track=True)
    if overflow:
        raise NumericError(f"values exceed 2**{cap_bits} during fixed-point evaluation")
    bounds = [np.maximum(16 * m, 1.0) for m in maxima]
    bounds[0] = safe[0]

    out = np.empty((len(x), net.d_out))
    start = 0
    while start < len(x):
        part = x[start:start + chunk]
        values, overflow, _ = plan.run(part, bounds, L)
        if overflow:
            # a point outside the probe's range: redo the chunk with the safe sizing
            values, overflow, _ = plan.run(part, safe, Lp)
        if overflow:
            raise NumericError("fixed-point evaluation overflowed")
        out[start:start + chunk] = values
        start += chunk
    return out[0] if single else out
