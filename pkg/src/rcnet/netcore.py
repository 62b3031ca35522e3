"""Network representation: affine maps, ReLU nets, and repeated-composition nets.

Weights are binary64 arrays. The one exception is an entry that is a dyadic
rational with more significant bits than binary64 holds; such entries are
kept exactly as ``Fraction`` objects (the arrays then have dtype object).
The float evaluator rounds them, and the dyadic evaluator in
:mod:`rcnet.dyadic` uses them exactly.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property
from typing import Sequence

import numpy as np
from scipy import sparse

from .errors import ValidationError

# Significant bits that binary64 evaluation handles without rounding the
# quantities a construction relies on. Nets asking for more use the dyadic path.
FLOAT_BITS = 52


# ----------------------------------------------------------------------------
# entry handling
# ----------------------------------------------------------------------------

def _is_dyadic(q: Fraction) -> bool:
    den = q.denominator
    return den & (den - 1) == 0


def _canon(v):
    """Float if the value is exactly a float, otherwise an exact dyadic Fraction."""
    if isinstance(v, (float, np.floating)):
        return float(v)
    q = Fraction(v)
    f = float(q)
    if Fraction(f) == q or not _is_dyadic(q):
        return f
    return q


def as_entries(values) -> np.ndarray:
    """Normalize an array-like to float64, or to an object array of Fractions."""
    arr = np.asarray(values)
    if arr.dtype != object:
        return np.array(arr, dtype=np.float64)
    flat = [_canon(v) for v in arr.ravel()]
    if all(type(v) is float for v in flat):
        return np.array(flat, dtype=np.float64).reshape(arr.shape)
    out = np.empty(len(flat), dtype=object)
    out[:] = [v if isinstance(v, Fraction) else Fraction(v) for v in flat]
    return out.reshape(arr.shape)


def to_exact(arr: np.ndarray) -> np.ndarray:
    """Object array of Fractions with the same values (floats convert exactly)."""
    arr = np.asarray(arr)
    out = np.empty(arr.size, dtype=object)
    out[:] = [v if isinstance(v, Fraction) else Fraction(float(v)) for v in arr.ravel()]
    return out.reshape(arr.shape)


def to_float(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.dtype != object:
        return arr.astype(np.float64, copy=False)
    return np.array([float(v) for v in arr.ravel()], dtype=np.float64).reshape(arr.shape)


def _any_exact(*arrays) -> bool:
    return any(np.asarray(a).dtype == object for a in arrays)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr.setflags(write=False)
    return arr


# ----------------------------------------------------------------------------
# types
# ----------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AffineMap:
    """x -> weights @ x + bias."""

    weights: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        w = as_entries(self.weights)
        b = as_entries(self.bias)
        if w.ndim != 2 or b.ndim != 1:
            raise ValidationError("affine map needs a 2-D weight matrix and a 1-D bias")
        if w.shape[0] != b.shape[0]:
            raise ValidationError(
                f"weight rows ({w.shape[0]}) must equal bias length ({b.shape[0]})")
        for a in (w, b):
            if a.dtype != object and not np.all(np.isfinite(a)):
                raise ValidationError("affine map entries must be finite")
        object.__setattr__(self, "weights", _frozen(w))
        object.__setattr__(self, "bias", _frozen(b))

    @property
    def in_dim(self) -> int:
        return self.weights.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights.shape[0]

    @property
    def is_exact(self) -> bool:
        return _any_exact(self.weights, self.bias)

    @cached_property
    def numeric(self) -> tuple[np.ndarray, np.ndarray]:
        """(W, b) as float64 arrays."""
        return _frozen(to_float(self.weights).copy()), _frozen(to_float(self.bias).copy())

    @classmethod
    def identity(cls, n: int) -> "AffineMap":
        return cls(np.eye(n), np.zeros(n))

    @classmethod
    def zero(cls, out_dim: int, in_dim: int) -> "AffineMap":
        return cls(np.zeros((out_dim, in_dim)), np.zeros(out_dim))

    def __call__(self, x):
        return eval_affine(self, x)


@dataclass(frozen=True, eq=False)
class FeedForwardNet:
    """Affine layers with ReLU after every layer except the last.

    depth is the number of hidden layers (len(layers) - 1) and width the
    largest hidden-layer size; a single layer is a degenerate depth-0 net.
    """

    layers: tuple[AffineMap, ...]

    def __post_init__(self):
        layers = tuple(self.layers)
        if not layers:
            raise ValidationError("a network needs at least one affine layer")
        for i in range(len(layers) - 1):
            if layers[i].out_dim != layers[i + 1].in_dim:
                raise ValidationError(
                    f"layer {i} outputs {layers[i].out_dim} values but layer {i + 1} "
                    f"expects {layers[i + 1].in_dim}")
        object.__setattr__(self, "layers", layers)

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def depth(self) -> int:
        return len(self.layers) - 1

    @property
    def hidden_widths(self) -> list[int]:
        return [layer.out_dim for layer in self.layers[:-1]]

    @property
    def width(self) -> int:
        return max(self.hidden_widths, default=0)

    @property
    def is_exact(self) -> bool:
        return any(layer.is_exact for layer in self.layers)

    def size(self) -> tuple[int, int, int, int]:
        """(width, depth, in_dim, out_dim), the NN(N, L, d1, d2) class signature."""
        return self.width, self.depth, self.in_dim, self.out_dim

    @cached_property
    def _operators(self):
        ops = []
        for layer in self.layers:
            w, b = layer.numeric
            if w.size >= 4096 and np.count_nonzero(w) < 0.15 * w.size:
                ops.append((sparse.csr_matrix(w), b))
            else:
                ops.append((np.ascontiguousarray(w.T), b))
        return ops

    def _apply(self, i: int, h: np.ndarray) -> np.ndarray:
        op, b = self._operators[i]
        if sparse.issparse(op):
            return (op @ h.T).T + b
        return h @ op + b

    def __call__(self, x):
        return eval_net(self, x)


@dataclass(frozen=True, eq=False)
class RCNet:
    """post o block^reps o pre; reps = 0 is the identity composition.

    required_bits records how many significant bits the construction needs
    for exact evaluation; 0 means binary64 is adequate.
    """

    pre: AffineMap
    block: FeedForwardNet
    reps: int
    post: AffineMap
    required_bits: int = 0

    def __post_init__(self):
        reps = int(self.reps)
        if reps != self.reps or reps < 0:
            raise ValidationError("reps must be a nonnegative integer")
        m = self.block.in_dim
        if self.block.out_dim != m:
            raise ValidationError("the repeated block must map R^m to R^m")
        if self.pre.out_dim != m or self.post.in_dim != m:
            raise ValidationError(
                f"pre/post dimensions ({self.pre.out_dim}, {self.post.in_dim}) "
                f"do not match the block dimension {m}")
        object.__setattr__(self, "reps", reps)
        object.__setattr__(self, "required_bits", int(self.required_bits))

    @property
    def d_in(self) -> int:
        return self.pre.in_dim

    @property
    def d_block(self) -> int:
        return self.block.in_dim

    @property
    def d_out(self) -> int:
        return self.post.out_dim

    def with_reps(self, reps: int) -> "RCNet":
        return RCNet(self.pre, self.block, reps, self.post, self.required_bits)

    def __call__(self, x, backend: str = "auto"):
        return eval_rcnet(self, x, backend=backend)


# ----------------------------------------------------------------------------
# evaluation
# ----------------------------------------------------------------------------

def _as_input(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 0 or x.shape[-1] != dim:
        raise ValidationError(f"expected input of dimension {dim}, got shape {x.shape}")
    return x


def eval_affine(amap: AffineMap, x) -> np.ndarray:
    x = _as_input(x, amap.in_dim)
    w, b = amap.numeric
    return x @ w.T + b


def eval_net(net: FeedForwardNet, x) -> np.ndarray:
    """Evaluate a ReLU net on one point (shape (d,)) or a batch (shape (P, d))."""
    h = _as_input(x, net.in_dim)
    single = h.ndim == 1
    h = np.atleast_2d(h)
    last = len(net.layers) - 1
    for i in range(last + 1):
        h = net._apply(i, h)
        if i < last:
            np.maximum(h, 0.0, out=h)
    return h[0] if single else h


def pick_backend(net: RCNet, backend: str = "auto") -> str:
    if backend == "auto":
        return "float64" if net.required_bits <= FLOAT_BITS else "dyadic"
    if backend not in ("float64", "dyadic"):
        raise ValidationError(f"unknown backend {backend!r}")
    return backend


def eval_rcnet(net: RCNet, x, backend: str = "auto") -> np.ndarray:
    """post(block^reps(pre(x))).

    backend "auto" picks binary64 unless the net records a precision need
    beyond it, in which case the exact dyadic evaluator runs.
    """
    x = _as_input(x, net.d_in)
    if pick_backend(net, backend) == "dyadic":
        from .dyadic import eval_rcnet_dyadic
        return eval_rcnet_dyadic(net, x)
    h = eval_affine(net.pre, x)
    for _ in range(net.reps):
        h = eval_net(net.block, h)
    return eval_affine(net.post, h)


def euler_flow_check(block: FeedForwardNet, z0, S: int, delta: float):
    """Forward Euler on F(y) = (block(y) - y)/delta next to block^S(z0).

    Each Euler step z + delta*F(z) equals block(z), so the pair agrees up to
    rounding.
    """
    if block.in_dim != block.out_dim:
        raise ValidationError("the block must be square-dimensional")
    if S < 0 or not delta > 0:
        raise ValidationError("need S >= 0 and delta > 0")
    z = _as_input(z0, block.in_dim)
    euler = z.copy()
    composed = z.copy()
    for _ in range(S):
        euler = euler + delta * ((block(euler) - euler) / delta)
        composed = block(composed)
    return euler, composed


# ----------------------------------------------------------------------------
# assembly helpers
# ----------------------------------------------------------------------------

def _zeros(shape, exact: bool) -> np.ndarray:
    if not exact:
        return np.zeros(shape)
    out = np.empty(shape, dtype=object)
    out.fill(Fraction(0))
    return out


def block_diag(mats: Sequence[np.ndarray]) -> np.ndarray:
    exact = _any_exact(*mats)
    mats = [to_exact(m) if exact else np.asarray(m, dtype=np.float64) for m in mats]
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    out = _zeros((rows, cols), exact)
    i = j = 0
    for m in mats:
        out[i:i + m.shape[0], j:j + m.shape[1]] = m
        i += m.shape[0]
        j += m.shape[1]
    return out


def concat(vectors: Sequence[np.ndarray]) -> np.ndarray:
    if _any_exact(*vectors):
        return np.concatenate([to_exact(v) for v in vectors])
    return np.concatenate([np.asarray(v, dtype=np.float64) for v in vectors])


def add_bias(amap: AffineMap, shift) -> AffineMap:
    """The same map with `shift` added to its output."""
    shift = np.broadcast_to(np.asarray(shift, dtype=object if _any_exact(shift) else float),
                            (amap.out_dim,))
    if amap.is_exact or _any_exact(shift):
        return AffineMap(amap.weights, to_exact(amap.bias) + to_exact(shift))
    return AffineMap(amap.weights, amap.bias + shift)


def compose_affine(outer: AffineMap, inner: AffineMap, exact: bool = False) -> AffineMap:
    """outer o inner. With exact=True (or exact inputs) the product is formed in
    rational arithmetic, so integer-valued results stay exact."""
    if outer.in_dim != inner.out_dim:
        raise ValidationError(
            f"cannot compose: outer expects {outer.in_dim}, inner gives {inner.out_dim}")
    if exact or outer.is_exact or inner.is_exact:
        wo, bo = to_exact(outer.weights), to_exact(outer.bias)
        wi, bi = to_exact(inner.weights), to_exact(inner.bias)
        return AffineMap(wo.dot(wi), wo.dot(bi) + bo)
    wo, bo = outer.numeric
    wi, bi = inner.numeric
    return AffineMap(wo @ wi, wo @ bi + bo)


def precompose(net: FeedForwardNet, amap: AffineMap) -> FeedForwardNet:
    """net o amap, folded into the first layer."""
    first = compose_affine(net.layers[0], amap)
    return FeedForwardNet((first, *net.layers[1:]))


def postcompose(amap: AffineMap, net: FeedForwardNet) -> FeedForwardNet:
    """amap o net, folded into the last layer."""
    last = compose_affine(amap, net.layers[-1])
    return FeedForwardNet((*net.layers[:-1], last))


def chain(outer: FeedForwardNet, inner: FeedForwardNet) -> FeedForwardNet:
    """outer o inner; inner's last affine layer merges with outer's first."""
    joint = compose_affine(outer.layers[0], inner.layers[-1])
    return FeedForwardNet((*inner.layers[:-1], joint, *outer.layers[1:]))


def affine_net(amap: AffineMap) -> FeedForwardNet:
    return FeedForwardNet((amap,))


def pad_depth(net: FeedForwardNet, target_depth: int, bound: float) -> FeedForwardNet:
    """Deepen net to target_depth using y = relu(y + M) - M.

    Agrees with net wherever net's output lies in [-M, M]^out_dim; outputs
    below -M come back as -M.
    """
    if target_depth < net.depth:
        raise ValidationError(
            f"target depth {target_depth} is below the current depth {net.depth}")
    if not bound > 0:
        raise ValidationError("the padding bound M must be positive")
    extra = target_depth - net.depth
    if extra == 0:
        return net
    n = net.out_dim
    lifted = add_bias(net.layers[-1], bound)
    tail = [AffineMap.identity(n) for _ in range(extra - 1)]
    drop = AffineMap(np.eye(n), np.full(n, -float(bound)))
    return FeedForwardNet((*net.layers[:-1], lifted, *tail, drop))


def stack_parallel(nets: Sequence[FeedForwardNet]) -> FeedForwardNet:
    """Block-diagonal stack: input and output are the concatenations."""
    nets = list(nets)
    if not nets:
        raise ValidationError("nothing to stack")
    depths = {net.depth for net in nets}
    if len(depths) != 1:
        raise ValidationError(
            f"stacked nets must share a depth (got {sorted(depths)}); pad_depth them first")
    layers = []
    for i in range(len(nets[0].layers)):
        parts = [net.layers[i] for net in nets]
        layers.append(AffineMap(block_diag([p.weights for p in parts]),
                                concat([p.bias for p in parts])))
    return FeedForwardNet(tuple(layers))


def pad_width(net: FeedForwardNet, width: int, layer: int = 0) -> FeedForwardNet:
    """Add inactive (always-zero) units to one hidden layer so it has `width` units.

    The function computed is unchanged; only the width accounting moves.
    """
    if net.depth == 0:
        raise ValidationError("a depth-0 net has no hidden layer to widen")
    current = net.layers[layer].out_dim
    if width < current:
        raise ValidationError(f"layer {layer} already has {current} > {width} units")
    if width == current:
        return net
    extra = width - current
    head, nxt = net.layers[layer], net.layers[layer + 1]
    exact_h, exact_n = head.is_exact, nxt.is_exact
    w_head = np.concatenate([to_exact(head.weights) if exact_h else head.weights,
                             _zeros((extra, head.in_dim), exact_h)])
    b_head = np.concatenate([to_exact(head.bias) if exact_h else head.bias,
                             _zeros(extra, exact_h)])
    w_next = np.concatenate([to_exact(nxt.weights) if exact_n else nxt.weights,
                             _zeros((nxt.out_dim, extra), exact_n)], axis=1)
    layers = list(net.layers)
    layers[layer] = AffineMap(w_head, b_head)
    layers[layer + 1] = AffineMap(w_next, nxt.bias)
    return FeedForwardNet(tuple(layers))


def embed_net(net: FeedForwardNet, dim: int, offset: int = 0) -> FeedForwardNet:
    """Run net on coordinates [offset, offset+k) of R^dim, writing its output to
    the same leading slots and zeros elsewhere, i.e. u -> (net(u_k), 0)."""
    k_in, k_out = net.in_dim, net.out_dim
    if offset + max(k_in, k_out) > dim:
        raise ValidationError(f"cannot embed a {k_in}->{k_out} net into R^{dim}")
    first, last = net.layers[0], net.layers[-1]
    exact_f, exact_l = first.is_exact, last.is_exact
    w_first = _zeros((first.out_dim, dim), exact_f)
    w_first[:, offset:offset + k_in] = to_exact(first.weights) if exact_f else first.weights
    layers = list(net.layers)
    layers[0] = AffineMap(w_first, first.bias)
    last = layers[-1]
    exact_l = last.is_exact
    w_last = _zeros((dim, last.in_dim), exact_l)
    b_last = _zeros(dim, exact_l)
    w_last[offset:offset + k_out] = to_exact(last.weights) if exact_l else last.weights
    b_last[offset:offset + k_out] = to_exact(last.bias) if exact_l else last.bias
    layers[-1] = AffineMap(w_last, b_last)
    return FeedForwardNet(tuple(layers))


def selection_map(dim: int, rows: Sequence[int]) -> AffineMap:
    """Coordinate projection x -> (x[rows[0]], x[rows[1]], ...)."""
    w = np.zeros((len(rows), dim))
    w[np.arange(len(rows)), list(rows)] = 1.0
    return AffineMap(w, np.zeros(len(rows)))


# ----------------------------------------------------------------------------
# serialization
# ----------------------------------------------------------------------------

def _num(v) -> str:
    if isinstance(v, Fraction):
        return f'"{v.numerator}/{v.denominator}"'
    text = format(float(v), ".17g")
    if text in ("inf", "-inf", "nan"):
        raise ValidationError("cannot serialize a non-finite entry")
    return text


def _vec(values) -> str:
    return "[" + ", ".join(_num(v) for v in values) + "]"


def _mat(values) -> str:
    return "[" + ", ".join(_vec(row) for row in values) + "]"


def _map_doc(amap: AffineMap) -> str:
    return '{"w": ' + _mat(amap.weights) + ', "b": ' + _vec(amap.bias) + "}"


def serialize(net: RCNet, meta: dict | None = None) -> str:
    """JSON text; floats carry 17 significant digits, exact dyadics are "p/q" strings.
    `meta` (plain JSON values) is stored alongside and ignored by deserialize."""
    layers = ",\n    ".join(_map_doc(layer) for layer in net.block.layers)
    parts = [
        f'  "d_in": {net.d_in}',
        f'  "d_block": {net.d_block}',
        f'  "d_out": {net.d_out}',
        f'  "reps": {net.reps}',
        f'  "required_bits": {net.required_bits}',
        f'  "pre": {_map_doc(net.pre)}',
        f'  "block": {{"layers": [\n    {layers}\n  ]}}',
        f'  "post": {_map_doc(net.post)}',
    ]
    if meta:
        import json
        parts.append(f'  "meta": {json.dumps(meta, sort_keys=True)}')
    return "{\n" + ",\n".join(parts) + "\n}\n"


def _entry(v):
    if isinstance(v, str):
        num, _, den = v.partition("/")
        return Fraction(int(num), int(den or 1))
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ValidationError(f"bad numeric entry {v!r}")
    return float(v)


def _load_map(doc, rows: int, cols: int, what: str) -> AffineMap:
    try:
        w_raw, b_raw = doc["w"], doc["b"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{what}: missing 'w' or 'b'") from exc
    if len(w_raw) != rows or any(len(r) != cols for r in w_raw) or len(b_raw) != rows:
        raise ValidationError(f"{what}: expected a {rows}x{cols} map")
    w = np.empty((rows, cols), dtype=object)
    for i, r in enumerate(w_raw):
        for j, v in enumerate(r):
            w[i, j] = _entry(v)
    b = np.empty(rows, dtype=object)
    b[:] = [_entry(v) for v in b_raw]
    return AffineMap(w, b)


def deserialize(text: str) -> RCNet:
    import json
    try:
        doc = json.loads(text)
        d_in, m, d_out = int(doc["d_in"]), int(doc["d_block"]), int(doc["d_out"])
        reps = int(doc["reps"])
        raw_layers = doc["block"]["layers"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ValidationError(f"malformed network document: {exc}") from exc
    if not raw_layers:
        raise ValidationError("block has no layers")
    pre = _load_map(doc["pre"], m, d_in, "pre")
    layers = []
    width_in = m
    for i, raw in enumerate(raw_layers):
        rows = len(raw.get("b", [])) if isinstance(raw, dict) else -1
        if i == len(raw_layers) - 1:
            rows = m
        layers.append(_load_map(raw, rows, width_in, f"block layer {i}"))
        width_in = rows
    post = _load_map(doc["post"], d_out, m, "post")
    return RCNet(pre, FeedForwardNet(tuple(layers)), reps, post,
                 int(doc.get("required_bits", 0)))


def save(net: RCNet, path, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(serialize(net, meta))


def _read(path) -> str:
    try:
        with open(path, encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc.strerror}") from None


def load_meta(path) -> dict:
    """The metadata stored with a saved net ({} when there is none)."""
    import json
    try:
        doc = json.loads(_read(path))
    except ValueError as exc:
        raise ValidationError(f"malformed network document: {exc}") from exc
    meta = doc.get("meta", {}) if isinstance(doc, dict) else {}
    return meta if isinstance(meta, dict) else {}


def load(path) -> RCNet:
    return deserialize(_read(path))
