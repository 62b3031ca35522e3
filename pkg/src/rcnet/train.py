"""Training weight-shared repeated-composition nets at desk scale.

The model is x -> W2 g^r(W1 x + b1) + b2 with one block g(h) = relu(A h + b)
applied r times, so the parameter count does not depend on r. Gradients are
computed by hand (backpropagation through the r applications, summing the
block's contributions), and the optimizer is Adam with a step-decay schedule.

Two tasks: regression of a smooth trigonometric surface on [0,1]^2 (MSE) and
classification of two interleaved Archimedean spiral tubes (softmax with
cross-entropy).
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import NumericError, ValidationError
from .targets import paper_trig_values

LOSSES = ("mse", "cross-entropy")
PARAM_NAMES = ("W1", "b1", "A", "b", "W2", "b2")


def paper_trig_target(x) -> np.ndarray:
    """The trigonometric regression target on [0,1]^2 (rows of x)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != 2:
        raise ValidationError("the trigonometric target takes points of [0,1]^2")
    return paper_trig_values(x)


# ----------------------------------------------------------------------------
# model
# ----------------------------------------------------------------------------

@dataclass
class TrainableRCNet:
    """pre (W1, b1): R^d -> R^n, shared block (A, b), post (W2, b2): R^n -> R^out."""

    W1: np.ndarray
    b1: np.ndarray
    A: np.ndarray
    b: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    reps: int

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.b.shape != (n,):
            raise ValidationError("block must be an n x n matrix and an n-vector")
        if self.W1.shape[0] != n or self.b1.shape != (n,):
            raise ValidationError("pre map must land in R^n")
        if self.W2.shape[1] != n or self.b2.shape != (self.W2.shape[0],):
            raise ValidationError("post map must start from R^n")
        if int(self.reps) != self.reps or self.reps < 1:
            raise ValidationError("reps must be a positive integer")

    @classmethod
    def init(cls, d: int, n: int, out: int, reps: int, rng: np.random.Generator):
        """Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases."""
        if n < 1 or d < 1 or out < 1:
            raise ValidationError("dimensions must be positive")

        def u(shape, fan_in):
            s = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-s, s, size=shape)

        return cls(u((n, d), d), u(n, d), u((n, n), n), u(n, n), u((out, n), n), u(out, n),
                   int(reps))

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def params(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def param_count(self) -> int:
        return sum(v.size for v in self.params().values())

    def copy(self) -> "TrainableRCNet":
        return replace(self, **{k: v.copy() for k, v in self.params().items()})

    def forward(self, x) -> np.ndarray:
        h = np.asarray(x, dtype=np.float64) @ self.W1.T + self.b1
        for _ in range(self.reps):
            h = np.maximum(h @ self.A.T + self.b, 0.0)
        return h @ self.W2.T + self.b2

    __call__ = forward


def _loss_and_grad(y: np.ndarray, target: np.ndarray, loss: str):
    """Loss value and dLoss/dy for a batch of outputs y."""
    m = y.shape[0]
    if loss == "mse":
        t = np.asarray(target, dtype=np.float64).reshape(y.shape)
        diff = y - t
        return float(np.mean(diff ** 2)), 2.0 * diff / diff.size
    if loss == "cross-entropy":
        labels = np.asarray(target).reshape(-1).astype(np.int64)
        if labels.shape[0] != m or labels.min() < 0 or labels.max() >= y.shape[1]:
            raise ValidationError("labels must be class indices matching the batch")
        z = y - y.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        value = -float(np.mean(logp[np.arange(m), labels]))
        g = np.exp(logp)
        g[np.arange(m), labels] -= 1.0
        return value, g / m
    raise ValidationError(f"unknown loss {loss!r} (expected one of {LOSSES})")


def forward_backward(net: TrainableRCNet, x, target, loss: str = "mse"):
    """(loss, grads) with grads keyed like net.params(); the shared block's
    gradient sums the contributions of all applications."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.shape[1] != net.W1.shape[1]:
        raise ValidationError(f"batch has dimension {x.shape[1]}, net expects {net.W1.shape[1]}")
    with np.errstate(over="ignore", invalid="ignore"):  # non-finite loss is checked below
        hs = [x @ net.W1.T + net.b1]
        for _ in range(net.reps):
            hs.append(np.maximum(hs[-1] @ net.A.T + net.b, 0.0))
        y = hs[-1] @ net.W2.T + net.b2
        value, gy = _loss_and_grad(y, target, loss)
    if not math.isfinite(value):
        raise NumericError("loss is not finite (training diverged)")

    grads = {"W2": gy.T @ hs[-1], "b2": gy.sum(axis=0)}
    gh = gy @ net.W2
    gA = np.zeros_like(net.A)
    gb = np.zeros_like(net.b)
    for k in range(net.reps, 0, -1):
        gz = gh * (hs[k] > 0)
        gA += gz.T @ hs[k - 1]
        gb += gz.sum(axis=0)
        gh = gz @ net.A
    grads.update(A=gA, b=gb, W1=gh.T @ x, b1=gh.sum(axis=0))
    return value, grads


# ----------------------------------------------------------------------------
# optimizer
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class StepDecay:
    """lr = initial * factor**(i-1) during epochs period*(i-1)+1 .. period*i."""

    initial: float
    factor: float
    period: int

    def __post_init__(self):
        if not (self.initial > 0 and 0 < self.factor <= 1 and self.period >= 1):
            raise ValidationError("schedule must be positive and decaying")

    def __call__(self, epoch: int) -> float:
        return self.initial * self.factor ** ((epoch - 1) // self.period)


class Adam:
    """Adaptive-moment estimation on a dict of arrays, updated in place."""

    def __init__(self, params: dict, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, grads: dict, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            p -= lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# ----------------------------------------------------------------------------
# spiral data
# ----------------------------------------------------------------------------

SPIRAL_A = (0.0, 1.0)
SPIRAL_B = 1.0 / math.pi
SPIRAL_S = 24
SPIRAL_EPS = 0.006


def spiral_curve(theta, cls: int, s: int = SPIRAL_S) -> np.ndarray:
    """Normalized curve point for class cls: r = a + b theta mapped into [0,1]^2."""
    theta = np.asarray(theta, dtype=np.float64)
    r = SPIRAL_A[cls] + SPIRAL_B * theta
    raw = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=-1)
    return (raw + (s + 2)) / (2 * (s + 2))


def _arc_sampler(cls: int, s: int, table: int = 200_001):
    """theta as a function of the arc-length fraction along the curve."""
    theta = np.linspace(0.0, s * math.pi, table)
    r = SPIRAL_A[cls] + SPIRAL_B * theta
    speed = np.sqrt(r ** 2 + SPIRAL_B ** 2)
    arc = np.concatenate([[0.0], np.cumsum((speed[1:] + speed[:-1]) / 2 * np.diff(theta))])
    return lambda u: np.interp(u * arc[-1], arc, theta)


@dataclass
class SpiralDataset:
    """points: normalized coordinates (before standardization), labels 0/1."""

    points: np.ndarray
    labels: np.ndarray
    epsilon: float
    s: int = SPIRAL_S

    def standardized(self, mean: Optional[np.ndarray] = None,
                     std: Optional[np.ndarray] = None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(features, mean, std): mean 0 and std 1 per coordinate, or the given statistics."""
        mean = self.points.mean(axis=0) if mean is None else mean
        std = self.points.std(axis=0) if std is None else std
        return (self.points - mean) / std, mean, std


def generate_spiral(count: int, epsilon: float = SPIRAL_EPS, seed: int = 0,
                    s: int = SPIRAL_S) -> SpiralDataset:
    """count points per class, uniform in arc length along the curve plus a
    uniform offset in the disk of radius epsilon."""
    if int(count) != count or count < 1:
        raise ValidationError("count must be a positive integer")
    if not epsilon >= 0:
        raise ValidationError("epsilon must be nonnegative")
    rng = np.random.default_rng(seed)
    pts, labels = [], []
    for cls in (0, 1):
        theta = _arc_sampler(cls, s)(rng.random(count))
        centre = spiral_curve(theta, cls, s)
        rad = epsilon * np.sqrt(rng.random(count))
        ang = rng.uniform(0.0, 2 * math.pi, count)
        pts.append(centre + np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1))
        labels.append(np.full(count, cls, dtype=np.int64))
    order = rng.permutation(2 * count)
    return SpiralDataset(np.concatenate(pts)[order], np.concatenate(labels)[order], epsilon, s)


def curve_distance(points: np.ndarray, cls: int, s: int = SPIRAL_S,
                   samples: int = 400_001) -> np.ndarray:
    """Distance from each point to a dense discretization of curve cls."""
    from scipy.spatial import cKDTree

    curve = spiral_curve(np.linspace(0.0, s * math.pi, samples), cls, s)
    return cKDTree(curve).query(np.atleast_2d(points))[0]


# ----------------------------------------------------------------------------
# experiments
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    task: str = "trig"
    n_values: tuple = (50, 100)
    r_values: tuple = (1, 2, 3)
    train_samples: int = 20_000
    test_samples: int = 4_000
    batch_size: int = 200
    epochs: int = 200
    lr_initial: float = 0.002
    lr_factor: float = 0.9
    lr_period: int = 5
    trials: int = 6
    trim_top: int = 1
    trim_bottom: int = 1
    window: int = 40          # trailing epochs averaged for ranking and summary
    seed: int = 0x5EED
    workers: int = 0          # 0: one per trial up to the CPU count; 1: serial
    epsilon: float = SPIRAL_EPS

    def __post_init__(self):
        if self.task not in ("trig", "spiral"):
            raise ValidationError("task must be trig or spiral")
        for name in ("train_samples", "test_samples", "batch_size", "epochs", "trials",
                     "window", "lr_period"):
            if int(getattr(self, name)) != getattr(self, name) or getattr(self, name) < 1:
                raise ValidationError(f"{name} must be a positive integer")
        if not self.n_values or any(int(n) != n or n < 1 for n in self.n_values):
            raise ValidationError("n values must be positive integers")
        if not self.r_values or any(int(r) != r or r < 1 for r in self.r_values):
            raise ValidationError("r values must be positive integers")
        if self.trim_top < 0 or self.trim_bottom < 0 or \
                self.trim_top + self.trim_bottom >= self.trials:
            raise ValidationError("trimming must leave at least one trial")
        if self.window > self.epochs:
            raise ValidationError("window must not exceed the number of epochs")
        if self.workers < 0:
            raise ValidationError("workers must be nonnegative")
        StepDecay(self.lr_initial, self.lr_factor, self.lr_period)
        if self.task == "spiral" and self.train_samples % 2 or \
                self.task == "spiral" and self.test_samples % 2:
            raise ValidationError("spiral sample counts must be even (two balanced classes)")

    @classmethod
    def desk(cls, task: str, **overrides) -> "ExperimentConfig":
        """Desk-scale defaults: the paper's protocol with fewer samples and epochs."""
        if task == "trig":
            base = cls(task="trig")
        elif task == "spiral":
            base = cls(task="spiral", n_values=(30,), r_values=(1, 2, 3), train_samples=30_000,
                       test_samples=6_000, batch_size=300, epochs=500, lr_initial=0.001,
                       lr_factor=0.95, lr_period=5, window=100)
        else:
            raise ValidationError("task must be trig or spiral")
        return replace(base, **overrides)

    @property
    def metric(self) -> str:
        return "test_loss" if self.task == "trig" else "test_accuracy"

    def schedule(self) -> StepDecay:
        return StepDecay(self.lr_initial, self.lr_factor, self.lr_period)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["n_values"] = list(self.n_values)
        out["r_values"] = list(self.r_values)
        return out


def make_data(config: ExperimentConfig, trial: int):
    """(x_train, y_train, x_test, y_test) for one trial; shared across (n, r)."""
    rng = np.random.default_rng([config.seed, trial])
    if config.task == "trig":
        xtr = rng.random((config.train_samples, 2))
        xte = rng.random((config.test_samples, 2))
        return xtr, paper_trig_target(xtr), xte, paper_trig_target(xte)
    seeds = rng.integers(0, 2 ** 63, size=2)
    train = generate_spiral(config.train_samples // 2, config.epsilon, int(seeds[0]))
    test = generate_spiral(config.test_samples // 2, config.epsilon, int(seeds[1]))
    xtr, mean, std = train.standardized()
    xte, _, _ = test.standardized(mean, std)
    return xtr, train.labels, xte, test.labels


def train_trial(config: ExperimentConfig, n: int, r: int, trial: int) -> dict:
    """One training run. Returns per-epoch train loss and test metric, or a
    divergence marker."""
    xtr, ytr, xte, yte = make_data(config, trial)
    rng = np.random.default_rng([config.seed, trial, n, r])
    out_dim = 1 if config.task == "trig" else 2
    loss = "mse" if config.task == "trig" else "cross-entropy"
    net = TrainableRCNet.init(2, n, out_dim, r, rng)
    opt = Adam(net.params())
    lr = config.schedule()
    train_hist, test_hist = [], []
    m = len(xtr)
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(m)
            total = 0.0
            for start in range(0, m, config.batch_size):
                idx = order[start:start + config.batch_size]
                value, grads = forward_backward(net, xtr[idx], ytr[idx], loss)
                opt.step(grads, lr(epoch))
                total += value * len(idx)
            train_hist.append(total / m)
            pred = net(xte)
            if config.task == "trig":
                metric = float(np.mean((pred[:, 0] - yte) ** 2))
            else:
                metric = float(np.mean(pred.argmax(axis=1) == yte))
            if not math.isfinite(metric):
                raise NumericError("test metric is not finite")
            test_hist.append(metric)
    except NumericError:
        return {"n": n, "r": r, "trial": trial, "diverged": True,
                "train": train_hist, "test": test_hist}
    return {"n": n, "r": r, "trial": trial, "diverged": False,
            "train": train_hist, "test": test_hist}


def _train_job(args):
    return train_trial(*args)


def retained_trials(runs: list, config: ExperimentConfig) -> list:
    """Drop diverged runs, then the trim_top best and trim_bottom worst by the
    trailing-window mean of the test metric."""
    ok = [run for run in runs if not run["diverged"]]
    if not ok:
        return []
    higher_better = config.task == "spiral"
    score = [float(np.mean(run["test"][-config.window:])) for run in ok]
    order = sorted(range(len(ok)), key=lambda i: score[i], reverse=higher_better)
    lo, hi = config.trim_top, len(ok) - config.trim_bottom
    keep = order[lo:hi] if hi > lo else order[:1]
    return [ok[i] for i in sorted(keep)]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)    # (n, r) -> retained mean metric or None

    def rows(self) -> list[dict]:
        """metrics.csv rows: every trial and the retained-trial mean per epoch."""
        metric = self.config.metric
        rows = []
        for run in self.runs:
            for e, (tr, te) in enumerate(zip(run["train"], run["test"]), start=1):
                rows.append({"task": self.config.task, "n": run["n"], "r": run["r"],
                             "seed_group": f"trial{run['trial']}", "epoch": e,
                             "train_loss": tr, metric: te})
        for (n, r), kept in self._retained().items():
            if not kept:
                continue
            train = np.mean([k["train"] for k in kept], axis=0)
            test = np.mean([k["test"] for k in kept], axis=0)
            for e in range(len(train)):
                rows.append({"task": self.config.task, "n": n, "r": r,
                             "seed_group": "retained_mean", "epoch": e + 1,
                             "train_loss": float(train[e]), metric: float(test[e])})
        return rows

    def _retained(self) -> dict:
        cells = {}
        for run in self.runs:
            cells.setdefault((run["n"], run["r"]), []).append(run)
        return {key: retained_trials(runs, self.config) for key, runs in sorted(cells.items())}

    def write_csv(self, path) -> None:
        cols = ["task", "n", "r", "seed_group", "epoch", "train_loss", self.config.metric]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
            writer.writeheader()
            for row in self.rows():
                writer.writerow({k: (repr(v) if isinstance(v, float) else v)
                                 for k, v in row.items()})


def run_experiment(config: ExperimentConfig) -> ExperimentResult:
    """Train every (n, r, trial), trim per cell, and average the retained trials."""
    jobs = [(config, n, r, t) for n in config.n_values for r in config.r_values
            for t in range(config.trials)]
    workers = config.workers
    if workers == 0:
        import os
        workers = min(len(jobs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            runs = list(pool.map(_train_job, jobs))
    else:
        runs = [_train_job(job) for job in jobs]
    result = ExperimentResult(config, runs)
    for key, kept in result._retained().items():
        result.summary[key] = (float(np.mean([np.mean(k["test"][-config.window:]) for k in kept]))
                               if kept else None)
    return result
