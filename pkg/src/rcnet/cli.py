"""Command-line entry point: rcnet {floor,pointfit,merge,construct,verify,eval,train}.

Every subcommand accepts --config FILE (TOML; keys at top level or under a
table named after the subcommand) and --show-config, which prints the
effective settings and exits. Flags given on the command line win over the
file. Exit codes: 0 success, 1 invalid input, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from .errors import NumericError, ValidationError

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


class _Parser(argparse.ArgumentParser):
    """argparse that exits with code 1 on bad usage."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# name -> (type, default, help); None defaults mean "required unless shown"
COMMANDS = {
    "floor": {
        "help": "build the floor network (value k on the k-th plateau)",
        "options": {
            "n": (int, None, "number of plateaus, integer >= 1"),
            "m": (int, None, "applications + 1, integer >= n"),
            "delta": (float, None, "plateau gap width, in (0,1)"),
            "out": (str, None, "output net.json"),
        },
    },
    "pointfit": {
        "help": "build a scalar net with value eps*floor(y_k/eps) at k = 0..n-1",
        "options": {
            "values": (str, None, "CSV file with one nonnegative value per line"),
            "epsilon": (float, None, "resolution, > 0 and >= every |y_k - y_(k-1)|"),
            "m": (int, 0, "applications + 1, integer >= number of values (0: that number)"),
            "out": (str, None, "output net.json"),
        },
    },
    "merge": {
        "help": "merge two saved nets into one repeated block computing stage2(stage1(x))",
        "options": {
            "stage1": (str, None, "first net.json"),
            "r1": (int, -1, "applications of the first block, integer >= 0 (-1: its own reps)"),
            "stage2": (str, None, "second net.json"),
            "r2": (int, -1, "applications of the second block, integer >= 0 (-1: its own reps)"),
            "A": (float, 1.0, "inputs range over [-A, A]^d, A > 0"),
            "out": (str, None, "output merged.json"),
        },
    },
    "construct": {
        "help": "build an approximant of a target on [0,1]^d and report its error",
        "options": {
            "target": (str, None, "abs1 | sinpi | paper-trig | const:C | csv:FILE"),
            "d": (int, 1, "input dimension, integer >= 1 (linf: <= 2)"),
            "r": (int, None, "size parameter, integer >= 1"),
            "mode": (str, "gap", "gap | lp | linf"),
            "p": (float, 2.0, "exponent of the L^p error, in [1, inf)"),
            "delta": (float, 0.0, "gap mode slab width, in (0, 1/(3K)] (0: 1/(3K))"),
            "samples": (int, 100_000, "Monte-Carlo samples for the L^p error, >= 1"),
            "grid": (int, 0, "grid points per axis for sup errors (0: 4001 / 201 / 51)"),
            "seed": (int, 0x5EED, "Monte-Carlo seed"),
            "out": (str, None, "output net.json"),
            "report": (str, "", "output report.json (default: print to stdout)"),
        },
    },
    "verify": {
        "help": "measure a saved net's error against a target",
        "options": {
            "net": (str, None, "net.json"),
            "target": (str, None, "abs1 | sinpi | paper-trig | const:C | csv:FILE"),
            "mode": (str, "", "gap | lp | linf (empty: from the net file, else gap)"),
            "p": (float, 0.0, "exponent of the L^p error, in [1, inf) (0: from the net file, else 2)"),
            "K": (int, 0, "cubes per axis for the slab mask (0: from the net file, else 1)"),
            "delta": (float, -1.0, "slab width for the mask (-1: from the net file, else 0)"),
            "r": (int, 0, "size parameter for the theoretical bound (0: from the net file)"),
            "samples": (int, 100_000, "Monte-Carlo samples, >= 1"),
            "grid": (int, 0, "grid points per axis (0: 4001 / 201 / 51)"),
            "seed": (int, 0x5EED, "Monte-Carlo seed"),
            "report": (str, "", "output report.json (default: print to stdout)"),
        },
    },
    "eval": {
        "help": "evaluate a saved net at points from a CSV file",
        "options": {
            "net": (str, None, "net.json"),
            "points": (str, None, "CSV file, one point per line"),
            "backend": (str, "auto", "auto | float64 | dyadic"),
            "out": (str, "", "output CSV (default: stdout)"),
        },
    },
    "train": {
        "help": "train weight-shared nets on the trig or spiral task and write metrics.csv",
        "options": {
            "task": (str, "trig", "trig | spiral"),
            "out": (str, None, "output metrics.csv"),
            "n": (str, "", "comma-separated widths (default per task)"),
            "r": (str, "", "comma-separated repetition counts (default 1,2,3)"),
            "epochs": (int, 0, "epochs, >= 1 (0: task default)"),
            "trials": (int, 0, "trials per cell, >= 1 (0: task default)"),
            "train_samples": (int, 0, "training samples (0: task default)"),
            "test_samples": (int, 0, "test samples (0: task default)"),
            "batch_size": (int, 0, "mini-batch size (0: task default)"),
            "window": (int, 0, "trailing epochs used for ranking and summary (0: task default)"),
            "trim_top": (int, -1, "best trials dropped per cell (-1: task default)"),
            "trim_bottom": (int, -1, "worst trials dropped per cell (-1: task default)"),
            "seed": (int, -1, "base seed (-1: task default)"),
            "workers": (int, -1, "parallel processes, 0 = one per CPU (-1: task default)"),
        },
    },
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rcnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")
    for name, spec in COMMANDS.items():
        p = sub.add_parser(name, help=spec["help"], description=spec["help"])
        for opt, (typ, default, text) in spec["options"].items():
            shown = "required" if default is None else f"default {default!r}"
            p.add_argument(f"--{opt.replace('_', '-')}", dest=opt, type=typ, default=None,
                           help=f"{text} ({shown})")
        p.add_argument("--config", default=None, help="TOML file with defaults for these flags")
        p.add_argument("--show-config", action="store_true",
                       help="print the effective settings and exit")
    return parser


def _read_config(path: str, command: str) -> tuple[dict, dict]:
    """(shared top-level keys, keys under the [command] table)."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"no such config file: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"cannot parse {path}: {exc}") from None
    shared = {k: v for k, v in doc.items() if not isinstance(v, dict)}
    table = doc.get(command, {})
    if not isinstance(table, dict):
        raise ValidationError(f"{command} in {path} must be a table")
    return shared, table


def _coerce(key: str, value, typ):
    """Check a config-file value against the flag's type."""
    if typ is None or isinstance(value, (list, tuple)):
        return value
    bad = isinstance(value, bool) or (typ is int and not isinstance(value, int)) \
        or (typ is float and not isinstance(value, (int, float))) \
        or (typ is str and not isinstance(value, (str, int)))
    if bad:
        raise ValidationError(f"{key} must be {'an integer' if typ is int else typ.__name__}")
    return typ(value)


def effective_settings(command: str, args: argparse.Namespace) -> dict:
    """defaults < config file < explicit flags.

    Top-level keys a subcommand does not know are skipped, so one file can
    serve several subcommands; unknown keys inside [command] are an error.
    """
    options = COMMANDS[command]["options"]
    known = set(options) | ({"n_values", "r_values"} if command == "train" else set())
    settings = {k: default for k, (_, default, _) in options.items()}
    if args.config:
        shared, table = _read_config(args.config, command)
        for strict, source in ((False, shared), (True, table)):
            for key, value in source.items():
                key = key.replace("-", "_")
                if key in known:
                    settings[key] = _coerce(key, value, options.get(key, (None,))[0])
                elif strict:
                    raise ValidationError(f"unknown setting {key!r} in [{command}] of {args.config}")
    for key in options:
        value = getattr(args, key)
        if value is not None:
            settings[key] = value
    return settings


def _require(settings: dict, *names: str) -> None:
    for name in names:
        if settings.get(name) in (None, ""):
            raise ValidationError(f"--{name.replace('_', '-')} is required")


def _show(settings: dict) -> None:
    for key, value in settings.items():
        print(f"{key} = {json.dumps(value)}")


def _int_list(text, name: str) -> tuple:
    if isinstance(text, (list, tuple)):
        items = list(text)
    else:
        items = [t for t in str(text).split(",") if t.strip()]
    try:
        return tuple(int(v) for v in items)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a comma-separated list of integers") from None


def _write_report(doc: dict, path: str) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n")
    else:
        print(text)


# ----------------------------------------------------------------------------
# subcommands
# ----------------------------------------------------------------------------

def cmd_floor(s: dict) -> None:
    from .floor import FloorNetSpec, build_floor_rcnet
    from .netcore import save

    _require(s, "n", "m", "delta", "out")
    spec = FloorNetSpec(s["n"], s["m"], s["delta"])
    save(build_floor_rcnet(spec), s["out"], {"kind": "floor", "n": spec.n, "m": spec.m,
                                             "delta": spec.delta})


def _read_values(path: str) -> list:
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=1)
    except OSError:
        raise ValidationError(f"no such file: {path}") from None
    except ValueError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from None
    return [float(v) for v in np.ravel(values)]


def cmd_pointfit(s: dict) -> None:
    from .bits import PointFitSpec, build_point_fit_rcnet
    from .netcore import save

    _require(s, "values", "epsilon", "out")
    values = _read_values(s["values"])
    if not np.all(np.isfinite(values)):
        raise ValidationError("values must be finite")
    spec = PointFitSpec(tuple(values), s["epsilon"], s["m"] or len(values))
    save(build_point_fit_rcnet(spec), s["out"],
         {"kind": "pointfit", "epsilon": spec.epsilon, "m": spec.m, "count": len(values)})


def cmd_merge(s: dict) -> None:
    from .merge import merge_with_affines
    from .netcore import compose_affine, load, save

    _require(s, "stage1", "stage2", "out")
    if not s["A"] > 0:
        raise ValidationError("A must be positive")
    first, second = load(s["stage1"]), load(s["stage2"])
    r1 = first.reps if s["r1"] == -1 else s["r1"]
    r2 = second.reps if s["r2"] == -1 else s["r2"]
    for name, r in (("r1", r1), ("r2", r2)):
        if r < 0:
            raise ValidationError(f"{name} must be a nonnegative integer")
    if first.d_out != second.d_in:
        raise ValidationError(f"stage1 outputs {first.d_out} values, stage2 reads {second.d_in}")
    exact = first.post.is_exact or second.pre.is_exact
    between = compose_affine(second.pre, first.post, exact=exact)
    bits = max(first.required_bits, second.required_bits)
    net = merge_with_affines(first.pre, first.block, r1, between, second.block, r2, second.post,
                             s["A"], max(first.d_block, second.d_block), bits=bits)
    cert = net.certificate
    save(net, s["out"], {"kind": "merge", "A": s["A"], "r1": r1, "r2": r2,
                         "bound_M": cert.bound_M, "merged_dims": cert.merged_dims,
                         "merged_reps": cert.merged_reps})


def _construct(target, s: dict):
    """(net, meta) for the requested mode."""
    from . import approximator as ap

    d, r, mode = s["d"], s["r"], s["mode"]
    K = ap.integer_root(r, d)
    w = target.omega(r ** (-1.0 / d))
    if mode == "gap":
        delta = s["delta"] or 1.0 / (3 * K)
        net = ap.build_gap_rcnet(target, d, r, delta)
        bound = 5 * math.sqrt(d) * w
    elif mode == "lp":
        if not (s["p"] >= 1 and math.isfinite(s["p"])):
            raise ValidationError("p must lie in [1, inf)")
        delta = ap.lp_delta(target, r, s["p"], ap.clip_level(target))
        net = ap.build_lp_rcnet(target, d, r, s["p"])
        bound = 6 * math.sqrt(d) * w
    elif mode == "linf":
        if d > ap.LINF_MAX_D:
            raise ValidationError(f"linf mode supports d <= {ap.LINF_MAX_D}")
        delta = ap.linf_delta(target, r)
        net = ap.build_linf_rcnet(target, d, r)
        bound = 6 * math.sqrt(d) * w
    else:
        raise ValidationError("mode must be gap, lp or linf")
    meta = {"kind": mode, "target": s["target"], "d": d, "r": r, "K": K, "delta": delta,
            "p": s["p"] if mode == "lp" else None, "theoretical_bound": bound,
            "omega": {"r^(-1/d)": w, "delta": target.omega(delta),
                      "sqrt(d)": target.omega(math.sqrt(d))}}
    return net, meta


def _sizes(net) -> dict:
    width, depth, din, dout = net.block.size()
    cert = getattr(net, "certificate", None)
    return {"block_width": width, "block_depth": depth, "block_dims": din, "reps": net.reps,
            "required_bits": net.required_bits,
            "bound_M": cert.bound_M if cert is not None else None}


def _check_measure(s: dict) -> None:
    if s["samples"] < 1:
        raise ValidationError("samples must be a positive integer")
    if s["grid"] < 0:
        raise ValidationError("grid must be a nonnegative integer")
    if not (s["p"] >= 1 and math.isfinite(s["p"])):
        raise ValidationError("p must lie in [1, inf)")


def cmd_construct(s: dict) -> None:
    from .netcore import save
    from .targets import parse_target
    from .verify import measure_errors

    _require(s, "target", "r", "out")
    if s["d"] < 1:
        raise ValidationError("d must be a positive integer")
    if s["r"] < 1:
        raise ValidationError("r must be a positive integer")
    if s["delta"] < 0:
        raise ValidationError("delta must lie in (0, 1/(3K)]")
    if s["mode"] not in ("gap", "lp", "linf"):
        raise ValidationError("mode must be gap, lp or linf")
    _check_measure(s)
    target = parse_target(s["target"], s["d"])
    net, meta = _construct(target, s)
    save(net, s["out"], meta)
    report = measure_errors(net, target, K=meta["K"], delta=meta["delta"],
                            p=s["p"] if s["mode"] == "lp" else None,
                            grid_size=s["grid"] or None, samples=s["samples"], seed=s["seed"],
                            theoretical_bound=meta["theoretical_bound"])
    _write_report({**meta, "sizes": _sizes(net), "errors": report.to_dict()}, s["report"])


def cmd_verify(s: dict) -> None:
    from .netcore import load, load_meta
    from .targets import parse_target
    from .verify import measure_errors

    _require(s, "net", "target")
    net = load(s["net"])
    meta = load_meta(s["net"])
    s = dict(s)
    s["mode"] = s["mode"] or (meta.get("kind") if meta.get("kind") in ("gap", "lp", "linf")
                              else "gap")
    s["p"] = s["p"] or float(meta.get("p") or 2.0)
    if s["mode"] not in ("gap", "lp", "linf"):
        raise ValidationError("mode must be gap, lp or linf")
    _check_measure(s)
    target = parse_target(s["target"], net.d_in)
    K = s["K"] or int(meta.get("K", 1))
    delta = s["delta"] if s["delta"] >= 0 else float(meta.get("delta", 0.0))
    if K < 1:
        raise ValidationError("K must be a positive integer")
    r = s["r"] or int(meta.get("r", 0))
    bound = 0.0
    if r >= 1:
        factor = 5.0 if s["mode"] == "gap" else 6.0
        bound = factor * math.sqrt(target.d) * target.omega(r ** (-1.0 / target.d))
    if net.d_out != 1:
        raise ValidationError(f"the net has {net.d_out} outputs; verify needs a scalar net")
    report = measure_errors(net, target, K=K, delta=delta,
                            p=s["p"] if s["mode"] == "lp" else None,
                            grid_size=s["grid"] or None, samples=s["samples"], seed=s["seed"],
                            theoretical_bound=bound)
    _write_report({"mode": s["mode"], "K": K, "delta": delta, "r": r,
                   "errors": report.to_dict()}, s["report"])


def cmd_eval(s: dict) -> None:
    from .netcore import load

    _require(s, "net", "points")
    net = load(s["net"])
    try:
        pts = np.loadtxt(s["points"], delimiter=",", ndmin=2)
    except OSError:
        raise ValidationError(f"no such file: {s['points']}") from None
    except ValueError as exc:
        raise ValidationError(f"cannot read {s['points']}: {exc}") from None
    if net.d_in == 1 and pts.shape[1] != 1:
        pts = pts.reshape(-1, 1)
    values = net(pts, backend=s["backend"])
    lines = "\n".join(",".join(repr(float(v)) for v in row) for row in values) + "\n"
    if s["out"]:
        Path(s["out"]).write_text(lines)
    else:
        sys.stdout.write(lines)


def train_config(s: dict):
    from .train import ExperimentConfig

    if s["task"] not in ("trig", "spiral"):
        raise ValidationError("task must be trig or spiral")
    overrides = {}
    n_values = s.get("n_values", s["n"])
    r_values = s.get("r_values", s["r"])
    if n_values not in ("", None):
        overrides["n_values"] = _int_list(n_values, "n")
    if r_values not in ("", None):
        overrides["r_values"] = _int_list(r_values, "r")
    for key in ("epochs", "trials", "train_samples", "test_samples", "batch_size", "window"):
        if s[key]:
            overrides[key] = s[key]
    for key in ("trim_top", "trim_bottom", "seed", "workers"):
        if s[key] != -1:
            overrides[key] = s[key]
    base = ExperimentConfig.desk(s["task"])
    if "epochs" in overrides and "window" not in overrides:
        overrides["window"] = max(1, min(base.window, overrides["epochs"] // 5 or 1))
    return ExperimentConfig.desk(s["task"], **overrides)


def cmd_train(s: dict) -> None:
    from .train import run_experiment

    _require(s, "out")
    config = train_config(s)
    result = run_experiment(config)
    result.write_csv(s["out"])
    for (n, r), value in result.summary.items():
        shown = "failed (all trials diverged)" if value is None else f"{value:.6g}"
        print(f"{config.task} n={n} r={r} {config.metric}={shown}")
    if all(v is None for v in result.summary.values()):
        raise NumericError("every trial diverged")


HANDLERS = {"floor": cmd_floor, "pointfit": cmd_pointfit, "merge": cmd_merge,
            "construct": cmd_construct, "verify": cmd_verify, "eval": cmd_eval,
            "train": cmd_train}


def main(argv=None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    try:
        settings = effective_settings(args.command, args)
        if args.show_config:
            if args.command == "train":
                _show(train_config(settings).to_dict())
            else:
                _show(settings)
            return 0
        HANDLERS[args.command](settings)
    except ValidationError as exc:
        print(f"rcnet {args.command}: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"rcnet {args.command}: numeric failure: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
