"""Command-line entry point: ``svmpool synth|pool|train|eval|gradcheck``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 numerical failure. Diagnostics go to standard error; data goes to
files or standard output.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _backend
from .argmin import gradient_check
from .errors import (
    ConfigError,
    DataError,
    EtaUnreachable,
    FormatError,
    NumericalError,
    SizeLimitExceeded,
)
from .evaluation import anticipation_curve, compare_pooling, enumeration_gap, sweep, timing_curve
from .features import Format, load_dataset, save_dataset
from .joint import accuracy, descriptor_dataset, save_model, train_joint, train_multiclass
from .kernel_map import KernelMapConfig, compute_nsvmp, shift_to_nonnegative
from .pooling import PoolConfig, pool_dataset
from .synth import SynthConfig, generate

log = logging.getLogger("svmpool")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

_SYNTH_DEFAULTS = {k: v for k, v in SynthConfig().to_dict().items() if k != "seed"}
# c_target: the fixed C used by ``pool --fixed-c`` (the schedule ignores it)
_POOL_DEFAULTS = {**PoolConfig().to_dict(), "c_target": 10.0}

DEFAULTS = {
    "seed": 0,
    "threads": None,
    "verbosity": 0,
    "synth": _SYNTH_DEFAULTS,
    "pool": _POOL_DEFAULTS,
    "kernel_map": {"kernel": "chi2", "order": 3, "period": 0.45},
    "joint": {"mode": "joint", "c2": 1.0, "max_outer": 10, "tol": 1e-6, "delta_rule": "zero_one"},
    "eval": {"split_seed": 0, "c2": 1.0},
    "gradcheck": {"n": 12, "p": 5, "lambda": 4.0, "trials": 100, "h": 1e-5},
}


@dataclass
class CliConfig:
    subcommand: str | None = None
    input: str | None = None
    output: str | None = None
    seed: int = 0
    threads: int | None = None
    verbosity: int = 0
    sections: dict = field(default_factory=lambda: copy.deepcopy({
        k: v for k, v in DEFAULTS.items() if isinstance(v, dict)}))

    def pool_config(self) -> PoolConfig:
        opts = {k: v for k, v in self.sections["pool"].items() if k != "c_target"}
        return PoolConfig(**opts)

    def synth_config(self) -> SynthConfig:
        return SynthConfig(**self.sections["synth"], seed=self.seed)

    def kernel_map_config(self) -> KernelMapConfig:
        return KernelMapConfig(**self.sections["kernel_map"])

    def effective(self):
        """Everything that determines the run, for echoing into outputs."""
        return {
            "subcommand": self.subcommand,
            "input": self.input,
            "output": self.output,
            "seed": self.seed,
            "threads": self.threads,
            **copy.deepcopy(self.sections),
        }

    def validate(self):
        try:
            self.pool_config().validate()
            self.synth_config().validate()
            self.kernel_map_config().validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from None
        if self.threads is not None and self.threads < 1:
            raise ConfigError("threads must be >= 1")
        if self.sections["joint"]["mode"] not in ("joint", "twostage"):
            raise ConfigError("joint.mode must be 'joint' or 'twostage'")
        if not self.sections["pool"]["c_target"] > 0:
            raise ConfigError("pool.c_target must be > 0")
        return self


def _merge(cfg: CliConfig, data: dict, origin):
    for key, value in data.items():
        if key in ("seed", "threads", "verbosity"):
            setattr(cfg, key, value)
        elif key in cfg.sections:
            if not isinstance(value, dict):
                raise ConfigError(f"{origin}: section {key!r} must be an object")
            known = cfg.sections[key]
            for name, v in value.items():
                if name not in known:
                    raise ConfigError(f"{origin}: unknown field {key}.{name}")
                known[name] = v
        else:
            raise ConfigError(f"{origin}: unknown key {key!r}")


def load_config(path) -> CliConfig:
    """Parse a JSON config file; missing fields take their defaults."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    cfg = CliConfig()
    _merge(cfg, data, path)
    return cfg.validate()


# -- argument parsing ---------------------------------------------------------


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# flag dest -> (section, field); only flags the user actually passed override
_FLAG_FIELDS = {
    "classes": ("synth", "num_classes"),
    "bags": ("synth", "bags_per_class"),
    "frames": ("synth", "frames_per_bag"),
    "dim": ("synth", "dim"),
    "rho": ("synth", "discriminative_fraction"),
    "separation": ("synth", "class_separation"),
    "noise": ("synth", "noise_sigma"),
    "background": ("synth", "background_sigma"),
    "neg_count": ("synth", "neg_count"),
    "neg_sigma": ("synth", "neg_sigma"),
    "eta": ("pool", "eta"),
    "c_init": ("pool", "c_init"),
    "c_multiplier": ("pool", "c_multiplier"),
    "c_cap": ("pool", "c_cap"),
    "c_target": ("pool", "c_target"),
    "normalize": ("pool", "normalize"),
    "kernel": ("kernel_map", "kernel"),
    "order": ("kernel_map", "order"),
    "period": ("kernel_map", "period"),
    "mode": ("joint", "mode"),
    "c2": ("joint", "c2"),
    "max_outer": ("joint", "max_outer"),
    "split_seed": ("eval", "split_seed"),
    "n": ("gradcheck", "n"),
    "p": ("gradcheck", "p"),
    "lam": ("gradcheck", "lambda"),
    "trials": ("gradcheck", "trials"),
    "h": ("gradcheck", "h"),
}


def _common(sub):
    sub.add_argument("--config", help="JSON config file")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--threads", type=int, help="worker cap (default: available cores)")
    sub.add_argument("-v", "--verbose", action="count", default=0)


def _pool_flags(sub):
    sub.add_argument("--eta", type=float)
    sub.add_argument("--c-init", type=float)
    sub.add_argument("--c-multiplier", type=float)
    sub.add_argument("--c-cap", type=float)
    sub.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=None)


def build_parser():
    parser = _Parser(prog="svmpool", description="SVM pooling of feature sequences")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = subs.add_parser("synth", help="generate a planted synthetic dataset")
    _common(p)
    p.add_argument("--classes", type=int)
    p.add_argument("--bags", type=int, help="bags per class")
    p.add_argument("--frames", type=int, help="frames per bag")
    p.add_argument("--dim", type=int)
    p.add_argument("--rho", type=float, help="fraction of planted frames")
    p.add_argument("--separation", type=float)
    p.add_argument("--noise", type=float)
    p.add_argument("--background", type=float)
    p.add_argument("--neg-count", type=int)
    p.add_argument("--neg-sigma", type=float)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=[f.value for f in Format], default="binary")
    p.add_argument("--mask", help="write the planted-frame masks here (JSON)")

    p = subs.add_parser("pool", help="compute one descriptor per bag")
    _common(p)
    _pool_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=[f.value for f in Format], default="binary")
    p.add_argument("--fixed-c", action="store_true", help="skip the schedule, fit once at pool.c_target")
    p.add_argument("--c-target", type=float)
    p.add_argument("--kernel", choices=["chi2", "intersection", "js"], help="pool in a kernel feature map")
    p.add_argument("--order", type=int)
    p.add_argument("--period", type=float)
    p.add_argument("--out", required=True)

    p = subs.add_parser("train", help="train video-level classifiers")
    _common(p)
    _pool_flags(p)
    p.add_argument("--input", required=True)
    p.add_argument("--format", choices=[f.value for f in Format], default="binary")
    p.add_argument("--mode", choices=["joint", "twostage"])
    p.add_argument("--c2", type=float)
    p.add_argument("--max-outer", type=int)
    p.add_argument("--out", required=True)

    p = subs.add_parser("eval", help="run an experiment and write a JSON report")
    _common(p)
    _pool_flags(p)
    p.add_argument("experiment", choices=["compare", "anticipate", "sweep", "timing", "enumgap"])
    p.add_argument("--input")
    p.add_argument("--format", choices=[f.value for f in Format], default="binary")
    p.add_argument("--split-seed", type=int)
    p.add_argument("--c2", type=float)
    p.add_argument("--kernel", choices=["chi2", "intersection", "js"], help="also evaluate NSVMP")
    p.add_argument("--order", type=int)
    p.add_argument("--period", type=float)
    p.add_argument("--fusion", choices=["score", "concat"])
    p.add_argument("--parameter", choices=["eta", "c", "pos_bag_size", "neg_bag_size"])
    p.add_argument("--grid", help="comma-separated values")
    p.add_argument("--counts", help="comma-separated frame counts (timing)")
    p.add_argument("--timing-dim", type=int, default=4096)
    p.add_argument("--bag", help="bag id (enumgap)")
    p.add_argument("--report", help="output path (default: standard output)")

    p = subs.add_parser("gradcheck", help="check argmin gradients against finite differences")
    _common(p)
    p.add_argument("--n", type=int)
    p.add_argument("--p", type=int)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--trials", type=int)
    p.add_argument("--h", type=float)
    p.add_argument("--report", help="output path (default: standard output)")
    return parser


def resolve_config(args) -> CliConfig:
    """Config file first, then explicit flags on top."""
    cfg = load_config(args.config) if args.config else CliConfig()
    cfg.subcommand = args.command
    cfg.input = getattr(args, "input", None)
    cfg.output = getattr(args, "out", None) or getattr(args, "report", None)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    cfg.verbosity = max(cfg.verbosity, args.verbose)
    for dest, (section, name) in _FLAG_FIELDS.items():
        value = getattr(args, dest, None)
        if value is not None:
            cfg.sections[section][name] = value
    if args.command == "eval" and args.c2 is not None:
        cfg.sections["eval"]["c2"] = args.c2
    return cfg.validate()


def _threads(cfg):
    return cfg.threads if cfg.threads is not None else (os.cpu_count() or 1)


def _write_json(obj, path):
    text = json.dumps(obj, indent=2, default=_json_default)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        sys.stdout.write(text + "\n")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def _sidecar(path):
    return str(path) + ".json"


# -- subcommands --------------------------------------------------------------


def cmd_synth(args, cfg):
    ds, mask = generate(cfg.synth_config())
    save_dataset(ds, args.out, args.format)
    _write_json({"schema": 1, "artifact": "dataset", "config": cfg.effective(), "seed": cfg.seed},
                _sidecar(args.out))
    if args.mask:
        Path(args.mask).write_text(mask.to_json([b.source_id for b in ds.bags]) + "\n", encoding="utf-8")
    log.info("wrote %d bags to %s", len(ds.bags), args.out)


def _pool_all(ds, cfg, args):
    pool_cfg = cfg.pool_config()
    if getattr(args, "fixed_c", False):
        c = cfg.sections["pool"]["c_target"]
        pool_cfg = replace(pool_cfg, eta=0.0, c_init=c / pool_cfg.c_multiplier, c_cap=c)
    if getattr(args, "kernel", None):
        shifted, offset = shift_to_nonnegative(ds)
        map_cfg = cfg.kernel_map_config()
        failures, out = [], []
        for bag in shifted.bags:
            try:
                out.append(compute_nsvmp(bag, shifted.negatives, pool_cfg, map_cfg, bag_id=bag.source_id))
            except EtaUnreachable as exc:
                failures.append(exc)
        if failures:
            err = EtaUnreachable(f"{len(failures)} bag(s) could not reach eta")
            err.failures = failures
            raise err
        return out
    return pool_dataset(ds, pool_cfg, threads=_threads(cfg))


def cmd_pool(args, cfg):
    ds = load_dataset(args.input, args.format)
    descs = _pool_all(ds, cfg, args)
    save_dataset(descriptor_dataset(descs, ds), args.out, args.format)
    meta = [{"id": b.source_id, "label": b.label, **d.meta()} for b, d in zip(ds.bags, descs)]
    _write_json({"schema": 1, "artifact": "descriptors", "config": cfg.effective(), "seed": cfg.seed,
                 "backend": _backend.NAME, "descriptors": meta}, _sidecar(args.out))
    log.info("pooled %d bags into %s", len(descs), args.out)


def cmd_train(args, cfg):
    ds = load_dataset(args.input, args.format)
    jcfg = cfg.sections["joint"]
    threads = _threads(cfg)
    labels = ds.labels
    if jcfg["mode"] == "joint":
        state = train_joint(ds, cfg.pool_config(), jcfg["c2"], jcfg["max_outer"], tol=jcfg["tol"],
                            delta_rule=jcfg["delta_rule"], threads=threads)
        descs, bank = state.descriptors, state.bank
        extra = {"objective_trace": list(state.objective_trace), "outer_iterations": state.outer_iteration,
                 "converged": state.converged}
    else:
        descs = pool_dataset(ds, cfg.pool_config(), threads=threads)
        bank = train_multiclass(descs, labels, jcfg["c2"], jcfg["delta_rule"], threads=threads)
        extra = {}
    summary = {"schema": 1, "artifact": "model", "config": cfg.effective(), "seed": cfg.seed,
               "train_accuracy": accuracy(bank, descs, labels), **extra}
    save_model(args.out, descriptor_dataset(descs, ds), bank, summary)
    _write_json(summary, None)


def _floats(text, what):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--{what} must be a comma-separated list of numbers") from None


def cmd_eval(args, cfg):
    pool_cfg = cfg.pool_config()
    ecfg = cfg.sections["eval"]
    threads = _threads(cfg)
    if args.experiment == "timing":
        if not args.counts:
            raise ConfigError("timing needs --counts")
        report = timing_curve([int(v) for v in _floats(args.counts, "counts")], args.timing_dim, pool_cfg,
                              seed=cfg.seed)
    else:
        if not args.input:
            raise ConfigError(f"eval {args.experiment} needs --input")
        ds = load_dataset(args.input, args.format)
        if args.experiment == "compare":
            map_cfg = cfg.kernel_map_config() if args.kernel else None
            report = compare_pooling(ds, pool_cfg, ecfg["split_seed"], c2=ecfg["c2"], map_cfg=map_cfg,
                                     fusion=args.fusion, threads=threads)
        elif args.experiment == "anticipate":
            report = anticipation_curve(ds, pool_cfg, ecfg["split_seed"], c2=ecfg["c2"], threads=threads)
        elif args.experiment == "sweep":
            if not args.parameter or not args.grid:
                raise ConfigError("sweep needs --parameter and --grid")
            report = sweep(ds, args.parameter, _floats(args.grid, "grid"), pool_cfg, ecfg["split_seed"],
                           c2=ecfg["c2"], threads=threads)
        else:
            bags = {b.source_id: b for b in ds.bags}
            bag = bags.get(args.bag) if args.bag else ds.bags[0]
            if bag is None:
                raise DataError(f"no bag with id {args.bag!r}")
            gap = enumeration_gap(bag, ds.negatives, pool_cfg.eta, pool_cfg)
            report = None
            _write_json({"schema": 1, "name": "enumgap", "config": cfg.effective(), "seed": cfg.seed,
                         "bag": bag.source_id, "gap": gap}, args.report)
    if report is not None:
        out = report.to_dict()
        out["config"]["cli"] = cfg.effective()
        _write_json(out, args.report)


def cmd_gradcheck(args, cfg):
    g = cfg.sections["gradcheck"]
    result = gradient_check(int(g["n"]), int(g["p"]), float(g["lambda"]), int(g["trials"]), cfg.seed, float(g["h"]))
    _write_json({"schema": 1, "name": "gradcheck", "config": cfg.effective(), "seed": cfg.seed, **result},
                args.report)


COMMANDS = {"synth": cmd_synth, "pool": cmd_pool, "train": cmd_train, "eval": cmd_eval, "gradcheck": cmd_gradcheck}


def _report_eta_failures(exc):
    for f in getattr(exc, "failures", [exc]):
        frac = "?" if f.fraction is None else f"{f.fraction:.3f}"
        print(f"bag {f.bag_id}: eta unreachable (fraction {frac}, last C {f.c_last})", file=sys.stderr)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"svmpool: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(cfg.verbosity, 2), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args, cfg)
    except (ConfigError, SizeLimitExceeded) as exc:
        print(f"svmpool: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FormatError, OSError, UnicodeDecodeError) as exc:
        print(f"svmpool: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except EtaUnreachable as exc:
        print(f"svmpool: {exc}", file=sys.stderr)
        _report_eta_failures(exc)
        return EXIT_NUMERIC
    except NumericalError as exc:
        print(f"svmpool: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except Exception as exc:  # anything else is a solver/internal failure, never a traceback exit
        log.debug("unexpected failure", exc_info=True)
        print(f"svmpool: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
