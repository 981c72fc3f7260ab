"""Command-line entry point: ``shiftcal run | reliability | verify-bound | iw-report``.

Exit codes: 0 on success, 1 on any error (bad config, unreadable file,
divergence), 2 when a bound that must hold is violated.  Outputs go to
``--out``, else the config's ``output_dir``, else ``$SHIFTCAL_OUT``, else
``./shiftcal-out``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field, fields
from typing import Optional

import numpy as np

from .calibrator import (
    METHODS,
    MODES,
    PipelineConfig,
    PipelineData,
    run_method,
    stage_seed,
    train_classifier,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .discriminator import DEFAULT_U
from .errors import BoundViolation, ConfigError, InvalidInputError, ParseError, ShiftcalError
from .featlearn import AdversarialConfig
from .fileio import atomic_write_text
from .metrics import (
    DEFAULT_BINS,
    INSTANCE_FAMILIES,
    bound_chain,
    failed_links,
    iw_distribution_report,
    random_bound_instance,
    reliability_bins,
    theorem1_bound,
    tight_instance,
)
from .numerics import SgdConfig
from .scenarios import Dataset, get_scenario, load_csv, sample
from .svg import reliability_svg, weight_spread_svg

log = logging.getLogger("shiftcal")

OUT_ENV = "SHIFTCAL_OUT"
DEFAULT_OUT = "shiftcal-out"
RESULT_COLUMNS = ("method", "seed", "ece", "overconf_ece", "cls_error", "wall_ms")
SUMMARY_COLUMNS = (
    "method", "runs", "ece_mean", "ece_std", "ece_median",
    "overconf_ece_mean", "overconf_ece_std", "cls_error_mean", "cls_error_std",
)
SPLITS = ("source_train", "source_val", "target_train", "target_val", "target_eval")
SPLIT_KIND = {
    "source_train": "source",
    "source_val": "source",
    "target_train": "target",
    "target_val": "target",
    "target_eval": "target-labeled",
}
DEFAULT_SIZES = {
    "source_train": 2000,
    "source_val": 1000,
    "target_train": 2000,
    "target_val": 1000,
    "target_eval": 5000,
}

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION = 0, 1, 2


# -- run configuration --------------------------------------------------------


@dataclass
class RunConfig:
    scenario: Optional[str] = None
    data: Optional[dict] = None  # split name -> CSV path
    sizes: dict = field(default_factory=lambda: dict(DEFAULT_SIZES))
    data_seed: int = 0
    methods: list = field(default_factory=lambda: list(METHODS))
    seeds: list = field(default_factory=lambda: list(range(10)))
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    output_dir: Optional[str] = None
    record_wall_time: bool = False
    save_checkpoints: bool = True
    oracle_weights: bool = False


_SGD_BLOCKS = ("classifier", "discriminator", "temperature")
_TOP_KEYS = {
    "scenario", "data", "sizes", "data_seed", "methods", "seeds", "output_dir",
    "record_wall_time", "save_checkpoints", "oracle_weights",
    "bins", "U", "mode", "classifier_hidden", "disc_hidden", "adversarial", *_SGD_BLOCKS,
}


def _block(cls, base, raw, where):
    if raw is None:
        return base
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in fields(cls)}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    try:
        return cls(**{**base.__dict__, **raw})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(raw: dict, base_dir=".") -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    cfg = RunConfig()
    if ("scenario" in raw) == ("data" in raw):
        raise ConfigError("give exactly one of 'scenario' or 'data'")
    if "scenario" in raw:
        cfg.scenario = str(raw["scenario"])
        try:
            scen = get_scenario(cfg.scenario)
        except InvalidInputError as exc:
            raise ConfigError(str(exc)) from None
        if scen.kind not in ("continuous", "enumerable"):
            raise ConfigError(f"scenario {cfg.scenario!r} cannot be sampled")
    else:
        data = raw["data"]
        if not isinstance(data, dict):
            raise ConfigError("'data' must map split names to CSV paths")
        missing = [s for s in SPLITS if s not in data]
        extra = set(data) - set(SPLITS)
        if missing or extra:
            raise ConfigError(f"'data' needs exactly the splits {list(SPLITS)}")
        cfg.data = {}
        for split in SPLITS:
            path = os.path.join(base_dir, data[split])
            if not os.path.isfile(path):
                raise ConfigError(f"{split}: file {path} does not exist")
            cfg.data[split] = path
    sizes = raw.get("sizes", {})
    if set(sizes) - set(SPLITS):
        raise ConfigError(f"'sizes' keys must be among {list(SPLITS)}")
    cfg.sizes.update(sizes)
    if any(int(v) < 1 for v in cfg.sizes.values()):
        raise ConfigError("every split size must be at least 1")
    cfg.data_seed = int(raw.get("data_seed", 0))
    cfg.methods = list(raw.get("methods", METHODS))
    bad = [m for m in cfg.methods if m not in METHODS]
    if bad or not cfg.methods:
        raise ConfigError(f"methods must be a nonempty list from {list(METHODS)}")
    cfg.seeds = [int(s) for s in raw.get("seeds", range(10))]
    if not cfg.seeds:
        raise ConfigError("seeds must be nonempty")
    cfg.output_dir = raw.get("output_dir")
    if cfg.output_dir is not None:
        cfg.output_dir = os.path.join(base_dir, cfg.output_dir)
    cfg.record_wall_time = bool(raw.get("record_wall_time", False))
    cfg.save_checkpoints = bool(raw.get("save_checkpoints", True))
    cfg.oracle_weights = bool(raw.get("oracle_weights", False))

    pc = PipelineConfig()
    for name in _SGD_BLOCKS:
        setattr(pc, name, _block(SgdConfig, getattr(pc, name), raw.get(name), name))
    pc.adversarial = _block(AdversarialConfig, pc.adversarial, raw.get("adversarial"), "adversarial")
    pc.classifier_hidden = int(raw.get("classifier_hidden", pc.classifier_hidden))
    pc.disc_hidden = raw.get("disc_hidden", pc.disc_hidden)
    pc.U = float(raw.get("U", DEFAULT_U))
    pc.bins = int(raw.get("bins", DEFAULT_BINS))
    pc.mode = raw.get("mode", pc.mode)
    if not pc.U > 0 or pc.bins < 1 or pc.mode not in MODES:
        raise ConfigError(f"need U > 0, bins >= 1 and mode in {list(MODES)}")
    cfg.pipeline = pc
    return cfg


def load_config(path) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(raw, os.path.dirname(os.path.abspath(path)))


def output_dir(cli_value=None, cfg: Optional[RunConfig] = None) -> str:
    out = cli_value or (cfg.output_dir if cfg else None) or os.environ.get(OUT_ENV) or DEFAULT_OUT
    os.makedirs(out, exist_ok=True)
    return out


def build_data(cfg: RunConfig):
    """``(PipelineData, weight_fn)`` for the configured scenario or CSV files."""
    if cfg.data is not None:
        splits = {name: load_csv(path) for name, path in cfg.data.items()}
        k = max(d.n_classes or 0 for d in splits.values())
        splits = {n: Dataset(d.features, d.labels, k if d.labeled else None) for n, d in splits.items()}
        for name in ("target_train", "target_val"):
            splits[name] = splits[name].unlabeled()
        return PipelineData(**splits), None
    scen = get_scenario(cfg.scenario)
    splits = {
        name: sample(scen, cfg.sizes[name], stage_seed(cfg.data_seed, name), SPLIT_KIND[name])
        for name in SPLITS
    }
    return PipelineData(**splits), scen.weight_fn


# -- CSV helpers -------------------------------------------------------------


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _num(v) -> str:
    return "" if v is None else repr(float(v))


def summarize(rows):
    """Per-method aggregates over ``results.csv``-style row dicts."""
    out = []
    for method in dict.fromkeys(r["method"] for r in rows):
        sel = [r for r in rows if r["method"] == method]
        col = lambda key: np.array([float(r[key]) for r in sel])
        std = lambda a: float(a.std(ddof=1)) if len(a) > 1 else 0.0
        e, o, c = col("ece"), col("overconf_ece"), col("cls_error")
        out.append({
            "method": method, "runs": len(sel),
            "ece_mean": float(e.mean()), "ece_std": std(e), "ece_median": float(np.median(e)),
            "overconf_ece_mean": float(o.mean()), "overconf_ece_std": std(o),
            "cls_error_mean": float(c.mean()), "cls_error_std": std(c),
        })
    return out


def read_results(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


# -- commands ----------------------------------------------------------------


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = output_dir(args.out, cfg)
    data, weight_fn = build_data(cfg)
    data.check()
    pc = cfg.pipeline
    t0 = time.perf_counter()
    clf = train_classifier(data.source_train, pc.classifier.replace(seed=cfg.data_seed),
                           pc.classifier_hidden)
    timings = [("all", cfg.data_seed, "classifier", time.perf_counter() - t0)]
    results_path = os.path.join(out, "results.csv")
    rows = []

    def flush():
        atomic_write_text(results_path, _csv_text(RESULT_COLUMNS, [[r[c] for c in RESULT_COLUMNS] for r in rows]))
        atomic_write_text(
            os.path.join(out, "timings.csv"),
            _csv_text(("method", "seed", "stage", "seconds"), [[m, s, st, repr(v)] for m, s, st, v in timings]),
        )

    for method in cfg.methods:
        for seed in cfg.seeds:
            t = time.perf_counter()
            res = run_method(method, data, pc, clf, seed, weight_fn if cfg.oracle_weights else None)
            wall = (time.perf_counter() - t) * 1000.0
            rows.append({
                "method": method, "seed": str(seed),
                "ece": _num(res.report.ece), "overconf_ece": _num(res.report.overconfident_ece),
                "cls_error": _num(res.cls_error),
                "wall_ms": _num(wall) if cfg.record_wall_time else "",
            })
            timings.extend((method, seed, stage, v) for stage, v in res.timings.items())
            if cfg.save_checkpoints:
                meta = {"method": method, "seed": seed, "data_seed": cfg.data_seed,
                        "scenario": cfg.scenario, "n_classes": data.source_train.n_classes}
                ckpt = Checkpoint(res.forecaster, res.discriminator, res.psi, meta)
                save_checkpoint(ckpt, os.path.join(out, "checkpoints", f"{method}_seed{seed}.json"))
            flush()
            log.info("%s seed %s: ECE %.4f (%.0f ms)", method, seed, res.report.ece, wall)

    summary = summarize(rows)
    atomic_write_text(
        os.path.join(out, "summary.csv"),
        _csv_text(SUMMARY_COLUMNS, [[s["method"], s["runs"]] + [_num(s[c]) for c in SUMMARY_COLUMNS[2:]] for s in summary]),
    )
    print(f"{'method':<12} {'ECE mean ± std':>22} {'median':>8} {'OC-ECE':>8} {'error':>7}")
    for s in summary:
        print(f"{s['method']:<12} {s['ece_mean']:>12.4f} ± {s['ece_std']:<7.4f} {s['ece_median']:>8.4f} "
              f"{s['overconf_ece_mean']:>8.4f} {s['cls_error_mean']:>7.4f}")
    print(f"wrote {results_path}")
    return EXIT_OK


def _eval_data(args) -> Dataset:
    if args.data:
        return load_csv(args.data)
    if not args.scenario:
        raise ConfigError("give --data CSV or --scenario NAME")
    return sample(get_scenario(args.scenario), args.n, args.seed, "target-labeled")


def cmd_reliability(args) -> int:
    try:
        ckpt = load_checkpoint(args.checkpoint)
    except OSError as exc:
        raise ConfigError(f"cannot read checkpoint {args.checkpoint}: {exc.strerror}") from None
    data = _eval_data(args)
    if not data.labeled:
        raise ConfigError("reliability needs labeled evaluation data")
    fc = ckpt.forecaster
    report, _ = reliability_bins(fc.predict(data.features), data, args.bins, fc.predict_label(data.features))
    out = output_dir(args.out)
    stem = args.name
    atomic_write_text(
        os.path.join(out, f"{stem}.csv"),
        _csv_text(("bin", "mean_conf", "accuracy", "mass"), [[b, repr(c), repr(a), repr(m)] for b, c, a, m in report.rows()]),
    )
    atomic_write_text(os.path.join(out, f"{stem}.svg"), reliability_svg(report))
    atomic_write_text(os.path.join(out, f"{stem}.json"), json.dumps(report.to_dict(), indent=1) + "\n")
    print(f"ECE {report.ece:.6f}  over-confident ECE {report.overconfident_ece:.6f}  "
          f"({report.nonempty().size} nonempty of {report.B} bins)")
    print(f"wrote {os.path.join(out, stem)}.{{csv,svg,json}}")
    return EXIT_OK


def cmd_verify_bound(args) -> int:
    scen = get_scenario(args.scenario)
    if scen.domain is None:
        raise ConfigError(f"scenario {args.scenario!r} is not enumerable")
    domain = scen.domain
    U = domain.U if args.U is None else args.U
    rng = np.random.default_rng(args.seed)
    out = output_dir(args.out)
    t0 = time.perf_counter()
    trial_rows, link_failures = [], {}
    violation = None
    min_slack = np.inf
    for t in range(args.trials):
        family = INSTANCE_FAMILIES[t % len(INSTANCE_FAMILIES)]
        f, g = random_bound_instance(domain, U, rng, family)
        rep = theorem1_bound(domain, f, g, U, lam=args.debug_lambda, check=False)
        chain = bound_chain(domain, f, g, U, check=False)
        bad = failed_links(chain["links"])
        for name in bad:
            link_failures[name] = link_failures.get(name, 0) + 1
        trial_rows.append([t, family, repr(rep.lhs), repr(rep.rhs), repr(rep.slack), ";".join(bad)])
        min_slack = min(min_slack, rep.slack)
        if violation is None and rep.slack < -1e-9:
            violation = {"trial": t, "family": family, "U": U, "lam": rep.lam, "lhs": rep.lhs, "rhs": rep.rhs,
                         "slack": rep.slack, "f": f.tolist(), "g": g.tolist()}
    tdom, tf, tg, tU = tight_instance(domain)
    tight = theorem1_bound(tdom, tf, tg, tU, check=False)
    elapsed = time.perf_counter() - t0
    atomic_write_text(os.path.join(out, "bound_trials.csv"),
                      _csv_text(("trial", "family", "lhs", "rhs", "slack", "failed_links"), trial_rows))
    n_viol = sum(1 for r in trial_rows if float(r[4]) < -1e-9)
    lam = (1 + U) ** 4 if args.debug_lambda is None else args.debug_lambda
    print(f"scenario {args.scenario}: {args.trials} trials, U = {U:.6g}, lambda = {lam:.6g}")
    print(f"min slack {min_slack:.6g}; violations {n_viol}")
    print(f"tight instance: lhs {tight.lhs:.3g}, rhs {tight.rhs:.3g}, slack {tight.slack:.3g}")
    if link_failures:
        for name, n in sorted(link_failures.items()):
            print(f"chain link {name} out of order in {n}/{args.trials} trials")
    else:
        print("all chain links ordered in every trial")
    print(f"elapsed {elapsed:.2f} s")
    if violation is not None:
        path = os.path.join(out, "violation.json")
        atomic_write_text(path, json.dumps(violation) + "\n")
        print(f"bound violated in trial {violation['trial']}; instance written to {path}", file=sys.stderr)
        return EXIT_VIOLATION
    if args.strict_chain and link_failures:
        return EXIT_VIOLATION
    return EXIT_OK


def cmd_iw_report(args) -> int:
    cfg = load_config(args.config)
    if len(cfg.seeds) < 2:
        raise ConfigError("iw-report needs at least two seeds")
    if "IW" not in args.method:
        raise ConfigError("iw-report needs an importance-weighted method")
    out = output_dir(args.out, cfg)
    data, _ = build_data(cfg)
    data.check()
    pc = cfg.pipeline
    clf = train_classifier(data.source_train, pc.classifier.replace(seed=cfg.data_seed), pc.classifier_hidden)
    W = []
    for seed in cfg.seeds:
        res = run_method(args.method, data, pc, clf, seed)
        W.append(res.discriminator.weights(data.source_val.features))
        log.info("seed %s: max weight %.4f", seed, W[-1].max())
    rows = iw_distribution_report(np.array(W), args.top_k)
    cols = ("rank", "index", "mean", "median", "min", "max")
    atomic_write_text(os.path.join(out, "iw_report.csv"),
                      _csv_text(cols, [[r["rank"], r["index"]] + [repr(r[c]) for c in cols[2:]] for r in rows]))
    atomic_write_text(os.path.join(out, "iw_report.svg"), weight_spread_svg(rows))
    for r in rows:
        print(f"#{r['rank']:>2} example {r['index']:>5}: median {r['median']:.4f} "
              f"[{r['min']:.4f}, {r['max']:.4f}]")
    print(f"wrote {os.path.join(out, 'iw_report.csv')}")
    return EXIT_OK


# -- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="shiftcal", description="Calibration under covariate shift.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run methods x seeds and write results.csv")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--out", help=f"output directory (default: config, then ${OUT_ENV})")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("reliability", help="reliability-diagram bins and SVG for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="labeled CSV to evaluate on")
    p.add_argument("--scenario", help="or sample labeled target data from a built-in scenario")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-B", "--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--name", default="reliability", help="output file stem")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_reliability)

    p = sub.add_parser("verify-bound", help="check the covariate-shift bound on random instances")
    p.add_argument("--scenario", default="grid-K3")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--U", type=float, default=None, help="clamp bound (default: the domain's max weight)")
    p.add_argument("--debug-lambda", type=float, default=None,
                   help="replace (1+U)^4 by this constant (mutation check)")
    p.add_argument("--strict-chain", action="store_true",
                   help="also exit 2 when an intermediate chain link is out of order")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_verify_bound)

    p = sub.add_parser("iw-report", help="spread of estimated importance weights across seeds")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--method", default="IW+Temp", choices=[m for m in METHODS if "IW" in m])
    p.add_argument("--top-k", type=int, default=15)
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_iw_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except BoundViolation as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VIOLATION
    except (ShiftcalError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
