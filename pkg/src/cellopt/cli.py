"""``cellopt`` command-line interface.

Every subcommand writes its artifacts under ``--out-dir`` and a sidecar
``<command>.meta.json`` holding the seed, the configuration hash and a
timestamp; the artifacts themselves are deterministic. Global flags may be
given before or after the subcommand and default to ``CELLOPT_<FLAG>``
environment variables (``CELLOPT_SEED``, ``CELLOPT_THREADS``,
``CELLOPT_OUT_DIR``, ``CELLOPT_PAPER_DEFAULTS``).

Exit status is 0 on success, 2 on usage errors and 1 when a computation
fails.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

ENV_PREFIX = "CELLOPT_"
_GLOBAL_DEFAULTS = {"seed": 42, "threads": 1, "out_dir": ".", "paper_defaults": False}


class UsageError(Exception):
    """Arguments are well-formed but inconsistent."""


def _env_default(name):
    raw = os.environ.get(ENV_PREFIX + name.upper())
    base = _GLOBAL_DEFAULTS[name]
    if raw is None:
        return base
    if isinstance(base, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return type(base)(raw)


def _globals_parser(suppress: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda name: argparse.SUPPRESS) if suppress else _env_default
    g = p.add_argument_group("global options")
    g.add_argument("--seed", type=int, default=d("seed"), help="random seed (default 42)")
    g.add_argument("--threads", type=int, default=d("threads"), help="worker threads")
    g.add_argument("--out-dir", default=d("out_dir"), help="directory for artifacts")
    g.add_argument("--paper-defaults", action="store_true", default=d("paper_defaults"),
                   help="use the published grid, device, bounds and classifier settings")
    return p


def _features(p, required=True):
    p.add_argument("--x", type=float, required=required, help="Sb fraction [%%]")
    p.add_argument("--nabs", type=float, required=required, help="absorber defects [cm^-3]")
    p.add_argument("--tabs", type=float, required=required, help="absorber thickness [um]")
    p.add_argument("--netl", type=float, required=required, help="ETL doping [cm^-3]")


def _models(p):
    p.add_argument("--eta-model", default="reference",
                   help="efficiency surrogate JSON, or 'reference' for the built-in PR-4")
    p.add_argument("--delta-model", default="reference",
                   help="degradation surrogate JSON, or 'reference'")
    p.add_argument("--bounds", default=None,
                   help="box, e.g. x=55:78,nabs=3e14:1e15,tabs=0.2:0.55,netl=2e16:1.9e17")
    p.add_argument("--starts", type=int, default=32, help="stratified starts besides the centre")


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="cellopt", parents=[_globals_parser(False)],
                                  description="Simulate, fit, optimize and classify "
                                              "HTL-free perovskite cells.")
    sub = top.add_subparsers(dest="command", metavar="command", required=True)
    common = [_globals_parser(True)]

    def add(name, help_):
        return sub.add_parser(name, parents=common, help=help_, description=help_)

    p = add("simulate", "J-V curve and metrics of one feature vector")
    _features(p)
    p.add_argument("--backend", choices=("drift_diffusion", "diode-composite"),
                   default="drift_diffusion")
    p.add_argument("--device", help="device JSON replacing the default stack")

    p = add("dataset", "simulate a feature grid into a CSV dataset")
    p.add_argument("--grid", default="default", help="'default' or a grid JSON file")
    p.add_argument("--backend", choices=("drift_diffusion", "diode-composite"),
                   default="drift_diffusion")
    p.add_argument("--output", default="dataset.csv")

    p = add("fit", "fit a polynomial surrogate to one dataset target")
    p.add_argument("--data", required=True)
    p.add_argument("--target", choices=("jsc", "voc", "ff", "eta", "delta"), default="eta")
    p.add_argument("--degree", type=int, default=4)
    p.add_argument("--output", default=None, help="default <target>_pr<degree>.json")

    p = add("sweep-degrees", "test error of polynomial fits versus degree")
    p.add_argument("--data", required=True)
    p.add_argument("--target", choices=("jsc", "voc", "ff", "eta", "delta"), default="eta")
    p.add_argument("--max-degree", type=int, default=10)

    p = add("optimize", "maximize the weighted efficiency/degradation objective")
    _models(p)
    p.add_argument("--w-eta", type=float, default=0.5)
    p.add_argument("--w-delta", type=float, default=None, help="default 1 - w_eta")

    p = add("sweep-weights", "optimize over a list of weight pairs")
    _models(p)
    p.add_argument("--weights", default=None,
                   help="comma-separated w_eta values (default: the ten published pairs)")

    p = add("reconstruct", "single-diode parameters and curves from cell metrics")
    p.add_argument("--jsc", type=float, help="short-circuit current [mA/cm^2]")
    p.add_argument("--voc", type=float, help="open-circuit voltage [V]")
    p.add_argument("--ff", type=float, help="fill factor [%%]")
    p.add_argument("--data", help="dataset CSV; metrics are predicted by regression trees")
    _features(p, required=False)
    p.add_argument("--rs", type=float, default=1.0, help="series resistance [Ohm cm^2]")
    p.add_argument("--rsh", type=float, default=1000.0, help="shunt resistance [Ohm cm^2]")

    p = add("degrade", "defect growth after a number of hours")
    p.add_argument("--tau", type=float, default=0.9, help="time constant [h]")
    p.add_argument("--n0", type=float, default=1e14, help="initial defects [cm^-3]")
    p.add_argument("--hours", type=float, default=50.0)

    p = add("classify", "cluster labels, SMOTE balancing and the MLP classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--clusters", type=int, default=10)
    p.add_argument("--epochs", type=int, default=100)
    _features(p, required=False)

    p = add("study", "full dataset-to-classification workflow")
    p.add_argument("--config", help="study JSON; keys mirror StudyConfig")
    p.add_argument("--data", help="dataset CSV (skips simulation)")
    p.add_argument("--backend", choices=("drift_diffusion", "diode-composite"), default=None)
    p.add_argument("--reference-surrogates", action="store_true")
    p.add_argument("--no-validate", action="store_true")

    p = add("ablate", "polynomial fits on every pair of features")
    p.add_argument("--data", required=True)
    p.add_argument("--target", choices=("jsc", "voc", "ff", "eta", "delta"), default="delta")
    p.add_argument("--degree", type=int, default=4)
    return top


# -- helpers ---------------------------------------------------------------

def _config_hash(args) -> str:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("out_dir", "threads")}
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _feature_vector(args):
    from .features import FeatureVector
    vals = (args.x, args.nabs, args.tabs, args.netl)
    if any(v is None for v in vals):
        if any(v is not None for v in vals):
            raise UsageError("give all of --x --nabs --tabs --netl")
        return None
    return FeatureVector(*vals)


def _load_model(spec, name):
    from .surrogate import PolySurrogate, load_appendix_coefficients
    if spec == "reference":
        return load_appendix_coefficients()[0 if name == "eta" else 1]
    return PolySurrogate.load(spec)


def _bounds(args):
    from .features import PAPER_BOUNDS
    from .optimizer import parse_bounds
    if args.paper_defaults or args.bounds is None:
        return PAPER_BOUNDS
    try:
        return parse_bounds(args.bounds)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# -- subcommands -----------------------------------------------------------

def cmd_simulate(args, out: Path, meta: dict) -> dict:
    from .diode import write_curve_csv
    from .drift_diffusion import build_device, load_device, simulate_jv
    from .pipeline import CompositeDiodeBackend
    f = _feature_vector(args)
    if args.backend == "drift_diffusion":
        base = load_device(args.device) if args.device and not args.paper_defaults else None
        res = simulate_jv(build_device(f, base))
        v, j, m = res.v, res.j, res.metrics
    else:
        from .diode import characteristic_curves, extract_metrics
        params = CompositeDiodeBackend().params(f)
        m = extract_metrics(params)
        c = characteristic_curves(params, m.v_oc)
        v, j = c.v, c.j
    write_curve_csv(out / "jv.csv", v, j)
    result = {"features": f.to_dict(), "backend": args.backend, "jsc_mA_cm2": m.j_sc,
              "voc_V": m.v_oc, "ff_pct": m.ff, "eta_pct": m.eta, **meta}
    _write_json(out / "simulate.json", result)
    print(f"J_SC = {m.j_sc:.4f} mA/cm2  V_OC = {m.v_oc:.4f} V  "
          f"FF = {m.ff:.2f} %  eta = {m.eta:.3f} %")
    return result


def cmd_dataset(args, out: Path, meta: dict) -> dict:
    from .pipeline import GridSpec, generate_dataset
    if args.grid == "default" or args.paper_defaults:
        grid = GridSpec.default()
    else:
        grid = GridSpec.from_dict(json.loads(Path(args.grid).read_text()))

    def progress(k):
        if k % 50 == 0 or k == len(grid):
            print(f"\r{k}/{len(grid)} rows", end="", file=sys.stderr, flush=True)

    ds = generate_dataset(grid, args.backend, args.threads, args.seed, progress=progress)
    print(file=sys.stderr)
    ds.metadata["config_hash"] = meta["config_hash"]
    ds.save(out / args.output)
    print(f"{len(ds)} rows written to {out / args.output} "
          f"({len(ds.metadata['failed'])} failed)")
    return {"rows": len(ds), "path": str(out / args.output)}


def _dataset(path):
    from .pipeline import Dataset
    return Dataset.from_csv(path)


def cmd_fit(args, out: Path, meta: dict) -> dict:
    from .pipeline import fit_target
    r = fit_target(_dataset(args.data), args.target, args.degree, args.seed)
    s = r.surrogate
    s.metadata.update({"seed": args.seed, "config_hash": meta["config_hash"],
                       "train_r2": r.train_r2, "test_r2": r.test_r2,
                       "test_rmse": r.test_rmse})
    name = args.output or f"{args.target}_pr{args.degree}.json"
    s.save(out / name)
    print(f"{args.target} PR-{args.degree}: train R2 = {r.train_r2:.6f}  "
          f"test R2 = {r.test_r2:.6f}  test RMSE = {r.test_rmse:.5f}")
    return {"path": str(out / name), "test_r2": r.test_r2, "test_rmse": r.test_rmse}


def cmd_sweep_degrees(args, out: Path, meta: dict) -> dict:
    from .pipeline import Dataset
    from .pipeline.workflows import LOG_FLAGS
    from .surrogate import degree_sweep
    ds = Dataset.from_csv(args.data).valid()
    rows = degree_sweep(ds.X, ds.target(args.target), range(1, args.max_degree + 1),
                        log_flags=LOG_FLAGS, seed=args.seed)
    for r in rows:
        print(f"degree {r['degree']:2d}  test R2 = {r['r2']:.6f}  test RMSE = {r['rmse']:.5f}")
    result = {"target": args.target, "rows": rows, **meta}
    _write_json(out / "sweep_degrees.json", result)
    return result


def cmd_optimize(args, out: Path, meta: dict) -> dict:
    from .optimizer import ObjectiveWeights, optimize_cell
    w_delta = 1.0 - args.w_eta if args.w_delta is None else args.w_delta
    try:
        w = ObjectiveWeights(args.w_eta, w_delta)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    r = optimize_cell(_load_model(args.eta_model, "eta"), _load_model(args.delta_model, "delta"),
                      w, _bounds(args), args.starts, args.seed)
    result = {**r.to_dict(), **meta}
    _write_json(out / "optimum.json", result)
    print(json.dumps(r.to_dict(), indent=2))
    return result


def cmd_sweep_weights(args, out: Path, meta: dict) -> dict:
    from .optimizer import TABLE8_WEIGHTS, weight_sweep
    if args.weights:
        pairs = [(float(w), 1.0 - float(w)) for w in args.weights.split(",")]
    else:
        pairs = TABLE8_WEIGHTS
    rows = weight_sweep(_load_model(args.eta_model, "eta"), _load_model(args.delta_model, "delta"),
                        pairs, _bounds(args), args.starts, args.seed)
    for r in rows:
        print(f"w_eta = {r['w_eta']:.2f}  eta = {r['eta_pct']:.3f} %  "
              f"delta = {r['delta_pct']:.4f} %")
    result = {"rows": rows, **meta}
    _write_json(out / "sweep_weights.json", result)
    return result


def cmd_reconstruct(args, out: Path, meta: dict) -> dict:
    from .diode import CellMetrics, characteristic_curves, reconstruct_parameters, write_curve_csv
    f = _feature_vector(args)
    if args.data:
        if f is None:
            raise UsageError("--data needs --x --nabs --tabs --netl")
        from .pipeline import fit_metric_trees, reconstruct_from_predictions
        rec, curve = reconstruct_from_predictions(fit_metric_trees(_dataset(args.data)), f,
                                                  args.rs, args.rsh)
    else:
        if None in (args.jsc, args.voc, args.ff):
            raise UsageError("give --jsc --voc --ff, or --data with a feature vector")
        m = CellMetrics.from_jsc_voc_ff(args.jsc, args.voc, args.ff)
        rec = reconstruct_parameters(m, r_s=args.rs, r_sh=args.rsh)
        curve = characteristic_curves(rec.params, m.v_oc)
    write_curve_csv(out / "reconstructed_jv.csv", curve.v, curve.j)
    result = {**rec.to_dict(), "r_s": args.rs, "r_sh": args.rsh, **meta}
    _write_json(out / "reconstruct.json", result)
    print(f"J_ph = {rec.params.j_ph:.6g} mA/cm2  J_0 = {rec.params.j_0:.6g} mA/cm2  "
          f"n = {rec.params.n:.6g}  ({rec.iterations} iterations)")
    return result


def cmd_degrade(args, out: Path, meta: dict) -> dict:
    from .degradation import DegradationModel, defect_density_at
    try:
        model = DegradationModel(args.n0, args.tau)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    n = defect_density_at(model, args.hours)
    result = {"n0": args.n0, "tau_h": args.tau, "hours": args.hours, "n_t": n,
              "multiple": n / args.n0, **meta}
    _write_json(out / "degrade.json", result)
    print(f"N({args.hours:g} h) = {n:.4e} cm^-3 = {n / args.n0:.4f} x N0")
    return result


def cmd_classify(args, out: Path, meta: dict) -> dict:
    from .ml import MlpConfig
    from .pipeline import label_dataset, oversample, train_classifier
    epochs = 100 if args.paper_defaults else args.epochs
    lab = label_dataset(_dataset(args.data), args.clusters, args.seed)
    bal = oversample(lab.dataset, args.seed)
    bal.to_csv(out / "labeled.csv")
    run = train_classifier(lab.dataset, args.seed, MlpConfig(epochs=epochs))
    run.model.save(out / "classifier.json")
    counts = np.bincount(lab.dataset.labels, minlength=2)
    result = {"superior_rows": int(counts[1]), "inferior_rows": int(counts[0]),
              "balanced_counts": np.bincount(bal.labels, minlength=2).tolist(),
              "test": run.report.to_dict(), **meta}
    f = _feature_vector(args)
    if f is not None:
        result["prediction"] = ("Inferior", "Superior")[int(run.model.predict(f.as_array())[0])]
    _write_json(out / "classify.json", result)
    print(f"Superior {counts[1]} / Inferior {counts[0]}; test accuracy "
          f"{run.report.accuracy:.4f}, F1 {run.report.f1:.4f}")
    if "prediction" in result:
        print(f"feature vector classified as {result['prediction']}")
    return result


def cmd_study(args, out: Path, meta: dict) -> dict:
    from .pipeline import StudyConfig, end_to_end_study
    cfg = json.loads(Path(args.config).read_text()) if args.config else {}
    cfg.update(seed=args.seed, threads=args.threads)
    if args.data:
        cfg["dataset"] = args.data
    if args.backend:
        cfg["backend"] = args.backend
    if args.reference_surrogates:
        cfg["reference_surrogates"] = True
    if args.no_validate:
        cfg["validate"] = False
    try:
        config = StudyConfig.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    if args.paper_defaults:
        from .features import PAPER_BOUNDS
        from .ml import MlpConfig
        config.grid, config.mlp = None, MlpConfig().to_dict()
        config.bounds = [list(PAPER_BOUNDS.lower), list(PAPER_BOUNDS.upper)]
    report = end_to_end_study(config, log=lambda m: print(m, file=sys.stderr))
    report.update(meta)
    _write_json(out / "study.json", report)
    o = report["stages"]["optimize"]
    print(f"optimum eta = {o['eta_pct']:.3f} %  delta = {o['delta_pct']:.4f} %  "
          f"class = {report['stages']['classify']['optimum_class']}")
    return report


def cmd_ablate(args, out: Path, meta: dict) -> dict:
    from .pipeline import feature_ablation
    rows = feature_ablation(_dataset(args.data), args.target, args.degree, args.seed)
    for r in rows:
        print(f"{'+'.join(r['features']):<30} train R2 = {r['train_r2']:.5f}  "
              f"test R2 = {r['test_r2']:.5f}  test RMSE = {r['test_rmse']:.5f}")
    result = {"target": args.target, "rows": rows, **meta}
    _write_json(out / "ablation.json", result)
    return result


COMMANDS = {
    "simulate": cmd_simulate, "dataset": cmd_dataset, "fit": cmd_fit,
    "sweep-degrees": cmd_sweep_degrees, "optimize": cmd_optimize,
    "sweep-weights": cmd_sweep_weights, "reconstruct": cmd_reconstruct,
    "degrade": cmd_degrade, "classify": cmd_classify, "study": cmd_study,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        parser.print_usage(sys.stderr)
        print("cellopt: error: --threads must be >= 1", file=sys.stderr)
        return 2
    out = Path(args.out_dir)
    meta = {"seed": args.seed, "config_hash": _config_hash(args)}
    try:
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, out, meta)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"cellopt {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        stage = getattr(exc, "stage", args.command)
        print(f"cellopt: {stage} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    sidecar = {"command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
               "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(), **meta}
    _write_json(out / f"{args.command}.meta.json", sidecar)
    return 0


if __name__ == "__main__":
    sys.exit(main())
