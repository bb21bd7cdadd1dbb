"""Command-line entry point covering the full pipeline.

Subcommands: data (synth | ingest), train, attack, experiment (whitebox |
categories | transfer), defend (detect | retrain | crosscheck). Every run
writes a resolved-config snapshot and a manifest under --out and never
mutates its inputs. Exit codes: 0 success, 2 validation error, 3 crafting
returned no result, 1 internal error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import alpha_models as am
from . import attack as atk
from . import defense as dfs
from . import experiments as xp
from . import features as ft
from . import market_data as md

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_VALIDATION = 2
EXIT_NORESULT = 3


class NoResultExit(Exception):
    pass


def _load_config(path, allowed: set) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        cfg = json.load(fh)
    unknown = set(cfg) - allowed
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)} "
                         f"(allowed: {sorted(allowed)})")
    return cfg


def _resolve(args, config: dict, keys) -> dict:
    """Flags override config values; None flags fall back to config."""
    out = dict(config)
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _write_run_files(out_dir: Path, resolved: dict, outputs: list) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump(resolved, fh, indent=2, default=str)
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump({"argv": sys.argv[1:],
                   "outputs": [str(p) for p in outputs]}, fh, indent=2)


def _split_from_series(series, resolved) -> md.Split:
    protocol = md.SplitProtocol.from_days(
        series.days.tolist(),
        n_train_days=resolved.get("train_days", 15),
        n_craft_days=resolved.get("craft_days", 3),
        n_test_weeks=resolved.get("test_weeks", 6),
        days_per_week=resolved.get("days_per_week", 5),
        samples_per_class=resolved.get("samples_per_class", 100),
        seed=resolved.get("seed", 0))
    return md.build_split(series, protocol)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

DATA_KEYS = {"seed", "days", "minutes_per_day", "start_price", "volatility",
             "amplitude", "shape", "period", "vol_of_vol", "symbol"}


def cmd_data(args) -> int:
    out_dir = Path(args.out)
    resolved = _resolve(args, _load_config(args.config, DATA_KEYS),
                        ["seed", "days", "minutes_per_day", "start_price",
                         "volatility", "amplitude", "shape", "period",
                         "vol_of_vol", "symbol"])
    if args.mode == "synth":
        params = md.SynthParams(
            n_days=resolved.get("days", 48),
            minutes_per_day=resolved.get("minutes_per_day", 390),
            start_price=resolved.get("start_price", 150.0),
            volatility=resolved.get("volatility", 2e-4),
            seasonality_amplitude=resolved.get("amplitude", 1.2e-3),
            seasonality_shape=resolved.get("shape", "triangle"),
            seasonality_period=resolved.get("period", 60),
            vol_of_vol=resolved.get("vol_of_vol", 0.8),
            symbol=resolved.get("symbol", "SYN"))
        series = md.synthesize_series(params, seed=resolved.get("seed", 0))
    else:
        series = md.load_csv(args.path, symbol=resolved.get("symbol"))

    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "series.csv"
    md.to_csv(series, csv_path)
    windows = md.make_windows(series)
    per_day = {}
    for day, sl in series.day_slices():
        per_day[str(day)] = sl.stop - sl.start
    summary = {
        "symbol": series.symbol,
        "n_bars": len(series),
        "n_days": len(series.days),
        "bars_per_day": per_day,
        "n_windows": len(windows),
        "dropped_rows": getattr(series, "_dropped_rows", 0),
    }
    with open(out_dir / "summary.json", "w") as fh:
        json.dump(summary, fh, indent=2)
    _write_run_files(out_dir, resolved, [csv_path, out_dir / "summary.json"])
    print(f"{series.symbol}: {len(series)} bars over {len(series.days)} days, "
          f"{len(windows)} windows -> {csv_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

TRAIN_KEYS = {"seed", "epochs", "batch_size", "lr", "train_days", "craft_days",
              "test_weeks", "days_per_week", "samples_per_class"}


def cmd_train(args) -> int:
    resolved = _resolve(args, _load_config(args.config, TRAIN_KEYS),
                        ["seed", "epochs", "batch_size", "lr", "train_days"])
    out_dir = Path(args.out)
    series = md.load_csv(args.data)
    split = _split_from_series(series, resolved)
    archs = list(am.ARCH_KINDS) if args.arch == "all" else [args.arch]

    # one normalizer fit shared by every architecture trained in this run
    normalizer = ft.fit_normalizer(ft.windows_to_features(split.train))
    outputs = []
    for arch in archs:
        bundle_dir = out_dir / arch
        if (bundle_dir / am.BUNDLE_MANIFEST).exists() and not args.force:
            raise ValueError(f"{bundle_dir} already holds a model; "
                             f"pass --force to overwrite")
        seed = resolved.get("seed", 0)
        hyper = am.TrainHyper(epochs=resolved.get("epochs", 15),
                              batch_size=resolved.get("batch_size", 32),
                              lr=resolved.get("lr", 1e-3), seed=seed)
        model = am.build(arch, seed=seed)
        model, report = am.train(model, split.train, hyper,
                                 normalizer=normalizer)
        am.save_bundle(model, bundle_dir, force=True)
        eval_path = bundle_dir / "train_report.json"
        with open(eval_path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
        outputs += [bundle_dir, eval_path]
        print(f"{arch}: train DA {report.da:.2f} ({report.n} samples) "
              f"-> {bundle_dir}")
    _write_run_files(out_dir, resolved, outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# attack
# ---------------------------------------------------------------------------

ATTACK_KEYS = {"seed", "delta", "epsilon_pct", "target", "max_iter",
               "batch_size", "inner_iterations", "train_days", "craft_days",
               "test_weeks", "days_per_week", "samples_per_class"}


def cmd_attack(args) -> int:
    out_dir = Path(args.out)
    resolved = _resolve(args, _load_config(args.config, ATTACK_KEYS),
                        ["seed", "delta", "epsilon_pct", "target", "max_iter"])
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.baseline == "random":
        matched = atk.Tuap.load(args.match)
        rnd = atk.random_perturbation(matched.norm, len(matched.offsets),
                                      seed=resolved.get("seed", 0))
        path = out_dir / "random_perturbation.json"
        rnd.save(path)
        _write_run_files(out_dir, resolved, [path])
        print(f"random baseline with |v|={rnd.norm:.6g} -> {path}")
        return EXIT_OK

    model = am.load_bundle(args.model)
    series = md.load_csv(args.data)
    split = _split_from_series(series, resolved)
    target = 1 if resolved.get("target", "increase") == "increase" else 0
    cfg = atk.AttackConfig(
        epsilon=1e-3,
        delta=resolved.get("delta", 90.0),
        max_outer_iterations=resolved.get("max_iter", 50),
        batch_size=resolved.get("batch_size", 30),
        inner_iterations=resolved.get("inner_iterations", 20),
        seed=resolved.get("seed", 0))
    result = atk.craft_calibrated(split.craft, target, model, cfg,
                                  target_size_pct=resolved.get("epsilon_pct", 0.02))
    if isinstance(result, atk.NoResult):
        _write_run_files(out_dir, resolved, [])
        raise NoResultExit(
            f"no perturbation met delta={cfg.delta} within "
            f"{result.outer_iterations_used} outer iterations "
            f"(best TFR {result.best_tfr:.2f}); consider changing the "
            f"constraints (delta or epsilon)")
    tuap_path = out_dir / "tuap.json"
    result.save(tuap_path)
    all_tests = [s for t in split.tests for s in t]
    metrics = atk.evaluate_attack(model, all_tests, result, target)
    metrics_path = out_dir / "metrics.json"
    with open(metrics_path, "w") as fh:
        json.dump({"craft_tfr": result.achieved_tfr_on_craft,
                   "test": metrics.to_dict()}, fh, indent=2)
    _write_run_files(out_dir, resolved, [tuap_path, metrics_path])
    print(f"crafted: craft TFR {result.achieved_tfr_on_craft:.2f} "
          f"size {result.size_pct:.4f}% -> {tuap_path}")
    print(f"test: TFR {metrics.tfr:.2f} UFR {metrics.ufr:.2f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# experiment
# ---------------------------------------------------------------------------

PLAN_KEYS = {f.name for f in dataclasses.fields(xp.ExperimentPlan)}


def _plan_from_file(path) -> xp.ExperimentPlan:
    with open(path) as fh:
        raw = json.load(fh)
    unknown = set(raw) - PLAN_KEYS
    if unknown:
        raise ValueError(f"unknown plan keys: {sorted(unknown)}")
    stocks = []
    for s in raw.pop("stocks", []):
        synth = s.pop("synth", None)
        stocks.append(xp.StockSpec(
            **s, synth=md.SynthParams(**synth) if synth else None))
    if not stocks:
        stocks = [xp.StockSpec(symbol="SYN", synth=xp.default_synth_params())]
    for key in ("archs",):
        if key in raw:
            raw[key] = tuple(raw[key])
    return xp.ExperimentPlan(stocks=tuple(stocks), **raw)


def cmd_experiment(args) -> int:
    out_dir = Path(args.out)
    plan = (_plan_from_file(args.plan) if args.plan
            else xp.default_synth_plan(seed=args.seed or 0))
    if args.suite == "whitebox":
        table = xp.run_whitebox(plan, out_dir=out_dir, jobs=args.jobs)
    elif args.suite == "categories":
        table = xp.run_categories(plan, out_dir=out_dir, jobs=args.jobs)
    else:
        table = xp.run_transfer(plan, out_dir=out_dir)
    written = xp.emit_report(table, out_dir, stem=args.suite)
    _write_run_files(out_dir, plan.to_dict(), written)
    print(table.summary())
    print(f"reports -> {', '.join(str(p) for p in written)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# defend
# ---------------------------------------------------------------------------

DEFEND_KEYS = {"seed", "ratio", "fractions", "tolerance_pct", "epochs",
               "train_days", "craft_days", "test_weeks", "days_per_week",
               "samples_per_class"}


def cmd_defend(args) -> int:
    out_dir = Path(args.out)
    resolved = _resolve(args, _load_config(args.config, DEFEND_KEYS),
                        ["seed", "ratio", "tolerance_pct"])
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []

    if args.mode == "crosscheck":
        streams = [md.load_csv(p) for p in args.streams]
        tol = resolved.get("tolerance_pct", 0.005)
        filtered, records = dfs.multi_broker_filter(streams, tolerance_pct=tol)
        mismatch_path = out_dir / "mismatches.csv"
        dfs.mismatch_report_csv(records, mismatch_path)
        filtered_path = out_dir / "filtered.csv"
        md.to_csv(filtered, filtered_path)
        outputs += [mismatch_path, filtered_path]
        dropped = sum(1 for r in records if r.action == "dropped")
        print(f"{dropped}/{len(records)} shared minutes dropped "
              f"(tolerance {tol}%) -> {mismatch_path}")
        _write_run_files(out_dir, resolved, outputs)
        return EXIT_OK

    model = am.load_bundle(args.model)
    series = md.load_csv(args.data)
    split = _split_from_series(series, resolved)
    tuap = atk.Tuap.load(args.tuap)

    if args.mode == "detect":
        ratio = resolved.get("ratio", 0.10)
        seed = resolved.get("seed", 0)
        train_set, test_sets = dfs.build_detector_sets(
            split.craft, tuap, split.tests, ratio=ratio, seed=seed)
        reports = {
            "knn": dfs.evaluate_detector(dfs.train_knn_detector(train_set),
                                         test_sets, kind="knn"),
            "ann": dfs.evaluate_detector(dfs.train_ann_detector(train_set,
                                                                seed=seed),
                                         test_sets, kind="ann"),
        }
        import csv as _csv

        path = out_dir / "detector_report.csv"
        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(["detector", "week", "precision", "recall",
                        "tp", "fp", "fn", "tn"])
            for kind, rep in reports.items():
                for wk in rep.weeks:
                    w.writerow([kind, wk["week"], wk["precision"],
                                wk["recall"], wk["tp"], wk["fp"],
                                wk["fn"], wk["tn"]])
        outputs.append(path)
        print(f"detector precision/recall per week -> {path}")
    else:  # retrain
        fractions = (tuple(float(x) for x in args.fractions.split(","))
                     if args.fractions else (0.0, 0.1, 0.2, 0.3, 0.4, 0.5))
        hyper = am.TrainHyper(epochs=resolved.get("epochs", 15),
                              seed=model.meta.get("seed", 0))
        report = dfs.adversarial_retrain(model, split.train, tuap,
                                         split.tests, fractions=fractions,
                                         hyper=hyper,
                                         seed=resolved.get("seed", 0))
        path = out_dir / "retrain_report.json"
        with open(path, "w") as fh:
            json.dump(report.to_dict(), fh, indent=2)
        outputs.append(path)
        for row in report.rows:
            print(f"fraction {row['fraction']:.2f}: "
                  f"TFR {row['tfr_perturbed']} DA {row['da_clean']}")
    _write_run_files(out_dir, resolved, outputs)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="alphafool",
        description="Universal adversarial perturbations against intraday "
                    "alpha models: data, training, crafting, experiments, "
                    "defenses.")
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("data", help="synthesize or ingest+validate a series")
    d.add_argument("mode", choices=["synth", "ingest"])
    d.add_argument("path", nargs="?", help="CSV path (ingest mode)")
    d.add_argument("--config")
    d.add_argument("--seed", type=int)
    d.add_argument("--days", type=int)
    d.add_argument("--minutes-per-day", dest="minutes_per_day", type=int)
    d.add_argument("--start-price", dest="start_price", type=float)
    d.add_argument("--volatility", type=float)
    d.add_argument("--amplitude", type=float)
    d.add_argument("--shape", choices=["sine", "triangle"])
    d.add_argument("--period", type=int)
    d.add_argument("--vol-of-vol", dest="vol_of_vol", type=float)
    d.add_argument("--symbol")
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_data)

    t = sub.add_parser("train", help="train alpha model bundles")
    t.add_argument("--data", required=True)
    t.add_argument("--arch", choices=list(am.ARCH_KINDS) + ["all"],
                   default="all")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", dest="batch_size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--train-days", dest="train_days", type=int)
    t.add_argument("--force", action="store_true")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("attack", help="craft a perturbation or a random baseline")
    a.add_argument("--model", help="model bundle directory")
    a.add_argument("--data", help="series CSV")
    a.add_argument("--config")
    a.add_argument("--delta", type=float)
    a.add_argument("--epsilon-pct", dest="epsilon_pct", type=float)
    a.add_argument("--target", choices=["increase", "decrease"])
    a.add_argument("--max-iter", dest="max_iter", type=int)
    a.add_argument("--seed", type=int)
    a.add_argument("--baseline", choices=["random"])
    a.add_argument("--match", help="perturbation file to size-match")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_attack)

    e = sub.add_parser("experiment", help="run a full evaluation suite")
    e.add_argument("suite", choices=["whitebox", "categories", "transfer"])
    e.add_argument("--plan", help="plan JSON file")
    e.add_argument("--seed", type=int)
    e.add_argument("--jobs", type=int, default=1,
                   help="worker threads for independent stock cells")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_experiment)

    f = sub.add_parser("defend", help="run a mitigation suite")
    f.add_argument("mode", choices=["detect", "retrain", "crosscheck"])
    f.add_argument("streams", nargs="*", help="broker CSVs (crosscheck mode)")
    f.add_argument("--model")
    f.add_argument("--data")
    f.add_argument("--tuap")
    f.add_argument("--config")
    f.add_argument("--ratio", type=float)
    f.add_argument("--fractions")
    f.add_argument("--tolerance-pct", dest="tolerance_pct", type=float)
    f.add_argument("--seed", type=int)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_defend)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NoResultExit as exc:
        print(f"no result: {exc}", file=sys.stderr)
        return EXIT_NORESULT
    except (md.CorruptSourceError, md.SplitError, ValueError,
            FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports and exits
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
