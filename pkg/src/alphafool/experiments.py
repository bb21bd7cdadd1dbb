"""Experiment suites: white-box attack evaluation, price-category comparison,
and black-box transferability, with reproducible machine-readable reports.

Every cell is derived deterministically from the plan's global seed; cells
are persisted as atomic JSON files so interrupted runs resume where they
stopped.
"""

from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import alpha_models as am
from . import attack as atk
from . import features as ft
from . import market_data as md

CONDITIONS = ("clean", "tuap", "random")


@dataclass(frozen=True)
class StockSpec:
    """One data source: a synthetic generator configuration or a CSV file."""

    symbol: str
    source: str = "synth"  # "synth" | "csv"
    synth: md.SynthParams | None = None
    csv_path: str | None = None
    category: str = ""

    def load(self, seed: int) -> md.StockSeries:
        if self.source == "synth":
            params = self.synth or md.SynthParams(symbol=self.symbol)
            return md.synthesize_series(params, seed=seed)
        if self.source == "csv":
            return md.load_csv(self.csv_path, symbol=self.symbol)
        raise ValueError(f"unknown source {self.source!r}")


@dataclass(frozen=True)
class ExperimentPlan:
    """Declarative description of a full experiment run."""

    stocks: tuple
    archs: tuple = ("dnn", "cnn", "rnn")
    seed: int = 0
    n_random: int = 3
    delta: float = 90.0
    target_class: int = 1
    target_size_pct: float = 0.02
    size_tolerance: float = 0.10
    transfer_epsilon: float = 5e-3
    transfer_delta: float = 99.0
    max_outer_iterations: int = 50
    batch_size: int = 30
    inner_iterations: int = 20
    epochs: int = 15
    train_batch: int = 32
    lr: float = 1e-3
    n_train_days: int = 15
    n_craft_days: int = 3
    n_test_weeks: int = 6
    days_per_week: int = 5
    samples_per_class: int = 100

    def model_seed(self, symbol: str, arch: str) -> int:
        return md.stable_seed(self.seed, "model", symbol, arch)

    def attack_seed(self, symbol: str, arch: str) -> int:
        return md.stable_seed(self.seed, "attack", symbol, arch)

    def random_seed(self, symbol: str, arch: str, draw: int) -> int:
        return md.stable_seed(self.seed, "random", symbol, arch, draw)

    def data_seed(self, symbol: str) -> int:
        return md.stable_seed(self.seed, "data", symbol)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["stocks"] = [
            {**{k: v for k, v in asdict(s).items() if k != "synth"},
             "synth": asdict(s.synth) if s.synth else None}
            for s in self.stocks
        ]
        return d


def default_synth_params(symbol: str = "SYN", start_price: float = 150.0,
                         n_days: int = 48) -> md.SynthParams:
    """The desk-scale synthetic regime the acceptance analogue runs on."""
    return md.SynthParams(n_days=n_days, minutes_per_day=390,
                          start_price=start_price, volatility=2e-4,
                          seasonality_amplitude=1.2e-3,
                          seasonality_shape="triangle", seasonality_period=60,
                          vol_of_vol=0.8, symbol=symbol)


def default_synth_plan(seed: int = 0, symbol: str = "SYN") -> ExperimentPlan:
    return ExperimentPlan(stocks=(StockSpec(symbol=symbol,
                                            synth=default_synth_params(symbol)),),
                          seed=seed)


@dataclass
class ResultRow:
    stock: str
    model: str
    test_set: str
    condition: str  # clean | tuap | random
    tfr: float
    ufr: float
    da: float
    size_pct: float
    seed: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"stock": self.stock, "model": self.model,
                "test_set": self.test_set, "condition": self.condition,
                "tfr": self.tfr, "ufr": self.ufr, "da": self.da,
                "size_pct": self.size_pct, "seed": self.seed,
                "extra": self.extra}


class ResultTable:
    """A flat grid of result rows with CSV/JSON serialization."""

    def __init__(self, rows: list[ResultRow] | None = None, meta: dict | None = None):
        self.rows = rows or []
        self.meta = meta or {}

    def add(self, row: ResultRow) -> None:
        self.rows.append(row)

    def filter(self, **keys) -> list[ResultRow]:
        out = self.rows
        for k, v in keys.items():
            out = [r for r in out if getattr(r, k) == v]
        return out

    def cell(self, **keys) -> ResultRow:
        hits = self.filter(**keys)
        if len(hits) != 1:
            raise KeyError(f"expected exactly one row for {keys}, found {len(hits)}")
        return hits[0]

    def check_complete(self, stocks, models, test_sets,
                       conditions=CONDITIONS) -> None:
        missing = []
        for s in stocks:
            for m in models:
                for t in test_sets:
                    for c in conditions:
                        if not self.filter(stock=s, model=m, test_set=t,
                                           condition=c):
                            missing.append((s, m, t, c))
        if missing:
            raise ValueError(f"incomplete result grid; missing cells: "
                             f"{missing[:5]}{'...' if len(missing) > 5 else ''}")

    CSV_HEADER = ("stock", "model", "test_set", "condition",
                  "tfr", "ufr", "da", "size_pct", "seed")

    def to_csv(self, path) -> None:
        import csv as _csv

        with open(path, "w", newline="") as fh:
            w = _csv.writer(fh)
            w.writerow(self.CSV_HEADER)
            for r in self.rows:
                w.writerow([r.stock, r.model, r.test_set, r.condition,
                            repr(r.tfr), repr(r.ufr), repr(r.da),
                            repr(r.size_pct), r.seed])

    @classmethod
    def from_csv(cls, path) -> "ResultTable":
        import csv as _csv

        rows = []
        with open(path, newline="") as fh:
            for rec in _csv.DictReader(fh):
                rows.append(ResultRow(
                    stock=rec["stock"], model=rec["model"],
                    test_set=rec["test_set"], condition=rec["condition"],
                    tfr=float(rec["tfr"]), ufr=float(rec["ufr"]),
                    da=float(rec["da"]), size_pct=float(rec["size_pct"]),
                    seed=int(rec["seed"])))
        return cls(rows)

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({"meta": self.meta,
                       "rows": [r.to_dict() for r in self.rows]}, fh, indent=1)

    def summary(self) -> str:
        lines = []
        noresult = [r for r in self.rows if r.extra.get("noresult")]
        if noresult:
            lines.append(f"WARNING: {len(noresult)} cells have no crafted "
                         f"perturbation (NoResult):")
            for r in noresult:
                lines.append(f"  {r.stock}/{r.model}/{r.test_set}")
        for cond in CONDITIONS:
            sub = [r for r in self.rows
                   if r.condition == cond and np.isfinite(r.tfr)]
            if sub:
                lines.append(f"{cond}: mean TFR {np.mean([r.tfr for r in sub]):.2f} "
                             f"mean UFR {np.mean([r.ufr for r in sub]):.2f} "
                             f"({len(sub)} rows)")
        return "\n".join(lines) or "empty table"


# ---------------------------------------------------------------------------
# Shared per-stock pipeline
# ---------------------------------------------------------------------------

@dataclass
class StockContext:
    """Series, split, trained models, and crafted TUAPs for one stock."""

    spec: StockSpec
    series: md.StockSeries
    split: md.Split
    normalizer: ft.Normalizer
    models: dict
    tuaps: dict
    train_reports: dict


def prepare_stock(spec: StockSpec, plan: ExperimentPlan,
                  craft: bool = True) -> StockContext:
    """Train every arch on one stock (shared normalizer fit) and craft the
    per-arch perturbations at the plan's calibrated size."""
    series = spec.load(seed=plan.data_seed(spec.symbol))
    protocol = md.SplitProtocol.from_days(
        series.days.tolist(), n_train_days=plan.n_train_days,
        n_craft_days=plan.n_craft_days, n_test_weeks=plan.n_test_weeks,
        days_per_week=plan.days_per_week,
        samples_per_class=plan.samples_per_class, seed=plan.seed)
    split = md.build_split(series, protocol)
    normalizer = ft.fit_normalizer(ft.windows_to_features(split.train))

    models, tuaps, reports = {}, {}, {}
    for arch in plan.archs:
        model = am.build(arch, seed=plan.model_seed(spec.symbol, arch))
        hyper = am.TrainHyper(epochs=plan.epochs, batch_size=plan.train_batch,
                              lr=plan.lr,
                              seed=plan.model_seed(spec.symbol, arch))
        model, report = am.train(model, split.train, hyper,
                                 normalizer=normalizer)
        models[arch] = model
        reports[arch] = report
        if craft:
            cfg = atk.AttackConfig(
                epsilon=1e-3, delta=plan.delta,
                max_outer_iterations=plan.max_outer_iterations,
                batch_size=plan.batch_size,
                inner_iterations=plan.inner_iterations,
                seed=plan.attack_seed(spec.symbol, arch))
            tuaps[arch] = atk.craft_calibrated(
                split.craft, plan.target_class, model, cfg,
                target_size_pct=plan.target_size_pct,
                tolerance=plan.size_tolerance)
    return StockContext(spec=spec, series=series, split=split,
                        normalizer=normalizer, models=models, tuaps=tuaps,
                        train_reports=reports)


def _mean_random_metrics(model, samples, norm: float, plan: ExperimentPlan,
                         symbol: str, arch: str):
    """Mean TFR/UFR over the plan's random draws; per-draw values retained."""
    tfrs, ufrs = [], []
    for draw in range(plan.n_random):
        rnd = atk.random_perturbation(norm, ft.LOOKBACK,
                                      seed=plan.random_seed(symbol, arch, draw))
        tfrs.append(atk.tfr(model, samples, rnd, plan.target_class))
        ufrs.append(atk.ufr(model, samples, rnd))
    return float(np.mean(tfrs)), float(np.mean(ufrs)), tfrs, ufrs


# ---------------------------------------------------------------------------
# Suites
# ---------------------------------------------------------------------------

def _cell_path(out_dir, kind: str, stock: str, arch: str) -> Path | None:
    if out_dir is None:
        return None
    p = Path(out_dir) / "cells"
    p.mkdir(parents=True, exist_ok=True)
    return p / f"{kind}__{stock}__{arch}.json"


def _write_atomic(path: Path, payload: dict) -> None:
    tmp = path.with_suffix(".tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh)
    os.replace(tmp, path)


def run_whitebox(plan: ExperimentPlan, out_dir=None, jobs: int = 1) -> ResultTable:
    """Per stock and arch: clean / crafted / random rows on every test set.

    Crafting failures become NoResult rows and the run continues. Completed
    (stock, arch) cells on disk are reused, so interrupted runs resume.
    Stocks are independent; jobs > 1 evaluates them in parallel threads with
    rows always assembled in plan order.
    """
    table = ResultTable(meta={"suite": "whitebox", "plan": plan.to_dict()})

    def one_stock(spec: StockSpec) -> list[ResultRow]:
        rows: list[ResultRow] = []
        ctx = None
        for arch in plan.archs:
            cell_file = _cell_path(out_dir, "whitebox", spec.symbol, arch)
            if cell_file is not None and cell_file.exists():
                with open(cell_file) as fh:
                    rows.extend(ResultRow(**rec)
                                for rec in json.load(fh)["rows"])
                continue
            if ctx is None:
                ctx = prepare_stock(spec, plan)
            cell_rows = _whitebox_cell(ctx, arch, plan)
            rows.extend(cell_rows)
            if cell_file is not None:
                _write_atomic(cell_file,
                              {"rows": [r.to_dict() for r in cell_rows]})
        return rows

    if jobs > 1 and len(plan.stocks) > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_stock = list(pool.map(one_stock, plan.stocks))
    else:
        per_stock = [one_stock(s) for s in plan.stocks]
    for rows in per_stock:
        for r in rows:
            table.add(r)
    return table


def _whitebox_cell(ctx: StockContext, arch: str,
                   plan: ExperimentPlan) -> list[ResultRow]:
    model = ctx.models[arch]
    tuap = ctx.tuaps[arch]
    symbol = ctx.spec.symbol
    rows = []
    failed = isinstance(tuap, atk.NoResult)
    for i, test in enumerate(ctx.split.tests):
        set_id = f"T{i + 1}"
        da = model.directional_accuracy(test, set_id).da
        clean_tfr = atk.tfr(model, test, None, plan.target_class)
        rows.append(ResultRow(symbol, arch, set_id, "clean", clean_tfr, 0.0,
                              da, 0.0, plan.seed))
        if failed:
            rows.append(ResultRow(symbol, arch, set_id, "tuap", float("nan"),
                                  float("nan"), da, float("nan"), plan.seed,
                                  extra={"noresult": True,
                                         "best_tfr": tuap.best_tfr}))
            rows.append(ResultRow(symbol, arch, set_id, "random", float("nan"),
                                  float("nan"), da, float("nan"), plan.seed,
                                  extra={"noresult": True}))
            continue
        m = atk.evaluate_attack(model, test, tuap, plan.target_class)
        rows.append(ResultRow(symbol, arch, set_id, "tuap", m.tfr, m.ufr, da,
                              m.size_pct, plan.seed,
                              extra={"craft_tfr": tuap.achieved_tfr_on_craft,
                                     "norm": tuap.norm}))
        rtfr, rufr, draws_t, draws_u = _mean_random_metrics(
            model, test, tuap.norm, plan, symbol, arch)
        rows.append(ResultRow(symbol, arch, set_id, "random", rtfr, rufr, da,
                              m.size_pct, plan.seed,
                              extra={"draw_tfrs": draws_t,
                                     "draw_ufrs": draws_u}))
    return rows


def run_categories(plan: ExperimentPlan, out_dir=None,
                   jobs: int = 1) -> ResultTable:
    """Aggregate white-box metrics per price category.

    One row per category: average stock price, average absolute perturbation
    size in currency units, clean DA, crafted TFR/UFR, random UFR.
    """
    base = run_whitebox(plan, out_dir=out_dir, jobs=jobs)
    table = ResultTable(meta={"suite": "categories", "plan": plan.to_dict()})
    categories: dict[str, list] = {}
    for spec in plan.stocks:
        categories.setdefault(spec.category or "uncategorized", []).append(spec)

    for category, specs in sorted(categories.items()):
        prices, abs_sizes, das = [], [], []
        tfrs, ufrs, rufrs, rel_sizes = [], [], [], []
        for spec in specs:
            series = spec.load(seed=plan.data_seed(spec.symbol))
            price = float(series.close.mean())
            prices.append(price)
            for arch in plan.archs:
                rows_t = [r for r in base.filter(stock=spec.symbol, model=arch,
                                                 condition="tuap")
                          if np.isfinite(r.tfr)]
                rows_c = base.filter(stock=spec.symbol, model=arch,
                                     condition="clean")
                rows_r = [r for r in base.filter(stock=spec.symbol, model=arch,
                                                 condition="random")
                          if np.isfinite(r.ufr)]
                das.extend(r.da for r in rows_c)
                tfrs.extend(r.tfr for r in rows_t)
                ufrs.extend(r.ufr for r in rows_t)
                rufrs.extend(r.ufr for r in rows_r)
                rel_sizes.extend(r.size_pct for r in rows_t)
                abs_sizes.extend(r.size_pct / 100.0 * price for r in rows_t)
        table.add(ResultRow(
            stock=category, model="all", test_set="all", condition="tuap",
            tfr=float(np.mean(tfrs)) if tfrs else float("nan"),
            ufr=float(np.mean(ufrs)) if ufrs else float("nan"),
            da=float(np.mean(das)) if das else float("nan"),
            size_pct=float(np.mean(rel_sizes)) if rel_sizes else float("nan"),
            seed=plan.seed,
            extra={"avg_price": float(np.mean(prices)),
                   "avg_abs_size": float(np.mean(abs_sizes)) if abs_sizes else None,
                   "random_ufr": float(np.mean(rufrs)) if rufrs else None,
                   "stocks": [s.symbol for s in specs]}))
    return table


def run_transfer(plan: ExperimentPlan, out_dir=None) -> ResultTable:
    """Craft on each source arch, evaluate the TFR on every target arch.

    The diagonal is the white-box reference. Transfer crafting uses the
    plan's dedicated (larger) epsilon: the cross-architecture channel needs
    more budget than the size-calibrated white-box attack, and the realized
    size is reported in its own column.
    """
    table = ResultTable(meta={"suite": "transfer", "plan": plan.to_dict()})
    for spec in plan.stocks:
        ctx = prepare_stock(spec, plan, craft=False)
        source_tuaps = {}
        for arch in plan.archs:
            cfg = atk.AttackConfig(
                epsilon=plan.transfer_epsilon, delta=plan.transfer_delta,
                max_outer_iterations=plan.max_outer_iterations,
                batch_size=plan.batch_size,
                inner_iterations=plan.inner_iterations,
                seed=plan.attack_seed(spec.symbol, arch))
            source_tuaps[arch] = atk.craft_tuap(ctx.split.craft,
                                                plan.target_class,
                                                ctx.models[arch], cfg)
        all_tests = [s for t in ctx.split.tests for s in t]
        for source, tuap in source_tuaps.items():
            for target in plan.archs:
                model = ctx.models[target]
                clean = atk.tfr(model, all_tests, None, plan.target_class)
                if isinstance(tuap, atk.NoResult):
                    table.add(ResultRow(spec.symbol, f"{source}->{target}",
                                        "all", "tuap", float("nan"),
                                        float("nan"), float("nan"),
                                        float("nan"), plan.seed,
                                        extra={"noresult": True,
                                               "source": source,
                                               "target": target}))
                    continue
                t = atk.tfr(model, all_tests, tuap, plan.target_class)
                table.add(ResultRow(
                    spec.symbol, f"{source}->{target}", "all", "tuap",
                    t, atk.ufr(model, all_tests, tuap), float("nan"),
                    tuap.size_pct, plan.seed,
                    extra={"clean_tfr": clean, "source": source,
                           "target": target, "diagonal": source == target}))
    return table


def emit_report(table: ResultTable, out_dir, formats=("csv", "json", "txt"),
                stem: str = "results") -> list[Path]:
    """Write the table as CSV + JSON + human-readable summary under out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if "csv" in formats:
        p = out_dir / f"{stem}.csv"
        table.to_csv(p)
        written.append(p)
    if "json" in formats:
        p = out_dir / f"{stem}.json"
        table.to_json(p)
        written.append(p)
    if "txt" in formats:
        p = out_dir / f"{stem}_summary.txt"
        p.write_text(table.summary() + "\n")
        written.append(p)
    return written
