"""End-to-end orchestration: ingest, features, training, ensembles, report."""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .backtest import BacktestConfig, expected_daily_return, simulate
from .config import PipelineConfig, derive_seed
from .data import AlignedPanel, align_calendars, load_ohlcv_csv, synth_ohlcv, temporal_split, SplitSpec
from .ensemble import EnsembleError, MemberRecord, StrategyConfig, rank, run_strategy
from .evalstat import accuracy, correlation_matrix, format_percent, mcnemar, precision_recall, regime_partition, wilson_ci
from .features import FEATURE_NAMES, QUANTUM_COLUMNS, FeatureMatrix, build_feature_matrix, quantum_inputs
from .learners import TrainedModel, assemble_windows, train, windows_at
from .learners.windows import labels_from_proba, test_targets
from . import qsentiment as qs

log = logging.getLogger(__name__)

HOLDOUT_SHARE = 0.2
SELECTION_NOTE = {
    "test": "test-segment selection: member accuracy measured on the test segment (selection sees test labels, so ensemble scores are optimistic)",
    "holdout": "holdout selection: member accuracy measured on the last 20% of training windows",
}


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause


class _Stage:
    """Context manager that times a stage and tags failures with its name."""

    def __init__(self, name: str, timings: dict):
        self.name = name
        self.timings = timings

    def __enter__(self):
        self.t0 = time.perf_counter()
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        self.timings[self.name] = round(time.perf_counter() - self.t0, 3)
        if exc is not None and not isinstance(exc, StageError):
            raise StageError(self.name, exc) from exc
        return False


# -- ingest and features ----------------------------------------------------

def load_instruments(config: PipelineConfig) -> list:
    out = []
    for inst in config.instruments:
        if inst.csv is not None:
            out.append(load_ohlcv_csv(inst.csv, inst.symbol))
        else:
            s = inst.synthetic
            out.append(synth_ohlcv(s["n_days"], s["regime_plan"], s["signal_strength"], s["seed"],
                                   symbol=inst.symbol, start_price=s["start_price"]))
    return out


def pretrain_circuit(series, boundary: int, settings) -> tuple:
    """Fit the sentiment circuit on training rows; return (sentiment per day, CircuitParams)."""
    inputs, qvalid = quantum_inputs(series, boundary)
    close = series.close
    rows = np.arange(qvalid, boundary - 1)
    if len(rows) == 0:
        raise ValueError(f"{series.symbol}: no rows to pretrain the circuit on")
    nxt = close[rows + 1] / close[rows] - 1.0
    sigma = float(nxt.std())
    if not sigma > 0:
        sigma = 1.0
    theta0 = qs.init_params(settings.seed)
    theta, history = qs.pretrain(theta0, inputs[rows], np.tanh(nxt / sigma), settings.epochs, settings.learning_rate)
    sent = np.full(len(series), np.nan)
    sent[qvalid:] = qs.sentiment(theta, inputs[qvalid:])
    params = qs.CircuitParams(theta, settings.seed, training_meta={
        "epochs": settings.epochs, "learning_rate": settings.learning_rate,
        "target_scale": sigma, "rows": int(len(rows)), "loss_history": history,
    })
    return sent, params


def without_quantum(matrix: FeatureMatrix) -> FeatureMatrix:
    """Same matrix with the quantum columns zeroed (ablation mode)."""
    X = np.array(matrix.X)
    X[:, list(QUANTUM_COLUMNS)] = 0.0
    X.setflags(write=False)
    return FeatureMatrix(matrix.dates, X, matrix.y, matrix.valid_from, matrix.feature_names, matrix.symbol, False)


@dataclass(frozen=True)
class Context:
    """Everything downstream of feature construction, shared by all members."""

    symbols: tuple
    target: str
    panel: AlignedPanel
    split: SplitSpec
    matrices: dict
    circuits: dict
    quantum: bool
    axis: np.ndarray  # shared test target indices
    require_labels: bool = True

    @property
    def axis_dates(self) -> list:
        return [self.panel.dates[t] for t in self.axis]

    @property
    def target_labels(self) -> np.ndarray:
        return np.asarray(self.matrices[self.target].y)[self.axis].astype(int)

    def ablated(self) -> "Context":
        return Context(self.symbols, self.target, self.panel, self.split,
                       {s: without_quantum(m) for s, m in self.matrices.items()}, {}, False,
                       self.axis, self.require_labels)


def prepare_instruments(config: PipelineConfig, quantum: bool | None = None, series=None,
                        boundary: int | None = None, require_labels: bool = True) -> Context:
    """Ingest, align, split and build feature matrices.

    ``series`` overrides the configured sources and ``boundary`` fixes the
    train/test split index; together they let a caller replay the pipeline
    on truncated data with an unchanged split.
    """
    quantum = config.quantum.enabled if quantum is None else quantum
    panel = align_calendars(series if series is not None else load_instruments(config))
    split = (temporal_split(len(panel), config.train_fraction) if boundary is None
             else SplitSpec(config.train_fraction, boundary, len(panel)))
    matrices, circuits = {}, {}
    for sym in panel.symbols:
        sent = None
        if quantum:
            sent, circuits[sym] = pretrain_circuit(panel[sym], split.boundary_index, config.quantum)
        matrices[sym] = build_feature_matrix(panel[sym], sent)
    axis = None
    for arch in config.architectures:
        L = config.hp(arch)["lookback"]
        for m in matrices.values():
            t = test_targets(m, L, split.boundary_index, require_labels)
            axis = t if axis is None else np.intersect1d(axis, t)
    if axis is None or len(axis) == 0:
        raise ValueError("no common test days across instruments and lookbacks")
    return Context(tuple(panel.symbols), config.target_symbol, panel, split, matrices, circuits,
                   quantum, axis, require_labels)


# -- members ------------------------------------------------------------------

@dataclass
class MemberResult:
    symbol: str
    architecture: str
    seed: int
    p_up: np.ndarray
    selection_accuracy: float
    own_accuracy: float | None
    precision: float | None
    recall: float | None
    meta: dict = field(default_factory=dict)
    model: TrainedModel | None = None

    @property
    def labels(self) -> np.ndarray:
        return labels_from_proba(self.p_up).astype(int)

    def record(self) -> MemberRecord:
        return MemberRecord(self.symbol, self.architecture, self.selection_accuracy, self.p_up)


def train_member(ctx: Context, symbol: str, arch: str, config: PipelineConfig, keep_model: bool = False) -> MemberResult:
    hp = config.hp(arch)
    L = hp["lookback"]
    matrix = ctx.matrices[symbol]
    target_y = np.asarray(ctx.matrices[ctx.target].y)
    windows = assemble_windows(matrix, L, ctx.split, ctx.require_labels)
    fit_data = windows["train"]
    holdout = None
    if config.ensemble.selection == "holdout":
        n = len(fit_data)
        n_hold = max(1, math.ceil(HOLDOUT_SHARE * n))
        if n - n_hold < 2:
            raise ValueError(f"{symbol}_{arch}: too few training windows for a holdout")
        mask = np.arange(n) < n - n_hold
        holdout = fit_data.subset(~mask)
        fit_data = fit_data.subset(mask)
    seed = derive_seed(config.seed, symbol, arch)
    model = train(arch, fit_data, seed, config.hyperparameters.get(arch))
    test = windows_at(matrix, L, ctx.axis)
    p_up = model.predict_proba(test.sequences)
    pred = labels_from_proba(p_up).astype(int)

    known = target_y[ctx.axis] != 0
    if holdout is not None:
        hp_pred = labels_from_proba(model.predict_proba(holdout.sequences)).astype(int)
        sel_acc = accuracy(hp_pred, target_y[holdout.target_index])
    else:
        sel_acc = accuracy(pred[known], target_y[ctx.axis][known]) if known.any() else 0.5
    own_y = np.asarray(matrix.y)[ctx.axis]
    own_known = own_y != 0
    own_acc = prec = rec = None
    if own_known.any():
        own_acc = accuracy(pred[own_known], own_y[own_known])
        prec, rec = precision_recall(pred[own_known], own_y[own_known])
    meta = {k: model.meta[k] for k in ("epochs", "final_loss") if k in model.meta}
    return MemberResult(symbol, arch, seed, p_up, sel_acc, own_acc, prec, rec, meta,
                        model if keep_model else None)


_WORKER: dict = {}


def _init_worker(ctx, config, keep):
    _WORKER.update(ctx=ctx, config=config, keep=keep)


def _train_task(pair):
    return train_member(_WORKER["ctx"], pair[0], pair[1], _WORKER["config"], _WORKER["keep"])


def train_members(ctx: Context, config: PipelineConfig, jobs: int = 1, keep_models: bool = False) -> list:
    pairs = [(s, a) for s in ctx.symbols for a in config.architectures]
    if jobs <= 1 or len(pairs) == 1:
        return [train_member(ctx, s, a, config, keep_models) for s, a in pairs]
    with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                             initargs=(ctx, config, keep_models)) as pool:
        return list(pool.map(_train_task, pairs))


# -- members document -----------------------------------------------------------

def conditioning_values(ctx: Context, config: PipelineConfig) -> tuple:
    if config.conditioning is not None:
        close = ctx.panel[config.conditioning].close
        return f"{config.conditioning} close", close[ctx.axis]
    col = FEATURE_NAMES.index("vol_20")
    vol = ctx.matrices[ctx.target].X[ctx.axis, col]
    return f"{ctx.target} 20-day realised volatility (annualised %)", vol * math.sqrt(252) * 100.0


def members_document(ctx: Context, config: PipelineConfig, results: list) -> dict:
    """Everything evaluation and backtesting need, as plain JSON data."""
    cond_name, cond = conditioning_values(ctx, config)
    tgt = ctx.panel[ctx.target]
    return {
        "version": 1,
        "config_hash": config.hash,
        "quantum": "on" if ctx.quantum else "off",
        "selection": config.ensemble.selection,
        "target": ctx.target,
        "train_boundary": ctx.split.boundary_index,
        "train_end": ctx.panel.dates[ctx.split.boundary_index - 1].isoformat(),
        "axis": [int(t) for t in ctx.axis],
        "dates": [d.isoformat() for d in ctx.axis_dates],
        "target_labels": [int(v) for v in ctx.target_labels],
        "conditioning": {"name": cond_name, "values": [float(v) for v in cond]},
        "target_close": {"dates": [d.isoformat() for d in tgt.dates], "close": [float(v) for v in tgt.close]},
        "members": [
            {
                "symbol": r.symbol,
                "architecture": r.architecture,
                "seed": r.seed,
                "selection_accuracy": r.selection_accuracy,
                "own_accuracy": r.own_accuracy,
                "precision": r.precision,
                "recall": r.recall,
                "meta": r.meta,
                "p_up": [float(v) for v in r.p_up],
            }
            for r in results
        ],
    }


def _records(doc: dict) -> list:
    return [MemberRecord(m["symbol"], m["architecture"], m["selection_accuracy"], np.array(m["p_up"]))
            for m in doc["members"]]


def strategy_configs(config: PipelineConfig, architectures) -> list:
    e = config.ensemble
    out = []
    for kind in e.strategies:
        if kind == "DatasetSpecific":
            out += [StrategyConfig(kind, filter_threshold=e.filter_threshold, architecture=a) for a in architectures]
        else:
            out.append(StrategyConfig(kind, k=e.k, filter_threshold=e.filter_threshold, window=e.adaptive_window))
    return out


# -- evaluation -----------------------------------------------------------------

def run_ensembles(doc: dict, config: PipelineConfig) -> dict:
    members = _records(doc)
    labels = np.array(doc["target_labels"])
    archs = list(dict.fromkeys(m.architecture for m in members))
    outputs = {}
    for sc in strategy_configs(config, archs):
        try:
            outputs[sc.id] = run_strategy(sc, members, labels)
        except EnsembleError as exc:
            outputs[sc.id] = exc
    return outputs


def evaluate(doc: dict, config: PipelineConfig, outputs: dict, ablation: list | None = None) -> dict:
    """Build the evaluation report as a JSON-ready dict."""
    y = np.array(doc["target_labels"])
    members = _records(doc)
    thr = config.ensemble.filter_threshold
    best = rank(members)[0]

    table1 = []
    for m, rec in sorted(zip(doc["members"], members), key=lambda p: (-p[1].accuracy, p[1].id)):
        table1.append({
            "model": rec.name,
            "selection_accuracy": m["selection_accuracy"],
            "test_accuracy": accuracy(rec.labels, y),
            "own_accuracy": m["own_accuracy"],
            "precision": m["precision"],
            "recall": m["recall"],
            "qualifies": m["selection_accuracy"] > thr,
        })
    qualifying = [r for r in members if r.accuracy > thr]

    best_acc = accuracy(best.labels, y)
    table2 = []
    for sid, out in outputs.items():
        if isinstance(out, Exception):
            table2.append({"strategy": sid, "error": str(out)})
            continue
        k = int(np.sum(out.label == y))
        n = len(y)
        mc = mcnemar(best.labels, out.label, y)
        table2.append({
            "strategy": sid,
            "roster_size": out.roster_size,
            "accuracy": k / n,
            "correct": k,
            "n": n,
            "ci95": list(wilson_ci(k, n)),
            "delta_vs_best": k / n - best_acc,
            "mcnemar_vs_best": {"n01": mc.n01, "n10": mc.n10, "chi2": mc.chi2, "p": mc.p},
        })

    corr_members = qualifying if len(qualifying) >= 2 else members
    try:
        cm = correlation_matrix(corr_members)
        table3 = {**cm, "matrix": cm["matrix"].tolist(), "subset": "qualifying" if corr_members is qualifying else "all"}
    except (ValueError, EnsembleError) as exc:
        table3 = {"error": str(exc)}

    primary = _primary_output(outputs)
    table4 = None
    if primary is not None:
        table4 = {
            "strategy": primary.strategy,
            "conditioning": doc["conditioning"]["name"],
            "rows": regime_partition(doc["conditioning"]["values"], primary.label, y),
        }

    return {
        "version": 1,
        "config_hash": doc["config_hash"],
        "quantum": doc["quantum"],
        "selection": SELECTION_NOTE[doc["selection"]],
        "target": doc["target"],
        "test_days": len(y),
        "test_period": [doc["dates"][0], doc["dates"][-1]],
        "filter_threshold": thr,
        "qualifying_members": len(qualifying),
        "best_member": {"model": best.name, "accuracy": best_acc},
        "members": table1,
        "strategies": table2,
        "correlation": table3,
        "regimes": table4,
        "ablation": ablation if ablation is not None else {"status": "quantum off" if doc["quantum"] == "off" else "disabled"},
    }


def _primary_output(outputs: dict):
    for sid, out in outputs.items():
        if sid.startswith("TopK") and not isinstance(out, Exception):
            return out
    for out in outputs.values():
        if not isinstance(out, Exception):
            return out
    return None


def run_backtests(doc: dict, config: PipelineConfig, outputs: dict) -> dict:
    primary = _primary_output(outputs)
    if primary is None:
        return {}
    dates = [dt.date.fromisoformat(d) for d in doc["dates"]]
    tc = doc["target_close"]
    close_dates = [dt.date.fromisoformat(d) for d in tc["dates"]]
    closes = np.array(tc["close"])
    # The second threshold is the looser "4+ agree" reading.
    thresholds = sorted({config.backtest.consensus, 4})
    members = {m.id: m for m in _records(doc)}
    conf = np.mean([members[i].confidence for i in primary.roster], axis=0)
    curves = {}
    for thr in thresholds:
        bc = BacktestConfig(config.backtest.cost, thr, config.backtest.sizing,
                            config.backtest.long_only, config.backtest.annualization)
        curves[f"{primary.strategy}_c{thr}"] = (bc, simulate(dates, primary.label, primary.agree_count,
                                                             close_dates, closes, bc, conf))
    return curves


def backtest_summary(doc: dict, config: PipelineConfig, outputs: dict, curves: dict) -> dict:
    primary = _primary_output(outputs)
    out = {"curves": {k: {**c.summary(bc.annualization), "consensus": bc.consensus} for k, (bc, c) in curves.items()}}
    if primary is not None:
        tc = np.array(doc["target_close"]["close"])
        axis = np.array(doc["axis"])
        move = float(np.mean(np.abs(tc[axis + 1] / tc[axis] - 1.0)))
        acc = float(np.mean(primary.label == np.array(doc["target_labels"])))
        out["expected_daily_return"] = {
            "strategy": primary.strategy, "accuracy": acc, "mean_abs_move": move,
            "cost": config.backtest.cost,
            "value": expected_daily_return(acc, move, config.backtest.cost),
        }
    return out


# -- ablation -----------------------------------------------------------------------

def ablation_rows(ctx: Context, config: PipelineConfig, results: list, jobs: int = 1) -> list:
    """Retrain the chosen members with quantum columns zeroed; compare on the target labels."""
    by_id = {(r.symbol, r.architecture): r for r in results}
    if config.ablation_models:
        chosen = list(config.ablation_models)
    else:
        ranked = sorted(results, key=lambda r: (-r.selection_accuracy, r.symbol, r.architecture))
        chosen = [(r.symbol, r.architecture) for r in ranked[:config.ablation_top]]
    off_ctx = ctx.ablated()
    y = ctx.target_labels
    rows = []
    for sym, arch in chosen:
        on = by_id[(sym, arch)]
        off = train_member(off_ctx, sym, arch, config)
        mc = mcnemar(off.labels, on.labels, y)
        a_on, a_off = accuracy(on.labels, y), accuracy(off.labels, y)
        rows.append({"model": f"{sym}_{arch}", "acc_without": a_off, "acc_with": a_on,
                     "gain": a_on - a_off, "n01": mc.n01, "n10": mc.n10, "p": mc.p})
    return rows


# -- emission ---------------------------------------------------------------------------

def _fmt(v, pct=False):
    if v is None:
        return "n/a"
    return format_percent(v) if pct else f"{v:.4f}"


def render_text(report: dict, backtest: dict | None = None) -> str:
    lines = [
        f"target: {report['target']}   test days: {report['test_days']} "
        f"({report['test_period'][0]} to {report['test_period'][1]})",
        f"quantum: {report['quantum']}",
        f"selection: {report['selection']}",
        "",
        f"1. Individual members (filter > {report['filter_threshold']:.2f}: "
        f"{report['qualifying_members']}/{len(report['members'])} qualify)",
        f"{'model':<34}{'select':>8}{'test':>8}{'own':>8}{'prec':>8}{'recall':>8}",
    ]
    for m in report["members"]:
        lines.append(f"{m['model']:<34}{_fmt(m['selection_accuracy']):>8}{_fmt(m['test_accuracy']):>8}"
                     f"{_fmt(m['own_accuracy']):>8}{_fmt(m['precision']):>8}{_fmt(m['recall']):>8}"
                     + ("  *" if m["qualifies"] else ""))
    lines += ["", f"2. Ensemble strategies (best member {report['best_member']['model']} "
                  f"{_fmt(report['best_member']['accuracy'], True)})",
              f"{'strategy':<30}{'n':>4}{'accuracy':>10}{'95% CI':>20}{'vs best':>10}{'p':>8}"]
    for s in report["strategies"]:
        if "error" in s:
            lines.append(f"{s['strategy']:<30}  {s['error']}")
            continue
        ci = f"[{_fmt(s['ci95'][0], True)}, {_fmt(s['ci95'][1], True)}]"
        lines.append(f"{s['strategy']:<30}{s['roster_size']:>4}{_fmt(s['accuracy'], True):>10}{ci:>20}"
                     f"{100 * s['delta_vs_best']:>+9.2f}%{s['mcnemar_vs_best']['p']:>8.3f}")
    lines += ["", "3. Prediction correlation"]
    c = report["correlation"]
    if "error" in c:
        lines.append(f"  {c['error']}")
    else:
        lines.append(f"  members: {c['subset']} ({len(c['names'])})   mean pairwise: {c['mean']:.3f}")
        lines.append(f"  same architecture mean: {_fmt(c['same_architecture_mean'])}   "
                     f"different architecture mean: {_fmt(c['different_architecture_mean'])}")
        for i, name in enumerate(c["names"]):
            lines.append(f"  {name:<34}" + " ".join(f"{v:6.2f}" for v in c["matrix"][i]))
    lines += ["", "4. Accuracy by regime"]
    r = report["regimes"]
    if r is None:
        lines.append("  no strategy output")
    else:
        lines.append(f"  strategy: {r['strategy']}   conditioning: {r['conditioning']}")
        for row in r["rows"]:
            ci = "" if row["ci"] is None else f"[{_fmt(row['ci'][0], True)}, {_fmt(row['ci'][1], True)}]"
            lines.append(f"  {row['regime']:<10}{row['range']:<12}{row['days']:>5}{_fmt(row['accuracy'], True):>10}  {ci}")
    lines += ["", "5. Quantum feature ablation"]
    ab = report["ablation"]
    if isinstance(ab, dict):
        lines.append(f"  {ab['status']}")
    else:
        lines.append(f"  {'model':<34}{'without':>9}{'with':>9}{'gain':>9}{'p':>8}")
        for row in ab:
            lines.append(f"  {row['model']:<34}{_fmt(row['acc_without'], True):>9}{_fmt(row['acc_with'], True):>9}"
                         f"{100 * row['gain']:>+8.2f}%{row['p']:>8.3f}")
    if backtest:
        lines += ["", "Backtest"]
        for name, s in backtest.get("curves", {}).items():
            lines.append(f"  {name}: trades {s['trades']}/{s['days']}  hit rate {_fmt(s['hit_rate'], True)}  "
                         f"return {_fmt(s['total_return'], True)}  sharpe {_fmt(s['sharpe'])}  "
                         f"max drawdown {_fmt(s['max_drawdown'], True)}")
        e = backtest.get("expected_daily_return")
        if e:
            lines.append(f"  expected daily return at {_fmt(e['accuracy'], True)} accuracy: {100 * e['value']:+.4f}%/day")
    return "\n".join(lines) + "\n"


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


_ARTIFACT_STAGE = {"circuits": "ingest_features", "models": "train", "members.json": "members",
                   "strategies": "strategies", "report.json": "report", "report.txt": "report",
                   "equity": "backtest", "ablation.json": "ablation"}


def write_manifest(out_dir: Path, config: PipelineConfig, timings: dict) -> Path:
    """Hash every file under ``out_dir`` and group the paths by producing stage."""
    files, stages = {}, {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            rel = p.relative_to(out_dir).as_posix()
            files[rel] = sha256_file(p)
            stages.setdefault(_ARTIFACT_STAGE.get(rel.split("/")[0], "other"), []).append(rel)
    members = []
    if (out_dir / "members.json").is_file():
        members = [f"{m['symbol']}_{m['architecture']}"
                   for m in json.loads((out_dir / "members.json").read_text())["members"]]
    path = out_dir / "manifest.json"
    path.write_text(_dump({
        "config_hash": config.hash,
        "software_version": __version__,
        "timings_s": timings,
        "members": members,
        "stages": stages,
        "files": files,
    }))
    return path


def emit_report(report: dict, outputs: dict, curves: dict, out_dir, backtest: dict | None = None,
                dates=None) -> list:
    """Write report.json, report.txt, strategy CSVs and equity curves."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from None
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"output directory {out_dir} is not writable")
    written = []
    doc = dict(report)
    if backtest is not None:
        doc["backtest"] = backtest
    (out_dir / "report.json").write_text(_dump(doc))
    (out_dir / "report.txt").write_text(render_text(report, backtest))
    written += [out_dir / "report.json", out_dir / "report.txt"]
    if outputs:
        sdir = out_dir / "strategies"
        sdir.mkdir(exist_ok=True)
        for sid, out in outputs.items():
            if isinstance(out, Exception):
                continue
            p = sdir / f"{sid}.csv"
            out.to_csv(p, dates)
            written.append(p)
    if curves:
        edir = out_dir / "equity"
        edir.mkdir(exist_ok=True)
        for name, (bc, curve) in curves.items():
            curve.to_csv(edir / f"{name}.csv")
            curve.write_summary(edir / f"{name}.json", bc)
            written += [edir / f"{name}.csv", edir / f"{name}.json"]
    return written


def _axis_dates(doc: dict) -> list:
    """Test-axis dates, indexed by position as ensemble outputs are."""
    return [dt.date.fromisoformat(d) for d in doc["dates"]]


# -- top-level stages -----------------------------------------------------------------

def train_stage(config: PipelineConfig, jobs: int = 1, timings: dict | None = None, keep_models: bool = False):
    timings = {} if timings is None else timings
    with _Stage("ingest_features", timings):
        ctx = prepare_instruments(config)
    with _Stage("train", timings):
        results = train_members(ctx, config, jobs, keep_models)
    with _Stage("members", timings):
        doc = members_document(ctx, config, results)
    return ctx, results, doc


def evaluate_stage(doc: dict, config: PipelineConfig, timings: dict, ablation=None):
    with _Stage("strategies", timings):
        outputs = run_ensembles(doc, config)
    with _Stage("report", timings):
        report = evaluate(doc, config, outputs, ablation)
    with _Stage("backtest", timings):
        curves = run_backtests(doc, config, outputs)
        bt = backtest_summary(doc, config, outputs, curves)
    return outputs, report, curves, bt


def write_outputs(out_dir, doc, config, outputs, report, curves, bt, circuits, timings) -> Path:
    with _Stage("emit", timings):
        out_dir = Path(out_dir)
        emit_report(report, outputs, curves, out_dir, bt, _axis_dates(doc))
        (out_dir / "members.json").write_text(_dump(doc))
        if circuits:
            cdir = out_dir / "circuits"
            cdir.mkdir(exist_ok=True)
            for sym, params in circuits.items():
                (cdir / f"{sym}.json").write_text(params.to_json() + "\n")
    return write_manifest(out_dir, config, timings)


def run_pipeline(config: PipelineConfig, out_dir=None, jobs: int = 1) -> dict:
    """Full run; returns the manifest as a dict."""
    out_dir = Path(out_dir or config.out or "quantens-out")
    timings = {}
    ctx, results, doc = train_stage(config, jobs, timings)
    ablation = None
    if ctx.quantum and config.ablation_enabled:
        with _Stage("ablation", timings):
            ablation = ablation_rows(ctx, config, results, jobs)
    outputs, report, curves, bt = evaluate_stage(doc, config, timings, ablation)
    manifest = write_outputs(out_dir, doc, config, outputs, report, curves, bt, ctx.circuits, timings)
    return json.loads(manifest.read_text())


def load_members(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("version") != 1:
        raise ValueError(f"{path}: unsupported members document")
    return doc
