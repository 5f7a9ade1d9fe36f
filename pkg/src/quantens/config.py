"""Pipeline configuration: JSON parsing, validation, defaults and seeds."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .backtest import BacktestConfig
from .ensemble import STRATEGY_KINDS
from .learners.models import ARCHITECTURES, hyperparameters


class ConfigError(ValueError):
    pass


DEFAULT_REGIME = {"length": 1, "drift": 0.0003, "volatility": 0.012}
DEFAULT_STRATEGIES = ["TopK", "ConfidenceWeighted", "MajorityVote", "AccuracyWeighted",
                      "AdaptiveDynamic", "DatasetSpecific", "Naive"]

_TOP_KEYS = {"instruments", "conditioning", "target", "train_fraction", "architectures",
             "hyperparameters", "quantum", "ensemble", "backtest", "ablation", "out", "seed"}
_INSTRUMENT_KEYS = {"symbol", "csv", "synthetic"}
_SYNTH_KEYS = {"n_days", "signal_strength", "seed", "regime_plan", "start_price"}
_QUANTUM_KEYS = {"enabled", "epochs", "learning_rate", "seed"}
_ENSEMBLE_KEYS = {"strategies", "k", "filter_threshold", "adaptive_window", "selection"}
_BACKTEST_KEYS = {"cost", "consensus", "sizing", "long_only", "annualization"}
_ABLATION_KEYS = {"enabled", "models", "top"}


def _check_keys(doc, allowed, where, required=()):
    if not isinstance(doc, dict):
        raise ConfigError(f"{where}: expected an object")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {', '.join(unknown)}")
    missing = [k for k in required if k not in doc]
    if missing:
        raise ConfigError(f"{where}: missing required keys {', '.join(missing)}")


@dataclass(frozen=True)
class InstrumentSpec:
    symbol: str
    csv: str | None = None
    synthetic: dict | None = None


@dataclass(frozen=True)
class QuantumSettings:
    enabled: bool = True
    epochs: int = 100
    learning_rate: float = 0.05
    seed: int = 0


@dataclass(frozen=True)
class EnsembleSettings:
    strategies: tuple = tuple(DEFAULT_STRATEGIES)
    k: int = 7
    filter_threshold: float = 0.52
    adaptive_window: int = 30
    selection: str = "test"  # or "holdout"


@dataclass(frozen=True)
class PipelineConfig:
    instruments: tuple
    conditioning: str | None = None
    target: str | None = None
    train_fraction: float = 0.7
    architectures: tuple = ARCHITECTURES
    hyperparameters: dict = field(default_factory=dict)
    quantum: QuantumSettings = QuantumSettings()
    ensemble: EnsembleSettings = EnsembleSettings()
    backtest: BacktestConfig = BacktestConfig()
    ablation_enabled: bool = True
    ablation_models: tuple = ()
    ablation_top: int = 6
    out: str | None = None
    seed: int = 0
    raw: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def symbols(self) -> list:
        return [i.symbol for i in self.instruments]

    @property
    def target_symbol(self) -> str:
        return self.target or self.instruments[0].symbol

    def hp(self, arch: str) -> dict:
        return hyperparameters(arch, self.hyperparameters.get(arch))

    def to_dict(self) -> dict:
        """Canonical, fully defaulted form (the basis of the config hash)."""
        return {
            "instruments": [
                {k: v for k, v in (("symbol", i.symbol), ("csv", i.csv), ("synthetic", i.synthetic)) if v is not None}
                for i in self.instruments
            ],
            "conditioning": self.conditioning,
            "target": self.target_symbol,
            "train_fraction": self.train_fraction,
            "architectures": list(self.architectures),
            "hyperparameters": {a: self.hp(a) for a in self.architectures},
            "quantum": asdict(self.quantum),
            "ensemble": {**asdict(self.ensemble), "strategies": list(self.ensemble.strategies)},
            "backtest": asdict(self.backtest),
            "ablation": {"enabled": self.ablation_enabled,
                         "models": [list(m) for m in self.ablation_models], "top": self.ablation_top},
            "seed": self.seed,
        }

    @property
    def hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()

    def replace(self, **changes) -> "PipelineConfig":
        return replace(self, **changes)


def derive_seed(global_seed: int, *parts) -> int:
    """Stable 32-bit seed from the global seed and identifying names."""
    text = "|".join([str(int(global_seed))] + [str(p) for p in parts])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:4], "big")


def _number(v, where, lo=None, hi=None, integer=False):
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where}: expected a number, got {v!r}")
    if integer and int(v) != v:
        raise ConfigError(f"{where}: expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(f"{where}: must be >= {lo}")
    if hi is not None and v > hi:
        raise ConfigError(f"{where}: must be <= {hi}")
    return int(v) if integer else float(v)


def _instrument(doc, k, base: Path | None) -> InstrumentSpec:
    where = f"instruments[{k}]"
    _check_keys(doc, _INSTRUMENT_KEYS, where, required=("symbol",))
    sym = doc["symbol"]
    if not isinstance(sym, str) or not sym:
        raise ConfigError(f"{where}: symbol must be a non-empty string")
    if ("csv" in doc) == ("synthetic" in doc):
        raise ConfigError(f"{where}: give exactly one of 'csv' or 'synthetic'")
    if "csv" in doc:
        path = Path(doc["csv"])
        if base is not None and not path.is_absolute():
            path = base / path
        return InstrumentSpec(sym, csv=str(path))
    syn = doc["synthetic"]
    _check_keys(syn, _SYNTH_KEYS, f"{where}.synthetic", required=("n_days",))
    spec = {
        "n_days": _number(syn["n_days"], f"{where}.n_days", lo=2, integer=True),
        "signal_strength": _number(syn.get("signal_strength", 0.0), f"{where}.signal_strength", 0.0, 1.0),
        "seed": _number(syn.get("seed", 0), f"{where}.seed", lo=0, integer=True),
        "regime_plan": copy.deepcopy(syn.get("regime_plan", [DEFAULT_REGIME])),
        "start_price": _number(syn.get("start_price", 100.0), f"{where}.start_price", lo=1e-12),
    }
    if not isinstance(spec["regime_plan"], list) or not spec["regime_plan"]:
        raise ConfigError(f"{where}.regime_plan: expected a non-empty list")
    for j, reg in enumerate(spec["regime_plan"]):
        _check_keys(reg, {"length", "drift", "volatility"}, f"{where}.regime_plan[{j}]",
                    required=("length", "drift", "volatility"))
        _number(reg["volatility"], f"{where}.regime_plan[{j}].volatility", lo=1e-12)
    return InstrumentSpec(sym, synthetic=spec)


def config_from_dict(doc: dict, base: Path | None = None) -> PipelineConfig:
    _check_keys(doc, _TOP_KEYS, "config", required=("instruments",))
    if not isinstance(doc["instruments"], list) or not doc["instruments"]:
        raise ConfigError("config: at least one instrument is required")
    instruments = tuple(_instrument(d, k, base) for k, d in enumerate(doc["instruments"]))
    symbols = [i.symbol for i in instruments]
    if len(set(symbols)) != len(symbols):
        raise ConfigError("config: duplicate instrument symbols")

    tf = _number(doc.get("train_fraction", 0.7), "train_fraction")
    if not 0.0 < tf < 1.0:
        raise ConfigError("train_fraction: must lie strictly between 0 and 1")
    for key in ("conditioning", "target"):
        if doc.get(key) is not None and doc[key] not in symbols:
            raise ConfigError(f"{key}: {doc[key]!r} is not a configured instrument")

    archs = doc.get("architectures", list(ARCHITECTURES))
    if not isinstance(archs, list) or not archs:
        raise ConfigError("architectures: expected a non-empty list")
    bad = [a for a in archs if a not in ARCHITECTURES]
    if bad:
        raise ConfigError(f"architectures: unknown {', '.join(map(str, bad))}")
    if len(set(archs)) != len(archs):
        raise ConfigError("architectures: duplicates")

    hps = doc.get("hyperparameters", {})
    _check_keys(hps, ARCHITECTURES, "hyperparameters")
    for arch, over in hps.items():
        try:
            hyperparameters(arch, over)
        except ValueError as exc:
            raise ConfigError(f"hyperparameters: {exc}") from None

    q = doc.get("quantum", {})
    _check_keys(q, _QUANTUM_KEYS, "quantum")
    quantum = QuantumSettings(
        enabled=bool(q.get("enabled", True)),
        epochs=_number(q.get("epochs", 100), "quantum.epochs", lo=0, integer=True),
        learning_rate=_number(q.get("learning_rate", 0.05), "quantum.learning_rate", lo=0.0),
        seed=_number(q.get("seed", 0), "quantum.seed", lo=0, integer=True),
    )

    e = doc.get("ensemble", {})
    _check_keys(e, _ENSEMBLE_KEYS, "ensemble")
    strategies = e.get("strategies", DEFAULT_STRATEGIES)
    bad = [s for s in strategies if s not in STRATEGY_KINDS]
    if bad:
        raise ConfigError(f"ensemble.strategies: unknown {', '.join(map(str, bad))}")
    ft = _number(e.get("filter_threshold", 0.52), "ensemble.filter_threshold")
    if not 0.5 <= ft < 1.0:
        raise ConfigError("ensemble.filter_threshold: must lie in [0.5, 1)")
    selection = e.get("selection", "test")
    if selection not in ("test", "holdout"):
        raise ConfigError("ensemble.selection: expected 'test' or 'holdout'")
    ensemble = EnsembleSettings(
        strategies=tuple(strategies),
        k=_number(e.get("k", 7), "ensemble.k", lo=1, integer=True),
        filter_threshold=ft,
        adaptive_window=_number(e.get("adaptive_window", 30), "ensemble.adaptive_window", lo=1, integer=True),
        selection=selection,
    )

    b = doc.get("backtest", {})
    _check_keys(b, _BACKTEST_KEYS, "backtest")
    try:
        backtest = BacktestConfig(
            cost=_number(b.get("cost", 0.0002), "backtest.cost", lo=0.0),
            consensus=_number(b.get("consensus", 6), "backtest.consensus", lo=0, integer=True),
            sizing=b.get("sizing", "full"),
            long_only=bool(b.get("long_only", False)),
            annualization=_number(b.get("annualization", 252), "backtest.annualization", lo=1, integer=True),
        )
    except ValueError as exc:
        raise ConfigError(f"backtest: {exc}") from None

    a = doc.get("ablation", {})
    _check_keys(a, _ABLATION_KEYS, "ablation")
    models = []
    for m in a.get("models", []):
        if not (isinstance(m, list) and len(m) == 2 and m[0] in symbols and m[1] in archs):
            raise ConfigError(f"ablation.models: {m!r} is not a configured [symbol, architecture] pair")
        models.append((m[0], m[1]))

    out = doc.get("out")
    if out is not None and base is not None and not Path(out).is_absolute():
        out = str(base / out)
    return PipelineConfig(
        instruments=instruments,
        conditioning=doc.get("conditioning"),
        target=doc.get("target"),
        train_fraction=tf,
        architectures=tuple(archs),
        hyperparameters=copy.deepcopy(hps),
        quantum=quantum,
        ensemble=ensemble,
        backtest=backtest,
        ablation_enabled=bool(a.get("enabled", True)),
        ablation_models=tuple(models),
        ablation_top=_number(a.get("top", 6), "ablation.top", lo=1, integer=True),
        out=out,
        seed=_number(doc.get("seed", 0), "seed", lo=0, integer=True),
        raw=copy.deepcopy(doc),
    )


def parse_config(path) -> PipelineConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    return config_from_dict(doc, base=path.parent)
