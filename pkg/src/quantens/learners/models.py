"""Training entry points, the fitted-model container and its JSON form."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field

import numpy as np

from . import logistic, lstm, transformer, trees
from .nn import fit_minibatch
from .windows import Prediction, Standardizer, WindowedDataset

ARCHITECTURES = ("LSTM", "DecisionTransformer", "GradientBoost", "RandomForest", "Logistic")
DEFAULTS = {
    "LSTM": lstm.DEFAULTS,
    "DecisionTransformer": transformer.DEFAULTS,
    "GradientBoost": trees.GB_DEFAULTS,
    "RandomForest": trees.RF_DEFAULTS,
    "Logistic": logistic.DEFAULTS,
}
FORMAT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


def hyperparameters(architecture: str, overrides: dict | None = None) -> dict:
    if architecture not in DEFAULTS:
        raise ValueError(f"unknown architecture {architecture!r}")
    hp = copy.deepcopy(DEFAULTS[architecture])
    for k, v in (overrides or {}).items():
        if k not in hp:
            raise ValueError(f"{architecture}: unknown hyperparameter {k!r}")
        hp[k] = v
    return hp


@dataclass
class TrainedModel:
    architecture: str
    hyperparameters: dict
    seed: int
    n_features: int
    weights: dict = field(default_factory=dict)
    trees: list = field(default_factory=list)
    standardization: Standardizer | None = None
    meta: dict = field(default_factory=dict)

    @property
    def lookback(self) -> int:
        return self.hyperparameters["lookback"]

    # -- inference -------------------------------------------------------
    def _check(self, seqs: np.ndarray) -> np.ndarray:
        seqs = np.asarray(seqs, dtype=float)
        if seqs.ndim == 2:
            seqs = seqs[None]
        if seqs.shape[1:] != (self.lookback, self.n_features):
            raise ShapeMismatch(
                f"{self.architecture} expects windows of shape {(self.lookback, self.n_features)}, "
                f"got {seqs.shape[1:]}"
            )
        return seqs

    def _proba_one(self, seq: np.ndarray) -> float:
        arch = self.architecture
        if arch == "RandomForest":
            return float(trees.forest_proba(self.trees, seq.reshape(1, -1))[0])
        if arch == "GradientBoost":
            m = trees.boost_margin(self.weights["base_margin"][0], self.trees, seq.reshape(1, -1))
            return float(1.0 / (1.0 + np.exp(-m[0])))
        if arch == "Logistic":
            x = self.standardization.transform(seq.reshape(1, -1))
            return float(logistic.proba(self.weights["w"], self.weights["b"][0], x)[0])
        x = self.standardization.transform(seq)[None]
        if arch == "LSTM":
            z = lstm.forward(self.weights, x)[0][0]
        else:
            z = transformer.forward(self.weights, x, self.hyperparameters["heads"])[0][0]
        return float(1.0 / (1.0 + np.exp(-z)))

    def predict_proba(self, seqs) -> np.ndarray:
        """P(up) per window. Windows are scored one at a time so a window's
        result never depends on what else is in the batch."""
        seqs = self._check(seqs)
        return np.array([self._proba_one(s) for s in seqs])

    # -- serialisation ---------------------------------------------------
    def to_dict(self) -> dict:
        doc = {
            "version": FORMAT_VERSION,
            "architecture": self.architecture,
            "hyperparameters": self.hyperparameters,
            "seed": self.seed,
            "n_features": self.n_features,
            "meta": self.meta,
            "weights": {
                k: {"shape": list(np.shape(v)), "values": np.ravel(v).tolist()}
                for k, v in sorted(self.weights.items())
            },
            "trees": [trees.tree_to_record(t) for t in self.trees],
            "standardization": None,
        }
        if self.standardization is not None:
            doc["standardization"] = {
                "mean": self.standardization.mean.tolist(),
                "std": self.standardization.std.tolist(),
            }
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc: dict) -> "TrainedModel":
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')}")
        std = doc.get("standardization")
        return cls(
            architecture=doc["architecture"],
            hyperparameters=doc["hyperparameters"],
            seed=doc["seed"],
            n_features=doc["n_features"],
            weights={
                k: np.array(v["values"], dtype=float).reshape(v["shape"])
                for k, v in doc["weights"].items()
            },
            trees=[trees.tree_from_record(r) for r in doc["trees"]],
            standardization=None if std is None else Standardizer(np.array(std["mean"]), np.array(std["std"])),
            meta=doc["meta"],
        )

    @classmethod
    def from_json(cls, text: str) -> "TrainedModel":
        return cls.from_dict(json.loads(text))


def predict(model: TrainedModel, window) -> Prediction:
    """Deterministic prediction for a single (L, d) window, dropout off."""
    return Prediction.from_proba(model.predict_proba(window)[0])


def train(architecture: str, data: WindowedDataset, seed: int, overrides: dict | None = None) -> TrainedModel:
    hp = hyperparameters(architecture, overrides)
    if data.L != hp["lookback"]:
        raise ShapeMismatch(f"{architecture} needs lookback {hp['lookback']}, dataset has {data.L}")
    trainer = {
        "LSTM": train_lstm,
        "DecisionTransformer": train_decision_transformer,
        "GradientBoost": train_gradient_boost,
        "RandomForest": train_random_forest,
        "Logistic": train_logistic,
    }[architecture]
    return trainer(data, hp, seed)


def _y01(data):
    return (np.asarray(data.labels) > 0).astype(float)


def train_logistic(data: WindowedDataset, hp: dict, seed: int) -> TrainedModel:
    stats = Standardizer.fit(data.flat)
    w, b, iters, loss = logistic.fit(stats.transform(data.flat), data.labels, hp["C"], hp["max_iter"], hp["tol"])
    return TrainedModel(
        "Logistic", hp, seed, data.sequences.shape[2],
        weights={"w": w, "b": np.array([b])},
        standardization=stats,
        meta={"epochs": iters, "final_loss": loss, "seed": seed},
    )


def train_random_forest(data: WindowedDataset, hp: dict, seed: int) -> TrainedModel:
    forest = trees.fit_random_forest(data.flat, data.labels, hp, seed)
    p = trees.forest_proba(forest, data.flat)
    acc = float(np.mean(np.where(p >= 0.5, 1, -1) == data.labels))
    return TrainedModel(
        "RandomForest", hp, seed, data.sequences.shape[2],
        trees=forest,
        meta={"epochs": len(forest), "final_loss": 1.0 - acc, "seed": seed},
    )


def train_gradient_boost(data: WindowedDataset, hp: dict, seed: int) -> TrainedModel:
    base, boosted, history = trees.fit_gradient_boost(data.flat, data.labels, hp)
    return TrainedModel(
        "GradientBoost", hp, seed, data.sequences.shape[2],
        weights={"base_margin": np.array([base])},
        trees=boosted,
        meta={"epochs": len(boosted), "final_loss": history[-1], "seed": seed, "loss_history": history},
    )


def _seq_stats(data: WindowedDataset) -> Standardizer:
    return Standardizer.fit(data.sequences.reshape(-1, data.sequences.shape[2]))


def train_lstm(data: WindowedDataset, hp: dict, seed: int) -> TrainedModel:
    rng = np.random.default_rng(seed)
    d = data.sequences.shape[2]
    stats = _seq_stats(data)
    params = lstm.init_params(d, hp["units"], rng)

    def fwd(p, X, train, r):
        return lstm.forward(p, X, hp["dropout"], train, r)

    history = fit_minibatch(
        params, stats.transform(data.sequences), _y01(data), fwd, lstm.backward,
        epochs=hp["epochs"], batch_size=hp["batch_size"], lr=hp["learning_rate"], rng=rng, label="LSTM",
    )
    return TrainedModel(
        "LSTM", hp, seed, d, weights=params, standardization=stats,
        meta={"epochs": hp["epochs"], "final_loss": history[-1] if history else None, "seed": seed,
              "loss_history": history},
    )


def train_decision_transformer(data: WindowedDataset, hp: dict, seed: int) -> TrainedModel:
    if hp["width"] % hp["heads"]:
        raise ValueError("model width must be divisible by the number of heads")
    rng = np.random.default_rng(seed)
    d = data.sequences.shape[2]
    stats = _seq_stats(data)
    params = transformer.init_params(d, hp["width"], hp["blocks"], hp["ff_units"], rng)

    def fwd(p, X, train, r):
        return transformer.forward(p, X, hp["heads"], hp["dropout"], train, r)

    history = fit_minibatch(
        params, stats.transform(data.sequences), _y01(data), fwd, transformer.backward,
        epochs=hp["epochs"], batch_size=hp["batch_size"], lr=hp["learning_rate"], rng=rng,
        label="DecisionTransformer",
    )
    return TrainedModel(
        "DecisionTransformer", hp, seed, d, weights=params, standardization=stats,
        meta={"epochs": hp["epochs"], "final_loss": history[-1] if history else None, "seed": seed,
              "loss_history": history},
    )
