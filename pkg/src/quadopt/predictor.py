"""Surrogate predictor: per-criterion ridge regression on pooled features.

The reference predictor fits one ridge model per criterion on the same
multi-scale pooled features the synthetic oracle is built from (the
features depend only on the design, so this is not label leakage). Any
object with ``predict``/``predict_batch`` can stand in for it; scorers
that also expose ``cell_weight_maps`` get the fast search kernel.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace

import numpy as np

from .features import FEATURE_DEF_ID, batch_features, cell_weight_map, feature_length
from .layout import DesignMatrix

__all__ = [
    "TrainConfig",
    "PredictorModel",
    "InsufficientDataError",
    "train",
    "bootstrap_ensemble",
    "save_model",
    "load_model",
]


class InsufficientDataError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    ridge_lambda: float = 0.1
    bootstrap: bool = False
    resample_fraction: float = 1.0
    seed: int = 0
    kind: str = "ridge"

    def __post_init__(self):
        if self.ridge_lambda <= 0:
            raise ValueError("ridge_lambda must be > 0")
        if not 0.0 < self.resample_fraction <= 1.0:
            raise ValueError("resample_fraction must be in (0, 1]")


@dataclass
class PredictorModel:
    """Immutable trained model: linear in the pooled features."""

    feature_def: str
    dims: tuple[int, int, int]  # (rows, cols, layers)
    weights: np.ndarray  # (p, layers * F)
    intercepts: np.ndarray  # (p,)
    ridge_lambda: float
    fingerprint: str

    @property
    def n_criteria(self) -> int:
        return len(self.intercepts)

    def _check(self, mats: np.ndarray):
        rows, cols, layers = self.dims
        if mats.shape[-3:] != (layers, rows, cols):
            raise ValueError(f"design shape {mats.shape} != model dims {self.dims}")

    def predict_batch(self, mats: np.ndarray) -> np.ndarray:
        """(B, layers, rows, cols) -> (B, p) predicted criteria."""
        mats = np.asarray(mats)
        self._check(mats)
        feats = batch_features(mats)
        return feats @ self.weights.T + self.intercepts

    def predict(self, design: DesignMatrix) -> np.ndarray:
        return self.predict_batch(design.cells[None])[0]

    def predict_aggregate_batch(self, mats: np.ndarray) -> np.ndarray:
        return self.predict_batch(mats).min(axis=1)

    def cell_weight_maps(self) -> tuple[np.ndarray, np.ndarray]:
        """Equivalent per-cell weights: (p, layers, rows, cols) + intercepts.

        Every feature is a block mean, so the linear model folds exactly
        into one weight per cell; region score contributions then reduce
        to prefix-sum queries, which is what the search kernel uses.
        """
        rows, cols, layers = self.dims
        n_feat = feature_length(rows, cols)
        maps = np.empty((self.n_criteria, layers, rows, cols))
        for k in range(self.n_criteria):
            for la in range(layers):
                w = self.weights[k, la * n_feat : (la + 1) * n_feat]
                maps[k, la] = cell_weight_map(w, rows, cols)
        return maps, self.intercepts.astype(np.float64)


def from_cell_weights(maps: np.ndarray, intercepts: np.ndarray) -> PredictorModel:
    """Build a model directly from per-cell weights (diagnostic scorers).

    Cell weights map one-to-one onto the cell-scale features, so the
    resulting model is exact and rides the fast kernel path.
    """
    maps = np.asarray(maps, dtype=np.float64)
    p, layers, rows, cols = maps.shape
    n_feat = feature_length(rows, cols)
    weights = np.zeros((p, layers * n_feat))
    cells_off = n_feat - rows * cols
    for k in range(p):
        for la in range(layers):
            base = la * n_feat + cells_off
            weights[k, base : base + rows * cols] = maps[k, la].ravel()
    return PredictorModel(
        feature_def=FEATURE_DEF_ID,
        dims=(rows, cols, layers),
        weights=weights,
        intercepts=np.asarray(intercepts, dtype=np.float64),
        ridge_lambda=float("nan"),
        fingerprint="cell-weights",
    )


def _fingerprint(keys: list[str], lam: float) -> str:
    h = hashlib.sha256()
    for key in keys:
        h.update(key.encode("ascii"))
        h.update(b";")
    h.update(repr(lam).encode("ascii"))
    return h.hexdigest()[:16]


def _fit_ridge(feats: np.ndarray, targets: np.ndarray, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-criterion ridge with unpenalized intercept via centering."""
    x_mean = feats.mean(axis=0)
    y_mean = targets.mean(axis=0)
    xc = feats - x_mean
    yc = targets - y_mean
    gram = xc.T @ xc
    gram[np.diag_indices_from(gram)] += lam
    weights = np.linalg.solve(gram, xc.T @ yc).T  # (p, F)
    intercepts = y_mean - weights @ x_mean
    return weights, intercepts


def train(dataset, config: TrainConfig) -> PredictorModel:
    """Fit the reference predictor on a dataset.

    Records are canonically sorted by design key before fitting, so the
    model depends on the dataset contents, not their insertion order.
    """
    if config.kind != "ridge":
        raise ValueError(f"unknown predictor kind {config.kind!r}")
    records = sorted(dataset.records, key=lambda r: r.design.key())
    if len(records) < 2:
        raise InsufficientDataError(f"need >= 2 records to train, got {len(records)}")
    dims = records[0].design.dims
    if any(rec.design.dims != dims for rec in records):
        raise ValueError("dataset mixes design dimensions")

    if config.bootstrap:
        rng = np.random.Generator(np.random.PCG64(config.seed))
        n_draw = max(2, int(round(config.resample_fraction * len(records))))
        idx = (rng.random(n_draw) * len(records)).astype(np.int64)
        records = [records[i] for i in idx]

    mats = np.stack([rec.design.cells for rec in records])
    feats = batch_features(mats)
    targets = np.stack([rec.criteria for rec in records])
    weights, intercepts = _fit_ridge(feats, targets, config.ridge_lambda)
    return PredictorModel(
        feature_def=FEATURE_DEF_ID,
        dims=dims,
        weights=weights,
        intercepts=intercepts,
        ridge_lambda=config.ridge_lambda,
        fingerprint=_fingerprint([rec.design.key() for rec in records], config.ridge_lambda),
    )


def bootstrap_ensemble(dataset, config: TrainConfig, count: int) -> list[PredictorModel]:
    """Train ``count`` models on independent seeded resamples."""
    if count < 2:
        raise ValueError("ensemble needs count >= 2")
    members = []
    for i in range(count):
        member_cfg = replace(config, bootstrap=True, seed=config.seed + 7919 * (i + 1))
        members.append(train(dataset, member_cfg))
    return members


def save_model(model: PredictorModel, path: str) -> None:
    blob = {
        "feature_def": model.feature_def,
        "dims": list(model.dims),
        "weights": model.weights.tolist(),
        "intercepts": model.intercepts.tolist(),
        "ridge_lambda": model.ridge_lambda,
        "fingerprint": model.fingerprint,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(blob, fh)


def load_model(path: str) -> PredictorModel:
    with open(path, encoding="utf-8") as fh:
        blob = json.load(fh)
    if blob["feature_def"] != FEATURE_DEF_ID:
        raise ValueError(f"unsupported feature definition {blob['feature_def']!r}")
    return PredictorModel(
        feature_def=blob["feature_def"],
        dims=tuple(blob["dims"]),
        weights=np.array(blob["weights"], dtype=np.float64),
        intercepts=np.array(blob["intercepts"], dtype=np.float64),
        ridge_lambda=blob["ridge_lambda"],
        fingerprint=blob["fingerprint"],
    )
