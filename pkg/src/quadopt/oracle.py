"""Expensive-evaluation abstraction: synthetic simulators, budget, cache.

The ground-truth evaluator is deliberately opaque to the optimizers: it
maps a design matrix to a vector of criteria, every fresh evaluation costs
one unit of a hard budget, and repeated evaluations of the same design are
served from the dataset cache for free.

Two synthetic families ship:

* ``synth``: a deterministic frequency response r(u) on a fixed grid over
  [0, 1], linear in the multi-scale pooled features of the design with
  smooth seeded sinusoid weight curves. Criteria are band extrema of
  (sign * r) per band, mirroring the min/max-over-band objective shapes of
  the two benchmark tasks (bands rescaled to [0, 1]).
* ``count-ones``: criteria = [number of 1 cells]; a known-optimum oracle
  for search diagnostics.
"""

from __future__ import annotations

import csv
import json
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict

import numpy as np

from .features import batch_features, design_features, feature_length
from .layout import DesignMatrix

__all__ = [
    "BandSpec",
    "OracleSpec",
    "Oracle",
    "BudgetLedger",
    "BudgetExhaustedError",
    "EvaluationRecord",
    "Dataset",
    "aggregate_objective",
    "build_oracle",
    "resolve_oracle_spec",
    "evaluate",
    "evaluate_batch",
    "save_dataset_csv",
    "load_dataset_csv",
    "save_manifest",
    "load_manifest",
]


class BudgetExhaustedError(RuntimeError):
    """A fresh evaluation would exceed the simulation cap."""


class DimensionMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class BandSpec:
    """One criterion: extremum of sign * r(u) over the band [lo, hi]."""

    lo: float
    hi: float
    sense: str = "min"  # "min" or "max" over the band
    sign: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.lo <= self.hi <= 1.0:
            raise ValueError(f"band [{self.lo}, {self.hi}] outside [0, 1]")
        if self.sense not in ("min", "max"):
            raise ValueError(f"band sense must be min or max, got {self.sense!r}")


@dataclass(frozen=True)
class OracleSpec:
    name: str
    family: str  # "synth" | "count-ones"
    rows: int
    cols: int
    layers: int = 1
    bands: tuple[BandSpec, ...] = ()
    seed: int = 0
    freq_points: int = 101
    latency_s: float = 0.0

    def __post_init__(self):
        if self.family == "synth" and not self.bands:
            raise ValueError("synth oracle needs at least one band")

    @property
    def dims(self) -> tuple[int, int, int]:
        return (self.rows, self.cols, self.layers)

    @property
    def n_criteria(self) -> int:
        return len(self.bands) if self.family == "synth" else 1


# Benchmark bands are the two tasks' physical bands linearly rescaled to
# [0, 1] over their spanned frequency range.
def _rescale(lo: float, hi: float, span_lo: float, span_hi: float) -> tuple[float, float]:
    w = span_hi - span_lo
    return ((lo - span_lo) / w, (hi - span_lo) / w)


def make_dualfss_spec() -> OracleSpec:
    """12x12x2 grid; one min-sense and one max-sense negated band."""
    b1 = _rescale(31.5, 34.5, 10.5, 34.5)
    b2 = _rescale(10.5, 15.5, 10.5, 34.5)
    return OracleSpec(
        name="synth-dualfss",
        family="synth",
        rows=12,
        cols=12,
        layers=2,
        bands=(
            BandSpec(b1[0], b1[1], "min", -1.0),
            BandSpec(b2[0], b2[1], "max", -1.0),
        ),
        seed=20240611,
    )


def make_hga_spec() -> OracleSpec:
    """15x20 grid; two min-sense bands."""
    b1 = _rescale(2.45, 2.55, 2.45, 6.0)
    b2 = _rescale(5.0, 6.0, 2.45, 6.0)
    return OracleSpec(
        name="synth-hga",
        family="synth",
        rows=15,
        cols=20,
        layers=1,
        bands=(
            BandSpec(b1[0], b1[1], "min", 1.0),
            BandSpec(b2[0], b2[1], "min", 1.0),
        ),
        seed=20240612,
    )


_NAMED_SPECS = {
    "synth-dualfss": make_dualfss_spec,
    "synth-hga": make_hga_spec,
}

_COUNT_ONES_RE = re.compile(r"^count-ones:(\d+)x(\d+)(?:x(\d+))?$")


def resolve_oracle_spec(name: str) -> OracleSpec:
    """Look up a named benchmark or a ``count-ones:MxN[xL]`` pattern."""
    if name in _NAMED_SPECS:
        return _NAMED_SPECS[name]()
    m = _COUNT_ONES_RE.match(name)
    if m:
        rows, cols = int(m.group(1)), int(m.group(2))
        layers = int(m.group(3)) if m.group(3) else 1
        return OracleSpec(name=name, family="count-ones", rows=rows, cols=cols, layers=layers)
    raise KeyError(f"unknown oracle {name!r}")


# Weight-curve amplitudes per scale. Coarse features dominate so that the
# benchmark rewards getting the global pattern right before fine detail;
# the cell scale still carries enough weight that finer design spaces are
# measurably harder to rank from a fixed sample budget.
_SCALE_AMPLITUDE = {0: 2.5, 1: 1.2, 2: 0.7, 3: 0.20}
_BASE_AMPLITUDE = 1.0
_MAX_HARMONICS = 5


def _seeded_curve(rng: np.random.Generator, u: np.ndarray, amplitude: float) -> np.ndarray:
    """A smooth curve: up to _MAX_HARMONICS seeded sinusoids."""
    n_h = 2 + int(rng.random() * (_MAX_HARMONICS - 1))  # 2..5
    curve = np.zeros_like(u)
    for _ in range(n_h):
        amp = (0.5 + 0.5 * rng.random()) * amplitude / n_h
        freq = 0.3 + 2.2 * rng.random()
        phase = 2.0 * np.pi * rng.random()
        curve += amp * np.sin(2.0 * np.pi * freq * u + phase)
    return curve


class Oracle:
    """Deterministic evaluator built from an OracleSpec."""

    def __init__(self, spec: OracleSpec):
        self.spec = spec
        self.frequencies = np.linspace(0.0, 1.0, spec.freq_points)
        if spec.family == "synth":
            self._build_synth_weights()
        elif spec.family != "count-ones":
            raise ValueError(f"unknown oracle family {spec.family!r}")

    def _build_synth_weights(self):
        spec = self.spec
        u = self.frequencies
        n_feat = feature_length(spec.rows, spec.cols)
        scales = self._feature_scales(n_feat)
        rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([spec.seed, 0xC0FFEE]))
        )
        cols = []
        for _layer in range(spec.layers):
            for s in scales:
                cols.append(_seeded_curve(rng, u, _SCALE_AMPLITUDE[s]))
        self._weight_curves = np.stack(cols, axis=1)  # (freq, layers*F)
        self._base_curve = _seeded_curve(rng, u, _BASE_AMPLITUDE)
        self._band_points = []
        for band in spec.bands:
            pts = np.nonzero((u >= band.lo - 1e-12) & (u <= band.hi + 1e-12))[0]
            if pts.size == 0:
                raise ValueError(f"band {band} contains no frequency grid point")
            self._band_points.append(pts)

    def _feature_scales(self, n_feat: int) -> list[int]:
        from .features import scale_grid

        scales = []
        for d in (0, 1, 2):
            re_, ce = scale_grid(self.spec.rows, self.spec.cols, d)
            scales.extend([d] * ((len(re_) - 1) * (len(ce) - 1)))
        scales.extend([3] * (self.spec.rows * self.spec.cols))
        assert len(scales) == n_feat
        return scales

    def _check_dims(self, cells: np.ndarray):
        expect = (self.spec.layers, self.spec.rows, self.spec.cols)
        if cells.shape[-3:] != expect:
            raise DimensionMismatchError(f"design shape {cells.shape} != oracle dims {expect}")

    def response(self, design: DesignMatrix) -> np.ndarray:
        """The full synthetic curve r(u) over the frequency grid."""
        if self.spec.family != "synth":
            raise ValueError(f"{self.spec.family} oracle has no response curve")
        self._check_dims(design.cells)
        phi = design_features(design.cells)
        return self._weight_curves @ phi + self._base_curve

    def criteria_batch(self, mats: np.ndarray) -> np.ndarray:
        """Criterion vectors for a (B, layers, rows, cols) batch."""
        mats = np.asarray(mats)
        self._check_dims(mats)
        if self.spec.latency_s > 0:
            time.sleep(self.spec.latency_s * mats.shape[0])
        if self.spec.family == "count-ones":
            return mats.reshape(mats.shape[0], -1).sum(axis=1, dtype=np.float64)[:, None]
        phi = batch_features(mats)
        curves = phi @ self._weight_curves.T + self._base_curve  # (B, freq)
        out = np.empty((mats.shape[0], len(self.spec.bands)))
        for k, (band, pts) in enumerate(zip(self.spec.bands, self._band_points)):
            vals = band.sign * curves[:, pts]
            out[:, k] = vals.min(axis=1) if band.sense == "min" else vals.max(axis=1)
        return out

    def criteria(self, design: DesignMatrix) -> np.ndarray:
        return self.criteria_batch(design.cells[None])[0]


def build_oracle(spec: OracleSpec | str) -> Oracle:
    if isinstance(spec, str):
        spec = resolve_oracle_spec(spec)
    return Oracle(spec)


def aggregate_objective(criteria: np.ndarray) -> float:
    """Worst case over the criterion vector: min_k y_k."""
    y = np.asarray(criteria, dtype=np.float64)
    if y.size < 1:
        raise ValueError("criterion vector is empty")
    if not np.isfinite(y).all():
        raise ValueError(f"non-finite criteria: {y}")
    return float(y.min())


class BudgetLedger:
    """Counts fresh simulator calls against a hard cap. Thread-safe."""

    def __init__(self, cap: int):
        if cap < 0:
            raise ValueError("budget cap must be non-negative")
        self.cap = int(cap)
        self.used = 0
        self._lock = threading.Lock()

    @property
    def remaining(self) -> int:
        return self.cap - self.used

    def spend(self, amount: int = 1):
        with self._lock:
            if self.used + amount > self.cap:
                raise BudgetExhaustedError(
                    f"evaluation budget exhausted ({self.used}/{self.cap})"
                )
            self.used += amount


@dataclass
class EvaluationRecord:
    design: DesignMatrix
    criteria: np.ndarray
    aggregate: float
    iteration: int
    timestamp: float = 0.0
    layout_text: str = ""


class Dataset:
    """Ordered evaluation records, unique designs, keyed cache."""

    def __init__(self):
        self.records: list[EvaluationRecord] = []
        self._index: dict[str, int] = {}
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, design: DesignMatrix) -> bool:
        return design.key() in self._index

    def contains_key(self, key: str) -> bool:
        return key in self._index

    def get(self, design: DesignMatrix) -> EvaluationRecord | None:
        idx = self._index.get(design.key())
        return self.records[idx] if idx is not None else None

    def append(self, record: EvaluationRecord) -> None:
        key = record.design.key()
        with self._lock:
            if key in self._index:
                raise ValueError(f"duplicate design appended: {key[:40]}...")
            self._index[key] = len(self.records)
            self.records.append(record)

    def best(self) -> EvaluationRecord:
        if not self.records:
            raise ValueError("dataset is empty")
        best = self.records[0]
        for rec in self.records[1:]:
            if rec.aggregate > best.aggregate:
                best = rec
        return best


def evaluate(
    oracle: Oracle,
    design: DesignMatrix,
    ledger: BudgetLedger,
    dataset: Dataset,
    iteration: int = 0,
    layout_text: str = "",
) -> EvaluationRecord:
    """Budgeted, cached evaluation.

    A design already in the dataset returns its stored record and spends
    nothing; a fresh design costs one budget unit.
    """
    cached = dataset.get(design)
    if cached is not None:
        return cached
    ledger.spend(1)
    criteria = oracle.criteria(design)
    record = EvaluationRecord(
        design=design,
        criteria=criteria,
        aggregate=aggregate_objective(criteria),
        iteration=iteration,
        timestamp=time.time(),
        layout_text=layout_text,
    )
    dataset.append(record)
    return record


def evaluate_batch(
    oracle: Oracle,
    items: list[tuple[DesignMatrix, str]],
    ledger: BudgetLedger,
    dataset: Dataset,
    iteration: int = 0,
    max_workers: int = 1,
) -> list[EvaluationRecord]:
    """Evaluate a batch; results merge in submission order.

    Criteria may be computed concurrently, but budget accounting and
    dataset appends happen serially in the order given, so runs are
    reproducible regardless of completion order.
    """
    if max_workers > 1:
        fresh = {}
        for design, _ in items:
            key = design.key()
            if key not in fresh and not dataset.contains_key(key):
                fresh[key] = design
        keys = list(fresh)
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            computed = list(pool.map(lambda k: oracle.criteria(fresh[k]), keys))
        precomputed = dict(zip(keys, computed))
    else:
        precomputed = {}

    out = []
    for design, layout_text in items:
        cached = dataset.get(design)
        if cached is not None:
            out.append(cached)
            continue
        ledger.spend(1)
        criteria = precomputed.get(design.key())
        if criteria is None:
            criteria = oracle.criteria(design)
        record = EvaluationRecord(
            design=design,
            criteria=criteria,
            aggregate=aggregate_objective(criteria),
            iteration=iteration,
            timestamp=time.time(),
            layout_text=layout_text,
        )
        dataset.append(record)
        out.append(record)
    return out


# ---------------------------------------------------------------------------
# persistence: CSV evaluation log + JSON run manifest


def save_dataset_csv(dataset: Dataset, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        p = len(dataset.records[0].criteria) if dataset.records else 0
        writer.writerow(["iteration", "design", "layout"] + [f"y{k+1}" for k in range(p)] + ["aggregate"])
        for rec in dataset.records:
            writer.writerow(
                [rec.iteration, rec.design.key(), rec.layout_text]
                + [repr(float(v)) for v in rec.criteria]
                + [repr(float(rec.aggregate))]
            )


def load_dataset_csv(path: str) -> Dataset:
    dataset = Dataset()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        n_crit = len(header) - 4
        for row in reader:
            criteria = np.array([float(v) for v in row[3 : 3 + n_crit]])
            dataset.append(
                EvaluationRecord(
                    design=DesignMatrix.from_key(row[1]),
                    criteria=criteria,
                    aggregate=float(row[-1]),
                    iteration=int(row[0]),
                    layout_text=row[2],
                )
            )
    return dataset


def spec_to_dict(spec: OracleSpec) -> dict:
    return asdict(spec)


def spec_from_dict(data: dict) -> OracleSpec:
    data = dict(data)
    data["bands"] = tuple(BandSpec(**b) for b in data.get("bands", ()))
    return OracleSpec(**data)


def save_manifest(path: str, manifest: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path: str) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)
