"""The outer optimization loop: train, search, select, simulate, repeat.

Each run derives every random stream from one master seed through stable
labels (see seeding.py), with per-iteration labels for the search, the
refinement, and the selection. Any iteration's randomness can therefore
be re-derived in isolation, which is what makes interrupt-and-resume
produce logs identical to an uninterrupted run.

Variants used by the ablations ride the same loop: ``selection_mode``
forces the consistency coefficient to 1 (pure Top-K) or 0 (pure random),
and ``candidate_source`` swaps progressive tree growth for uniform pixel
sampling (which, combined with Top-K selection, is surrogate random
search).
"""

from __future__ import annotations

import csv
import json
import os
import time
from dataclasses import dataclass, asdict, replace

import numpy as np

from .layout import DesignMatrix, reconstruct_stack, serialize_stack
from .oracle import (
    BudgetLedger,
    Dataset,
    EvaluationRecord,
    Oracle,
    OracleSpec,
    build_oracle,
    evaluate_batch,
    resolve_oracle_spec,
    spec_to_dict,
)
from .predictor import TrainConfig, train
from .search import (
    CapSchedule,
    SearchConfig,
    TopKEntry,
    grow_cap,
    importance_assignment,
    random_pixel_design,
    random_stack,
    tree_search,
)
from .seeding import generator
from .selection import ConsistencyReport, initial_tau, kendall_tau, mixed_select

__all__ = [
    "RunConfig",
    "IterationLog",
    "RunResult",
    "StateError",
    "run_pqs",
    "resume",
    "load_result",
    "build_initial_dataset",
    "persist_run",
]

MANIFEST_NAME = "manifest.json"
EVALS_NAME = "evals.csv"
CONSISTENCY_NAME = "consistency.csv"
STATE_NAME = "state.json"
SUMMARY_NAME = "summary.json"

_SELECTION_MODES = ("css", "topk", "random")
_CANDIDATE_SOURCES = ("tree", "pixel")


class StateError(RuntimeError):
    """Persisted run state is missing, corrupt, or inconsistent."""


@dataclass(frozen=True)
class RunConfig:
    oracle: str = "synth-hga"
    t_max: int = 1000
    init_size: int = 300
    r_select: int = 10
    search: SearchConfig = SearchConfig()
    train: TrainConfig = TrainConfig()
    schedule: CapSchedule = CapSchedule()
    seed: int = 0
    probe_size: int = 50
    refine_steps: int = 200
    ensemble_count: int = 4
    selection_mode: str = "css"
    candidate_source: str = "tree"
    pool_size: int = 20000
    method: str = "pqs"
    eval_workers: int = 1

    def __post_init__(self):
        if self.init_size > self.t_max:
            raise ValueError("init_size must not exceed t_max")
        if self.init_size < 2:
            raise ValueError("init_size must be >= 2 (predictor training)")
        if self.r_select < 1:
            raise ValueError("r_select must be >= 1")
        if self.selection_mode not in _SELECTION_MODES:
            raise ValueError(f"selection_mode must be one of {_SELECTION_MODES}")
        if self.candidate_source not in _CANDIDATE_SOURCES:
            raise ValueError(f"candidate_source must be one of {_CANDIDATE_SOURCES}")


@dataclass
class IterationLog:
    iteration: int
    n: int
    tau: float
    tau_plus: float
    r_p: int
    r_r: int
    best_aggregate: float
    simulations: int


@dataclass
class RunResult:
    method: str
    seed: int
    best: EvaluationRecord
    dataset: Dataset
    iterations: list[IterationLog]
    wall_clock: float
    finished: bool
    out_dir: str | None = None


def config_to_dict(config: RunConfig) -> dict:
    return asdict(config)


def config_from_dict(data: dict) -> RunConfig:
    data = dict(data)
    data["search"] = SearchConfig(**data["search"])
    data["train"] = TrainConfig(**data["train"])
    data["schedule"] = CapSchedule(**data["schedule"])
    return RunConfig(**data)


class _RunWriter:
    """Incremental run artifacts; append-only logs, atomic state."""

    def __init__(self, out_dir: str, manifest: dict, fresh: bool):
        self.out_dir = out_dir
        os.makedirs(out_dir, exist_ok=True)
        if fresh:
            with open(self._p(MANIFEST_NAME), "w", encoding="utf-8") as fh:
                json.dump(manifest, fh, indent=2, sort_keys=True)
                fh.write("\n")
            for name in (EVALS_NAME, CONSISTENCY_NAME, STATE_NAME, SUMMARY_NAME):
                path = self._p(name)
                if os.path.exists(path):
                    os.remove(path)

    def _p(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def append_records(self, records: list[EvaluationRecord]) -> None:
        path = self._p(EVALS_NAME)
        new_file = not os.path.exists(path)
        with open(path, "a", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if new_file:
                p = len(records[0].criteria)
                writer.writerow(
                    ["iteration", "design", "layout"]
                    + [f"y{k + 1}" for k in range(p)]
                    + ["aggregate"]
                )
            for rec in records:
                writer.writerow(
                    [rec.iteration, rec.design.key(), rec.layout_text]
                    + [repr(float(v)) for v in rec.criteria]
                    + [repr(float(rec.aggregate))]
                )

    def append_iteration(self, log: IterationLog) -> None:
        path = self._p(CONSISTENCY_NAME)
        new_file = not os.path.exists(path)
        with open(path, "a", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if new_file:
                writer.writerow(
                    ["iteration", "n", "tau", "tau_plus", "r_p", "r_r",
                     "best_aggregate", "simulations"]
                )
            writer.writerow(
                [log.iteration, log.n, repr(log.tau), repr(log.tau_plus),
                 log.r_p, log.r_r, repr(log.best_aggregate), log.simulations]
            )

    def save_state(self, state: dict) -> None:
        tmp = self._p(STATE_NAME + ".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(state, fh)
        os.replace(tmp, self._p(STATE_NAME))

    def save_summary(self, summary: dict) -> None:
        with open(self._p(SUMMARY_NAME), "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")


class _LoopState:
    """Everything the loop carries between iterations."""

    def __init__(self, config: RunConfig, spec: OracleSpec, oracle: Oracle):
        self.config = config
        self.spec = spec
        self.oracle = oracle
        self.ledger = BudgetLedger(config.t_max)
        self.dataset = Dataset()
        self.iterations: list[IterationLog] = []
        self.completed = 0
        self.prev_cand_mats: np.ndarray | None = None
        self.prev_cand_scores: np.ndarray | None = None
        self.prev_cand_keys: list[str] = []
        self.probe_mats: np.ndarray | None = None
        self.wall_clock = 0.0


def _sample_probe(state: _LoopState) -> None:
    """Fixed seeded probe set used for consistency estimation."""
    config, spec = state.config, state.spec
    rng = generator(config.seed, "probe")
    seen: set[str] = set()
    mats = []
    guard = 0
    while len(mats) < config.probe_size:
        guard += 1
        if guard > 10_000 * config.probe_size:
            raise RuntimeError("probe sampler failed to find distinct designs")
        stack = random_stack(spec.rows, spec.cols, spec.layers, config.search.n_max, rng)
        design = reconstruct_stack(stack)
        key = design.key()
        if key in seen:
            continue
        seen.add(key)
        mats.append(design.cells)
    state.probe_mats = np.stack(mats)


def build_initial_dataset(
    spec: OracleSpec,
    oracle: Oracle,
    ledger: BudgetLedger,
    dataset: Dataset,
    init_size: int,
    cap: int,
    seed: int,
    max_workers: int = 1,
) -> None:
    """Simulate ``init_size`` distinct tree-grown designs (the D_0 builder).

    Draws come from the master seed's "init" stream, so every method
    configured with the same seed and initial cap sees the same D_0.
    """
    rng = generator(seed, "init")
    items = []
    seen: set[str] = set()
    guard = 0
    while len(items) < init_size:
        guard += 1
        if guard > 10_000 * init_size:
            raise RuntimeError("initial sampler failed to find distinct designs")
        stack = random_stack(spec.rows, spec.cols, spec.layers, cap, rng)
        design = reconstruct_stack(stack)
        key = design.key()
        if key in seen:
            continue
        seen.add(key)
        items.append((design, serialize_stack(stack)))
    evaluate_batch(oracle, items, ledger, dataset, iteration=0, max_workers=max_workers)


def _build_initial_dataset(state: _LoopState) -> None:
    config = state.config
    cap0 = min(grow_cap(config.schedule, 0), config.search.n_max)
    build_initial_dataset(
        state.spec, state.oracle, state.ledger, state.dataset,
        config.init_size, cap0, config.seed, max_workers=config.eval_workers,
    )


def _make_sampler(state: _LoopState, cap: int):
    spec = state.spec
    if state.config.candidate_source == "tree":

        def sampler(rng) -> TopKEntry:
            stack = random_stack(spec.rows, spec.cols, spec.layers, cap, rng)
            design = reconstruct_stack(stack)
            return TopKEntry(matrix=design.cells, score=float("nan"), stack=stack)

    else:

        def sampler(rng) -> TopKEntry:
            mat = random_pixel_design(spec.rows, spec.cols, spec.layers, rng)
            return TopKEntry(matrix=mat, score=float("nan"), stack=None)

    return sampler


def _candidates_for_iteration(state: _LoopState, model, t: int, cap: int) -> list[TopKEntry]:
    config, spec = state.config, state.spec
    dims = (spec.rows, spec.cols, spec.layers)
    if config.candidate_source == "tree":
        search_cfg = replace(
            config.search,
            n_max=cap,
            seed=int(generator(config.seed, f"search/{t}").integers(2**31)),
        )
        topk = tree_search(model, search_cfg, dims)
        refine_rng = generator(config.seed, f"refine/{t}")
        entries = [
            importance_assignment(e, model, config.refine_steps, refine_rng)
            for e in topk
        ]
    else:
        rng = generator(config.seed, f"search/{t}")
        mats = (rng.random((config.pool_size, spec.layers, spec.rows, spec.cols)) < 0.5).astype(np.int8)
        scores = model.predict_aggregate_batch(mats)
        order = np.argsort(-scores, kind="stable")[: config.search.k_top]
        entries = [
            TopKEntry(matrix=mats[i].copy(), score=float(scores[i]), stack=None)
            for i in order
        ]

    # probe designs double as backup exploitation candidates
    probe_scores = model.predict_aggregate_batch(state.probe_mats)
    candidates: list[TopKEntry] = []
    seen: set[str] = set()
    for entry in entries:
        if entry.key not in seen:
            seen.add(entry.key)
            candidates.append(entry)
    for i in range(state.probe_mats.shape[0]):
        entry = TopKEntry(matrix=state.probe_mats[i], score=float(probe_scores[i]))
        if entry.key not in seen:
            seen.add(entry.key)
            candidates.append(entry)
    return candidates


def _run_iteration(state: _LoopState, t: int, predictor_factory):
    config, spec = state.config, state.spec
    if predictor_factory is not None:
        model = predictor_factory(state.dataset)
    else:
        model = train(state.dataset, config.train)
    cap = min(grow_cap(config.schedule, t), config.search.n_max)
    candidates = _candidates_for_iteration(state, model, t, cap)

    sel_rng = generator(config.seed, f"select/{t}")
    sampler = _make_sampler(state, cap)
    r_t = min(config.r_select, state.ledger.remaining)

    # keep the unevaluated pool at least r_t wide (fresh scored samples)
    pool_keys = {c.key for c in candidates}
    unevaluated = sum(1 for c in candidates if not state.dataset.contains_key(c.key))
    guard = 0
    while unevaluated < r_t:
        guard += 1
        if guard > 10_000 * r_t:
            raise RuntimeError("candidate top-up failed to find fresh designs")
        extra = sampler(sel_rng)
        if extra.key in pool_keys or state.dataset.contains_key(extra.key):
            continue
        extra.score = float(model.predict_aggregate_batch(extra.matrix[None])[0])
        candidates.append(extra)
        pool_keys.add(extra.key)
        unevaluated += 1

    if config.selection_mode == "css":
        if state.prev_cand_mats is None:
            boot_cfg = replace(
                config.train,
                seed=int(generator(config.seed, "boot").integers(2**31)),
            )
            report = initial_tau(
                state.dataset, boot_cfg, state.probe_mats, count=config.ensemble_count
            )
        else:
            rescored = model.predict_aggregate_batch(state.prev_cand_mats)
            report = kendall_tau(state.prev_cand_scores, rescored)
    elif config.selection_mode == "topk":
        report = ConsistencyReport(tau=1.0, n=len(candidates))
    else:
        report = ConsistencyReport(tau=0.0, n=len(candidates))

    picks, plan = mixed_select(
        [(c, c.score) for c in candidates],
        report.tau,
        r_t,
        sel_rng,
        state.dataset,
        sampler,
    )
    items = [
        (pick.design(), serialize_stack(pick.stack) if pick.stack is not None else "")
        for pick in picks
    ]
    records = evaluate_batch(
        state.oracle, items, state.ledger, state.dataset,
        iteration=t, max_workers=config.eval_workers,
    )

    cand_mats = np.stack([c.matrix for c in candidates])
    state.prev_cand_mats = cand_mats
    state.prev_cand_scores = model.predict_aggregate_batch(cand_mats)
    state.prev_cand_keys = [c.key for c in candidates]

    state.iterations.append(
        IterationLog(
            iteration=t,
            n=report.n,
            tau=report.tau,
            tau_plus=report.tau_plus,
            r_p=plan.predictor_picks,
            r_r=plan.random_picks,
            best_aggregate=state.dataset.best().aggregate,
            simulations=state.ledger.used,
        )
    )
    state.completed = t
    return records


def _persist_iteration(state: _LoopState, writer: _RunWriter | None, records) -> None:
    if writer is None:
        return
    if records:
        writer.append_records(records)
    if state.iterations and state.iterations[-1].iteration == state.completed and state.completed > 0:
        writer.append_iteration(state.iterations[-1])
    writer.save_state(_state_dict(state, finished=False))


def _state_dict(state: _LoopState, finished: bool) -> dict:
    return {
        "schema": "quadopt-state-v1",
        "method": state.config.method,
        "seed": state.config.seed,
        "completed_iterations": state.completed,
        "finished": finished,
        "cand_keys": state.prev_cand_keys,
        "cand_scores": [float(v) for v in (state.prev_cand_scores if state.prev_cand_scores is not None else [])],
        "wall_clock": state.wall_clock,
    }


def _summary_dict(state: _LoopState, result: RunResult) -> dict:
    best = result.best
    return {
        "method": result.method,
        "seed": result.seed,
        "best_aggregate": best.aggregate,
        "best_criteria": [float(v) for v in best.criteria],
        "best_design": best.design.key(),
        "best_layout": best.layout_text,
        "simulations": state.ledger.used,
        "iterations": len(result.iterations),
        "wall_clock": result.wall_clock,
        "finished": result.finished,
    }


def _finish(state: _LoopState, writer: _RunWriter | None, started: float, finished: bool) -> RunResult:
    state.wall_clock += time.time() - started
    result = RunResult(
        method=state.config.method,
        seed=state.config.seed,
        best=state.dataset.best(),
        dataset=state.dataset,
        iterations=state.iterations,
        wall_clock=state.wall_clock,
        finished=finished,
        out_dir=writer.out_dir if writer else None,
    )
    if writer is not None:
        writer.save_state(_state_dict(state, finished=finished))
        if finished:
            writer.save_summary(_summary_dict(state, result))
    return result


def run_pqs(
    config: RunConfig,
    out_dir: str | None = None,
    stop_after_iterations: int | None = None,
    predictor_factory=None,
) -> RunResult:
    """Execute a full budgeted run; deterministic given the master seed.

    ``stop_after_iterations`` ends the run early at an iteration boundary
    with persisted state (the interrupt half of interrupt-and-resume).
    """
    if predictor_factory is not None and config.selection_mode == "css":
        raise ValueError("custom predictor_factory requires selection_mode 'topk' or 'random'")
    started = time.time()
    spec = resolve_oracle_spec(config.oracle) if isinstance(config.oracle, str) else config.oracle
    oracle = build_oracle(spec)
    state = _LoopState(config, spec, oracle)
    writer = None
    if out_dir is not None:
        manifest = {
            "schema": "quadopt-run-v1",
            "method": config.method,
            "seed": config.seed,
            "oracle": spec_to_dict(spec),
            "config": config_to_dict(config),
        }
        writer = _RunWriter(out_dir, manifest, fresh=True)

    _build_initial_dataset(state)
    _sample_probe(state)
    if writer is not None:
        writer.append_records(state.dataset.records)
        writer.save_state(_state_dict(state, finished=False))

    return _drive_loop(state, writer, started, stop_after_iterations, predictor_factory)


def _drive_loop(state, writer, started, stop_after_iterations, predictor_factory) -> RunResult:
    config = state.config
    t = state.completed
    while state.ledger.used < config.t_max:
        t += 1
        records = _run_iteration(state, t, predictor_factory)
        _persist_iteration(state, writer, records)
        if stop_after_iterations is not None and t >= stop_after_iterations:
            return _finish(state, writer, started, finished=state.ledger.used >= config.t_max)
    return _finish(state, writer, started, finished=True)


def persist_run(result: RunResult, spec: OracleSpec, config_dict: dict, out_dir: str) -> RunResult:
    """Write the standard artifact set for an already-completed run."""
    manifest = {
        "schema": "quadopt-run-v1",
        "method": result.method,
        "seed": result.seed,
        "oracle": spec_to_dict(spec),
        "config": config_dict,
    }
    writer = _RunWriter(out_dir, manifest, fresh=True)
    writer.append_records(result.dataset.records)
    for log in result.iterations:
        writer.append_iteration(log)
    best = result.best
    writer.save_summary(
        {
            "method": result.method,
            "seed": result.seed,
            "best_aggregate": best.aggregate,
            "best_criteria": [float(v) for v in best.criteria],
            "best_design": best.design.key(),
            "best_layout": best.layout_text,
            "simulations": len(result.dataset),
            "iterations": len(result.iterations),
            "wall_clock": result.wall_clock,
            "finished": result.finished,
        }
    )
    writer.save_state(
        {
            "schema": "quadopt-state-v1",
            "method": result.method,
            "seed": result.seed,
            "completed_iterations": len(result.iterations),
            "finished": result.finished,
            "cand_keys": [],
            "cand_scores": [],
            "wall_clock": result.wall_clock,
        }
    )
    result.out_dir = out_dir
    return result


def load_result(out_dir: str) -> RunResult:
    """Rebuild a RunResult from a finished run directory."""
    manifest = _read_json(os.path.join(out_dir, MANIFEST_NAME))
    state_data = _read_json(os.path.join(out_dir, STATE_NAME))
    dataset = _load_evals(os.path.join(out_dir, EVALS_NAME))
    iterations = _load_iterations(os.path.join(out_dir, CONSISTENCY_NAME))
    return RunResult(
        method=manifest["method"],
        seed=manifest["seed"],
        best=dataset.best(),
        dataset=dataset,
        iterations=iterations,
        wall_clock=float(state_data.get("wall_clock", 0.0)),
        finished=bool(state_data.get("finished", False)),
        out_dir=out_dir,
    )


def resume(out_dir: str, predictor_factory=None) -> RunResult:
    """Continue an interrupted run to its full budget.

    Produces evaluation and consistency logs identical to an uninterrupted
    run with the same seed. Resuming a finished run is a no-op returning
    the stored result.
    """
    started = time.time()
    manifest = _read_json(os.path.join(out_dir, MANIFEST_NAME))
    state_path = os.path.join(out_dir, STATE_NAME)
    if not os.path.exists(state_path):
        raise StateError(f"no run state at {state_path}")
    state_data = _read_json(state_path)
    if manifest.get("seed") != state_data.get("seed"):
        raise StateError(
            f"seed mismatch: manifest {manifest.get('seed')} vs state {state_data.get('seed')}"
        )
    if manifest.get("method") != state_data.get("method"):
        raise StateError("method mismatch between manifest and state")

    config = config_from_dict(manifest["config"])
    if state_data.get("finished"):
        return load_result(out_dir)

    spec = resolve_oracle_spec(config.oracle) if isinstance(config.oracle, str) else config.oracle
    oracle = build_oracle(spec)
    state = _LoopState(config, spec, oracle)
    state.completed = int(state_data["completed_iterations"])
    state.wall_clock = float(state_data.get("wall_clock", 0.0))

    dataset = _load_evals(os.path.join(out_dir, EVALS_NAME))
    for rec in dataset.records:
        if rec.iteration > state.completed:
            raise StateError(
                f"evaluation log contains iteration {rec.iteration} beyond "
                f"completed {state.completed}"
            )
    state.dataset = dataset
    state.ledger.spend(len(dataset.records))
    state.iterations = _load_iterations(os.path.join(out_dir, CONSISTENCY_NAME))
    if len(state.iterations) != state.completed:
        raise StateError(
            f"consistency log has {len(state.iterations)} rows, expected {state.completed}"
        )
    if state_data["cand_keys"]:
        mats = np.stack([DesignMatrix.from_key(k).cells for k in state_data["cand_keys"]])
        state.prev_cand_mats = mats
        state.prev_cand_scores = np.array(state_data["cand_scores"], dtype=np.float64)
        state.prev_cand_keys = list(state_data["cand_keys"])
    _sample_probe(state)

    writer = _RunWriter(out_dir, manifest, fresh=False)
    return _drive_loop(state, writer, started, None, predictor_factory)


def _read_json(path: str) -> dict:
    if not os.path.exists(path):
        raise StateError(f"missing file {path}")
    with open(path, encoding="utf-8") as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as err:
            raise StateError(f"corrupt JSON in {path}: {err}") from None


def _load_evals(path: str) -> Dataset:
    if not os.path.exists(path):
        raise StateError(f"missing evaluation log {path}")
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


def _load_iterations(path: str) -> list[IterationLog]:
    if not os.path.exists(path):
        return []
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            out.append(
                IterationLog(
                    iteration=int(row[0]),
                    n=int(row[1]),
                    tau=float(row[2]),
                    tau_plus=float(row[3]),
                    r_p=int(row[4]),
                    r_r=int(row[5]),
                    best_aggregate=float(row[6]),
                    simulations=int(row[7]),
                )
            )
    return out
