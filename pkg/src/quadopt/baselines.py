"""Comparison optimizers and the selection-efficiency experiment.

All methods share the oracle, ledger, and dataset machinery, and every
method that uses an initial dataset draws the same one for a given master
seed (paired-seed discipline), so per-seed differences between methods are
attributable to the methods themselves.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .layout import DesignMatrix, reconstruct_stack
from .loop import (
    IterationLog,
    RunConfig,
    RunResult,
    build_initial_dataset,
    persist_run,
    run_pqs,
)
from .oracle import (
    BudgetLedger,
    Dataset,
    EvaluationRecord,
    aggregate_objective,
    build_oracle,
    evaluate,
    evaluate_batch,
    resolve_oracle_spec,
)
from .predictor import TrainConfig, train
from .search import CapSchedule, SearchConfig, grow_cap, random_pixel_design, random_stack
from .seeding import generator
from .selection import initial_tau, kendall_tau, split_counts

__all__ = [
    "BaselineConfig",
    "METHODS",
    "run_method",
    "random_search",
    "surrogate_rs",
    "surrogate_ga",
    "ga_evolve",
    "selection_efficiency_experiment",
]


@dataclass(frozen=True)
class BaselineConfig:
    method: str
    oracle: str = "synth-hga"
    budget: int = 1000
    init_size: int = 300
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.budget < 1:
            raise ValueError("budget must be >= 1")


def _resolve(oracle_spec):
    return resolve_oracle_spec(oracle_spec) if isinstance(oracle_spec, str) else oracle_spec


def random_search(oracle_spec, budget: int, seed: int, out_dir: str | None = None) -> RunResult:
    """Evaluate ``budget`` independent uniform pixel designs.

    Draws are with replacement; a repeated design is a cache hit and
    spends no budget, so the ledger counts distinct designs only.
    """
    started = time.time()
    spec = _resolve(oracle_spec)
    oracle = build_oracle(spec)
    ledger = BudgetLedger(budget)
    dataset = Dataset()
    rng = generator(seed, "rs")
    iterations = []
    for draw in range(1, budget + 1):
        design = DesignMatrix(random_pixel_design(spec.rows, spec.cols, spec.layers, rng))
        evaluate(oracle, design, ledger, dataset, iteration=draw)
        iterations.append(
            IterationLog(
                iteration=draw, n=0, tau=0.0, tau_plus=0.0, r_p=0, r_r=1,
                best_aggregate=dataset.best().aggregate, simulations=ledger.used,
            )
        )
    result = RunResult(
        method="rs", seed=seed, best=dataset.best(), dataset=dataset,
        iterations=iterations, wall_clock=time.time() - started, finished=True,
    )
    if out_dir is not None:
        persist_run(result, spec, {"method": "rs", "budget": budget, "seed": seed}, out_dir)
    return result


def surrogate_rs(
    oracle_spec,
    budget: int,
    seed: int,
    init_size: int = 300,
    pool_size: int = 20000,
    k_top: int = 10,
    train_config: TrainConfig | None = None,
    out_dir: str | None = None,
    predictor_factory=None,
) -> RunResult:
    """Surrogate random search: Top-K of a scored random pool, retrain.

    Each iteration samples ``pool_size`` uniform pixel designs, simulates
    the predictor's Top-K picks, retrains, and repeats until the budget is
    spent. This is the outer loop with pixel candidates and pure Top-K
    selection.
    """
    config = RunConfig(
        oracle=oracle_spec,
        t_max=budget,
        init_size=init_size,
        r_select=k_top,
        search=SearchConfig(n_max=32, steps=1, k_top=k_top, seed=0),
        train=train_config or TrainConfig(),
        seed=seed,
        selection_mode="topk",
        candidate_source="pixel",
        pool_size=pool_size,
        method="surrogate-rs",
    )
    return run_pqs(config, out_dir=out_dir, predictor_factory=predictor_factory)


# ---------------------------------------------------------------------------
# genetic algorithm over flat bit genomes


def ga_evolve(
    fitness,
    genomes: np.ndarray,
    rng: np.random.Generator,
    tournament_size: int = 2,
    crossover_prob: float = 0.9,
    mutation_rate: float | None = None,
) -> np.ndarray:
    """One GA generation: tournament selection, uniform crossover, bit flips.

    fitness: (P,) array, higher is better. genomes: (P, G) 0/1 array.
    Default mutation rate is 1/G.
    """
    pop, length = genomes.shape
    if pop < 2:
        raise ValueError("population must be >= 2")
    if mutation_rate is None:
        mutation_rate = 1.0 / length
    out = np.empty_like(genomes)

    def pick_parent() -> int:
        best = int(rng.random() * pop)
        for _ in range(tournament_size - 1):
            rival = int(rng.random() * pop)
            if fitness[rival] > fitness[best]:
                best = rival
        return best

    for i in range(pop):
        a = pick_parent()
        b = pick_parent()
        if rng.random() < crossover_prob:
            mask = rng.random(length) < 0.5
            child = np.where(mask, genomes[a], genomes[b])
        else:
            child = genomes[a].copy()
        flips = rng.random(length) < mutation_rate
        out[i] = np.where(flips, 1 - child, child)
    return out


def surrogate_ga(
    oracle_spec,
    budget: int,
    seed: int,
    init_size: int = 300,
    population: int = 50,
    tournament_size: int = 2,
    crossover_prob: float = 0.9,
    mutation_rate: float | None = None,
    k_top: int = 10,
    init_cap: int = 8,
    train_config: TrainConfig | None = None,
    out_dir: str | None = None,
    predictor_factory=None,
) -> RunResult:
    """Surrogate-assisted GA: predictor fitness, Top-K simulated per generation."""
    started = time.time()
    spec = _resolve(oracle_spec)
    oracle = build_oracle(spec)
    ledger = BudgetLedger(budget)
    dataset = Dataset()
    train_config = train_config or TrainConfig()
    if mutation_rate is None:
        mutation_rate = 1.0 / (spec.rows * spec.cols)
    genome_len = spec.rows * spec.cols * spec.layers

    build_initial_dataset(spec, oracle, ledger, dataset, init_size, init_cap, seed)

    rng = generator(seed, "ga")
    genomes = (rng.random((population, genome_len)) < 0.5).astype(np.int8)
    iterations = []
    gen = 0
    while ledger.used < budget:
        gen += 1
        model = predictor_factory(dataset) if predictor_factory else train(dataset, train_config)
        mats = genomes.reshape(population, spec.layers, spec.rows, spec.cols)
        fitness = model.predict_aggregate_batch(mats)

        order = np.argsort(-fitness, kind="stable")
        picks: list[tuple[DesignMatrix, str]] = []
        pick_keys: set[str] = set()
        for idx in order:
            if len(picks) == min(k_top, ledger.remaining):
                break
            design = DesignMatrix(mats[int(idx)].copy())
            key = design.key()
            if dataset.contains_key(key) or key in pick_keys:
                continue
            picks.append((design, ""))
            pick_keys.add(key)
        evaluate_batch(oracle, picks, ledger, dataset, iteration=gen)

        genomes = ga_evolve(
            fitness, genomes, rng,
            tournament_size=tournament_size,
            crossover_prob=crossover_prob,
            mutation_rate=mutation_rate,
        )
        iterations.append(
            IterationLog(
                iteration=gen, n=population, tau=0.0, tau_plus=0.0,
                r_p=len(picks), r_r=0,
                best_aggregate=dataset.best().aggregate, simulations=ledger.used,
            )
        )
        if not picks:
            # population fully evaluated; spend the remainder on random
            # immigrants so the budget contract still holds
            guard = 0
            while ledger.remaining > 0:
                guard += 1
                if guard > 100_000:
                    raise RuntimeError("design space exhausted before budget")
                design = DesignMatrix(
                    random_pixel_design(spec.rows, spec.cols, spec.layers, rng)
                )
                if design in dataset:
                    continue
                evaluate(oracle, design, ledger, dataset, iteration=gen)
            break

    result = RunResult(
        method="surrogate-ga", seed=seed, best=dataset.best(), dataset=dataset,
        iterations=iterations, wall_clock=time.time() - started, finished=True,
    )
    if out_dir is not None:
        persist_run(
            result, spec,
            {"method": "surrogate-ga", "budget": budget, "seed": seed,
             "population": population, "mutation_rate": mutation_rate},
            out_dir,
        )
    return result


# ---------------------------------------------------------------------------
# selection-efficiency experiment (masked-pool protocol)


def selection_efficiency_experiment(
    oracle_spec,
    pool_size: int = 1000,
    batch: int = 20,
    strategies: tuple[str, ...] = ("css", "topk", "random"),
    repeats: int = 20,
    seed: int = 0,
    train_config: TrainConfig | None = None,
    sample_cap: int = 32,
    ensemble_count: int = 4,
    css_fixed_tau: float | None = None,
) -> dict[str, list[int]]:
    """Rounds-to-optimum comparison of batch selection strategies.

    A pool of ``pool_size`` designs is simulated once. Per repeat, one
    shared random split gives every strategy the same visible training
    half and masked half; each strategy then repeatedly picks ``batch``
    masked designs, unmasks them, and retrains, until the masked half's
    true best design has been unmasked. Returns rounds per repeat per
    strategy.
    """
    spec = _resolve(oracle_spec)
    oracle = build_oracle(spec)
    train_config = train_config or TrainConfig()
    if pool_size % 2:
        raise ValueError("pool_size must be even")

    ledger = BudgetLedger(pool_size)
    dataset = Dataset()
    rng = generator(seed, "pool")
    guard = 0
    while len(dataset) < pool_size:
        guard += 1
        if guard > 10_000 * pool_size:
            raise RuntimeError("pool sampler failed to find distinct designs")
        stack = random_stack(spec.rows, spec.cols, spec.layers, sample_cap, rng)
        design = reconstruct_stack(stack)
        if design in dataset:
            continue
        evaluate(oracle, design, ledger, dataset, iteration=0)
    mats = np.stack([rec.design.cells for rec in dataset.records])
    aggs = np.array([rec.aggregate for rec in dataset.records])
    criteria = np.stack([rec.criteria for rec in dataset.records])

    results: dict[str, list[int]] = {s: [] for s in strategies}
    half = pool_size // 2
    for rep in range(repeats):
        perm = generator(seed, f"split/{rep}").permutation(pool_size)
        visible = [int(i) for i in perm[:half]]
        masked = [int(i) for i in perm[half:]]
        best_masked = masked[int(np.argmax(aggs[masked]))]
        for strategy in strategies:
            srng = generator(seed, f"pick/{strategy}/{rep}")
            rounds = _rounds_to_find(
                strategy, mats, criteria, aggs, visible, masked, best_masked,
                batch, srng, train_config, ensemble_count, css_fixed_tau,
            )
            results[strategy].append(rounds)
    return results


def _fit_on(mats, criteria, idx, train_config):
    ds = Dataset()
    for i in idx:
        ds.append(
            EvaluationRecord(
                design=DesignMatrix(mats[i]),
                criteria=criteria[i],
                aggregate=aggregate_objective(criteria[i]),
                iteration=0,
            )
        )
    return train(ds, train_config), ds


def _rounds_to_find(
    strategy, mats, criteria, aggs, visible, masked, best_masked,
    batch, rng, train_config, ensemble_count, css_fixed_tau,
) -> int:
    visible = list(visible)
    masked = list(masked)
    model = dataset = prev_model = None
    if strategy in ("topk", "css"):
        model, dataset = _fit_on(mats, criteria, visible, train_config)
    rounds = 0
    while True:
        rounds += 1
        take = min(batch, len(masked))
        if strategy == "random":
            picks: list[int] = []
            while len(picks) < take:
                cand = masked[int(rng.random() * len(masked))]
                if cand not in picks:
                    picks.append(cand)
        elif strategy == "topk":
            scores = model.predict_aggregate_batch(mats[masked])
            order = np.argsort(-scores, kind="stable")[:take]
            picks = [masked[int(i)] for i in order]
        elif strategy == "css":
            if css_fixed_tau is not None:
                tau = css_fixed_tau
            elif prev_model is None:
                tau = initial_tau(dataset, train_config, mats[masked], count=ensemble_count).tau
            else:
                tau = kendall_tau(
                    prev_model.predict_aggregate_batch(mats[masked]),
                    model.predict_aggregate_batch(mats[masked]),
                ).tau
            plan = split_counts(tau, take)
            scores = model.predict_aggregate_batch(mats[masked])
            order = np.argsort(-scores, kind="stable")
            picks = [masked[int(i)] for i in order[: plan.predictor_picks]]
            while len(picks) < take:
                cand = masked[int(rng.random() * len(masked))]
                if cand not in picks:
                    picks.append(cand)
        else:
            raise ValueError(f"unknown strategy {strategy!r}")

        if best_masked in picks:
            return rounds
        visible.extend(picks)
        picked = set(picks)
        masked = [i for i in masked if i not in picked]
        if strategy in ("topk", "css"):
            prev_model = model
            model, dataset = _fit_on(mats, criteria, visible, train_config)


# ---------------------------------------------------------------------------
# method registry


def _pqs_variant(method: str, selection_mode: str, candidate_source: str):
    def runner(config: BaselineConfig, out_dir=None) -> RunResult:
        p = config.params
        search = SearchConfig(
            n_max=p.get("n_max", 32),
            steps=p.get("steps", 100_000),
            k_top=p.get("k_top", 10),
            seed=0,
        )
        schedule = CapSchedule(
            kind=p.get("schedule", "geometric"),
            start=p.get("cap_start", 8),
            limit=search.n_max,
        )
        run_config = RunConfig(
            oracle=config.oracle,
            t_max=config.budget,
            init_size=config.init_size,
            r_select=p.get("r_select", 10),
            search=search,
            train=TrainConfig(ridge_lambda=p.get("ridge_lambda", 0.1)),
            schedule=schedule,
            seed=config.seed,
            probe_size=p.get("probe_size", 50),
            refine_steps=p.get("refine_steps", 200),
            ensemble_count=p.get("ensemble_count", 4),
            selection_mode=selection_mode,
            candidate_source=candidate_source,
            pool_size=p.get("pool_size", 20000),
            method=method,
        )
        return run_pqs(run_config, out_dir=out_dir)

    return runner


def _run_rs(config: BaselineConfig, out_dir=None) -> RunResult:
    return random_search(config.oracle, config.budget, config.seed, out_dir=out_dir)


def _run_srs(config: BaselineConfig, out_dir=None) -> RunResult:
    p = config.params
    return surrogate_rs(
        config.oracle, config.budget, config.seed,
        init_size=config.init_size,
        pool_size=p.get("pool_size", 20000),
        k_top=p.get("k_top", 10),
        train_config=TrainConfig(ridge_lambda=p.get("ridge_lambda", 0.1)),
        out_dir=out_dir,
    )


def _run_sga(config: BaselineConfig, out_dir=None) -> RunResult:
    p = config.params
    return surrogate_ga(
        config.oracle, config.budget, config.seed,
        init_size=config.init_size,
        population=p.get("population", 50),
        tournament_size=p.get("tournament_size", 2),
        crossover_prob=p.get("crossover_prob", 0.9),
        mutation_rate=p.get("mutation_rate"),
        k_top=p.get("k_top", 10),
        init_cap=p.get("cap_start", 8),
        train_config=TrainConfig(ridge_lambda=p.get("ridge_lambda", 0.1)),
        out_dir=out_dir,
    )


METHODS = {
    "pqs": _pqs_variant("pqs", "css", "tree"),
    "pqs-topk-only": _pqs_variant("pqs-topk-only", "topk", "tree"),
    "pqs-random-only": _pqs_variant("pqs-random-only", "random", "tree"),
    "pqs-no-qss": _pqs_variant("pqs-no-qss", "css", "pixel"),
    "rs": _run_rs,
    "surrogate-rs": _run_srs,
    "surrogate-ga": _run_sga,
}


def run_method(config: BaselineConfig, out_dir: str | None = None) -> RunResult:
    if config.method not in METHODS:
        raise KeyError(f"unknown method {config.method!r}")
    return METHODS[config.method](config, out_dir=out_dir)
