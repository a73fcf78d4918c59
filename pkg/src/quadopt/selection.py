"""Consistency-based sample selection.

Kendall's tau between two models' scores of the same candidates gauges how
much the surrogate's ranking can be trusted; the selection then mixes
tau * R predictor-ranked picks with (1 - tau) * R fresh random designs.
Negative tau clamps to zero: an anti-correlated ranking earns no
exploitation budget.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ConsistencyReport",
    "SelectionPlan",
    "PoolExhaustedError",
    "kendall_tau",
    "split_counts",
    "mixed_select",
    "initial_tau",
]


class PoolExhaustedError(RuntimeError):
    """Not enough unevaluated designs to fill the selection."""


@dataclass(frozen=True)
class ConsistencyReport:
    tau: float
    n: int

    def __post_init__(self):
        if abs(self.tau) > 1.0 + 1e-12:
            raise ValueError(f"|tau| must be <= 1, got {self.tau}")
        if self.n < 2:
            raise ValueError("consistency needs n >= 2 candidates")

    @property
    def tau_plus(self) -> float:
        return min(max(self.tau, 0.0), 1.0)


@dataclass(frozen=True)
class SelectionPlan:
    total: int
    predictor_picks: int
    random_picks: int

    def __post_init__(self):
        if self.predictor_picks < 0 or self.random_picks < 0:
            raise ValueError("pick counts must be non-negative")
        if self.predictor_picks + self.random_picks != self.total:
            raise ValueError("picks must sum to total")


def kendall_tau(prev_scores, new_scores) -> ConsistencyReport:
    """tau = 2/(n(n-1)) * sum_{i<j} sign(d_prev) * sign(d_new).

    Tied pairs contribute zero through sign(0) = 0 (no tie correction).
    """
    prev = np.asarray(prev_scores, dtype=np.float64)
    new = np.asarray(new_scores, dtype=np.float64)
    if prev.shape != new.shape or prev.ndim != 1:
        raise ValueError(f"score lists must be equal-length vectors: {prev.shape} vs {new.shape}")
    n = prev.size
    if n < 2:
        raise ValueError("kendall_tau needs n >= 2")
    sign_prev = np.sign(prev[:, None] - prev[None, :])
    sign_new = np.sign(new[:, None] - new[None, :])
    iu = np.triu_indices(n, k=1)
    total = float((sign_prev[iu] * sign_new[iu]).sum())
    return ConsistencyReport(tau=2.0 * total / (n * (n - 1)), n=n)


def split_counts(tau: float, total: int) -> SelectionPlan:
    """Integer split of R picks: R_p = round-half-up(tau+ * R)."""
    if total < 1:
        raise ValueError("selection size must be >= 1")
    tau_plus = min(max(tau, 0.0), 1.0)
    r_p = int(np.floor(tau_plus * total + 0.5))
    return SelectionPlan(total=total, predictor_picks=r_p, random_picks=total - r_p)


def mixed_select(
    candidates,
    tau: float,
    total: int,
    rng: np.random.Generator,
    dataset,
    sampler,
    max_attempts_factor: int = 10_000,
):
    """Pick ``total`` distinct unevaluated designs.

    candidates: list of (pick, score) where pick carries a ``.matrix``
    design array and a ``.key`` string; the top R_p unevaluated candidates
    by score are taken, with deterministic tie-breaking on the key.
    sampler(rng) supplies fresh random picks for the remaining R_r.
    """
    plan = split_counts(tau, total)
    chosen: list = []
    chosen_keys: set[str] = set()

    pool = [
        (pick, score)
        for pick, score in candidates
        if not dataset.contains_key(pick.key)
    ]
    if len(pool) < total:
        raise PoolExhaustedError(
            f"candidate pool has {len(pool)} unevaluated designs, need >= {total}"
        )
    pool.sort(key=lambda it: (-it[1], it[0].key))
    for pick, _score in pool:
        if len(chosen) == plan.predictor_picks:
            break
        if pick.key in chosen_keys:
            continue
        chosen.append(pick)
        chosen_keys.add(pick.key)
    if len(chosen) < plan.predictor_picks:
        raise PoolExhaustedError("candidate pool collapsed under deduplication")

    attempts = 0
    limit = max_attempts_factor * max(1, plan.random_picks)
    while len(chosen) < total:
        if attempts >= limit:
            raise PoolExhaustedError(
                f"random sampler failed to find {plan.random_picks} fresh designs"
            )
        attempts += 1
        pick = sampler(rng)
        if pick.key in chosen_keys or dataset.contains_key(pick.key):
            continue
        chosen.append(pick)
        chosen_keys.add(pick.key)
    return chosen, plan


def initial_tau(dataset, train_config, probe_mats: np.ndarray, count: int = 4) -> ConsistencyReport:
    """Consistency at t=0: mean pairwise tau across a bootstrap ensemble.

    Each ensemble member scores the same probe designs; tau is averaged
    over all member pairs.
    """
    from .predictor import bootstrap_ensemble

    members = bootstrap_ensemble(dataset, train_config, count)
    scores = [m.predict_aggregate_batch(probe_mats) for m in members]
    n = probe_mats.shape[0]
    taus = []
    for i in range(len(members)):
        for j in range(i + 1, len(members)):
            taus.append(kendall_tau(scores[i], scores[j]).tau)
    return ConsistencyReport(tau=float(np.mean(taus)), n=n)
