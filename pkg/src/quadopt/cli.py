"""Command-line entry point.

Commands
    run         execute configured jobs x repeats, aggregate a summary table
    ablate      nmax sweep (predictor consistency per leaf cap) or qss/css
                module toggles against full PQS
    select-exp  masked-pool selection-efficiency experiment with box plot
    plot        convergence SVG (best-so-far vs simulations) from run dirs
    resume      continue an interrupted run directory

Configs are JSON; any value can be overridden on the command line with
dotted paths, e.g. ``--jobs.0.budget=500``. The output directory defaults
to $QUADOPT_OUT_DIR. Exit codes: 0 ok, 1 runtime error, 2 config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .baselines import (
    BaselineConfig,
    METHODS,
    run_method,
    selection_efficiency_experiment,
)
from .layout import reconstruct_stack
from .loop import load_result, resume as resume_run
from .oracle import (
    BudgetLedger,
    Dataset,
    build_oracle,
    evaluate,
    resolve_oracle_spec,
)
from .predictor import TrainConfig, train
from .report import box_plot_svg, convergence_svg, summarize_runs, write_summary
from .search import random_stack
from .seeding import generator
from .selection import kendall_tau

__all__ = ["main"]


class ConfigError(Exception):
    pass


def _load_config(path: str, overrides: list[str]) -> dict:
    if not path:
        raise ConfigError("--config is required")
    try:
        with open(path, encoding="utf-8") as fh:
            config = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}") from None
    for item in overrides:
        _apply_override(config, item)
    return config


def _apply_override(config: dict, item: str) -> None:
    if not item.startswith("--") or "=" not in item:
        raise ConfigError(f"override must look like --a.b.c=value: {item!r}")
    dotted, raw = item[2:].split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = config
    parts = dotted.split(".")
    for i, part in enumerate(parts):
        last = i == len(parts) - 1
        key: object = int(part) if isinstance(node, list) else part
        try:
            if last:
                node[key] = value
            else:
                node = node[key]
        except (KeyError, IndexError, TypeError, ValueError):
            raise ConfigError(f"override path not found in config: {dotted!r}") from None


def _out_dir(args) -> str:
    out = args.out_dir or os.environ.get("QUADOPT_OUT_DIR")
    if not out:
        raise ConfigError("no output directory: pass --out-dir or set QUADOPT_OUT_DIR")
    os.makedirs(out, exist_ok=True)
    return out


def _job_seed(master: int, repeat: int) -> int:
    # shared across jobs so repeats are paired between methods
    return int(generator(master, f"rep/{repeat}").integers(2**31))


# ---------------------------------------------------------------------------
# run


def cmd_run(args) -> int:
    config = _load_config(args.config, args.overrides)
    out_dir = _out_dir(args)
    master = args.seed if args.seed is not None else int(config.get("seed", 0))
    repeats = int(config.get("repeats", 1))
    if repeats < 1:
        raise ConfigError("repeats must be >= 1")
    jobs = config.get("jobs")
    if not jobs:
        raise ConfigError("config has no jobs")
    seen_ids = set()
    tasks = []
    for job in jobs:
        job_id = job.get("id") or job.get("method")
        if not job_id:
            raise ConfigError("job missing id/method")
        if job_id in seen_ids:
            raise ConfigError(f"duplicate job id {job_id!r}")
        seen_ids.add(job_id)
        method = job.get("method")
        if method not in METHODS:
            raise ConfigError(
                f"unknown method {method!r} in job {job_id!r}; know {sorted(METHODS)}"
            )
        for rep in range(repeats):
            tasks.append((job_id, job, rep))

    def run_task(task):
        job_id, job, rep = task
        run_dir = os.path.join(out_dir, job_id, f"rep{rep:03d}")
        summary_path = os.path.join(run_dir, "summary.json")
        if not args.force and os.path.exists(summary_path):
            with open(summary_path, encoding="utf-8") as fh:
                if json.load(fh).get("finished"):
                    return job_id, load_result(run_dir)
        bc = BaselineConfig(
            method=job["method"],
            oracle=job.get("oracle", "synth-hga"),
            budget=int(job.get("budget", 1000)),
            init_size=int(job.get("init_size", 300)),
            seed=_job_seed(master, rep),
            params=job.get("params", {}),
        )
        return job_id, run_method(bc, out_dir=run_dir)

    if args.jobs > 1:
        with ThreadPoolExecutor(max_workers=args.jobs) as pool:
            outcomes = list(pool.map(run_task, tasks))
    else:
        outcomes = [run_task(t) for t in tasks]

    by_job: dict[str, list] = {}
    for job_id, result in outcomes:
        by_job.setdefault(job_id, []).append(result)
    rows = summarize_runs(by_job)
    paths = write_summary(rows, out_dir)
    print(open(paths["txt"], encoding="utf-8").read(), end="")
    return 0


# ---------------------------------------------------------------------------
# ablate


def cmd_ablate(args) -> int:
    config = _load_config(args.config, args.overrides)
    out_dir = _out_dir(args)
    master = args.seed if args.seed is not None else int(config.get("seed", 0))
    if args.kind == "nmax":
        return _ablate_nmax(config, out_dir, master)
    return _ablate_modules(args.kind, config, out_dir, master)


def _ablate_nmax(config: dict, out_dir: str, master: int) -> int:
    oracle_name = config.get("oracle", "synth-hga")
    n_values = config.get("n_values", [16, 32, 64])
    sample_size = int(config.get("sample_size", 1000))
    refits = int(config.get("refits", 10))
    train_size = int(config.get("train_size", 600))
    eval_size = int(config.get("eval_size", 200))
    lam = float(config.get("ridge_lambda", 0.1))
    if train_size + eval_size > sample_size:
        raise ConfigError("train_size + eval_size must fit in sample_size")

    spec = resolve_oracle_spec(oracle_name)
    oracle = build_oracle(spec)
    rows = []
    for n_max in n_values:
        ledger = BudgetLedger(sample_size)
        dataset = Dataset()
        rng = generator(master, f"nmax-sample/{n_max}")
        guard = 0
        while len(dataset) < sample_size:
            guard += 1
            if guard > 10_000 * sample_size:
                raise RuntimeError("sampler failed to find distinct designs")
            stack = random_stack(spec.rows, spec.cols, spec.layers, n_max, rng)
            design = reconstruct_stack(stack)
            if design in dataset:
                continue
            evaluate(oracle, design, ledger, dataset, iteration=0)
        mats = np.stack([rec.design.cells for rec in dataset.records])
        aggs = np.array([rec.aggregate for rec in dataset.records])

        taus = []
        for j in range(refits):
            perm = generator(master, f"nmax-refit/{n_max}/{j}").permutation(sample_size)
            tr = perm[:train_size]
            ev = perm[train_size : train_size + eval_size]
            sub = Dataset()
            for i in tr:
                sub.append(dataset.records[int(i)])
            model = train(sub, TrainConfig(ridge_lambda=lam))
            predicted = model.predict_aggregate_batch(mats[ev])
            taus.append(kendall_tau(predicted, aggs[ev]).tau)
        rows.append(
            {
                "n_max": int(n_max),
                "ktau_mean": float(np.mean(taus)),
                "ktau_std": float(np.std(taus)),
                "refits": refits,
                "samples": sample_size,
            }
        )

    budget = config.get("budget")
    if budget:
        repeats = int(config.get("repeats", 1))
        for row in rows:
            results = []
            for rep in range(repeats):
                bc = BaselineConfig(
                    method="pqs",
                    oracle=oracle_name,
                    budget=int(budget),
                    init_size=int(config.get("init_size", 300)),
                    seed=_job_seed(master, rep),
                    params={**config.get("params", {}), "n_max": row["n_max"]},
                )
                results.append(run_method(bc))
            aggs = [r.best.aggregate for r in results]
            row["agg_median"] = float(np.median(aggs))

    means = [row["ktau_mean"] for row in rows]
    trend = all(b <= a + 1e-12 for a, b in zip(means, means[1:]))
    for row in rows:
        row["ktau_trend_nonincreasing"] = trend
    write_summary(rows, out_dir, stem="ablate_nmax")
    for row in rows:
        print(
            f"N={row['n_max']:>4}  ktau = {row['ktau_mean']:.4f} +- {row['ktau_std']:.4f}"
            + (f"  agg_median = {row['agg_median']:.4f}" if "agg_median" in row else "")
        )
    print(f"ktau non-increasing in N: {trend}")
    return 0


_ABLATION_VARIANTS = {
    # (QSS, CSS) toggles, Table-5-style rows
    "surrogate-rs": "neither",
    "pqs-no-qss": "css-only",
    "pqs-topk-only": "qss-only",
    "pqs": "both",
}


def _ablate_modules(kind: str, config: dict, out_dir: str, master: int) -> int:
    oracle_name = config.get("oracle", "synth-hga")
    budget = int(config.get("budget", 1000))
    init_size = int(config.get("init_size", 300))
    repeats = int(config.get("repeats", 3))
    params = config.get("params", {})
    by_method: dict[str, list] = {}
    for method in _ABLATION_VARIANTS:
        results = []
        for rep in range(repeats):
            bc = BaselineConfig(
                method=method,
                oracle=oracle_name,
                budget=budget,
                init_size=init_size,
                seed=_job_seed(master, rep),
                params=params,
            )
            results.append(run_method(bc, out_dir=os.path.join(out_dir, method, f"rep{rep:03d}")))
        by_method[method] = results
    rows = summarize_runs(by_method)
    for row in rows:
        row["modules"] = _ABLATION_VARIANTS[row["method"]]
    write_summary(rows, out_dir, stem=f"ablate_{kind}")
    for row in rows:
        print(f"{row['method']:<16} ({row['modules']:<9}) agg_median = {row['agg_median']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# select-exp


def cmd_select_exp(args) -> int:
    config = _load_config(args.config, args.overrides)
    out_dir = _out_dir(args)
    master = args.seed if args.seed is not None else int(config.get("seed", 0))
    strategies = tuple(config.get("strategies", ["css", "topk", "random"]))
    results = selection_efficiency_experiment(
        config.get("oracle", "synth-hga"),
        pool_size=int(config.get("pool_size", 1000)),
        batch=int(config.get("batch", 20)),
        strategies=strategies,
        repeats=int(config.get("repeats", 20)),
        seed=master,
        sample_cap=int(config.get("sample_cap", 32)),
        ensemble_count=int(config.get("ensemble_count", 4)),
    )
    import csv as _csv

    for strategy, rounds in results.items():
        path = os.path.join(out_dir, f"selection_rounds_{strategy}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["repeat", "rounds"])
            for i, r in enumerate(rounds):
                writer.writerow([i, r])
    box_plot_svg(
        {s: [float(v) for v in r] for s, r in results.items()},
        os.path.join(out_dir, "selection_rounds.svg"),
        title="rounds to optimum by selection strategy",
    )
    summary = {
        s: {"median": float(np.median(r)), "mean": float(np.mean(r))}
        for s, r in results.items()
    }
    with open(os.path.join(out_dir, "selection_summary.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    for s, stats in summary.items():
        print(f"{s:<8} median rounds = {stats['median']:.1f}, mean = {stats['mean']:.2f}")
    return 0


# ---------------------------------------------------------------------------
# plot


def cmd_plot(args) -> int:
    curves: dict[str, list[tuple[int, float]]] = {}
    x_max = 0
    for run_dir in args.run_dirs:
        manifest_path = os.path.join(run_dir, "manifest.json")
        evals_path = os.path.join(run_dir, "evals.csv")
        if not (os.path.exists(manifest_path) and os.path.exists(evals_path)):
            raise ConfigError(f"{run_dir} is not a run directory")
        with open(manifest_path, encoding="utf-8") as fh:
            manifest = json.load(fh)
        cfg = manifest.get("config", {})
        budget = int(cfg.get("t_max") or cfg.get("budget") or 0)
        label = manifest.get("method", os.path.basename(run_dir))
        if label in curves:
            label = f"{label}:{os.path.basename(os.path.dirname(run_dir))}/{os.path.basename(run_dir)}"
        pts = []
        best = None
        import csv as _csv

        with open(evals_path, newline="", encoding="utf-8") as fh:
            reader = _csv.reader(fh)
            next(reader)
            for i, row in enumerate(reader, start=1):
                agg = float(row[-1])
                best = agg if best is None else max(best, agg)
                pts.append((i, best))
        curves[label] = pts
        x_max = max(x_max, budget, len(pts))
    convergence_svg(curves, args.out, x_max=x_max)
    print(f"wrote {args.out} ({len(curves)} curves, x max {x_max})")
    return 0


# ---------------------------------------------------------------------------
# resume


def cmd_resume(args) -> int:
    result = resume_run(args.run_dir)
    print(
        f"resumed {result.method} seed {result.seed}: best aggregate "
        f"{result.best.aggregate:.4f} after {len(result.dataset)} simulations"
    )
    return 0


# ---------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="quadopt", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        if config_required:
            p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--seed", type=int, default=None, help="master seed override")
        p.add_argument("--out-dir", default=None, help="output directory (or $QUADOPT_OUT_DIR)")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers")
        p.add_argument("--force", action="store_true", help="re-run completed outputs")
        p.add_argument(
            "overrides", nargs="*", default=[],
            help="config overrides as --dotted.path=value",
        )

    common(sub.add_parser("run", help="run configured jobs and summarize"))

    ablate = sub.add_parser("ablate", help="run an ablation study")
    ablate.add_argument("kind", choices=["nmax", "qss", "css"])
    common(ablate)

    common(sub.add_parser("select-exp", help="selection-efficiency experiment"))

    plot = sub.add_parser("plot", help="convergence plot from run directories")
    plot.add_argument("run_dirs", nargs="+", help="run directories with evals.csv")
    plot.add_argument("--out", required=True, help="output SVG path")

    res = sub.add_parser("resume", help="resume an interrupted run")
    res.add_argument("run_dir", help="run directory to resume")
    return parser


_HANDLERS = {
    "run": cmd_run,
    "ablate": cmd_ablate,
    "select-exp": cmd_select_exp,
    "plot": cmd_plot,
    "resume": cmd_resume,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args, extra = parser.parse_known_args(argv)
    if hasattr(args, "overrides"):
        args.overrides = list(args.overrides) + extra
    elif extra:
        parser.error(f"unrecognized arguments: {' '.join(extra)}")
    try:
        return _HANDLERS[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (KeyError, ValueError) as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
