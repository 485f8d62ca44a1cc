"""Command line: ``run`` a config, ``ablate`` a plan of variants x seeds, ``plot`` a run.

Exit codes: 0 success, 1 validation error, 2 training aborted on NaN, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .config import ConfigError, TrainConfig, load_config, merge, parse_config, to_dict
from .trainer import TrainingDiverged, run

logger = logging.getLogger("maemgan")

EXIT_OK, EXIT_INVALID, EXIT_DIVERGED, EXIT_IO = 0, 1, 2, 3

SUMMARY_METRICS = ("mode_coverage", "high_quality_ratio", "i_variance", "embedding_entropy_nats")


def _overrides(seed=None, steps=None) -> dict:
    out = {}
    if seed is not None:
        out["seed"] = seed
    if steps is not None:
        out["total_steps"] = steps
    return out


def cmd_run(config_path, out=None, seed=None, steps=None) -> int:
    try:
        config = load_config(config_path, _overrides(seed, steps))
    except FileNotFoundError as exc:
        logger.error("%s", exc)
        return EXIT_IO
    except ConfigError as exc:
        logger.error("invalid config: %s", exc)
        return EXIT_INVALID
    out_dir = Path(out) if out else Path("runs") / f"{Path(config_path).stem}-s{config.seed}"
    try:
        run(config, out_dir)
    except TrainingDiverged as exc:
        logger.error("%s; last losses in %s", exc, out_dir / "abort.json")
        return EXIT_DIVERGED
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return EXIT_IO
    logger.info("run written to %s", out_dir)
    return EXIT_OK


# -- ablation plans ----------------------------------------------------------------------


@dataclass
class ExperimentPlan:
    base: dict
    variants: list[tuple[str, dict]]
    seeds: list[int]
    out: Path = field(default_factory=lambda: Path("runs/ablation"))

    def __post_init__(self):
        names = [name for name, _ in self.variants]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ConfigError(f"duplicate variant names: {', '.join(dupes)}")
        if not self.variants:
            raise ConfigError("plan needs at least one variant")
        if not self.seeds:
            raise ConfigError("plan needs at least one seed")

    def config_for(self, variant: str, seed: int, steps: int | None = None) -> TrainConfig:
        overrides = dict(self.variants)[variant]
        data = merge(merge(self.base, overrides), {"seed": seed})
        if steps is not None:
            data["total_steps"] = steps
        return parse_config(data)


PLAN_KEYS = ("base", "base_config", "variants", "seeds", "out")


def load_plan(path) -> ExperimentPlan:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except FileNotFoundError:
        raise FileNotFoundError(f"plan file not found: {path}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    unknown = [k for k in data if k not in PLAN_KEYS]
    if unknown:
        raise ConfigError(f"unknown key {unknown[0]!r} in plan; valid keys: {', '.join(PLAN_KEYS)}")
    base = dict(data.get("base") or {})
    if "base_config" in data:
        base_file = (path.parent / data["base_config"])
        base = merge(yaml.safe_load(base_file.read_text()) or {}, base)
    raw = data.get("variants") or {}
    if isinstance(raw, dict):
        variants = [(str(k), dict(v or {})) for k, v in raw.items()]
    else:
        variants = [(str(v["name"]), dict(v.get("overrides") or {})) for v in raw]
    plan = ExperimentPlan(base, variants, [int(s) for s in data.get("seeds", [0])],
                          Path(data["out"]) if "out" in data else Path("runs") / path.stem)
    for name, _ in plan.variants:
        plan.config_for(name, plan.seeds[0])  # validate every variant before running anything
    return plan


def _run_one(job) -> dict:
    variant, seed, config, out_dir = job
    try:
        run(config, out_dir)
    except TrainingDiverged as exc:
        return {"variant": variant, "seed": seed, "status": "FAILED", "reason": str(exc)}
    except Exception as exc:  # noqa: BLE001 - one broken run must not stop the sweep
        return {"variant": variant, "seed": seed, "status": "FAILED", "reason": repr(exc)}
    lines = (Path(out_dir) / "metrics.jsonl").read_text().splitlines()
    final = json.loads(lines[-1]) if lines else None
    return {"variant": variant, "seed": seed, "status": "ok", "final": final}


def summarize(results: list[dict], variants: list[str]) -> list[dict]:
    """One row per variant: run counts plus mean and sample std of final metrics."""
    rows = []
    for name in variants:
        mine = [r for r in results if r["variant"] == name]
        ok = [r["final"] for r in mine if r["status"] == "ok" and r["final"] is not None]
        row = {"variant": name, "runs": len(mine), "failed": len(mine) - len(ok),
               "status": "ok" if len(ok) == len(mine) else "FAILED"}
        for key in SUMMARY_METRICS:
            vals = np.array([f[key] for f in ok], dtype=np.float64)
            row[f"{key}_mean"] = float(vals.mean()) if len(vals) else float("nan")
            row[f"{key}_std"] = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        rows.append(row)
    return rows


def write_summary(rows: list[dict], out_dir: Path) -> tuple[Path, Path]:
    cols = ["variant", "runs", "failed", "status"] + [f"{k}_{s}" for k in SUMMARY_METRICS
                                                      for s in ("mean", "std")]
    tsv = out_dir / "summary.tsv"
    with open(tsv, "w") as fh:
        fh.write("\t".join(cols) + "\n")
        for r in rows:
            fh.write("\t".join(repr(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols) + "\n")
    header = ["variant", "runs", "failed", "status", *SUMMARY_METRICS]
    table = [header]
    for r in rows:
        table.append([r["variant"], str(r["runs"]), str(r["failed"]), r["status"]] +
                     [f"{r[k + '_mean']:.4f} ± {r[k + '_std']:.4f}" for k in SUMMARY_METRICS])
    widths = [max(len(row[i]) for row in table) for i in range(len(header))]
    txt = out_dir / "summary.txt"
    txt.write_text("".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() + "\n"
                           for row in table))
    return tsv, txt


def cmd_ablate(plan_path, out=None, steps=None, jobs: int = 1) -> int:
    try:
        plan = load_plan(plan_path)
    except FileNotFoundError as exc:
        logger.error("%s", exc)
        return EXIT_IO
    except ConfigError as exc:
        logger.error("invalid plan: %s", exc)
        return EXIT_INVALID
    root = Path(out) if out else plan.out
    root.mkdir(parents=True, exist_ok=True)
    jobs_list = [(name, seed, plan.config_for(name, seed, steps), root / name / f"seed_{seed}")
                 for name, _ in plan.variants for seed in plan.seeds]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, jobs_list))
    else:
        results = [_run_one(j) for j in jobs_list]
    with open(root / "runs.tsv", "w") as fh:
        fh.write("variant\tseed\tstatus\n")
        for r in results:
            fh.write(f"{r['variant']}\t{r['seed']}\t{r['status']}\n")
    tsv, txt = write_summary(summarize(results, [n for n, _ in plan.variants]), root)
    sys.stdout.write(txt.read_text())
    logger.info("summary written to %s", tsv)
    return EXIT_OK


def cmd_plot(run_dir) -> int:
    from .plotting import plot_run

    try:
        files = plot_run(run_dir)
    except FileNotFoundError as exc:
        logger.error("%s", exc)
        return EXIT_IO
    for f in files:
        logger.info("wrote %s", f)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="maemgan", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="train one configuration")
    p.add_argument("config")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int, help="override total_steps")
    p.add_argument("--out", help="run directory")

    p = sub.add_parser("ablate", help="run every variant x seed of a plan and summarize")
    p.add_argument("plan")
    p.add_argument("--steps", type=int, help="override total_steps for every run")
    p.add_argument("--out", help="output root")
    p.add_argument("--jobs", type=int, default=1, help="parallel runs")

    p = sub.add_parser("plot", help="draw samples.svg and metrics.svg for a run")
    p.add_argument("run_dir")

    sub.add_parser("default-config", help="print the default configuration")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    logger.setLevel(logging.INFO)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.seed, args.steps)
    if args.command == "ablate":
        return cmd_ablate(args.plan, args.out, args.steps, args.jobs)
    if args.command == "plot":
        return cmd_plot(args.run_dir)
    sys.stdout.write(yaml.safe_dump(to_dict(TrainConfig()), sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
