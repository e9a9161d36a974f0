"""
Command-line front end

    python src/cli.py simulate --config sim.json --out runs/sim
    python src/cli.py fit --data runs/sim/dataset.csv --families binary --out runs/fit
    python src/cli.py eval --estimate runs/fit/estimate.json --truth runs/sim/truth.json
    python src/cli.py bench --config sim.json --reps 10 --out runs/bench

Exit codes: 0 ok, 2 config, 3 io, 4 peel, 5 fit. Every command that writes
artifacts finishes by writing manifest.json (atomically) listing them.
"""

import argparse
import asyncio
import json
import logging
import math
import os
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from __init__ import __version__
from config import (apply_overrides, load_config, resolve_threads, sim_config_from_dict,
                    tuning_policy_from_dict)
from dataset import read_dataset_csv, write_dataset_csv
from deconfound import DagEstimate, Method
from errors import ArtifactIOError, ConfigError, GampiError
from metrics import CSV_COLUMNS, evaluate
from pipeline import PipelineResult, Stage, run_pipeline
from simgen import simulate


logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
BENCH_METRICS = ("fpr", "fdr", "fscore", "mcc", "shd", "frobenius")


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    seed: int
    version: str = __version__
    timings: Dict[str, float] = field(default_factory=dict)
    artifacts: Dict[str, str] = field(default_factory=dict)
    failures: Dict[str, Any] = field(default_factory=dict)

    def add(self, name: str, path: Path) -> None:
        self.artifacts[name] = str(path)

    def write(self, out_dir: Path) -> Path:
        """Write manifest.json last, via a temporary file and an atomic rename."""
        missing = [name for name, path in self.artifacts.items() if not Path(path).exists()]
        if missing:
            raise ArtifactIOError(f"artifacts missing before manifest write: {missing}")
        target = out_dir / "manifest.json"
        try:
            fd, tmp = tempfile.mkstemp(dir=out_dir, prefix=".manifest.", suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as handle:
                json.dump(asdict(self), handle, indent=2)
                handle.write("\n")
            os.replace(tmp, target)
        except OSError as e:
            raise ArtifactIOError(f"cannot write manifest to {target}: {e}") from e
        logger.info(f"Wrote manifest {target}")
        return target


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ArtifactIOError(f"cannot create output directory {out}: {e}") from e
    return out


def _write_json(path: Path, data: Any) -> Path:
    try:
        path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}") from e
    logger.info(f"Wrote {path}")
    return path


def _read_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ArtifactIOError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}:{e.lineno}:{e.colno}: {e.msg}") from None


def _write_frame(path: Path, frame: pd.DataFrame) -> Path:
    try:
        frame.to_csv(path, index=False, na_rep="NA", lineterminator="\n")
    except OSError as e:
        raise ArtifactIOError(f"cannot write {path}: {e}") from e
    logger.info(f"Wrote {path}")
    return path


def _resolve(args: argparse.Namespace, overrides: Dict[str, Any]) -> Dict[str, Any]:
    overrides = {"seed": args.seed, "threads": args.threads, "out_dir": args.out, **overrides}
    return apply_overrides(load_config(args.config), overrides)


def tuning_table(result: PipelineResult) -> pd.DataFrame:
    frames = []
    for j, selection in enumerate(result.fidelity.selections):
        if selection is not None:
            frames.append(selection.to_frame().assign(stage="fidelity", node=j + 1))
    for method, estimate in result.estimates.items():
        for j, selection in sorted(estimate.selections.items()):
            frames.append(selection.to_frame().assign(stage=method, node=j + 1))
    if not frames:
        return pd.DataFrame(columns=["stage", "node", "tau", "k", "kprime", "score", "se"])
    table = pd.concat(frames, ignore_index=True)
    leading = ["stage", "node"]
    return table[leading + [c for c in table.columns if c not in leading]]


def cmd_simulate(args: argparse.Namespace) -> int:
    config = _resolve(args, {})
    out = _out_dir(config["out_dir"])
    sim = sim_config_from_dict(config["simulation"], config["seed"])
    manifest = RunManifest(command="simulate", config=config, seed=config["seed"])

    dataset, truth = simulate(sim)
    manifest.add("dataset", write_dataset_csv(dataset, out / "dataset.csv"))
    manifest.add("truth", _write_json(out / "truth.json", truth.to_json()))
    manifest.write(out)
    return 0


def cmd_fit(args: argparse.Namespace) -> int:
    config = _resolve(args, {"tuning.method": args.tuning, "tuning.ebic_gamma": args.ebic_gamma,
                             "tuning.folds": args.folds})
    out = _out_dir(config["out_dir"])
    threads = resolve_threads(None, config["threads"])
    policy = tuning_policy_from_dict(config["tuning"], config["seed"])
    try:
        method = Method.parse(args.method)
    except ValueError as e:
        raise ConfigError(str(e), "method") from None

    dataset = read_dataset_csv(args.data, args.families)
    result = run_pipeline(dataset, policy, method, Stage(args.stage), threads, args.max_peel_retries)

    manifest = RunManifest(command="fit", config={**config, "method": method.value, "stage": args.stage,
                                                  "families": args.families, "data": str(args.data)},
                           seed=config["seed"], timings=result.timings)
    fidelity_json = {**result.fidelity.to_json(), "peel_retries": result.peel_retries}
    manifest.add("fidelity", _write_json(out / "fidelity.json", fidelity_json))
    if Stage(args.stage) is not Stage.FIDELITY:
        manifest.add("tuning", _write_frame(out / "tuning.csv", tuning_table(result)))
    if result.supergraph is not None:
        manifest.add("supergraph", _write_json(out / "supergraph.json", result.supergraph.to_json()))
    estimate = result.estimate
    if estimate is not None:
        manifest.add("estimate", _write_json(out / "estimate.json", estimate.to_json()))
        if args.residuals:
            columns = [f"h{j + 1}" for j in range(estimate.p)]
            manifest.add("residuals", _write_frame(out / "residuals.csv",
                                                   pd.DataFrame(estimate.residuals, columns=columns)))
        manifest.failures = {str(j + 1): reason for j, reason in sorted(estimate.failures.items())}
    manifest.config["warnings"] = result.warnings
    manifest.write(out)

    if manifest.failures:
        logger.error(f"{len(manifest.failures)} nodes failed to fit: {sorted(manifest.failures)}")
        return 5
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    estimate = DagEstimate.from_json(_read_json(args.estimate))
    truth = DagEstimate.from_json(_read_json(args.truth))
    if estimate.p != truth.p:
        raise ConfigError(f"estimate has p={estimate.p} but truth has p={truth.p}", "p")
    report = evaluate(estimate.edges, truth.edges, truth.p, estimate.U, truth.U)
    print(report.table())
    if args.out:
        out = _out_dir(args.out)
        _write_json(out / "metrics.json", report.to_dict())
        try:
            (out / "metrics.csv").write_text(report.to_csv(), encoding="utf-8")
        except OSError as e:
            raise ArtifactIOError(f"cannot write metrics CSV: {e}") from e
    return 0


def replicate_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([master_seed, index]).generate_state(1)[0])


def run_replicate(index: int, seed: int, simulation: Dict[str, Any], tuning: Dict[str, Any],
                  methods: Sequence[str]) -> List[Dict[str, Any]]:
    """simulate -> fit -> eval for one replicate; one row per method."""
    rows = []
    try:
        dataset, truth = simulate(sim_config_from_dict(simulation, seed))
        result = run_pipeline(dataset, tuning_policy_from_dict(tuning, seed), methods, Stage.FULL, threads=1)
    except GampiError as e:
        logger.warning(f"Replicate {index} failed: {e}")
        return [{"replicate": index, "seed": seed, "method": m, "failed": True, "error": str(e)} for m in methods]

    for method in methods:
        estimate = result.estimates[Method.parse(method).value]
        report = evaluate(estimate.edges, truth.edges, truth.p, estimate.U, truth.U)
        failed = bool(estimate.failures)
        rows.append({"replicate": index, "seed": seed, "method": method, "failed": failed,
                     "error": "; ".join(estimate.failures.values()) if failed else None,
                     **{metric: getattr(report, metric) for metric in CSV_COLUMNS}})
    return rows


async def run_bench(simulation: Dict[str, Any], tuning: Dict[str, Any], methods: Sequence[str],
                    reps: int, master_seed: int, threads: int) -> pd.DataFrame:
    """Dispatch replicates onto a worker pool and collect their rows in replicate order."""
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=threads) as pool:
        tasks = [
            loop.run_in_executor(pool, run_replicate, i, replicate_seed(master_seed, i), simulation, tuning, methods)
            for i in range(reps)
        ]
        results = await asyncio.gather(*tasks)
    return pd.DataFrame([row for rows in results for row in rows])


def _mean_se(values: pd.Series) -> str:
    values = pd.to_numeric(values, errors="coerce").dropna()
    if values.empty:
        return "NA"
    se = float(values.std(ddof=1) / math.sqrt(len(values))) if len(values) > 1 else 0.0
    return f"{values.mean():.2f} ({se:.2f})"


def summarize_bench(replicates: pd.DataFrame, methods: Sequence[str]) -> pd.DataFrame:
    """One row per method with "mean (SE)" cells over successful replicates."""
    rows = []
    for method in methods:
        subset = replicates[replicates["method"] == method]
        ok = subset[~subset["failed"].astype(bool)]
        row = {"method": method, "reps": len(subset), "failed": int(subset["failed"].astype(bool).sum())}
        for metric in BENCH_METRICS:
            row[metric] = _mean_se(ok[metric]) if metric in ok else "NA"
        rows.append(row)
    return pd.DataFrame(rows)


def cmd_bench(args: argparse.Namespace) -> int:
    overrides = {"bench.reps": args.reps, "tuning.method": args.tuning,
                 "bench.methods": args.methods.split(",") if args.methods else None}
    config = _resolve(args, overrides)
    out = _out_dir(config["out_dir"])
    threads = resolve_threads(None, config["threads"])
    methods = [Method.parse(m).value for m in config["bench"]["methods"]]
    # fail fast on bad sections before any replicate runs
    sim_config_from_dict(config["simulation"], config["seed"])
    tuning_policy_from_dict(config["tuning"], config["seed"])

    replicates = asyncio.run(run_bench(config["simulation"], config["tuning"], methods,
                                       config["bench"]["reps"], config["seed"], threads))
    table = summarize_bench(replicates, methods)
    print(table.to_string(index=False))

    manifest = RunManifest(command="bench", config=config, seed=config["seed"])
    manifest.add("replicates", _write_frame(out / "replicates.csv", replicates))
    manifest.add("bench", _write_frame(out / "bench.csv", table))
    manifest.failures = {m: int(c) for m, c in zip(table["method"], table["failed"]) if c}
    manifest.write(out)
    if (table["failed"] == table["reps"]).all():
        logger.error("every replicate failed")
        return 5
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gampi", description="Causal discovery with instruments and confounders")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="master seed (overrides config)")
    common.add_argument("--threads", type=int, help="worker pool size (default: $GAMPI_THREADS or 1)")
    common.add_argument("--out", help="output directory (overrides config out_dir)")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("--quiet", action="store_true", help="warnings and errors only")

    commands = parser.add_subparsers(dest="command", required=True)

    sim = commands.add_parser("simulate", parents=[common], help="generate a dataset and its ground truth")
    sim.set_defaults(handler=cmd_simulate)

    fit = commands.add_parser("fit", parents=[common], help="fit fidelity, peel and deconfound")
    fit.add_argument("--data", required=True, help="dataset CSV (y1..yp,x1..xq)")
    fit.add_argument("--families", required=True,
                     help="one family for all columns or a comma list (gaussian, bernoulli, poisson)")
    fit.add_argument("--method", default="dri", choices=[m.value for m in Method])
    fit.add_argument("--tuning", choices=["ebic", "cv"])
    fit.add_argument("--stage", default="full", choices=[s.value for s in Stage])
    fit.add_argument("--ebic-gamma", dest="ebic_gamma", type=float)
    fit.add_argument("--folds", type=int)
    fit.add_argument("--max-peel-retries", dest="max_peel_retries", type=int, default=3)
    fit.add_argument("--residuals", action="store_true", help="also write residuals.csv")
    fit.set_defaults(handler=cmd_fit)

    ev = commands.add_parser("eval", parents=[common], help="score an estimate against the truth")
    ev.add_argument("--estimate", required=True)
    ev.add_argument("--truth", required=True)
    ev.set_defaults(handler=cmd_eval)

    bench = commands.add_parser("bench", parents=[common], help="replicated simulate/fit/eval")
    bench.add_argument("--reps", type=int)
    bench.add_argument("--methods", help="comma list of dri, dps, none")
    bench.add_argument("--tuning", choices=["ebic", "cv"])
    bench.set_defaults(handler=cmd_bench)
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return args.handler(args)
    except GampiError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except ValueError as e:
        logger.error(f"invalid input: {e}")
        return ConfigError.exit_code


if __name__ == '__main__':
    sys.exit(main())
