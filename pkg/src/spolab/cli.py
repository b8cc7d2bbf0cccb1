"""Command-line entry point: ``spolab <train|sched|analyze|compare|init-tracker>``."""
from __future__ import annotations

import argparse
import csv
import io
import json
import statistics
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from .analysis import (
    DivergenceError,
    VarianceRatioParams,
    degeneracy_prob,
    expected_dynamic_samples,
    information_loss_factor,
    validate,
    variance_ratio,
)
from .config import STREAMS, ConfigError, RunConfig, load_json, resolve_path, stream
from .envbed import PolicyTable, file_digest
from .schedsim import ScenarioConfig, run_scenario
from .tracker import SnapshotError, save_snapshot, snapshot
from .trainloop import SingleStreamRunner, metrics_csv, offline_init, read_metrics_csv, run_grpo

MANIFEST = "manifest.json"


def _write_manifest(path: Path, command: str, config: dict, config_path: str | None, seed: int, fixtures: dict) -> None:
    doc = {
        "tool": "spolab",
        "version": __version__,
        "command": command,
        "config_path": config_path,
        "config": config,
        "seeds": {"master": seed, "streams": STREAMS},
        "fixture_hashes": fixtures,
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _load_config_source(args) -> tuple[dict[str, Any], Path | None, str | None, dict]:
    """Config document from ``--manifest`` (exact re-run) or ``--config``."""
    if getattr(args, "manifest", None):
        doc = load_json(args.manifest)
        if "config" not in doc:
            raise ConfigError(f"{args.manifest}: manifest has no 'config' entry")
        return doc["config"], None, doc.get("config_path"), doc.get("fixture_hashes", {})
    if not args.config:
        raise ConfigError("one of --config or --manifest is required")
    path = resolve_path(args.config)
    doc = load_json(path)
    fixtures = {str(path): file_digest(path)}
    env = doc.get("env")
    if isinstance(env, str):
        env_path = resolve_path(env, path.parent)
        fixtures[str(env_path)] = file_digest(env_path)
    return doc, path.parent, str(path), fixtures


def cmd_train(args) -> int:
    doc, base, config_path, fixtures = _load_config_source(args)
    doc = dict(doc)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.tracker_init:
        doc["tracker_init"] = args.tracker_init
    config = RunConfig.from_dict(doc, base=base)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out / MANIFEST, "train", config.to_dict(), config_path, config.seed, fixtures)
    if config.algorithm in ("grpo", "rloo"):
        rows = run_grpo(config)
        tracker = None
    else:
        runner = SingleStreamRunner(config)
        rows = [runner.step() for _ in range(config.iterations)]
        tracker = runner.tracker
    (out / "metrics.csv").write_text(metrics_csv(rows))
    if tracker is not None:
        save_snapshot(out / "tracker.json", tracker.states)
    if rows:
        last = rows[-1]
        print(f"{config.algorithm}: {len(rows)} iterations, final J={last.expected_reward:.6f} "
              f"(optimum {config.env.optimal_value():.6f}) -> {out}")
    return 0


def _sched_rows(config: ScenarioConfig, replications: int, threads: int) -> list:
    import numpy as np

    def one(i):
        rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(i,)))
        return run_scenario(config, rng)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(one, range(replications)))
    return [one(i) for i in range(replications)]


def cmd_sched(args) -> int:
    doc, _, config_path, fixtures = _load_config_source(args)
    doc = dict(doc)
    if args.seed is not None:
        doc["seed"] = args.seed
    # a manifest records its replication count; the flag overrides it
    replications = doc.pop("replications", 1000)
    if args.replications is not None:
        replications = args.replications
    try:
        config = ScenarioConfig.from_dict(doc)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if replications < 1:
        raise ConfigError("--replications must be at least 1")
    results = _sched_rows(config, replications, args.threads)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replication", "strategy", "makespan", "wasted", "speedup"])
    for i, res in enumerate(results):
        for rep in (res.group, res.groupfree):
            w.writerow([i, rep.strategy, repr(rep.makespan), repr(rep.wasted), repr(rep.speedup)])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(buf.getvalue())
    manifest = out.with_name(out.name + ".manifest.json")
    cfg = config.to_dict()
    cfg["replications"] = replications
    _write_manifest(manifest, "sched", cfg, config_path, config.seed, fixtures)
    speedups = [r.speedup for r in results]
    print(f"{len(results)} replications: median speedup {statistics.median(speedups):.4f}, "
          f"min {min(speedups):.4f}, max {max(speedups):.4f} -> {out}")
    return 0


def cmd_analyze(args) -> int:
    if args.what == "en":
        print(repr(expected_dynamic_samples(args.p)))
    elif args.what == "zg":
        print(repr(degeneracy_prob(args.p, args.g)))
    elif args.what == "ratio":
        doc = load_json(resolve_path(args.config))
        try:
            params = VarianceRatioParams(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        print(json.dumps({
            "ratio": variance_ratio(params),
            "information_loss": information_loss_factor(params.p, params.group_size),
        }))
    else:
        checks = validate(args.trials, args.seed)
        for c in checks:
            print(c.line())
        failed = sum(not c.passed for c in checks)
        print(f"{len(checks) - failed}/{len(checks)} passed")
        return 1 if failed else 0
    return 0


def cmd_compare(args) -> int:
    spo = read_metrics_csv((Path(args.spo) / "metrics.csv").read_text())
    grpo = read_metrics_csv((Path(args.grpo) / "metrics.csv").read_text())
    n = min(len(spo), len(grpo))
    cols = ["J", "adv_var_raw", "degenerate_ratio", "nz_ratio_1e-4", "nz_ratio_0.02", "contributing"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iter"] + [f"{c}_{side}" for c in cols for side in ("spo", "grpo")])

    def fmt(v):
        return "NA" if v is None else repr(v)

    for a, b in zip(spo[:n], grpo[:n]):
        w.writerow([int(a["iter"])] + [fmt(row[c]) for c in cols for row in (a, b)])
    out = Path(args.out) if args.out else Path(args.spo) / "compare.csv"
    out.write_text(buf.getvalue())

    def mean(rows, key):
        vals = [r[key] for r in rows if r[key] is not None]
        return statistics.fmean(vals) if vals else None

    summary = {
        "iterations": n,
        "final_J_spo": spo[n - 1]["J"] if n else None,
        "final_J_grpo": grpo[n - 1]["J"] if n else None,
        "mean_degenerate_ratio_grpo": mean(grpo[:n], "degenerate_ratio"),
        "mean_nz_ratio_1e-4_spo": mean(spo[:n], "nz_ratio_1e-4"),
    }
    if n:
        summary["final_J_delta"] = summary["final_J_spo"] - summary["final_J_grpo"]
    print(json.dumps(summary, indent=2))
    return 0


def cmd_init_tracker(args) -> int:
    doc, base, _, _ = _load_config_source(args)
    doc = dict(doc)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.n0 is not None:
        doc["n0"] = args.n0
    config = RunConfig.from_dict(doc, base=base)
    env = config.env
    policy = PolicyTable.uniform(env.n_prompts, env.n_actions)
    tracker = offline_init(env, policy, config.tracker, config.n0, stream(config.seed, "init"))
    out = Path(args.out)
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_bytes(snapshot(tracker.states))
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc.strerror}") from exc
    print(f"tracker snapshot for {env.n_prompts} prompts (n0={config.n0}) -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spolab", description=__doc__)
    parser.add_argument("--version", action="version", version=f"spolab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_help):
        p.add_argument("--config", help="config JSON (path or fixture name)")
        p.add_argument("--manifest", help="re-run exactly from a previous run's manifest")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", required=True, help=out_help)
        p.add_argument("--threads", type=int, default=1)

    p = sub.add_parser("train", help="run a training loop and write per-iteration metrics")
    common(p, "output directory")
    p.add_argument("--tracker-init", help="tracker snapshot to start from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sched", help="simulate group vs group-free batch assembly")
    common(p, "output CSV path")
    p.add_argument("--replications", type=int, help="default 1000, or the manifest's count")
    p.set_defaults(func=cmd_sched)

    p = sub.add_parser("analyze", help="closed-form formulas and their Monte Carlo checks")
    asub = p.add_subparsers(dest="what", required=True)
    a = asub.add_parser("en", help="expected samples until both outcomes appear")
    a.add_argument("--p", type=float, required=True)
    a = asub.add_parser("zg", help="probability that a group is degenerate")
    a.add_argument("--p", type=float, required=True)
    a.add_argument("--g", type=int, required=True)
    a = asub.add_parser("ratio", help="group vs single-stream gradient variance ratio")
    a.add_argument("--config", required=True)
    a = asub.add_parser("validate", help="Monte Carlo validation table")
    a.add_argument("--trials", type=int, default=100_000)
    a.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="join an SPO and a GRPO run")
    p.add_argument("--spo", required=True)
    p.add_argument("--grpo", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("init-tracker", help="offline tracker initialization")
    p.add_argument("--config", help="config JSON (path or fixture name)")
    p.add_argument("--manifest", help=argparse.SUPPRESS)
    p.add_argument("--seed", type=int)
    p.add_argument("--n0", type=int)
    p.add_argument("--out", required=True, help="snapshot path")
    p.set_defaults(func=cmd_init_tracker)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, SnapshotError, DivergenceError, ValueError) as exc:
        print(f"spolab {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"spolab {args.command}: error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
