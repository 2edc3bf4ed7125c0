"""Command-line front end: gen / solve / evolve / bench / gap.

Configuration precedence is defaults < config file (TOML) < environment
< flags; the effective configuration is echoed into every output directory.
All emitted tables are CSV with headers, with companion PNG figures saved
alongside them.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .codegen import BackendConfig, CodegenGateway
from .engine import CompiledPool, EpisodeConfig, PortfolioState, run_episode
from .errors import GlnsError
from .evolution import (EvolutionConfig, load_snapshot, run_evolution,
                        save_snapshot, snapshot_from_json)
from .instances import (GeneratorConfig, ReferenceTable, gap, generate,
                        instance_from_json, instance_to_json, load_instance,
                        save_instance)
from .operators import BUILTINS, builtin_record
from .oracles import exact_cost
from .problems import TSP
from .rand import make_rng
from . import reporting

ORACLE_LIMITS = {"tsp": 12, "cvrp": 10, "ovrp": 10}


def load_config_file(path) -> dict:
    if not path:
        return {}
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def section(config: dict, name: str) -> dict:
    return dict(config.get(name, {}))


def echo_config(outdir: Path, payload: dict):
    outdir.joinpath("effective_config.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")


# --- instance handling ----------------------------------------------------------

def collect_instances(paths) -> list:
    """Load instances from files, directories, or manifest.json files."""
    files = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            manifest = path / "manifest.json"
            if manifest.exists():
                doc = json.loads(manifest.read_text())
                files.extend(path / name for name in doc["files"])
            else:
                files.extend(sorted(p for p in path.iterdir()
                                    if p.suffix in (".json", ".tsp", ".vrp")))
        elif path.name == "manifest.json":
            doc = json.loads(path.read_text())
            files.extend(path.parent / name for name in doc["files"])
        else:
            files.append(path)
    return [load_instance(p) for p in files]


# --- solve core (shared by solve and bench) ---------------------------------------

def _records_for(names: list[str]):
    records = []
    for name in names:
        if name not in BUILTINS:
            raise GlnsError(f"unknown operator id {name!r}")
        records.append(builtin_record(name))
    return records


_WORKER_SANDBOX = None


def _worker_sandbox():
    """One sandbox session per solver process, created on first need."""
    global _WORKER_SANDBOX
    if _WORKER_SANDBOX is None:
        from .sandbox_client import SandboxSession
        _WORKER_SANDBOX = SandboxSession()
    return _WORKER_SANDBOX


def _solve_one(args):
    doc, destroy_docs, repair_docs, iters, seed, inst_idx, rep = args
    from .operators.base import OperatorRecord

    instance = instance_from_json(doc)
    records_d = [OperatorRecord.from_json(r) for r in destroy_docs]
    records_r = [OperatorRecord.from_json(r) for r in repair_docs]
    sandbox = None
    if any("source" in r["impl"] for r in destroy_docs + repair_docs):
        sandbox = _worker_sandbox()
    pool_d = CompiledPool.compile(records_d, sandbox)
    pool_r = CompiledPool.compile(records_r, sandbox)
    state = PortfolioState.fresh(len(pool_d.records), len(pool_r.records))
    config = EpisodeConfig(iterations=iters)
    result = run_episode(instance, pool_d, pool_r, state, config,
                         make_rng(seed, inst_idx, rep))
    return result.best_cost, result.trace


def solve_batch(instances, destroy_records, repair_records, iters: int,
                reps: int, seed: int, jobs: int = 1):
    """(instance, rep) -> (best cost, trace); rng stream is (seed, i, rep)."""
    tasks = []
    destroy_docs = [r.to_json() for r in destroy_records]
    repair_docs = [r.to_json() for r in repair_records]
    for i, inst in enumerate(instances):
        for r in range(reps):
            tasks.append((instance_to_json(inst), destroy_docs, repair_docs,
                          iters, seed, i, r))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            flat = list(pool.map(_solve_one, tasks))
    else:
        flat = [_solve_one(t) for t in tasks]
    out = {}
    k = 0
    for i, inst in enumerate(instances):
        for r in range(reps):
            out[(i, r)] = flat[k]
            k += 1
    return out


# --- subcommands -----------------------------------------------------------------

def cmd_gen(args, config):
    sec = section(config, "gen")
    kind = args.kind or sec.get("kind", TSP)
    n = args.n or sec.get("n", 50)
    count = args.count if args.count is not None else sec.get("count", 16)
    seed = args.seed if args.seed is not None else sec.get("seed", 0)
    capacity = args.capacity or sec.get("capacity", 50)
    demand_range = (args.demand_min or sec.get("demand_min", 1),
                    args.demand_max or sec.get("demand_max", 9))
    outdir = reporting.ensure_dir(args.out or sec.get("out", "instances"))
    names = []
    refs = ReferenceTable()
    for k in range(count):
        cfg = GeneratorConfig(kind, n, seed=seed + k, capacity=capacity,
                              demand_range=demand_range)
        inst = generate(cfg)
        fname = f"{inst.name}.json"
        save_instance(inst, outdir / fname)
        names.append(fname)
        if args.oracle_refs:
            limit = ORACLE_LIMITS[kind]
            size = inst.n if kind == TSP else inst.n - 1
            if size > limit:
                raise GlnsError(f"exact oracle supports {kind} up to n={limit}")
            refs.add(inst.name, exact_cost(inst), source="oracle")
    manifest = {"kind": kind, "n": n, "count": count, "seed": seed, "files": names}
    outdir.joinpath("manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if args.oracle_refs:
        refs.save(outdir / "references.csv")
    echo_config(outdir, {"command": "gen", "kind": kind, "n": n, "count": count,
                         "seed": seed, "capacity": capacity,
                         "demand_range": list(demand_range)})
    print(f"wrote {count} instances to {outdir}")
    return 0


def _load_refs(path) -> ReferenceTable | None:
    return ReferenceTable.load(path) if path else None


def _operator_records(args, config):
    if args.snapshot:
        state = load_snapshot(args.snapshot)
        return state.pop_d.records, state.pop_r.records
    sec = section(config, "solve")
    destroy = (args.destroy or sec.get("destroy", "")).split(",")
    repair = (args.repair or sec.get("repair", "")).split(",")
    destroy = [d.strip() for d in destroy if d.strip()]
    repair = [r.strip() for r in repair if r.strip()]
    if not destroy or not repair:
        raise GlnsError("solve needs --destroy and --repair ids, or --snapshot")
    return _records_for(destroy), _records_for(repair)


def cmd_solve(args, config):
    sec = section(config, "solve")
    instances = collect_instances(args.instances)
    if not instances:
        raise GlnsError("no instances found")
    destroy_records, repair_records = _operator_records(args, config)
    iters = args.iters or sec.get("iters", 500)
    reps = args.reps or sec.get("reps", 1)
    seed = args.seed if args.seed is not None else sec.get("seed", 0)
    outdir = reporting.ensure_dir(args.out or sec.get("out", "solve-out"))
    refs = _load_refs(args.refs or sec.get("refs"))
    results = solve_batch(instances, destroy_records, repair_records,
                          iters, reps, seed, jobs=args.jobs)
    rows = []
    traces_dir = reporting.ensure_dir(outdir / "traces")
    plot_traces = []
    for i, inst in enumerate(instances):
        for r in range(reps):
            cost, trace = results[(i, r)]
            ref = refs.cost(inst.name) if refs else None
            row_gap = repr(gap(cost, ref)) if ref else ""
            rows.append([inst.name, r, repr(cost), row_gap])
            reporting.write_trace_csv(traces_dir / f"{inst.name}-r{r}.csv", trace)
            if len(plot_traces) < 12:
                plot_traces.append((f"{inst.name}-r{r}", trace))
    reporting.write_table(outdir / "report.csv",
                          ["instance", "rep", "best_cost", "gap"], rows)
    costs = np.array([results[(i, r)][0] for i in range(len(instances))
                      for r in range(reps)])
    summary = [["mean_cost", repr(float(costs.mean()))],
               ["median_cost", repr(float(np.median(costs)))],
               ["runs", len(costs)]]
    gaps = [float(r[3]) for r in rows if r[3] != ""]
    if gaps:
        summary.append(["mean_gap", repr(float(np.mean(gaps)))])
        summary.append(["median_gap", repr(float(np.median(gaps)))])
    reporting.write_table(outdir / "summary.csv", ["metric", "value"], summary)
    reporting.plot_convergence(outdir / "convergence.png", plot_traces)
    echo_config(outdir, {"command": "solve", "iters": iters, "reps": reps,
                         "seed": seed, "jobs": args.jobs,
                         "destroy": [r.id for r in destroy_records],
                         "repair": [r.id for r in repair_records]})
    print(f"mean best cost {costs.mean():.6f} over {len(costs)} runs -> {outdir}")
    return 0


def _backend_from(args, config) -> BackendConfig:
    sec = section(config, "backend")
    backend = BackendConfig(
        mode=args.backend or sec.get("mode", "mock"),
        endpoint=sec.get("endpoint", ""), api_key=sec.get("api_key", ""),
        model=sec.get("model", ""),
        temperature=float(sec.get("temperature", 0.8)),
        max_tokens=int(sec.get("max_tokens", 2048)),
        retries=int(sec.get("retries", 3)),
        timeout=float(sec.get("timeout", 60.0)),
        mock_seed=int(sec.get("mock_seed", 0)))
    backend.apply_env()
    return backend


def _evolution_config(args, config) -> EvolutionConfig:
    sec = section(config, "evolve")
    eng = section(config, "engine")
    episode = EpisodeConfig(
        iterations=args.iters or sec.get("iters", eng.get("iterations", 100)),
        initial_temperature=float(eng.get("initial_temperature", 100.0)),
        cooling_rate=float(eng.get("cooling_rate", 0.97)),
        destruction_ratio=float(eng.get("destruction_ratio", 0.2)),
        smoothing=float(eng.get("smoothing", 0.5)),
        rewards=tuple(eng.get("rewards", (1.5, 1.2, 0.8, 0.1))))
    return EvolutionConfig(
        max_generations=args.gmax or sec.get("gmax", 200),
        capacity=args.pop_size or sec.get("pop_size", 5),
        prune_count=args.prune or sec.get("prune", 2),
        manage_every=args.manage_every or sec.get("manage_every", 10),
        episode=episode,
        filter_size=int(sec.get("filter_size", 20)),
        filter_budget=float(sec.get("filter_budget", 1.0)),
        backend_attempts=int(sec.get("backend_attempts", 10)),
        synergy_selection=sec.get("synergy_selection", "argmax"))


def cmd_evolve(args, config):
    sec = section(config, "evolve")
    seed = args.seed if args.seed is not None else sec.get("seed", 0)
    kind = args.kind or sec.get("kind", TSP)
    if args.instances:
        instances = collect_instances(args.instances)
        kind = instances[0].kind
    else:
        train_n = args.train_n or sec.get("train_n", 50)
        train_count = args.train_count or sec.get("train_count", 16)
        train_seed = args.train_seed if args.train_seed is not None else sec.get("train_seed", 1000)
        instances = [generate(GeneratorConfig(kind, train_n, seed=train_seed + k))
                     for k in range(train_count)]
    outdir = reporting.ensure_dir(args.out or sec.get("out", "evolve-out"))
    backend = _backend_from(args, config)
    evo_config = _evolution_config(args, config)
    gateway = CodegenGateway(backend, transcript_path=outdir / "transcript.jsonl")
    sandbox = None
    if backend.mode == "remote":
        from .sandbox_client import SandboxSession
        sandbox = SandboxSession()
    state = load_snapshot(args.resume) if args.resume else None
    events_path = outdir / "events.jsonl"
    if state is None and events_path.exists():
        events_path.unlink()
    with open(events_path, "a") as events_fh:
        def on_generation(st, event):
            events_fh.write(json.dumps(event) + "\n")
            events_fh.flush()
        state = run_evolution(kind, instances, gateway, evo_config, seed,
                              sandbox=sandbox, state=state,
                              on_generation=on_generation)
    save_snapshot(state, outdir / "snapshot.json")
    gens = [e["g"] for e in state.events]
    scores = [e["best_cost"] for e in state.events]
    reporting.write_table(outdir / "best_trace.csv", ["generation", "best_score"],
                          [[g, repr(s)] for g, s in zip(gens, scores)])
    if gens:
        reporting.plot_best_trace(outdir / "best_trace.png", gens, scores)
    echo_config(outdir, {"command": "evolve", "kind": kind, "seed": seed,
                         "generations": state.generation,
                         "backend": backend.mode,
                         "instances": [inst.name for inst in instances]})
    if sandbox is not None:
        sandbox.close()
    print(f"evolved {state.generation} generations, best score "
          f"{state.best_score():.6f} -> {outdir}")
    return 0


def _parse_method(spec: str):
    name, _, body = spec.partition(":")
    if not body:
        raise GlnsError(f"bad --method {spec!r}; use name:destroys/repairs or name:@snapshot")
    if body.startswith("@"):
        state = load_snapshot(body[1:])
        return name, state.pop_d.records, state.pop_r.records
    destroy, _, repair = body.partition("/")
    d = [s.strip() for s in destroy.split(",") if s.strip()]
    r = [s.strip() for s in repair.split(",") if s.strip()]
    if not d or not r:
        raise GlnsError(f"bad --method {spec!r}")
    return name, _records_for(d), _records_for(r)


def cmd_bench(args, config):
    sec = section(config, "bench")
    method_specs = args.method or sec.get("methods", [])
    if len(method_specs) < 2:
        raise GlnsError("bench needs at least 2 --method entries")
    methods = [_parse_method(s) for s in method_specs]
    groups = []
    for raw in args.instances:
        instances = collect_instances([raw])
        if not instances:
            raise GlnsError(f"no instances under {raw}")
        first = instances[0]
        size = first.n if first.kind == TSP else first.n - 1   # customers for VRP
        groups.append((f"{first.kind}{size}", instances))
    iters = args.iters or sec.get("iters", 500)
    reps = args.reps or sec.get("reps", 1)
    seed = args.seed if args.seed is not None else sec.get("seed", 0)
    refs = _load_refs(args.refs or sec.get("refs"))
    outdir = reporting.ensure_dir(args.out or sec.get("out", "bench-out"))
    header = ["group", "method", "mean_obj", "mean_gap"]
    rows = []
    group_values = []
    for label, instances in groups:
        values = []
        for mname, drecs, rrecs in methods:
            results = solve_batch(instances, drecs, rrecs, iters, reps, seed,
                                  jobs=args.jobs)
            costs = [results[(i, r)][0] for i in range(len(instances))
                     for r in range(reps)]
            mean_obj = float(np.mean(costs))
            gaps = []
            if refs:
                for i, inst in enumerate(instances):
                    ref = refs.cost(inst.name)
                    if ref:
                        gaps.extend(gap(results[(i, r)][0], ref) for r in range(reps))
            rows.append([label, mname, repr(mean_obj),
                         repr(float(np.mean(gaps))) if gaps else ""])
            values.append(mean_obj)
        group_values.append(values)
    reporting.write_table(outdir / "bench.csv", header, rows)
    text = reporting.format_text_table(header, rows)
    outdir.joinpath("bench.txt").write_text(text)
    reporting.plot_method_bars(outdir / "bench.png", [m[0] for m in methods],
                               [g[0] for g in groups], group_values)
    echo_config(outdir, {"command": "bench", "iters": iters, "reps": reps,
                         "seed": seed, "methods": method_specs,
                         "groups": [g[0] for g in groups]})
    sys.stdout.write(text)
    return 0


def cmd_gap(args, config):
    import csv as _csv

    refs = _load_refs(args.refs) if args.refs else None
    if not args.rebase and refs is None:
        raise GlnsError("gap needs --refs (or --rebase with a method column)")
    with open(args.results, newline="") as fh:
        rows = list(_csv.DictReader(fh))
    name_col = "instance" if rows and "instance" in rows[0] else "name"
    cost_col = "best_cost" if rows and "best_cost" in rows[0] else "cost"
    if args.rebase:
        best = {}
        for row in rows:
            cost = float(row[cost_col])
            key = row[name_col]
            best[key] = min(best.get(key, cost), cost)
        reference = best
    else:
        reference = {}
    out_rows = []
    skipped = []
    for row in rows:
        name = row[name_col]
        if args.rebase:
            ref = reference[name]
        else:
            ref = refs.cost(name)
        if ref is None:
            skipped.append(name)
            continue
        g = gap(float(row[cost_col]), ref)
        out = dict(row)
        out["gap"] = g
        out_rows.append(out)
    for name in sorted(set(skipped)):
        print(f"warning: no reference for {name!r}, skipped", file=sys.stderr)
    gaps = np.array([r["gap"] for r in out_rows], dtype=float)
    outdir = reporting.ensure_dir(args.out or "gap-out")
    header = list(out_rows[0].keys()) if out_rows else ["name", "cost", "gap"]
    reporting.write_table(outdir / "gaps.csv", header,
                          [[r[h] for h in header] for r in out_rows])
    summary = [["mean_gap", repr(float(gaps.mean())) if len(gaps) else ""],
               ["median_gap", repr(float(np.median(gaps))) if len(gaps) else ""],
               ["rows", len(out_rows)], ["skipped", len(skipped)]]
    reporting.write_table(outdir / "summary.csv", ["metric", "value"], summary)
    if len(gaps):
        print(f"mean gap {gaps.mean():.4%} over {len(gaps)} rows -> {outdir}")
    return 0


# --- argument wiring --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="glns",
        description="Adaptive destroy/repair search for routing problems "
                    "with an evolving operator portfolio.")
    parser.add_argument("--config", help="TOML config file")
    parser.add_argument("--seed", type=int, dest="global_seed",
                        help="default seed for the subcommand")
    parser.add_argument("--out", dest="global_out",
                        help="default output directory for the subcommand")
    parser.add_argument("--jobs", type=int, dest="global_jobs",
                        help="default worker count for parallel subcommands")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate synthetic instances")
    p.add_argument("--kind", choices=("tsp", "cvrp", "ovrp"))
    p.add_argument("--n", type=int)
    p.add_argument("--count", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--capacity", type=int)
    p.add_argument("--demand-min", type=int, dest="demand_min")
    p.add_argument("--demand-max", type=int, dest="demand_max")
    p.add_argument("--oracle-refs", action="store_true",
                   help="also write references.csv from the exact oracle")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("solve", help="run the engine with fixed operators")
    p.add_argument("--instances", nargs="+", required=True)
    p.add_argument("--destroy", help="comma-separated destroy operator ids")
    p.add_argument("--repair", help="comma-separated repair operator ids")
    p.add_argument("--snapshot", help="population snapshot file instead of ids")
    p.add_argument("--iters", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--refs", help="reference table csv for gap columns")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("evolve", help="run the evolutionary loop")
    p.add_argument("--kind", choices=("tsp", "cvrp", "ovrp"))
    p.add_argument("--instances", nargs="*")
    p.add_argument("--train-n", type=int, dest="train_n")
    p.add_argument("--train-count", type=int, dest="train_count")
    p.add_argument("--train-seed", type=int, dest="train_seed")
    p.add_argument("--gmax", type=int)
    p.add_argument("--pop-size", type=int, dest="pop_size")
    p.add_argument("--prune", type=int)
    p.add_argument("--manage-every", type=int, dest="manage_every")
    p.add_argument("--iters", type=int, help="episode iterations (default 100)")
    p.add_argument("--backend", choices=("mock", "remote"))
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", help="snapshot to continue from")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_evolve)

    p = sub.add_parser("bench", help="compare named method configurations")
    p.add_argument("--instances", nargs="+", required=True,
                   help="one or more instance sets (dirs or manifests)")
    p.add_argument("--method", action="append",
                   help="name:destroy_ids/repair_ids or name:@snapshot.json")
    p.add_argument("--iters", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--refs")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("gap", help="gap report from a results csv")
    p.add_argument("--results", required=True)
    p.add_argument("--refs")
    p.add_argument("--rebase", action="store_true",
                   help="reference = best found per instance across rows")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_gap)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # global flags act as subcommand defaults
    if getattr(args, "seed", None) is None and args.global_seed is not None:
        args.seed = args.global_seed
    if getattr(args, "out", None) is None and args.global_out is not None:
        args.out = args.global_out
    if args.global_jobs is not None and getattr(args, "jobs", None) in (None, 1):
        if hasattr(args, "jobs"):
            args.jobs = args.global_jobs
    config = load_config_file(args.config or os.environ.get("GLNS_CONFIG"))
    try:
        return args.fn(args, config)
    except GlnsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
