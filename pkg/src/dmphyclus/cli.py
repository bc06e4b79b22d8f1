"""Command-line entry point: ``dmphyclus <subcommand> ...``.

Subcommands: simulate, infer, estimate, eval, bootstrap, summarize.
Exit codes: 0 success, 2 usage (bad flags, missing config or input file),
3 validation (malformed data or values), 4 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import dump_config, load_config, merge_config, set_value
from .errors import ValidationError
from .estimators import (coclustering_matrix, linkage_estimate, map_estimate,
                         read_assignment_json, write_assignment_json, write_coclustering_csv)
from .evaluation import adjusted_rand_index, summarize_recovery, write_summary_csv
from .mcmc import Trace, preliminary_topology_search, run_chain
from .seqdata import bootstrap_columns, read_fasta, write_fasta
from .simulate import generate_dataset
from .tree import assignment_from_mrcas, read_newick, write_newick_file
from .workflow import prepare_run, simulation_params, simulation_root

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3, 4

def _config(path) -> dict:
    return merge_config(None) if path is None else load_config(path)


def replicate_seed(seed: int, i: int) -> np.random.SeedSequence:
    """Seed of replicate ``i``; independent of how replicates are scheduled."""
    return np.random.SeedSequence([seed, i])


def _map_jobs(fn, tasks, jobs: int):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, tasks))


# --- simulate --------------------------------------------------------------------

def _simulate_one(task):
    params, root, seed, i, stem = task
    ds = generate_dataset(params, root_sequence=root, seed=replicate_seed(seed, i))
    ds.seed = [seed, i]
    return [str(p) for p in ds.write(stem)]


def cmd_simulate(args) -> int:
    cfg = _config(args.config)
    if args.n is not None:
        set_value(cfg, "simulation.n", args.n)
    if args.replicates is not None:
        set_value(cfg, "simulation.replicates", args.replicates)
    params = simulation_params(cfg)
    root = simulation_root(cfg)
    reps = int(cfg["simulation"]["replicates"])
    if reps < 1:
        raise ValidationError("replicates must be >= 1")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(reps)))
    tasks = [(params, root, args.seed, i, out / f"{args.prefix}{i + 1:0{width}d}")
             for i in range(reps)]
    written = _map_jobs(_simulate_one, tasks, args.jobs)
    dump_config(cfg, out / f"{args.prefix}config.yaml")
    print(f"wrote {len(written)} datasets to {out}")
    return EXIT_OK


# --- infer -----------------------------------------------------------------------

def cmd_infer(args) -> int:
    cfg = _config(args.config)
    for key, val in (("chain.seed", args.seed), ("chain.iterations", args.iterations),
                     ("chain.burn_in", args.burn_in), ("chain.thinning", args.thin),
                     ("search.nni_budget", args.nni_budget), ("tree.outgroup", args.outgroup)):
        if val is not None:
            set_value(cfg, key, val)
    alignment = read_fasta(args.alignment)
    topology = read_newick(args.tree, resolve_polytomies=cfg["tree"]["resolve_polytomies"])
    run = prepare_run(alignment, topology, cfg)
    inputs, chain = run.inputs, run.chain

    prefix = Path(args.out)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    search_info = None
    budget = int(cfg["search"]["nni_budget"])
    if budget > 0:
        res = preliminary_topology_search(inputs, budget, burst=int(cfg["search"]["burst"]),
                                          seed=[chain.seed, 1], alpha_radius=chain.alpha_radius,
                                          outgroup=run.outgroup)
        write_newick_file(res.topology, f"{prefix}.tree.nwk")
        t_new = res.search_topology
        inputs = replace(inputs, topology=t_new,
                         start=assignment_from_mrcas(t_new, res.state.mrcas),
                         start_grid=(res.state.within_grid_idx, res.state.between_grid_idx),
                         prior=replace(inputs.prior, alpha=res.state.alpha))
        search_info = {"evaluations": res.evaluations, "moves_accepted": res.moves_accepted,
                       "initial_log_posterior": res.initial_log_posterior,
                       "final_log_posterior": res.state.log_posterior}

    trace = run_chain(inputs, chain)
    trace.to_csv(f"{prefix}.trace.csv")
    report = dict(trace.report)
    report.update(grid_centers={"within": run.centers[0], "between": run.centers[1]},
                  start_clusters=inputs.start.n_clusters, n_tips=inputs.topology.n_tips,
                  n_sites=inputs.alignment.n_sites, n_patterns=inputs.alignment.n_patterns,
                  outgroup=None if run.outgroup is None else run.outgroup[0],
                  nni_search=search_info, version=__version__)
    Path(f"{prefix}.report.json").write_text(json.dumps(report, indent=1, default=float) + "\n")
    dump_config(cfg, f"{prefix}.config.yaml")
    print(f"{len(trace)} samples retained; trace written to {prefix}.trace.csv")
    return EXIT_OK


# --- estimate / eval ---------------------------------------------------------------

def _load_trace(path) -> Trace:
    trace = Trace.from_csv(path)
    if not trace.tip_labels:
        raise ValidationError(f"{path}: tip labels file {Path(path).with_suffix('.labels.json')}"
                              " is missing")
    return trace


def cmd_estimate(args) -> int:
    trace = _load_trace(args.trace)
    if args.map:
        est = map_estimate(trace)
    else:
        est = linkage_estimate(trace, args.linkage)
    write_assignment_json(est, trace.tip_labels, args.out)
    if args.coclustering:
        write_coclustering_csv(coclustering_matrix(trace), trace.tip_labels, args.coclustering)
    print(f"{est.n_clusters} clusters written to {args.out}")
    return EXIT_OK


def _read_truth(path) -> dict:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict) and isinstance(data.get("truth"), dict):
        data = data["truth"]
    if not isinstance(data, dict):
        raise ValidationError(f"{path}: expected a JSON object label -> cluster id")
    return {k: int(v) for k, v in data.items()}


def cmd_eval(args) -> int:
    labels, est = read_assignment_json(args.estimate)
    truth = _read_truth(args.truth)
    ari = adjusted_rand_index(dict(zip(labels, est.labels)), truth)
    record = {"ari": ari, "n": len(labels), "estimate_clusters": est.n_clusters,
              "truth_clusters": len(set(truth.values())),
              "estimate": str(args.estimate), "truth": str(args.truth)}
    text = json.dumps(record, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_summarize(args) -> int:
    rows: dict[str, list[float]] = {}
    for path in args.records:
        rec = json.loads(Path(path).read_text())
        if "ari" not in rec:
            raise ValidationError(f"{path}: not an eval record")
        rows.setdefault(args.name, []).append(float(rec["ari"]))
    write_summary_csv({k: summarize_recovery(v) for k, v in rows.items()}, args.out)
    print(f"summary of {len(args.records)} records written to {args.out}")
    return EXIT_OK


# --- bootstrap ----------------------------------------------------------------------

def _bootstrap_one(task):
    alignment, seed, i, path = task
    write_fasta(bootstrap_columns(alignment, replicate_seed(seed, i)), path)
    return str(path)


def cmd_bootstrap(args) -> int:
    if args.replicates < 1:
        raise ValidationError("replicates must be >= 1")
    alignment = read_fasta(args.alignment)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width = max(3, len(str(args.replicates)))
    tasks = [(alignment, args.seed, i, out / f"{args.prefix}{i + 1:0{width}d}.fasta")
             for i in range(args.replicates)]
    _map_jobs(_bootstrap_one, tasks, args.jobs)
    print(f"wrote {args.replicates} bootstrap alignments to {out}")
    return EXIT_OK


# --- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dmphyclus",
                                description="Bayesian detection of transmission clusters "
                                            "on a fixed phylogeny.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate clustered datasets")
    s.add_argument("--config", help="YAML config (simulation section)")
    s.add_argument("--n", type=int, help="tips per dataset")
    s.add_argument("--replicates", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--prefix", default="rep")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("infer", help="run the sampler on an alignment and tree")
    s.add_argument("alignment")
    s.add_argument("tree")
    s.add_argument("--config")
    s.add_argument("--seed", type=int)
    s.add_argument("--iterations", type=int)
    s.add_argument("--burn-in", type=int)
    s.add_argument("--thin", type=int)
    s.add_argument("--nni-budget", type=int)
    s.add_argument("--outgroup")
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("estimate", help="point estimate from a trace")
    s.add_argument("trace")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--map", action="store_true")
    g.add_argument("--linkage", type=float, metavar="XX")
    s.add_argument("--coclustering", help="also write the co-clustering matrix (CSV)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("eval", help="adjusted Rand index of an estimate against truth")
    s.add_argument("estimate")
    s.add_argument("truth")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("summarize", help="recovery table from eval records")
    s.add_argument("records", nargs="+")
    s.add_argument("--name", default="estimate")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_summarize)

    s = sub.add_parser("bootstrap", help="column-resampled alignments")
    s.add_argument("alignment")
    s.add_argument("--replicates", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--prefix", default="boot")
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_bootstrap)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"dmphyclus {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValidationError, json.JSONDecodeError) as exc:
        print(f"dmphyclus {args.command}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - report anything else as a runtime failure
        print(f"dmphyclus {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
