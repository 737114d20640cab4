"""Command-line entry point: ``mixdeconv {deconvolve,simulate,reduce,sensitivity}``.

Every command takes a YAML manifest. Relative paths inside a manifest resolve
against the manifest's directory. Exit codes: 0 success, 1 input error,
2 deconvolution budget exhausted without convergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import itertools
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import io
from .coverage import DegenerateInputError, Marker, MixtureSample
from .estimation import EstimationConfig, EstimationError
from .experiments import F_TRUE_TOLERANCE, build_context, estimated_profiles, run_simulated_case
from .genotypes import AlleleFrequencies, encode
from .mea import MEAConfig, run
from .metrics import profile_agreement
from .reduction import ReductionError, reduce
from .simulator import SimulationSpec, default_panel, simulate

THREADS_ENV = "MIXDECONV_THREADS"
EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2

SIMULATION_PANEL_KEYS = ("n_markers", "n_alleles", "panel_seed", "dna_pg")


# --- manifest helpers ------------------------------------------------------


def _section(manifest, key, default=None):
    v = manifest.get(key, default if default is not None else {})
    if not isinstance(v, dict):
        raise io.InputError(manifest["_path"], None, f"section {key!r} must be a mapping")
    return v


def _dataclass_from(cls, values, manifest, section):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - names)
    if unknown:
        raise io.InputError(manifest["_path"], None, f"{section}: unknown key(s) {', '.join(unknown)}")
    kw = {k: tuple(v) if isinstance(v, list) else v for k, v in values.items()}
    try:
        return cls(**kw)
    except (TypeError, ValueError) as e:
        raise io.InputError(manifest["_path"], None, f"{section}: {e}") from None


def _path(manifest, value):
    p = Path(value)
    return p if p.is_absolute() else manifest["_dir"] / p


def _threads(args, manifest_threads=None) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise io.InputError(THREADS_ENV, None, f"environment variable must be an integer, got {env!r}") from None
    return int(manifest_threads or 1)


def _mea_config(manifest, values, args, seed) -> MEAConfig:
    values = dict(values)
    values["seed"] = seed
    values["threads"] = _threads(args, values.get("threads"))
    return _dataclass_from(MEAConfig, values, manifest, "mea")


def _seed(manifest, args) -> int:
    return int(args.seed if args.seed is not None else manifest.get("seed", 0))


def _output_dir(manifest, args, default="out") -> Path:
    if args.output_dir is not None:
        return Path(args.output_dir)
    return _path(manifest, manifest.get("output_dir", default))


def _simulation_spec(manifest, values, seed) -> SimulationSpec:
    values = dict(values)
    panel_kw = {k: values.pop(k) for k in SIMULATION_PANEL_KEYS if k in values}
    dna = panel_kw.pop("dna_pg", None)
    if dna is not None:
        values["nu"] = SimulationSpec.nu_for_dna(float(dna))
    panel = default_panel(
        n_markers=int(panel_kw.get("n_markers", 10)),
        n_alleles=int(panel_kw.get("n_alleles", 8)),
        seed=int(panel_kw.get("panel_seed", 20190101)),
    )
    values["panel"] = panel
    values["seed"] = seed
    return _dataclass_from(SimulationSpec, values, manifest, "simulation")


# --- deconvolve -----------------------------------------------------------


def cmd_deconvolve(args) -> int:
    manifest = io.read_manifest(args.manifest)
    inputs = _section(manifest, "inputs")
    hyp = _section(manifest, "hypothesis")
    model = _section(manifest, "model")
    seed = _seed(manifest, args)
    if "coverage" not in inputs or "stutter" not in inputs:
        raise io.InputError(manifest["_path"], None, "inputs need 'coverage' and 'stutter'")

    sample = io.read_coverage(_path(manifest, inputs["coverage"]))
    graph = io.read_stutter(_path(manifest, inputs["stutter"]), sample, int(model.get("stutter_depth", 2)))
    known_files = inputs.get("known_profiles") or []
    known = None
    if known_files:
        cols = [io.read_profile(_path(manifest, f), sample) for f in known_files]
        known = [np.hstack([c[m] for c in cols]) for m in range(sample.n_markers)]
    n_unknown = int(hyp.get("n_unknown", 1))
    if n_unknown < 1:
        raise io.InputError(manifest["_path"], None, "hypothesis.n_unknown must be >= 1")
    freqs = None
    if inputs.get("frequencies"):
        table = io.read_frequencies(_path(manifest, inputs["frequencies"]))
        freqs = AlleleFrequencies.from_table(sample, table, theta=float(model.get("theta_fst", 0.01)),
                                             n_reference=int(model.get("n_reference", 1000)))
    beta = io.read_beta(_path(manifest, inputs["beta"]), sample) if inputs.get("beta") else None
    est_cfg = _dataclass_from(EstimationConfig, _section(manifest, "estimation"), manifest, "estimation")
    mea_cfg = _mea_config(manifest, _section(manifest, "mea"), args, seed)
    try:
        ctx = build_context(sample, graph, n_unknown, known=known, freqs=freqs, beta=beta,
                            beta_lambda=float(model.get("beta_lambda", 0.0)), estimation=est_cfg)
    except DegenerateInputError as e:
        raise io.InputError(_path(manifest, inputs["coverage"]), None, str(e)) from None

    t0 = time.perf_counter()
    res = run(ctx, mea_cfg)
    wall = time.perf_counter() - t0
    est = estimated_profiles(ctx, res.best)
    v = res.best_value

    summary = {
        "fitness": v.fitness, "log_likelihood": v.log_likelihood, "log_prior": v.log_prior,
        "converged": res.converged, "outer_iterations": res.n_outer, "n_fits": res.n_fits,
        "n_unknown": n_unknown, "n_known": ctx.n_known, "seed": seed,
    }
    if inputs.get("truth"):
        truth_obj, truth_profiles = io.read_truth_profiles(_path(manifest, inputs["truth"]), sample)
        which = hyp.get("truth_contributors")
        if which is None and n_unknown == len(truth_profiles):
            which = list(range(n_unknown))
        which = list(which or [])
        if len(which) != n_unknown or any(not 0 <= c < len(truth_profiles) for c in which):
            raise io.InputError(manifest["_path"], None, "hypothesis.truth_contributors must list one "
                                                         "truth contributor per unknown")
        target = [truth_profiles[c] for c in which]
        alleles, markers = profile_agreement(est, target)
        summary["identical_alleles_pct"] = 100.0 * alleles
        summary["identical_markers_pct"] = 100.0 * markers
        try:
            g_true = [np.zeros((a, n_unknown), dtype=np.int64) for a in sample.marker_sizes]
            for u, prof in enumerate(target):
                for m, pair in enumerate(prof):
                    for a in pair:
                        g_true[m][sample.markers[m].index(a), u] += 1
            f_true = ctx.fitness(encode(g_true)).fitness
            summary["f_true"] = f_true
            summary["f_opt_ge_f_true"] = bool(v.fitness >= f_true - F_TRUE_TOLERANCE * max(1.0, abs(f_true)))
        except (ValueError, EstimationError):
            summary["f_true"] = None
            summary["f_opt_ge_f_true"] = None

    theta = v.theta
    theta_rows = [("nu", theta.nu), ("gamma", theta.gamma)]
    theta_rows += [(f"phi_{c}", float(x)) for c, x in enumerate(theta.phi)]
    theta_rows += [("noise_mu", theta.noise_mu), ("noise_rho", theta.noise_rho),
                   ("noise_omega", theta.noise_omega)]
    out = _output_dir(manifest, args)
    if args.format == "structured":
        io.write_json(out / "result.json", {
            "summary": summary, "theta": dict(theta_rows),
            "profiles": [{mk: list(pair) for mk, pair in zip(sample.marker_names, prof)} for prof in est],
            "trace": res.trace, "best_trace": res.best_trace,
        })
    else:
        io.write_table(out / "summary.tsv", ("key", "value"), summary.items())
        io.write_table(out / "theta.tsv", ("parameter", "value"), theta_rows)
        io.write_table(out / "profiles.tsv", ("contributor",) + io.PROFILE_COLUMNS,
                       [(f"unknown_{u}", mk, a, b) for u, prof in enumerate(est)
                        for mk, (a, b) in zip(sample.marker_names, prof)])
        io.write_table(out / "trace.tsv",
                       ("iteration", "best_fitness") + tuple(f"subpop_{i}" for i in range(res.trace.shape[1])),
                       [(t, res.best_trace[t], *res.trace[t]) for t in range(len(res.best_trace))])
    io.write_table(out / "timing.tsv", ("key", "value"), [("wall_time_s", wall)],
                   comments=["wall-clock measurements; not reproducible across runs"])
    print(f"best fitness {v.fitness:.6f} after {res.n_outer} outer iterations "
          f"({'converged' if res.converged else 'budget exhausted'}); outputs in {out}")
    return EXIT_OK if res.converged else EXIT_NOT_CONVERGED


# --- simulate ------------------------------------------------------------


def _write_simulated(out: Path, spec: SimulationSpec, known: list[int], base_manifest: dict):
    sample, graph, truth, table = simulate(spec)
    names = sample.marker_names
    io.write_coverage(out / "coverage.tsv", sample)
    io.write_stutter(out / "stutter.tsv", sample, graph)
    io.write_frequencies(out / "frequencies.tsv", table)
    extra = {"ratio": list(spec.ratio), "seed": spec.seed}
    io.write_truth(out / "truth.json", truth, names, extra)
    for c, prof in enumerate(truth.profiles):
        io.write_profile(out / f"profile_c{c}.tsv", names, prof)
    unknown = [c for c in range(spec.n_contributors) if c not in known]
    manifest = {
        "inputs": {
            "coverage": "coverage.tsv", "stutter": "stutter.tsv", "frequencies": "frequencies.tsv",
            "known_profiles": [f"profile_c{c}.tsv" for c in known], "truth": "truth.json",
        },
        "hypothesis": {"n_unknown": len(unknown), "truth_contributors": unknown},
        "model": {"stutter_depth": spec.stutter_depth, "theta_fst": 0.01},
        **base_manifest,
        "output_dir": "deconvolution",
        "seed": spec.seed,
    }
    io.write_manifest(out / "manifest.yaml", manifest)
    return sample


def cmd_simulate(args) -> int:
    manifest = io.read_manifest(args.manifest)
    seed = _seed(manifest, args)
    sim = dict(_section(manifest, "simulation"))
    grid = _section(manifest, "grid")
    known = list(manifest.get("known", [1]))
    base = {k: manifest[k] for k in ("mea", "estimation") if k in manifest}
    out = _output_dir(manifest, args)
    if not grid:
        spec = _simulation_spec(manifest, sim, seed)
        if any(not 0 <= c < spec.n_contributors for c in known):
            raise io.InputError(manifest["_path"], None, "known contributors out of range")
        _write_simulated(out, spec, known, base)
        print(f"simulated sample written to {out}")
        return EXIT_OK
    ratios = grid.get("ratios", [sim.get("ratio", [10, 1])])
    dna = grid.get("dna_pg", [None])
    reps = int(grid.get("replicates", 1))
    rows = []
    for k, (ratio, pg, r) in enumerate(itertools.product(ratios, dna, range(reps))):
        values = dict(sim, ratio=ratio)
        if pg is not None:
            values["dna_pg"] = pg
        spec = _simulation_spec(manifest, values, seed + k)
        name = f"ratio{'-'.join(fmt_num(x) for x in ratio)}" + (f"_dna{fmt_num(pg)}" if pg is not None else "") + f"_rep{r}"
        _write_simulated(out / name, spec, known, base)
        rows.append((name, ":".join(fmt_num(x) for x in ratio), pg, r, spec.seed, spec.nu))
    io.write_table(out / "index.tsv", ("sample", "ratio", "dna_pg", "replicate", "seed", "nu"), rows)
    print(f"{len(rows)} simulated samples written to {out}")
    return EXIT_OK


def fmt_num(x) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() else repr(x)


# --- reduce --------------------------------------------------------------


def cmd_reduce(args) -> int:
    manifest = io.read_manifest(args.manifest)
    inputs = _section(manifest, "inputs")
    opts = _section(manifest, "reduction")
    if "coverage" not in inputs or "reads" not in inputs:
        raise io.InputError(manifest["_path"], None, "inputs need 'coverage' and 'reads'")
    cov_path = _path(manifest, inputs["coverage"])
    sample = io.read_coverage(cov_path)
    reads = io.read_reads(_path(manifest, inputs["reads"]), sample)
    trusted = io.read_trusted(_path(manifest, inputs["trusted"])) if inputs.get("trusted") else None
    allow = bool(opts.get("allow_variants", False))
    half = int(opts.get("half_width", 4))
    try:
        res = reduce(reads, trusted, allow_variants=allow, l=half)
    except ReductionError as e:
        raise io.InputError(cov_path, None, str(e)) from None

    ids = {(r.marker, r.bases): r.sequence_id for r in reads}
    kept = {(r.marker, r.bases): r for r in res.reads}
    reduced = []
    for mk in sample.markers:
        ids_m, cov_m, seq_m, rep_m = [], [], [], []
        for i, s in enumerate(mk.sequences):
            r = kept.get((mk.name, s.upper()))
            if r is None:
                continue
            ids_m.append(mk.sequence_ids[i])
            cov_m.append(r.coverage)
            seq_m.append(s)
            rep_m.append(mk.repeat_counts[i] if mk.repeat_counts else None)
        reduced.append((mk.name, ids_m, cov_m, seq_m, rep_m))
    out_sample = MixtureSample([
        Marker(n, i, np.array(c, dtype=np.int64), s, r if any(x is not None for x in r) else None)
        for n, i, c, s, r in reduced
    ])
    mode_lines = [f"mode {m} length {n}: {mode}" for (m, n), mode in sorted(res.modes.items())]
    footer = [f"total_coverage_before={res.total_before} total_coverage_after={res.total_after} "
              f"conserved={'true' if res.conserved else 'false'}"]
    out = _output_dir(manifest, args)
    mapping_rows = [(m, ids[(m, s)], ids[(m, t)]) for (m, s), t in sorted(res.mapping.items())]
    if args.format == "structured":
        io.write_json(out / "reduction.json", {
            "modes": mode_lines, "total_before": res.total_before, "total_after": res.total_after,
            "conserved": res.conserved,
            "coverage": [{"marker": mk.name, "sequence_id": s, "coverage": int(c)}
                         for mk in out_sample.markers for s, c in zip(mk.sequence_ids, mk.coverage)],
            "mapping": [{"marker": m, "removed": a, "absorbed_by": b} for m, a, b in mapping_rows],
        })
    else:
        io.write_coverage(out / "reduced_coverage.tsv", out_sample, comments=mode_lines, footer=footer)
        io.write_table(out / "mapping.tsv", ("marker", "removed_id", "absorbed_by_id"), mapping_rows)
    print(f"{len(reads)} strings reduced to {len(res.reads)}; {footer[0]}")
    return EXIT_OK


# --- sensitivity ---------------------------------------------------------

SENSITIVITY_COLUMNS = (
    "cell", "mutation_mode", "decay", "hill_climb", "n_subpops", "n_individuals", "replicates",
    "identical_alleles_pct", "identical_markers_pct", "iterations", "f_opt_ge_f_true",
)
REPLICATE_COLUMNS = (
    "cell", "replicate", "seed", "identical_alleles", "identical_markers", "iterations", "converged",
    "best_fitness", "f_true", "f_opt_ge_f_true",
)


def cmd_sensitivity(args) -> int:
    manifest = io.read_manifest(args.manifest)
    seed = _seed(manifest, args)
    cells = manifest.get("cells")
    if not isinstance(cells, list) or not cells:
        raise io.InputError(manifest["_path"], None, "sweep needs a non-empty 'cells' list")
    reps = int(manifest.get("replicates", 1))
    known = list(manifest.get("known", [1]))
    sim = _section(manifest, "simulation")
    base = dict(_section(manifest, "mea"))
    est_cfg = _dataclass_from(EstimationConfig, _section(manifest, "estimation"), manifest, "estimation")
    specs = [_simulation_spec(manifest, sim, seed + r) for r in range(reps)]
    if any(not 0 <= c < specs[0].n_contributors for c in known):
        raise io.InputError(manifest["_path"], None, "known contributors out of range")

    summary, per_rep, timing = [], [], []
    for k, cell in enumerate(cells):
        if not isinstance(cell, dict):
            raise io.InputError(manifest["_path"], None, f"cell {k} must be a mapping")
        cell = dict(cell)
        label = str(cell.pop("label", f"cell_{k}"))
        results = []
        for r, spec in enumerate(specs):
            cfg = _mea_config(manifest, {**base, **cell}, args, seed + r)
            res = run_simulated_case(spec, known, cfg, est_cfg)
            results.append(res)
            per_rep.append((label, r, seed + r, res.identical_alleles, res.identical_markers, res.run.n_outer,
                            res.run.converged, res.run.best_fitness, res.f_true, res.f_opt_ge_f_true))
        summary.append((
            label, cfg.mutation_mode, cfg.decay, cfg.hill_climb, cfg.n_subpops, cfg.n_individuals, reps,
            100.0 * float(np.mean([x.identical_alleles for x in results])),
            100.0 * float(np.mean([x.identical_markers for x in results])),
            float(np.mean([x.run.n_outer for x in results])),
            int(sum(bool(x.f_opt_ge_f_true) for x in results)),
        ))
        timing.append((label, float(np.mean([x.wall_time for x in results]))))
        print(f"{label}: identical alleles {summary[-1][7]:.1f}%")
    out = _output_dir(manifest, args)
    if args.format == "structured":
        io.write_json(out / "sensitivity.json", {
            "cells": [dict(zip(SENSITIVITY_COLUMNS, row)) for row in summary],
            "replicates": [dict(zip(REPLICATE_COLUMNS, row)) for row in per_rep],
        })
    else:
        io.write_table(out / "sensitivity.tsv", SENSITIVITY_COLUMNS, summary)
        io.write_table(out / "replicates.tsv", REPLICATE_COLUMNS, per_rep)
    io.write_table(out / "timing.tsv", ("cell", "wall_time_s"), timing,
                   comments=["wall-clock measurements; not reproducible across runs"])
    return EXIT_OK


# --- entry point ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--manifest", required=True, help="YAML manifest (sweep file for sensitivity, "
                                                          "simulation spec for simulate)")
    common.add_argument("--seed", type=int, default=None, help="override the manifest seed")
    common.add_argument("--threads", type=int, default=None,
                        help=f"worker threads for sub-populations (default: ${THREADS_ENV} or 1)")
    common.add_argument("--output-dir", default=None, help="override the manifest output directory")
    common.add_argument("--format", choices=("delimited", "structured"), default="delimited",
                        help="tab-delimited tables or a single JSON document")
    parser = argparse.ArgumentParser(
        prog="mixdeconv",
        description="Deconvolution of STR DNA mixtures by a multiple-population evolutionary algorithm.",
        epilog=f"Environment: {THREADS_ENV} sets the default thread count. "
               "Exit codes: 0 success, 1 input error, 2 no convergence within the iteration budget.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("deconvolve", parents=[common], help="deconvolve one coverage table").set_defaults(
        func=cmd_deconvolve)
    sub.add_parser("simulate", parents=[common], help="simulate samples with a truth sidecar").set_defaults(
        func=cmd_simulate)
    sub.add_parser("reduce", parents=[common], help="collapse base-calling-error strings").set_defaults(
        func=cmd_reduce)
    sub.add_parser("sensitivity", parents=[common], help="run a sweep over algorithm settings").set_defaults(
        func=cmd_sensitivity)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except io.InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
