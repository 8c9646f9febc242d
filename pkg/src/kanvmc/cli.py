"""Command-line surface: train / ed / observe / fidelity / bench / validate.

Every command takes --config, plus --out, --seed (reseeds model and sampler),
--threads and --desk-scale overrides.  Exit codes: 0 success, 2 config or
input error, 3 numerical abort.  All files are written atomically
(temp + rename); histories and observable series are CSV, result records are
JSON, checkpoints use the binary format in checkpoint.py.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time

import numpy as np

from . import exact, observables, vmc
from .ansatz import build_model
from .checkpoint import CheckpointError, checkpoint_load, checkpoint_save
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .spins import enumerate_sector
from .vmc import NumericalAbort


def _atomic_write(path: str, data: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        f.write(data)
    os.replace(tmp, path)


def _run_id(run: RunConfig) -> str:
    # identifies the computation, so the output block stays out of the hash
    physics = {k: v for k, v in run.raw.items() if k != "output"}
    blob = json.dumps(physics, sort_keys=True, default=str)
    blob += f"|model_seed={run.model.seed}|sampler_seed={run.sampler.seed}"
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def _history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(vmc.HISTORY_COLUMNS)
    for row in history:
        writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c]
                         for c in vmc.HISTORY_COLUMNS])
    return buf.getvalue()


def _series_csv(series: observables.ObservableSeries, tag: str) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["abscissa", "value", "stderr", "mode", "observable", "model_tag"])
    for a, v, e in zip(series.abscissa, series.values, series.errors):
        writer.writerow([repr(float(a)), repr(float(v)), repr(float(e)),
                         series.mode, series.kind, tag])
    return buf.getvalue()


def _basis_for(run: RunConfig):
    constrained = run.sampler.move == "pair_exchange"
    return enumerate_sector(run.hamiltonian.L, constrained)


def _sector_dim(run: RunConfig) -> int:
    if run.sampler.move == "pair_exchange":
        return math.comb(run.hamiltonian.L, run.hamiltonian.L // 2)
    return 2**run.hamiltonian.L


def _exact_state(run: RunConfig, model) -> observables.ExactState:
    basis = _basis_for(run)
    return observables.ExactState(
        basis=basis, vector=exact.model_vector(model, basis),
        msr_frame=run.hamiltonian.msr,
    )


def _observable_series(state, name: str, h_field: float) -> observables.ObservableSeries:
    if name.startswith("spin_spin_"):
        return observables.spin_spin_series(state, name[-1])
    if name == "isotropic":
        return observables.isotropic_series(state)
    if name == "dimer_dimer":
        return observables.dimer_series(state)
    if name == "structure_factor":
        return observables.structure_factor_series(state)
    if name == "m2":
        value, err = observables.tfim_m2(state)
        return observables.ObservableSeries(
            kind="m2", abscissa=np.array([h_field]), values=np.array([value]),
            errors=np.array([err]), mode="exact" if isinstance(state, observables.ExactState) else "mc",
        )
    raise ConfigError(f"unknown observable {name!r}")


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_train(run: RunConfig, quiet: bool = False) -> int:
    out_dir = run.output.dir
    os.makedirs(out_dir, exist_ok=True)
    rid = _run_id(run)
    epochs = run.training.epochs
    every = max(1, epochs // 20)

    def progress(epoch, row):
        if not quiet and (epoch % every == 0 or epoch == epochs - 1):
            print(f"[{rid}] epoch {epoch:>6d}  E={row['energy']: .6f}  "
                  f"var={row['variance']:.3e}  acc={row['acceptance']:.3f}  "
                  f"lr={row['lr']:.2e}  h={row['bias_h']:.4f}", file=sys.stderr)

    t0 = time.perf_counter()
    result = vmc.train(run, progress=progress)
    wall = time.perf_counter() - t0

    history_path = os.path.join(out_dir, f"{rid}_history.csv")
    checkpoint_path = os.path.join(out_dir, f"{rid}_model.kanvmc")
    results_path = os.path.join(out_dir, f"{rid}_results.json")

    if run.output.emit_history:
        _atomic_write(history_path, _history_csv(result.history))
    if run.output.emit_checkpoint:
        checkpoint_save(checkpoint_path, result.model)

    record = {
        "run_id": rid,
        "config": run.raw,
        "model_seed": run.model.seed,
        "sampler_seed": run.sampler.seed,
        "epochs": epochs,
        "final": {k: result.history[-1][k] for k in vmc.HISTORY_COLUMNS if k != "epoch"},
        "wall_clock_s": wall,
        "history_path": history_path if run.output.emit_history else None,
        "checkpoint_path": checkpoint_path if run.output.emit_checkpoint else None,
    }

    dim = _sector_dim(run)
    compare = run.output.compare_ed == "always" or (
        run.output.compare_ed == "auto" and dim <= 20_000
    )
    if compare:
        basis = _basis_for(run)
        sol = exact.ed_solve(run.hamiltonian, basis, k=run.ed.k, tol=run.ed.tol)
        v = exact.model_vector(result.model, basis)
        e_exact = exact.exact_expectation(v, basis, run.hamiltonian)
        record["ed"] = {
            "eigenvalues": [float(x) for x in sol.eigenvalues],
            "energy_variational": e_exact,
            "rel_error_mc": observables.relative_error(
                result.history[-1]["energy"], sol.ground_energy),
            "rel_error_variational": observables.relative_error(e_exact, sol.ground_energy),
            "fidelity": exact.fidelity(v, sol),
        }
        if not quiet:
            print(f"[{rid}] ED ground {sol.ground_energy:.8f}  "
                  f"rel_err {record['ed']['rel_error_variational']:.3e}  "
                  f"fidelity {record['ed']['fidelity']:.5f}", file=sys.stderr)

    if run.output.emit_results:
        _atomic_write(results_path, json.dumps(record, indent=2, default=str) + "\n")
    print(json.dumps({"run_id": rid, "final_energy": result.history[-1]["energy"],
                      "wall_clock_s": wall}))
    return 0


def cmd_ed(run: RunConfig) -> int:
    out_dir = run.output.dir
    os.makedirs(out_dir, exist_ok=True)
    rid = _run_id(run)
    basis = _basis_for(run)
    t0 = time.perf_counter()
    sol = exact.ed_solve(run.hamiltonian, basis, k=run.ed.k, tol=run.ed.tol)
    wall = time.perf_counter() - t0
    record = {
        "run_id": rid,
        "kind": run.hamiltonian.kind,
        "L": run.hamiltonian.L,
        "sector": "zero_magnetization" if basis.constrained else "full",
        "dim": basis.size,
        "k": run.ed.k,
        "eigenvalues": [float(x) for x in sol.eigenvalues],
        "wall_clock_s": wall,
    }
    _atomic_write(os.path.join(out_dir, f"{rid}_ed.json"), json.dumps(record, indent=2) + "\n")
    if "observe" in run.raw:
        state = observables.ExactState(basis=basis, vector=sol.eigenvectors[:, 0],
                                       msr_frame=run.hamiltonian.msr)
        for name in run.observe.observables:
            series = _observable_series(state, name, run.hamiltonian.h_field)
            _atomic_write(os.path.join(out_dir, f"{rid}_ed_{name}.csv"),
                          _series_csv(series, f"{rid}-ed"))
    print(json.dumps(record))
    return 0


def _load_matching_model(run: RunConfig, checkpoint: str):
    model = checkpoint_load(checkpoint)
    if model.L != run.hamiltonian.L:
        raise ConfigError(
            f"checkpoint has L={model.L} but the config says L={run.hamiltonian.L}")
    if model.kind != run.model.kind:
        raise ConfigError(
            f"checkpoint holds a {model.kind} but the config says {run.model.kind}")
    return model


def cmd_observe(run: RunConfig, checkpoint: str) -> int:
    out_dir = run.output.dir
    os.makedirs(out_dir, exist_ok=True)
    rid = _run_id(run)
    model = _load_matching_model(run, checkpoint)
    if run.observe.mode == "exact":
        if _sector_dim(run) > exact.DIM_GUARD:
            raise ConfigError("space too large for exact-mode observables")
        state = _exact_state(run, model)
    else:
        from .sampler import draw_samples, init_chains, metropolis_sweep

        cfg = run.sampler
        if run.observe.n_samples:
            from dataclasses import replace

            per = max(run.observe.n_samples // cfg.n_chains, 1)
            cfg = replace(cfg, n_samples=per * cfg.n_chains)
        ens = init_chains(cfg, model.L, model)
        metropolis_sweep(ens, model, cfg.warmup_sweeps)
        samples, _ = draw_samples(ens, model, cfg)
        state = observables.SampledState(
            model=model, samples=samples, msr_frame=run.hamiltonian.msr,
            sector_constrained=cfg.move == "pair_exchange",
        )
    for name in run.observe.observables:
        series = _observable_series(state, name, run.hamiltonian.h_field)
        path = os.path.join(out_dir, f"{rid}_{name}.csv")
        _atomic_write(path, _series_csv(series, rid))
        print(path)
    return 0


def cmd_fidelity(run: RunConfig, checkpoint: str) -> int:
    model = _load_matching_model(run, checkpoint)
    basis = _basis_for(run)
    if basis.size > exact.DIM_GUARD:
        raise ConfigError("space too large for the fidelity pipeline")
    sol = exact.ed_solve(run.hamiltonian, basis, k=run.ed.k, tol=run.ed.tol)
    v = exact.model_vector(model, basis)
    value = exact.fidelity(v, sol)
    print(json.dumps({"fidelity": value,
                      "ground_energy": sol.ground_energy,
                      "eigenvalues": [float(x) for x in sol.eigenvalues]}))
    return 0


def cmd_bench(run: RunConfig) -> int:
    out_dir = run.output.dir
    os.makedirs(out_dir, exist_ok=True)
    spec = run.model
    rows = []
    for L in run.bench.lengths:
        from dataclasses import replace

        model = build_model(replace(spec, L=L))
        rng = np.random.default_rng(spec.seed)
        bits = (rng.random((1, L)) < 0.5).astype(np.uint8)
        for _ in range(run.bench.warmup_passes):
            model.log_psi_batch(bits)
        t0 = time.perf_counter()
        for _ in range(run.bench.passes):
            model.log_psi_batch(bits)
        mean_latency = (time.perf_counter() - t0) / run.bench.passes
        rows.append((L, mean_latency))
        print(f"L={L:>4d}  {mean_latency * 1e6:9.2f} us/pass", file=sys.stderr)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["L", "mean_forward_s", "passes", "warmup_passes", "kind",
                     "reflected"])
    for L, lat in rows:
        writer.writerow([L, repr(lat), run.bench.passes, run.bench.warmup_passes,
                         spec.kind, int(spec.reflected)])
    path = os.path.join(out_dir, "bench.csv")
    _atomic_write(path, buf.getvalue())
    print(path)
    return 0


def cmd_validate(run: RunConfig) -> int:
    print(json.dumps({
        "ok": True,
        "model": {"kind": run.model.kind, "reflected": run.model.reflected,
                  "L": run.model.L},
        "hamiltonian": {"kind": run.hamiltonian.kind, "L": run.hamiltonian.L,
                        "msr": run.hamiltonian.msr},
        "sampler": {"move": run.sampler.move, "n_chains": run.sampler.n_chains,
                    "n_samples": run.sampler.n_samples},
        "training": {"epochs": run.training.epochs,
                     "annealing": run.training.annealing is not None},
    }))
    return 0


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kanvmc")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("train", "ed", "observe", "fidelity", "bench", "validate"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--out", default=None, help="output directory override")
        p.add_argument("--seed", type=int, default=None,
                       help="override both model and sampler seeds")
        p.add_argument("--threads", type=int, default=None,
                       help="cap BLAS threads (best effort)")
        p.add_argument("--desk-scale", action="store_true",
                       help="cap chains/samples/warmup at desk scale")
        if name in ("observe", "fidelity"):
            p.add_argument("--checkpoint", required=True)
        if name == "train":
            p.add_argument("--quiet", action="store_true")
    return parser


def _limit_threads(n: int | None):
    if n is None:
        return None
    try:
        import threadpoolctl

        return threadpoolctl.threadpool_limits(n)
    except ImportError:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(n)
        return None


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        run = load_config(args.config)
        run = apply_overrides(run, seed=args.seed, out_dir=args.out,
                              desk_scale=args.desk_scale)
        _limit_threads(args.threads)
        if args.command == "train":
            return cmd_train(run, quiet=args.quiet)
        if args.command == "ed":
            return cmd_ed(run)
        if args.command == "observe":
            return cmd_observe(run, args.checkpoint)
        if args.command == "fidelity":
            return cmd_fidelity(run, args.checkpoint)
        if args.command == "bench":
            return cmd_bench(run)
        if args.command == "validate":
            return cmd_validate(run)
        raise AssertionError(args.command)
    except (ConfigError, CheckpointError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
