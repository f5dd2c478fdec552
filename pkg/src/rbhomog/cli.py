"""Command line pipeline: sample, train, validate, solve, inspect.

Each subcommand reads one key = value config file. Campaigns are resumable
(existing snapshot files are reused, not recomputed) and deterministic for a
fixed config and seed. Exit codes: 0 success, 1 configuration problem,
2 partial failures (some cases failed or a solve did not converge),
3 fatal (nothing usable produced).
"""

import os
import csv
import sys
import time
import argparse
import numpy as np
from concurrent.futures import ThreadPoolExecutor

from .config import ConfigError, parse_config, check_config
from .material import CutoffConfig
from .fom import (FomSettings, FomError, read_voxel, solve_fom, effective_fom)
from .sampling import build_plan, build_validation_plan, save_plan, read_plan
from .pod import build_basis, truncate
from .containers import (ContainerError, save_snapshot, load_snapshot,
                         save_basis, load_basis)
from .rb import RBModel, SolverSettings, solve as rb_solve, evaluate_general

__all__ = ["main"]

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_PARTIAL = 2
EXIT_FATAL = 3

VALIDATION_COLUMNS = [
    "case", "J", "t", "N1", "N2", "N3", "N4", "N5", "n_modes",
    "err_W", "err_P", "rb_iterations", "rb_assemblies", "rb_converged",
    "rb_seconds", "fom_iterations", "fom_seconds", "c_qp", "V_excl", "status",
]

SOLVE_COLUMNS = (
    [f"F{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)]
    + ["Wbar"]
    + [f"P{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)]
    + [f"C{i}{j}{k}{l}" for i in (1, 2, 3) for j in (1, 2, 3)
       for k in (1, 2, 3) for l in (1, 2, 3)]
    + ["iterations", "assemblies", "converged", "seconds", "c_qp", "V_excl"]
)


def _load(args, need_microstructure=False):
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    check_config(cfg, need_microstructure=need_microstructure)
    os.makedirs(cfg.out_dir, exist_ok=True)
    return cfg


def _cutoff_of(cfg):
    return CutoffConfig(lower=cfg.cutoff_lower, upper=cfg.cutoff_upper,
                        steepness=cfg.cutoff_steepness,
                        center=cfg.cutoff_center, enabled=cfg.cutoff_enabled)


def _fom_settings(cfg):
    return FomSettings(rtol=cfg.fom_rtol, max_iter=cfg.fom_max_iter,
                       linear_solver=cfg.linear_solver)


def _rb_settings(cfg):
    return SolverSettings(rtol=cfg.rb_rtol, xtol=cfg.rb_xtol,
                          max_iter=cfg.rb_max_iter,
                          max_assemblies=cfg.rb_max_assemblies)


def _plan_path(cfg, override):
    return override if override else os.path.join(cfg.out_dir, "plan.txt")


def _basis_path(cfg, override):
    return override if override else os.path.join(cfg.out_dir, "basis.mrb2")


def cmd_sample(args):
    cfg = _load(args)
    plan = build_plan(J_min=cfg.J_min, J_max=cfg.J_max, t_max=cfg.t_max,
                      N_det=cfg.N_det, N_dir=cfg.N_dir, N_amp=cfg.N_amp,
                      spacing=cfg.spacing, seed=cfg.seed,
                      vol_cases=cfg.vol_cases, vol_J_min=cfg.vol_J_min,
                      vol_J_max=cfg.vol_J_max)
    path = _plan_path(cfg, args.plan)
    save_plan(plan, path)
    print(f"sample: wrote {plan.size} cases to {path}")
    return EXIT_OK


def _train_one(micro, mesh, matmap, u, increments, settings):
    return solve_fom(micro, u, increments=increments, settings=settings,
                     mesh=mesh, matmap=matmap)


def cmd_train(args):
    cfg = _load(args, need_microstructure=True)
    plan = read_plan(_plan_path(cfg, args.plan))
    micro = read_voxel(cfg.microstructure)
    mesh = micro.mesh()
    matmap = micro.material_map()
    settings = _fom_settings(cfg)
    snap_dir = os.path.join(cfg.out_dir, "snapshots")
    os.makedirs(snap_dir, exist_ok=True)

    paths = [os.path.join(snap_dir, f"case_{e:04d}.mrb1")
             for e in range(plan.size)]
    todo = [e for e in range(plan.size) if not os.path.exists(paths[e])]
    failures = []

    def run(e):
        t0 = time.perf_counter()
        snap = _train_one(micro, mesh, matmap, plan.U[e],
                          cfg.fom_increments, settings)
        save_snapshot(snap, paths[e])
        return time.perf_counter() - t0

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        for e, result in zip(todo, pool.map(
                lambda e: _guarded(run, e), todo)):
            if isinstance(result, Exception):
                failures.append(e)
                print(f"train: case {e} failed: {result}", file=sys.stderr)
            else:
                print(f"train: case {e} solved in {result:.2f}s")
    reused = plan.size - len(todo)
    if reused:
        print(f"train: reused {reused} existing snapshots")

    snaps = []
    for e, p in enumerate(paths):
        if os.path.exists(p):
            snaps.append(load_snapshot(p))
    if not snaps:
        print("train: no usable snapshots, aborting", file=sys.stderr)
        return EXIT_FATAL
    try:
        basis = build_basis(snaps, N=cfg.pod_modes or None,
                            energy_tol=cfg.pod_energy_tol)
    except ValueError as exc:
        print(f"train: basis extraction failed: {exc}", file=sys.stderr)
        return EXIT_FATAL
    bpath = _basis_path(cfg, args.basis)
    save_basis(basis, bpath)
    spath = os.path.join(cfg.out_dir, "spectrum.txt")
    with open(spath, "w") as fh:
        fh.write("# mode eigenvalue eigenvalue/lambda1\n")
        for i, lam in enumerate(basis.spectrum, start=1):
            fh.write(f"{i} {lam!r} {lam / basis.spectrum[0]!r}\n")
    print(f"train: basis with {basis.N} modes from {len(snaps)} snapshots "
          f"-> {bpath}")
    return EXIT_PARTIAL if failures else EXIT_OK


def _guarded(fn, *a):
    try:
        return fn(*a)
    except (FomError, ValueError, np.linalg.LinAlgError) as exc:
        return exc


def cmd_validate(args):
    cfg = _load(args, need_microstructure=True)
    basis = load_basis(_basis_path(cfg, args.basis))
    micro = read_voxel(cfg.microstructure)
    mesh = micro.mesh()
    matmap = micro.material_map()
    if basis.n_qp != mesh.n_qp:
        raise ConfigError("basis and microstructure use different meshes")

    if args.modes:
        n_list = sorted({int(tok) for tok in args.modes.split(",")})
    else:
        n_list = [basis.N]
    for n in n_list:
        if not 1 <= n <= basis.N:
            raise ConfigError(f"mode count {n} outside 1..{basis.N}")

    vplan = build_validation_plan(cfg.val_t_max, cfg.val_directions,
                                 cfg.val_amplitudes, cfg.val_compression,
                                 spacing=cfg.spacing, seed=cfg.val_seed)
    cut = _cutoff_of(cfg)
    rbset = _rb_settings(cfg)
    models = {n: RBModel(truncate(basis, n), matmap, cutoff_config=cut,
                         settings=rbset) for n in n_list}
    fomset = _fom_settings(cfg)

    def run_case(e):
        rows = []
        u = vplan.U[e]
        base = dict(case=e, J=vplan.J[e], t=vplan.t[e],
                    **{f"N{k+1}": vplan.N[e, k] for k in range(5)})
        try:
            t0 = time.perf_counter()
            snap = solve_fom(micro, u, increments=cfg.fom_increments,
                             settings=fomset, mesh=mesh, matmap=matmap)
            fom_s = time.perf_counter() - t0
            wref, pref = effective_fom(micro, snap, mesh=mesh, matmap=matmap)
        except (FomError, ValueError) as exc:
            for n in n_list:
                rows.append({**base, "n_modes": n, "status": f"fom: {exc}"})
            return rows
        for n in n_list:
            try:
                t0 = time.perf_counter()
                state, resp = rb_solve(models[n], u,
                                       increments=cfg.rb_increments)
                rb_s = time.perf_counter() - t0
            except ValueError as exc:
                rows.append({**base, "n_modes": n, "status": f"rb: {exc}",
                             "fom_iterations": snap.iterations,
                             "fom_seconds": fom_s})
                continue
            rows.append({
                **base, "n_modes": n,
                "err_W": abs(resp.Wbar - wref) / abs(wref),
                "err_P": float(np.linalg.norm(resp.Pbar - pref)
                               / np.linalg.norm(pref)),
                "rb_iterations": state.iterations,
                "rb_assemblies": state.assemblies,
                "rb_converged": int(state.converged),
                "rb_seconds": rb_s,
                "fom_iterations": snap.iterations,
                "fom_seconds": fom_s,
                "c_qp": resp.c_qp, "V_excl": resp.V_excl,
                "status": "ok",
            })
        return rows

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        results = list(pool.map(run_case, range(vplan.size)))

    out_csv = os.path.join(cfg.out_dir, "validation.csv")
    rows = [r for case_rows in results for r in case_rows]
    with open(out_csv, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=VALIDATION_COLUMNS,
                                restval="")
        writer.writeheader()
        for r in rows:
            writer.writerow(r)

    bad = [r for r in rows if r.get("status") != "ok"]
    print(f"validate: {vplan.size} cases x {len(n_list)} mode counts "
          f"-> {out_csv}")
    for n in n_list:
        ew = [r["err_W"] for r in rows
              if r.get("status") == "ok" and r["n_modes"] == n]
        ep = [r["err_P"] for r in rows
              if r.get("status") == "ok" and r["n_modes"] == n]
        if ew:
            print(f"  N={n:3d}: median err_W {np.median(ew):.3e} "
                  f"max err_W {max(ew):.3e} median err_P {np.median(ep):.3e} "
                  f"max err_P {max(ep):.3e}")
    if bad:
        print(f"validate: {len(bad)} failed rows", file=sys.stderr)
        return EXIT_PARTIAL if len(bad) < len(rows) else EXIT_FATAL
    return EXIT_OK


def cmd_solve(args):
    cfg = _load(args, need_microstructure=True)
    basis = load_basis(_basis_path(cfg, args.basis))
    micro = read_voxel(cfg.microstructure)
    matmap = micro.material_map()
    try:
        comps = [float(tok) for tok in args.fbar.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--fbar: {exc}") from None
    if len(comps) != 9:
        raise ConfigError("--fbar needs nine comma-separated components "
                          "(row-major)")
    fbar = np.array(comps).reshape(3, 3)
    model = RBModel(basis, matmap, cutoff_config=_cutoff_of(cfg),
                    settings=_rb_settings(cfg))
    t0 = time.perf_counter()
    state, resp = evaluate_general(model, fbar, increments=cfg.rb_increments)
    seconds = time.perf_counter() - t0

    print(f"solve: Wbar = {resp.Wbar!r}")
    with np.printoptions(precision=6, suppress=False):
        print("Pbar =")
        print(resp.Pbar)
    print(f"iterations {state.iterations}, assemblies {state.assemblies}, "
          f"converged {state.converged}, {seconds:.3f}s, "
          f"c_qp {resp.c_qp}, V_excl {resp.V_excl:.4f}")

    row = (list(fbar.ravel()) + [resp.Wbar] + list(resp.Pbar.ravel())
           + list(resp.Cbar.ravel())
           + [state.iterations, state.assemblies, int(state.converged),
              seconds, resp.c_qp, resp.V_excl])
    out_csv = os.path.join(cfg.out_dir, "solves.csv")
    fresh = not os.path.exists(out_csv)
    with open(out_csv, "a", newline="") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(SOLVE_COLUMNS)
        writer.writerow(row)
    return EXIT_OK if state.converged else EXIT_PARTIAL


def cmd_inspect(args):
    basis = load_basis(args.basis)
    print(f"basis: {basis.N} modes, {basis.n_qp} quadrature points, "
          f"{basis.n_nodes} nodes")
    wn = basis.weights / basis.weights.sum()
    gram = np.einsum("ipab,jpab,p->ij", basis.modes, basis.modes, wn)
    print(f"orthonormality defect: {np.abs(gram - np.eye(basis.N)).max():.3e}")
    lam = basis.spectrum
    print(f"spectrum ({lam.size} eigenvalues, showing up to 16):")
    for i, v in enumerate(lam[:16], start=1):
        marker = " *" if i <= basis.N else ""
        print(f"  {i:3d}  {v: .6e}  {v / lam[0]: .6e}{marker}")
    if lam.size > 16:
        print(f"  ... {lam.size - 16} more")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rbhomog",
        description="Reduced-basis homogenization of hyperelastic "
                    "microstructures")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", required=True,
                           help="key = value run configuration file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed")
        p.add_argument("--out", default=None,
                       help="override the config output directory")
        p.add_argument("--threads", type=int, default=1,
                       help="parallel workers for campaign cases")

    p = sub.add_parser("sample", help="write the training plan")
    common(p)
    p.add_argument("--plan", default=None, help="plan file path override")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("train",
                       help="solve snapshots for a plan and extract the basis")
    common(p)
    p.add_argument("--plan", default=None, help="plan file path override")
    p.add_argument("--basis", default=None, help="basis file path override")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("validate",
                       help="compare the reduced model against full solves")
    common(p)
    p.add_argument("--basis", default=None, help="basis file path override")
    p.add_argument("--modes", default=None,
                   help="comma list of basis sizes, e.g. 4,8,16")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="evaluate one macroscopic state")
    common(p)
    p.add_argument("--basis", default=None, help="basis file path override")
    p.add_argument("--fbar", required=True,
                   help="nine comma-separated deformation gradient components")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("inspect", help="print basis and spectrum statistics")
    common(p, config=False)
    p.add_argument("--basis", required=True, help="basis container file")
    p.set_defaults(func=cmd_inspect)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ContainerError as exc:
        print(f"container error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"missing file: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FomError, ValueError) as exc:
        print(f"fatal: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
