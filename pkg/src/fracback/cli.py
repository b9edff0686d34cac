"""Command-line front end.

Subcommands: forward, backward, convergence, weights, oracle.

Runs are configured by an INI-style file (flat key=value entries under
[section] headers; grammar documented in the README). Every key can be
overridden on the command line as --section.key=value. Each run writes a
manifest.txt capturing all resolved inputs, CSV outputs with LF endings and
shortest-roundtrip floats, and (unless disabled) PNG figures next to the
delimited output. Exit codes: 0 success, 1 numeric failure, 2 invalid
configuration, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    FracbackError,
    InvalidArgumentError,
    NoConvergenceError,
    NumericFailureError,
)
from .frac_time import TimeGrid, cq_weights
from .backward_recon import ReconConfig, reconstruct
from .experiments import (
    ErrorRecord,
    ExperimentSpec,
    NoiseSpec,
    add_noise,
    coefficient_by_id,
    fit_rate,
    initial_by_id,
    run_convergence,
)
from .forward_solver import ForwardProblem, solve_forward
from .grid_fem import (
    NodalVector,
    build_space,
    evaluate_at_points,
    l2_error,
    l2_norm,
    l2_project,
)
from .spectral_oracle import SpectralSolution, evaluate as oracle_evaluate

OUTROOT_ENV = "FRACBACK_OUTROOT"


# ---------------------------------------------------------------------------
# configuration plumbing
# ---------------------------------------------------------------------------

class RunConfig:
    """Parsed configuration with typed getters; every resolved value
    (defaults included) is recorded for the run manifest."""

    def __init__(self, parser: configparser.ConfigParser):
        self._cp = parser
        self.resolved = {}

    @classmethod
    def load(cls, path, overrides):
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        if path is not None:
            try:
                with open(path, "r", encoding="utf-8") as fh:
                    cp.read_file(fh)
            except OSError:
                raise
            except (configparser.Error, UnicodeDecodeError) as exc:
                raise InvalidArgumentError(f"cannot parse config {path}: {exc}") from exc
        for key, value in overrides:
            try:
                section, option = key.split(".", 1)
            except ValueError as exc:
                raise InvalidArgumentError(
                    f"override {key!r} must be section.key=value"
                ) from exc
            if not cp.has_section(section):
                cp.add_section(section)
            cp.set(section, option, value)
        return cls(cp)

    def get(self, section, key, default=None, cast=str):
        raw = None
        if self._cp.has_option(section, key):
            raw = self._cp.get(section, key).strip()
        if raw is None or raw == "":
            if default is None:
                raise InvalidArgumentError(f"missing required config key [{section}] {key}")
            value = default
        else:
            try:
                if cast is bool:
                    value = raw.lower() in ("1", "true", "yes", "on")
                else:
                    value = cast(raw)
            except ValueError as exc:
                raise InvalidArgumentError(
                    f"bad value for [{section}] {key}: {raw!r}"
                ) from exc
        self.resolved[f"{section}.{key}"] = value
        return value

    def has(self, section, key):
        return self._cp.has_option(section, key) and self._cp.get(section, key).strip() != ""


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return str(value)


def _write_csv(path: Path, header, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _write_manifest(outdir: Path, command: str, entries: dict):
    lines = [f"command = {command}", f"fracback_version = {__version__}"]
    for key in sorted(entries):
        lines.append(f"{key} = {_fmt(entries[key])}")
    with open(outdir / "manifest.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _resolve_outdir(args, cfg: RunConfig | None, command: str) -> Path:
    if args.out:
        out = Path(args.out)
    elif cfg is not None and cfg.has("output", "dir"):
        out = Path(cfg.get("output", "dir"))
    else:
        root = os.environ.get(OUTROOT_ENV, "runs")
        out = Path(root) / command
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_problem(cfg: RunConfig):
    dim = cfg.get("problem", "dim", cast=int)
    if dim not in (1, 2):
        raise InvalidArgumentError(f"dim must be 1 or 2, got {dim}")
    coeff_id = cfg.get("problem", "coefficient")
    alpha = cfg.get("problem", "alpha", cast=float)
    T = cfg.get("problem", "T", default=1.0, cast=float)
    init_id = cfg.get("problem", "initial", default="smooth")
    source_id = cfg.get("problem", "source", default="none")
    coeff = coefficient_by_id(coeff_id, dim)
    u0_field = initial_by_id(init_id, dim)
    source = _source_by_id(source_id, dim)
    return dim, coeff, alpha, T, u0_field, source


def _source_by_id(ident: str, dim: int):
    if ident in ("none", ""):
        return None
    if ident.startswith("const:"):
        try:
            c = float(ident.split(":", 1)[1])
        except ValueError as exc:
            raise InvalidArgumentError(f"bad source id {ident!r}") from exc
        if dim == 1:
            return lambda x, t: np.full_like(np.asarray(x, dtype=float), c)
        return lambda x, y, t: np.full_like(np.asarray(x, dtype=float), c)
    raise InvalidArgumentError(f"unknown source id {ident!r} (supported: none, const:<c>)")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_forward(args) -> int:
    cfg = RunConfig.load(args.config, args.overrides)
    dim, coeff, alpha, T, u0_field, source = _load_problem(cfg)
    M = cfg.get("grid", "M", cast=int)
    N = cfg.get("grid", "N", cast=int)
    cg_tol = cfg.get("solver", "cg_tol", default=1e-10, cast=float)
    plots = (not args.no_plots) and cfg.get("output", "plots", default=True, cast=bool)
    dump_states = cfg.get("output", "dump_states", default=False, cast=bool)
    outdir = _resolve_outdir(args, cfg, "forward")

    space = build_space(dim, M)
    problem = ForwardProblem(
        space=space, coeff=coeff, alpha=alpha, grid=TimeGrid(T, N),
        initial=l2_project(space, u0_field), source=source,
    )
    started = time.perf_counter()
    traj = solve_forward(problem, cg_tol=cg_tol)
    elapsed = time.perf_counter() - started

    rows = []
    for n in range(N + 1):
        rows.append((n, n * traj.grid.tau, l2_norm(space, traj.nodal(n))))
    _write_csv(outdir / "trajectory.csv", ["n", "t_n", "l2_norm"], rows)
    if dump_states:
        coords = space.interior_coords()
        coord_cols = ["x"] if dim == 1 else ["x", "y"]
        for n in range(N + 1):
            _write_csv(
                outdir / f"state_{n:04d}.csv",
                coord_cols + ["u"],
                np.column_stack([coords, traj.U[n]]),
            )
    _write_manifest(outdir, "forward", cfg.resolved)
    with open(outdir / "timings.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"solve_seconds = {elapsed:.3f}\n")
        fh.write(f"cg_iterations_total = {sum(traj.iterations)}\n")
    if plots:
        from .report import plot_trajectory

        plot_trajectory(traj.grid.times, [r[2] for r in rows], outdir / "trajectory.png")
    if not args.quiet:
        print(f"forward: N={N} steps on M={M} grid -> {outdir/'trajectory.csv'} ({elapsed:.1f}s)")
    return 0


def _generate_observation(cfg, args, dim, coeff, alpha, T, u0_field, source, space):
    """Fine-grid forward solve, transfer to the experiment grid, noise, and
    the automatic source pre-correction (all as NodalVectors on `space`)."""
    fine_M = cfg.get("data", "fine_M", default=99, cast=int)
    fine_N = cfg.get("data", "fine_N", default=500, cast=int)
    delta = cfg.get("backward", "delta", default=0.0, cast=float)
    seed = args.seed if args.seed is not None else cfg.get("data", "seed", default=0, cast=int)
    cfg.resolved["data.seed"] = seed

    fine_space = build_space(dim, fine_M)
    fine_problem = ForwardProblem(
        space=fine_space, coeff=coeff, alpha=alpha, grid=TimeGrid(T, fine_N),
        initial=l2_project(fine_space, u0_field), source=source,
    )
    fine_terminal = solve_forward(fine_problem).terminal
    g_exact = NodalVector(
        evaluate_at_points(fine_space, fine_terminal, space.interior_coords()), space
    )
    obs = add_noise(g_exact, NoiseSpec(delta=delta, seed=seed))
    g_obs = obs.vector
    if source is not None:
        # subtract the zero-initial source response so the reconstruction
        # sees homogeneous terminal data
        zero_problem = ForwardProblem(
            space=space, coeff=coeff, alpha=alpha,
            grid=TimeGrid(T, cfg.get("grid", "N", cast=int)),
            initial=space.zeros(), source=source,
        )
        g_obs = g_obs - solve_forward(zero_problem).terminal
    return g_obs, obs.realized_l2, delta


def cmd_backward(args) -> int:
    cfg = RunConfig.load(args.config, args.overrides)
    dim, coeff, alpha, T, u0_field, source = _load_problem(cfg)
    M = cfg.get("grid", "M", cast=int)
    N = cfg.get("grid", "N", cast=int)
    gamma = cfg.get("backward", "gamma", cast=float)
    method = cfg.get("backward", "method", default="cg")
    krylov_tol = cfg.get("backward", "krylov_tol", default=1e-8, cast=float)
    max_iters = cfg.get("backward", "max_iters", default=400, cast=int)
    plots = (not args.no_plots) and cfg.get("output", "plots", default=True, cast=bool)
    outdir = _resolve_outdir(args, cfg, "backward")

    space = build_space(dim, M)
    started = time.perf_counter()
    g_obs, realized, delta = _generate_observation(
        cfg, args, dim, coeff, alpha, T, u0_field, source, space
    )
    problem = ForwardProblem(
        space=space, coeff=coeff, alpha=alpha, grid=TimeGrid(T, N), initial=space.zeros()
    )
    recon_cfg = ReconConfig(
        gamma=gamma, krylov_tol=krylov_tol, max_iters=max_iters, method=method
    )
    converged = True
    try:
        result = reconstruct(problem, g_obs, recon_cfg)
    except NoConvergenceError as exc:
        result = exc.result
        converged = False
    elapsed = time.perf_counter() - started

    ref = l2_project(space, u0_field)
    abs_err = l2_norm(space, result.u0_rec - ref)
    ref_norm = l2_norm(space, ref)
    coords = space.interior_coords()
    coord_cols = ["x"] if dim == 1 else ["x", "y"]
    _write_csv(
        outdir / "recon.csv",
        coord_cols + ["u0_rec", "u0_proj", "diff"],
        np.column_stack([coords, result.u0_rec.values, ref.values,
                         result.u0_rec.values - ref.values]),
    )
    _write_csv(
        outdir / "summary.csv",
        ["gamma", "delta", "realized_noise", "abs_error", "rel_error",
         "error_vs_exact", "iterations", "qbv_residual", "converged"],
        [(gamma, delta, realized, abs_err,
          abs_err / ref_norm if ref_norm > 0 else abs_err,
          l2_error(space, result.u0_rec, u0_field),
          result.iterations, result.qbv_residual, converged)],
    )
    _write_manifest(outdir, "backward", cfg.resolved)
    with open(outdir / "timings.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"total_seconds = {elapsed:.3f}\n")
    if plots:
        from .report import plot_reconstruction

        plot_reconstruction(space, result.u0_rec, ref, outdir / "recon.png")
    if not args.quiet:
        state = "converged" if converged else "NOT converged"
        print(f"backward: gamma={gamma:g} delta={delta:g} {state} "
              f"in {result.iterations} iterations -> {outdir/'recon.csv'}")
    return 0 if converged else 1


def _record_rows(records):
    header = ["delta", "h", "tau", "gamma", "M", "N", "abs_error", "rel_error",
              "error_vs_exact", "realized_noise", "iterations", "converged"]
    rows = [
        (r.delta, r.h, r.tau, r.gamma, r.M, r.N, r.abs_error, r.rel_error,
         r.error_vs_exact, r.realized_noise, r.iterations, r.converged)
        for r in records
    ]
    return header, rows


def cmd_convergence(args) -> int:
    cfg = RunConfig.load(args.config, args.overrides)
    dim, coeff, alpha, T, u0_field, source = _load_problem(cfg)
    if source is not None:
        raise InvalidArgumentError("convergence sweeps require source = none")
    deltas = tuple(
        float(tok) for tok in cfg.get("sweep", "deltas").split(",") if tok.strip()
    )
    plots = (not args.no_plots) and cfg.get("output", "plots", default=True, cast=bool)
    outdir = _resolve_outdir(args, cfg, "convergence")

    synthetic = cfg.get("sweep", "synthetic_rate", default="", cast=str)
    if synthetic != "":
        # plumbing self-test: emit an exact power law without solving
        rate = float(synthetic)
        records = [
            ErrorRecord(delta=d, h=0.0, tau=0.0, gamma=0.0, M=0, N=0,
                        abs_error=d**rate, rel_error=d**rate, error_vs_exact=d**rate,
                        realized_noise=0.0, iterations=0, converged=True, wall_time=0.0)
            for d in deltas
        ]
        fit = fit_rate([(r.delta, r.rel_error) for r in records])
        cfg.resolved["sweep.synthetic_rate"] = rate
    else:
        spec = ExperimentSpec(
            dim=dim,
            coefficient=cfg.resolved["problem.coefficient"],
            alpha=alpha,
            T=T,
            initial=cfg.resolved["problem.initial"],
            deltas=deltas,
            coupling=cfg.get("sweep", "coupling", default="smooth_a1"),
            seed=(args.seed if args.seed is not None
                  else cfg.get("data", "seed", default=0, cast=int)),
            fine_M=cfg.get("data", "fine_M", default=99, cast=int),
            fine_N=cfg.get("data", "fine_N", default=500, cast=int),
            krylov_tol=cfg.get("backward", "krylov_tol", default=1e-8, cast=float),
            max_iters=cfg.get("backward", "max_iters", default=400, cast=int),
            method=cfg.get("backward", "method", default="cg"),
            noise_free=cfg.get("sweep", "noise_free", default=False, cast=bool),
        )
        cfg.resolved["data.seed"] = spec.seed
        for d in spec.deltas:
            c = spec.coupling_for(d)
            cfg.resolved[f"coupling.delta={d!r}"] = f"M={c.M} N={c.N} gamma={c.gamma!r}"
        try:
            out = run_convergence(spec, threads=args.threads)
        except NumericFailureError as exc:
            records = getattr(exc, "records", [])
            if records:
                header, rows = _record_rows(records)
                _write_csv(outdir / "rates.csv", header, rows)
            _write_manifest(outdir, "convergence", cfg.resolved)
            raise
        records, fit = out.records, out.fit

    header, rows = _record_rows(records)
    _write_csv(outdir / "rates.csv", header, rows)
    with open(outdir / "fit.txt", "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"slope = {_fmt(fit.slope)}\n")
        fh.write(f"intercept = {_fmt(fit.intercept)}\n")
        fh.write(f"residual_norm = {_fmt(fit.residual_norm)}\n")
        fh.write(f"n_points = {fit.n_points}\n")
    _write_manifest(outdir, "convergence", cfg.resolved)
    with open(outdir / "timings.txt", "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(f"delta={r.delta:g}: {r.wall_time:.3f}s\n")
    if plots:
        from .report import plot_rates

        plot_rates(records, fit, outdir / "rates.png")
    if not args.quiet:
        print(f"convergence: {len(records)} points, fitted slope {fit.slope:.4f} "
              f"-> {outdir/'rates.csv'}")
    return 0


def cmd_weights(args) -> int:
    w = cq_weights(args.alpha, args.steps)
    outdir = _resolve_outdir(args, None, "weights")
    rows = [(j, w.omega[j], w.sigma[j]) for j in range(args.steps + 1)]
    _write_csv(outdir / "weights.csv", ["j", "omega", "sigma"], rows)
    _write_manifest(outdir, "weights", {"alpha": args.alpha, "steps": args.steps})
    if not args.quiet:
        print(f"weights: alpha={args.alpha} N={args.steps} -> {outdir/'weights.csv'}")
    return 0


def _parse_modes(spec: str, dim: int):
    amps = {}
    try:
        for part in spec.split(","):
            idx, c = part.rsplit(":", 1)
            if dim == 1:
                amps[int(idx)] = float(c)
            else:
                k, l = idx.split(".")
                amps[(int(k), int(l))] = float(c)
    except ValueError as exc:
        raise InvalidArgumentError(f"bad modes spec {spec!r}") from exc
    return amps


def cmd_oracle(args) -> int:
    amps = _parse_modes(args.modes, args.dim)
    sol = SpectralSolution.from_sine_amplitudes(args.alpha, args.diffusivity, amps, dim=args.dim)
    outdir = _resolve_outdir(args, None, "oracle")
    n = args.samples
    xs = np.linspace(0.0, 1.0, n)
    if args.dim == 1:
        vals = oracle_evaluate(sol, xs, args.time)
        rows = np.column_stack([xs, vals])
        header = ["x", "u"]
    else:
        X, Y = np.meshgrid(xs, xs, indexing="xy")
        vals = oracle_evaluate(sol, X.ravel(), args.time, Y.ravel())
        rows = np.column_stack([X.ravel(), Y.ravel(), vals])
        header = ["x", "y", "u"]
    _write_csv(outdir / "oracle.csv", header, rows)
    _write_manifest(
        outdir, "oracle",
        {"alpha": args.alpha, "diffusivity": args.diffusivity, "modes": args.modes,
         "t": args.time, "samples": n, "dim": args.dim},
    )
    if not args.quiet:
        print(f"oracle: {len(rows)} samples at t={args.time} -> {outdir/'oracle.csv'}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing / dispatch
# ---------------------------------------------------------------------------

def _split_overrides(extras):
    overrides = []
    for tok in extras:
        if tok.startswith("--") and "=" in tok and "." in tok.split("=", 1)[0]:
            key, value = tok[2:].split("=", 1)
            overrides.append((key, value))
        else:
            raise InvalidArgumentError(
                f"unrecognized argument {tok!r} (overrides look like --section.key=value)"
            )
    return overrides


def _common_flags(p, with_config=True):
    if with_config:
        p.add_argument("config", help="path to the INI run configuration")
    p.add_argument("--out", help="output directory (default: [output] dir, "
                                 f"else ${OUTROOT_ENV}/<command>)")
    p.add_argument("--seed", type=int, default=None, help="override the noise seed")
    p.add_argument("--threads", type=int, default=1, help="parallel sweep points")
    p.add_argument("--no-plots", action="store_true", help="skip PNG rendering")
    p.add_argument("--quiet", action="store_true")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="fracback",
        description="Forward subdiffusion solves and quasi-boundary-value "
                    "backward reconstruction on the unit interval/square.",
    )
    parser.add_argument("--version", action="version", version=f"fracback {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, fn in (("forward", cmd_forward), ("backward", cmd_backward),
                     ("convergence", cmd_convergence)):
        p = sub.add_parser(name)
        _common_flags(p)
        p.set_defaults(fn=fn)

    pw = sub.add_parser("weights", help="dump CQ weight/partial-sum table as CSV")
    pw.add_argument("--alpha", type=float, required=True)
    pw.add_argument("--steps", type=int, required=True)
    _common_flags(pw, with_config=False)
    pw.set_defaults(fn=cmd_weights)

    po = sub.add_parser("oracle", help="sample the frozen-coefficient closed-form solution")
    po.add_argument("--alpha", type=float, required=True)
    po.add_argument("--diffusivity", type=float, default=1.0)
    po.add_argument("--modes", default="1:1.0",
                    help="1D: 'k:c,...'; 2D: 'k.l:c,...' (plain sine amplitudes)")
    po.add_argument("--time", type=float, default=1.0)
    po.add_argument("--samples", type=int, default=101)
    po.add_argument("--dim", type=int, default=1, choices=(1, 2))
    _common_flags(po, with_config=False)
    po.set_defaults(fn=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        args.overrides = _split_overrides(extras)
        return args.fn(args)
    except InvalidArgumentError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericFailureError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 1
    except FracbackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
