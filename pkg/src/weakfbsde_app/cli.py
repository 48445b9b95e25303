#!filepath: src/weakfbsde_app/cli.py
from __future__ import annotations

from pathlib import Path
from typing import Any, Mapping, NoReturn, Optional, Sequence

import numpy as np
import typer

from weakfbsde_app.control.experiments import (
    diffusion_control_experiment,
    drift_control_experiment,
    hamiltonian_probes,
    hamiltonian_table,
)
from weakfbsde_app.errors import ConfigurationError, LabError
from weakfbsde_app.mgcheck.checks import (
    check_cross_variation,
    check_martingale,
    check_quadratic_variation,
    feynman_kac_residual,
    moment_bounds,
)
from weakfbsde_app.mgcheck.nodal import nodal_bounds
from weakfbsde_app.mgcheck.report import CheckReport
from weakfbsde_app.pde.diagnostics import pde_residual, regularity_estimates
from weakfbsde_app.pde.field import DecouplingField
from weakfbsde_app.pde.grid import parse_grid, require_pde_dim
from weakfbsde_app.pde.quasilinear import solve_quasilinear
from weakfbsde_app.problem.catalog import CATALOG, get_problem
from weakfbsde_app.problem.coefficients import CoefficientSet
from weakfbsde_app.records import write_columnar
from weakfbsde_app.reporting import print_mapping, print_table, write_reports
from weakfbsde_app.settings import AppConfig, ExperimentConfig, Settings, SettingsError, get_settings, load_app_config
from weakfbsde_app.simulate.bundle import PathBundle, time_partition
from weakfbsde_app.simulate.euler import build_fbsde_solution, euler_forward
from weakfbsde_app.simulate.martingale import martingale_parts, residual_orthogonal_martingale
from weakfbsde_app.utils.logger import get_logger

app = typer.Typer(help="Weak-formulation FBSDE laboratory: solve, simulate, verify, control.")
control_app = typer.Typer(help="Stochastic control experiments and Hamiltonian tables.")
app.add_typer(control_app, name="control")
logger = get_logger(__name__)

ALL_CHECKS = ("MX", "MY", "QV", "CV", "FK", "moments")


def _abort(exc: Exception) -> NoReturn:
    logger.error(f"{type(exc).__name__}: {exc}")
    typer.echo(f"error: {exc}", err=True)
    raise typer.Exit(code=getattr(exc, "exit_code", 2)) from exc


def _settings(config: Optional[Path]) -> Settings:
    base = get_settings()
    if config is None:
        return base
    return Settings(app=load_app_config(base.paths, overlay=config), paths=base.paths)


def _experiment(
    config: Optional[Path],
    problem: str,
    grid: Optional[str] = None,
    out: Optional[Path] = None,
    **simulation: Any,
) -> tuple[AppConfig, ExperimentConfig, CoefficientSet]:
    settings = _settings(config)
    app_cfg = settings.app
    exp = ExperimentConfig.from_app(app_cfg, problem, settings.paths.root, simulation=simulation)
    coeffs = get_problem(exp.problem, **exp.params)
    if grid:
        g = parse_grid(grid, T=exp.grid.T, dim=coeffs.dim_x)
        exp = exp.model_copy(update={"grid": exp.grid.model_copy(update={"n_t": g.n_t, "n_x": g.n_x[0], "lo": g.lo[0], "hi": g.hi[0]})})
    if out is not None:
        exp = exp.model_copy(update={"output_dir": out})
    return app_cfg, exp, coeffs


def _run_dir(exp: ExperimentConfig, command: str) -> Path:
    return Path(exp.output_dir) / command / exp.problem


def _upper(name: str, statistic: float, bound: float, details: Mapping[str, Any]) -> dict[str, Any]:
    return CheckReport(
        name=name,
        statistic=float(statistic),
        standard_error=0.0,
        threshold=float(bound),
        passed=bool(statistic <= bound),
        form="upper-bound",
        details=details,
    ).to_record()


@app.command()
def solve(
    problem: str = typer.Option(..., help="Catalog problem id"),
    grid: Optional[str] = typer.Option(None, help="Grid as nt,nx,lo,hi"),
    config: Optional[Path] = typer.Option(None, help="YAML or JSON overlay"),
    out: Optional[Path] = typer.Option(None, help="Output directory"),
    x0: float = typer.Option(0.0, help="Point where u(0, x0) is reported"),
) -> None:
    """Solve the quasilinear PDE and write the decoupling field with diagnostics."""
    try:
        _, exp, coeffs = _experiment(config, problem, grid, out)
        g = exp.grid.build(coeffs.dim_x)
        require_pde_dim(g)
        opts = exp.picard.options()
        field = solve_quasilinear(coeffs, g, opts)
        residual = pde_residual(field, coeffs, theta=opts.theta)
        regularity = regularity_estimates(field, alpha=0.5, delta=0.1 * g.T)
        run = _run_dir(exp, "solve")
        field.save(run / "field.txt")
        u0 = float(field.value(0.0, np.full((1, coeffs.dim_x), x0))[0])
        records = [
            _upper("pde-residual", residual.sup_residual, float("inf"), {"l2": residual.l2_residual}),
            _upper(
                "regularity",
                regularity.holder_alpha_du,
                float("inf"),
                {"sup_u": regularity.sup_u, "sup_du": regularity.sup_du, "holder_t_half": regularity.holder_t_half},
            ),
        ]
        notes = [
            f"u(0, {x0}) = {u0:.10g}",
            f"Picard iterations: {field.meta.get('picard_iters_total')}",
            f"boundary: {field.meta.get('boundary')}, theta: {field.meta.get('theta')}",
        ]
        write_reports(run, f"solve {problem}", records, notes)
    except (LabError, SettingsError) as e:
        _abort(e)
    print_table(f"solve {problem}", records)
    typer.echo(notes[0])


def _simulation_summary(bundle: PathBundle, coeffs: CoefficientSet) -> dict[str, Any]:
    parts = martingale_parts(bundle, coeffs)
    increments = parts.MX[:, -1, 0] - parts.MX[:, 0, 0]
    sigma2 = parts.coefficients.sigma[..., 0, 0] ** 2
    summary: dict[str, Any] = {
        "paths": bundle.n_paths,
        "steps": bundle.n_t,
        "E[(M_T - M_0)^2]": float(np.mean(increments**2)),
        "E[int sigma^2 dt]": float(np.mean(sigma2 @ bundle.dts)),
        "exit_fraction": bundle.exit_fraction,
    }
    if bundle.drift_path is not None:
        summary["mean K"] = float(np.mean(bundle.drift_path))
        summary["mean K^2"] = float(np.mean(bundle.drift_path**2))
    return summary


@app.command()
def simulate(
    problem: str = typer.Option(..., help="Catalog problem id"),
    paths: Optional[int] = typer.Option(None, help="Number of paths"),
    seed: Optional[int] = typer.Option(None, help="Generator seed"),
    dt: Optional[float] = typer.Option(None, help="Time step"),
    x0: Optional[float] = typer.Option(None, help="Initial state"),
    field_file: Optional[Path] = typer.Option(None, "--field", help="Decoupling field written by solve"),
    config: Optional[Path] = typer.Option(None, help="YAML or JSON overlay"),
    out: Optional[Path] = typer.Option(None, help="Output directory"),
) -> None:
    """Simulate forward paths, or the full FBSDE solution when a field is given."""
    try:
        _, exp, coeffs = _experiment(config, problem, None, out, paths=paths, seed=seed, dt=dt, x0=x0)
        sim = exp.simulation
        T = exp.grid.T
        field = DecouplingField.load(field_file) if field_file is not None else None
        if field is not None:
            T = field.grid.T
        times = time_partition(T, dt=sim.dt)
        if field is None:
            bundle = euler_forward(coeffs, None, sim.x0, times, sim.paths, sim.seed)
        else:
            bundle = build_fbsde_solution(field, coeffs, sim.x0, times, sim.paths, sim.seed)
            bundle = residual_orthogonal_martingale(bundle, coeffs)
        run = _run_dir(exp, "simulate")
        bundle.save(run / "bundle.txt")
        summary = _simulation_summary(bundle, coeffs)
        write_reports(run, f"simulate {problem}", [], [f"{k}: {v}" for k, v in summary.items()] + list(bundle.warnings))
    except (LabError, SettingsError) as e:
        _abort(e)
    print_mapping(f"simulate {problem}", summary)


def _selected_checks(checks: Optional[str], has_field: bool) -> Sequence[str]:
    if not checks:
        return [c for c in ALL_CHECKS if has_field or c not in ("CV", "FK")]
    chosen = [c.strip() for c in checks.split(",") if c.strip()]
    unknown = set(chosen) - set(ALL_CHECKS)
    if unknown:
        raise ConfigurationError(f"unknown checks {sorted(unknown)}, known: {', '.join(ALL_CHECKS)}")
    return chosen


def _inject_drift(bundle: PathBundle, rate: float) -> PathBundle:
    return bundle.with_(Y=bundle.Y + rate * bundle.times[None, :])


@app.command()
def verify(
    problem: str = typer.Option(..., help="Catalog problem id"),
    bundle_file: Optional[Path] = typer.Option(None, "--bundle", help="Bundle written by simulate"),
    field_file: Optional[Path] = typer.Option(None, "--field", help="Decoupling field written by solve"),
    checks: Optional[str] = typer.Option(None, help="Comma list of MX,MY,QV,CV,FK,moments"),
    threshold: Optional[float] = typer.Option(None, help="Threshold in standard errors"),
    inject_drift: float = typer.Option(0.0, help="Drift rate added to Y before checking"),
    nodal: Optional[str] = typer.Option(None, help="Nodal interval query as t,x"),
    nodal_n: Optional[int] = typer.Option(None, help="Mollification index for the nodal query"),
    nodal_target: Optional[float] = typer.Option(None, help="Value the nodal interval must contain"),
    grid: Optional[str] = typer.Option(None, help="Grid for the nodal solves as nt,nx,lo,hi"),
    config: Optional[Path] = typer.Option(None, help="YAML or JSON overlay"),
    out: Optional[Path] = typer.Option(None, help="Output directory"),
) -> None:
    """Run martingale-problem checks on a bundle and optional nodal queries; exit 1 on failure."""
    records: list[dict[str, Any]] = []
    try:
        _, exp, coeffs = _experiment(config, problem, grid, out)
        if bundle_file is None and nodal is None:
            raise ConfigurationError("verify needs --bundle or --nodal")
        field = DecouplingField.load(field_file) if field_file is not None else None
        thr = exp.checks.threshold if threshold is None else threshold
        tol, min_paths = exp.checks.abs_tol, exp.checks.min_paths
        if bundle_file is not None:
            bundle = PathBundle.load(bundle_file)
            if inject_drift:
                bundle = _inject_drift(bundle, inject_drift)
            for name in _selected_checks(checks, field is not None):
                if name in ("MX", "MY"):
                    rep = check_martingale(bundle, coeffs, name, thr, tol, min_paths)
                elif name == "QV":
                    rep = check_quadratic_variation(bundle, coeffs, thr, tol, min_paths)
                elif name == "CV":
                    rep = check_cross_variation(bundle, field, thr, tol, min_paths)
                elif name == "FK":
                    if field is None:
                        raise ConfigurationError("the FK check needs --field")
                    rep = feynman_kac_residual(bundle, field, exp.checks.fk_tolerance)
                else:
                    moments = moment_bounds(bundle, exp.checks.moment_p)
                    records.append(_upper("moments", max(moments.values()), float("inf"), moments))
                    continue
                records.append(rep.to_record())
        if nodal is not None:
            t, *x = (float(v) for v in nodal.split(","))
            n = nodal_n or exp.checks.nodal_n
            res = nodal_bounds(coeffs, exp.grid.build(coeffs.dim_x), t, np.asarray(x), n, opts=exp.picard.options())
            ok = res.u_lower <= res.u_upper and (nodal_target is None or res.contains(nodal_target, 1e-9))
            records.append(
                {
                    "name": "nodal",
                    "statistic": res.width,
                    "standard_error": 0.0,
                    "threshold": None,
                    "pass": bool(ok),
                    "form": "interval",
                    "details": {"u_lower": res.u_lower, "u_upper": res.u_upper, "n": n, "remollified": res.remollified},
                }
            )
        write_reports(_run_dir(exp, "verify"), f"verify {problem}", records)
    except (LabError, SettingsError) as e:
        _abort(e)
    print_table(f"verify {problem}", records)
    if not all(r["pass"] for r in records):
        raise typer.Exit(code=1)


def _levels(text: Optional[str], default: Sequence[int]) -> list[int]:
    if not text:
        return list(default)
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigurationError(f"cannot parse levels {text!r}") from exc


@control_app.command("drift")
def control_drift(
    levels: Optional[str] = typer.Option(None, help="Comma list of block counts"),
    paths: Optional[int] = typer.Option(None, help="Number of paths"),
    seed: Optional[int] = typer.Option(None, help="Generator seed"),
    config: Optional[Path] = typer.Option(None, help="YAML or JSON overlay"),
    out: Optional[Path] = typer.Option(None, help="Output directory"),
) -> None:
    """Tsirelson-kernel drift control: weak value and piecewise-constant strong sequence."""
    try:
        app_cfg, exp, _ = _experiment(config, "tsirelson", None, out, paths=paths, seed=seed)
        ctl = app_cfg.control
        result = drift_control_experiment(
            levels=_levels(levels, ctl.levels),
            n_paths=exp.simulation.paths,
            seed=exp.simulation.seed,
            T=exp.grid.T,
            depth=ctl.depth,
            n_steps=ctl.drift_steps,
        )
        notes = [f"weak value {result.value_weak:.6g} +- {result.value_weak_se:.3g}"]
        notes += [f"strong n={v.n}: {v.value:.6g} +- {v.standard_error:.3g}" for v in result.values_strong_sequence]
        notes += [f"weak n={v.n}: {v.value:.6g} +- {v.standard_error:.3g}" for v in result.values_weak_sequence]
        write_reports(Path(exp.output_dir) / "control" / "drift", "control drift", [result.to_record()], notes)
    except (LabError, SettingsError) as e:
        _abort(e)
    print_mapping("control drift", {"weak value": result.value_weak, **{f"strong n={v.n}": v.value for v in result.values_strong_sequence}})


@control_app.command("diffusion")
def control_diffusion(
    lam: Optional[float] = typer.Option(None, "--lambda", help="Barlow weight in (sqrt(2)/2, 1)"),
    control_hi: Optional[float] = typer.Option(None, help="Upper end of the control set"),
    grid: Optional[str] = typer.Option(None, help="HJB grid as nt,nx,lo,hi"),
    paths: Optional[int] = typer.Option(None, help="Number of paths"),
    seed: Optional[int] = typer.Option(None, help="Generator seed"),
    config: Optional[Path] = typer.Option(None, help="YAML or JSON overlay"),
    out: Optional[Path] = typer.Option(None, help="Output directory"),
) -> None:
    """Barlow diffusion control: HJB value, g'' check and martingale test; exit 1 if the test fails."""
    try:
        app_cfg, exp, _ = _experiment(config, "barlow", grid, out, paths=paths, seed=seed)
        ctl = app_cfg.control
        result = diffusion_control_experiment(
            lam=ctl.lam if lam is None else lam,
            grid=exp.grid.build(1),
            n_paths=exp.simulation.paths,
            seed=exp.simulation.seed,
            control_hi=ctl.control_hi if control_hi is None else control_hi,
            T_mc=ctl.mc_horizon,
            n_t_mc=ctl.mc_steps,
            du=ctl.clock_step,
            threshold=exp.checks.threshold,
            hjb_opts=app_cfg.hjb.options(),
        )
        records = [c.to_record() for c in result.checks] + [result.to_record()]
        notes = [f"HJB u(0,0) = {result.value_hjb:.6g}", f"sup |u - g| = {result.details['sup_gap_to_g']:.3g}"]
        write_reports(Path(exp.output_dir) / "control" / "diffusion", "control diffusion", records, notes)
    except (LabError, SettingsError) as e:
        _abort(e)
    print_table("control diffusion", [c.to_record() for c in result.checks])
    typer.echo(notes[0])
    if not all(c.passed for c in result.checks):
        raise typer.Exit(code=1)


@control_app.command("hamiltonians")
def control_hamiltonians(
    problem: str = typer.Option("drift-k", help="Control spec: drift-k or barlow-diffusion"),
    probes: Optional[int] = typer.Option(None, help="Number of probe points"),
    seed: Optional[int] = typer.Option(None, help="Probe seed"),
    config: Optional[Path] = typer.Option(None, help="YAML or JSON overlay"),
    out: Optional[Path] = typer.Option(None, help="Output directory"),
) -> None:
    """Tabulate H, H-hat, H-tilde and f* at seeded probes."""
    try:
        settings = _settings(config)
        app_cfg = settings.app
        spec = app_cfg.control.spec(problem)
        base_seed = app_cfg.simulation.seed if seed is None else seed
        if base_seed is None:
            raise SettingsError("a seed is required")
        table = hamiltonian_table(spec, hamiltonian_probes(spec, probes or app_cfg.control.probes, base_seed))
        out_dir = out or settings.paths.resolve_relative(app_cfg.paths.output_dir)
        run = Path(out_dir) / "control" / "hamiltonians" / problem
        names = list(table)
        write_columnar(run / "hamiltonians.txt", {"kind": "hamiltonians", "spec": spec.name}, names, np.column_stack([table[k] for k in names]))
        summary = {
            "max |H_hat - H|": float(np.max(table["gap_hat"])),
            "share |H_tilde - H| > 1e-3": float(np.mean(table["gap_tilde"] > 1e-3)),
            "min (H_enlarged - H)": float(np.min(table["H_enlarged"] - table["H"])),
        }
        write_reports(run, f"hamiltonians {problem}", [], [f"{k}: {v:.6g}" for k, v in summary.items()])
    except (LabError, SettingsError) as e:
        _abort(e)
    print_mapping(f"hamiltonians {problem}", summary)


@app.command()
def catalog() -> None:
    """List the built-in problems."""
    rows = {}
    for pid, entry in CATALOG.items():
        c = entry.build()
        flags = ",".join(f for f, on in (("coupled", c.deps.coupled), ("forward-coupled", c.deps.forward_coupled), ("path", c.path_dependent_drift is not None)) if on)
        rows[pid] = f"d={entry.dim} [{flags or '-'}] C0={c.bounds.C0:g} c0={c.bounds.c0:g} L={c.bounds.L:g}  {entry.description}"
    print_mapping("catalog", rows)


if __name__ == "__main__":
    app()
