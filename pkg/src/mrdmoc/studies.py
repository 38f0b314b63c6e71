"""Study drivers: forward simulation, maneuver solves and the sweep studies.

Every study returns a StudyResult whose rows follow the tidy schema
``study,param_p,param_r,dt_s,tf_s,metric,value,rep`` plus a payload dict
consumed by the plotting module and a summary dict echoed into the run
manifest.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .config import RunConfig
from .errors import ConfigError
from .integrator import MultirateGrid, diagnostics, simulate
from .modal import ModalState, solve_modal, to_modal
from .ocp import assemble, rotation_maneuver_spec, solve, solve_maneuver
from .reference import free_response_series, lq_tpbvp_reference, rk4_energy_series
from .spacecraft import assemble_system

CSV_HEADER = ("study", "param_p", "param_r", "dt_s", "tf_s", "metric", "value", "rep")


@dataclass
class StudyResult:
    rows: list = field(default_factory=list)
    series: dict = field(default_factory=dict)  # name -> (header, columns)
    payload: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def _row(study, p, r, dt, tf, metric, value, rep=0):
    return {
        "study": study,
        "param_p": p,
        "param_r": r,
        "dt_s": dt,
        "tf_s": tf,
        "metric": metric,
        "value": value,
        "rep": rep,
    }


def build_modal_system(cfg: RunConfig):
    return solve_modal(assemble_system(cfg.spacecraft), cfg.split_index)


def initial_state(cfg: RunConfig, msys) -> ModalState:
    xi0 = np.concatenate([[cfg.free_theta0_rad], cfg.free_eta0])
    return to_modal(msys, xi0, np.zeros(msys.n_coords))


def realized_grid(tf: float, dt_nominal: float, p: int) -> MultirateGrid:
    """Grid with exactly the requested horizon and proportionality; the
    micro step moves to the nearest value that tiles tf with whole macro
    steps (identical to dt_nominal whenever tf/dt_nominal is a multiple
    of p)."""
    n_macro = max(1, round(tf / (p * dt_nominal)))
    return MultirateGrid(t0=0.0, tf=tf, micro_step=tf / (n_macro * p), micro_count=p)


def fit_order(dts, errors, span=(1.4, 2.6)):
    """Least-squares convergence order with stiff-plateau exclusion.

    The fit window is the longest run of consecutive points (by step size)
    whose pairwise local orders stay inside ``span``; this drops the
    large-step plateau, preasymptotic points and any round-off floor.
    Returns (order, window_mask); order is None when fewer than three
    points qualify.
    """
    dts = np.asarray(dts, float)
    errors = np.asarray(errors, float)
    order_idx = np.argsort(dts)
    dts, errors = dts[order_idx], errors[order_idx]
    mask_sorted = np.zeros(dts.size, bool)
    if dts.size >= 3 and np.all(errors > 0.0):
        local = np.diff(np.log(errors)) / np.diff(np.log(dts))
        good = (local >= span[0]) & (local <= span[1])
        best = (0, 0)
        start = None
        for i, flag in enumerate(good):
            if flag and start is None:
                start = i
            if (not flag or i == good.size - 1) and start is not None:
                end = i + 1 if flag else i
                if end - start > best[1] - best[0]:
                    best = (start, end)
                start = None
        if best[1] - best[0] >= 2:  # >= 3 points
            mask_sorted[best[0] : best[1] + 1] = True
    if mask_sorted.sum() < 3:
        inverse = np.empty_like(order_idx)
        inverse[order_idx] = np.arange(order_idx.size)
        return None, mask_sorted[inverse]
    slope = np.polyfit(np.log(dts[mask_sorted]), np.log(errors[mask_sorted]), 1)[0]
    inverse = np.empty_like(order_idx)
    inverse[order_idx] = np.arange(order_idx.size)
    return float(slope), mask_sorted[inverse]


def run_free_response(cfg: RunConfig) -> StudyResult:
    """Unforced simulation with conservation diagnostics (and optionally a
    same-step RK4 energy comparison)."""
    msys = build_modal_system(cfg)
    grid = MultirateGrid(0.0, cfg.tf, cfg.dt, cfg.micro_count)
    state0 = initial_state(cfg, msys)
    traj = simulate(msys, grid, state0)
    diag = diagnostics(msys, traj)

    p, r, dt, tf = cfg.micro_count, cfg.split_index, cfg.dt, cfg.tf
    drift = float(np.max(np.abs(diag.hub_momentum - diag.hub_momentum[0])))
    mom_scale = float(np.max(np.abs(diag.modal_momenta)))
    amp = float(diag.energy.max() - diag.energy.min())
    slope = float(np.polyfit(diag.energy_times, diag.energy, 1)[0])

    result = StudyResult()
    rows = result.rows
    rows.append(_row("free_response", p, r, dt, tf, "hub_momentum_drift", drift))
    rows.append(_row("free_response", p, r, dt, tf, "hub_momentum_drift_rel", drift / mom_scale))
    rows.append(_row("free_response", p, r, dt, tf, "energy_mean", float(diag.energy.mean())))
    rows.append(_row("free_response", p, r, dt, tf, "energy_fluctuation", amp))
    rows.append(_row("free_response", p, r, dt, tf, "energy_fit_slope", slope))

    stride = max(1, diag.energy.size // 20000)  # keep series files plottable
    result.series["energy"] = (
        ("t_s", "energy"),
        np.column_stack([diag.energy_times[::stride], diag.energy[::stride]]),
    )
    result.series["hub_momentum"] = (
        ("t_s", "p_theta", "conservation_defect"),
        np.column_stack([diag.macro_times, diag.hub_momentum, diag.conservation_defect]),
    )
    result.payload["free_response"] = {
        "energy": result.series["energy"][1],
        "momentum": result.series["hub_momentum"][1],
    }
    result.summary.update(
        {
            "hub_momentum_drift_rel": drift / mom_scale,
            "energy_fluctuation": amp,
            "energy_fit_slope": slope,
        }
    )

    if cfg.compare_rk4:
        t_rk, e_rk = rk4_energy_series(msys, state0, dt, grid.n_micro_total)
        rk_slope = float(np.polyfit(t_rk, e_rk, 1)[0])
        rows.append(_row("free_response", p, r, dt, tf, "rk4_energy_fit_slope", rk_slope))
        rows.append(_row("free_response", p, r, dt, tf, "rk4_energy_loss", float(e_rk[0] - e_rk[-1])))
        result.series["rk4_energy"] = (
            ("t_s", "energy"),
            np.column_stack([t_rk[::stride], e_rk[::stride]]),
        )
        result.payload["free_response"]["rk4_energy"] = result.series["rk4_energy"][1]
        result.summary["rk4_energy_fit_slope"] = rk_slope
    return result


def run_maneuver(cfg: RunConfig) -> StudyResult:
    """Solve the rest-to-rest maneuver and report trajectory, control and
    conservation artifacts."""
    msys = build_modal_system(cfg)
    grid = MultirateGrid(0.0, cfg.tf, cfg.dt, cfg.micro_count)
    spec = rotation_maneuver_spec(msys, grid, cfg.maneuver_theta_deg)
    solution = solve_maneuver(spec)
    diag = diagnostics(msys, solution.trajectory)

    p, r, dt, tf = cfg.micro_count, cfg.split_index, cfg.dt, cfg.tf
    ref = lq_tpbvp_reference(spec, grid.macro_times())
    xi = solution.trajectory.modal_at_macro_nodes() @ msys.modal_matrix.T
    xi_ref = ref.states[:, : msys.n_coords] @ msys.modal_matrix.T
    e_rel = float(np.max(np.abs(xi - xi_ref)) / np.max(np.abs(xi_ref)))

    result = StudyResult()
    rows = result.rows
    defect_rel = float(
        np.max(np.abs(diag.conservation_defect)) / max(np.max(np.abs(diag.hub_momentum)), 1e-300)
    )
    rows.append(_row("maneuver", p, r, dt, tf, "cost", solution.cost))
    rows.append(_row("maneuver", p, r, dt, tf, "reference_cost", ref.cost))
    rows.append(_row("maneuver", p, r, dt, tf, "e_rel_xi", e_rel))
    rows.append(_row("maneuver", p, r, dt, tf, "primal_residual", solution.primal_residual))
    rows.append(_row("maneuver", p, r, dt, tf, "stationarity_residual", solution.stationarity_residual))
    rows.append(_row("maneuver", p, r, dt, tf, "conservation_defect_rel", defect_rel))

    t_macro = grid.macro_times()
    result.series["trajectory"] = (
        ("t_s", "theta_rad") + tuple(f"eta_{j}" for j in range(1, msys.n_coords)),
        np.column_stack([t_macro, xi]),
    )
    result.series["control"] = (
        ("t_s", "tau_lbft"),
        np.column_stack([grid.micro_midpoint_times(), solution.trajectory.controls.ravel()]),
    )
    result.series["conservation"] = (
        ("t_s", "p_theta", "defect"),
        np.column_stack([t_macro, diag.hub_momentum, diag.conservation_defect]),
    )
    result.payload["maneuver"] = {
        "trajectory": result.series["trajectory"][1],
        "control": result.series["control"][1],
        "conservation": result.series["conservation"][1],
    }
    result.summary.update(
        {
            "cost": solution.cost,
            "e_rel_xi": e_rel,
            "status": solution.status,
            "primal_residual": solution.primal_residual,
            "stationarity_residual": solution.stationarity_residual,
            "conservation_defect_rel": defect_rel,
        }
    )
    return result


def _integrator_point(args):
    cfg, dt, p = args
    msys = build_modal_system(cfg)
    grid = realized_grid(cfg.tf, dt, p)
    state0 = initial_state(cfg, msys)
    traj = simulate(msys, grid, state0)
    t_macro = grid.macro_times()
    q_ref, _ = free_response_series(msys, state0, t_macro)
    err_slow = float(np.max(np.abs(traj.slow - q_ref[:, : msys.n_slow])))
    err_fast = float(np.max(np.abs(traj.fast_at_macro_nodes() - q_ref[:, msys.n_slow :])))
    return grid.micro_step, err_slow, err_fast


def _ocp_point(args):
    cfg, dt, p = args
    msys = build_modal_system(cfg)
    grid = realized_grid(cfg.tf, dt, p)
    spec = rotation_maneuver_spec(msys, grid, cfg.maneuver_theta_deg)
    solution = solve_maneuver(spec)
    ref = lq_tpbvp_reference(spec, grid.macro_times())
    ref_mid = lq_tpbvp_reference(spec, grid.micro_midpoint_times())
    xi = solution.trajectory.modal_at_macro_nodes() @ msys.modal_matrix.T
    xi_ref = ref.states[:, : msys.n_coords] @ msys.modal_matrix.T
    err_xi = float(np.max(np.abs(xi - xi_ref)))
    err_tau = float(np.max(np.abs(solution.trajectory.controls.ravel() - ref_mid.controls)))
    err_cost = float(abs(solution.cost - ref.cost))
    return grid.micro_step, err_xi, err_tau, err_cost


def sweep_convergence(cfg: RunConfig, jobs: int = 1) -> StudyResult:
    """Step-size refinement sweep for the integrator or the transcription,
    with fitted convergence orders per proportionality."""
    integ = cfg.study_kind == "convergence_integrator"
    point = _integrator_point if integ else _ocp_point
    metrics = ("err_slow", "err_fast") if integ else ("err_xi", "err_tau", "err_cost")
    study = cfg.study_kind

    tasks = [(cfg, dt, p) for p in cfg.p_list for dt in cfg.dt_list]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(point, tasks))
    else:
        outcomes = [point(t) for t in tasks]

    result = StudyResult()
    curves: dict = {}
    for (c, dt, p), out in zip(tasks, outcomes):
        dt_real, *errs = out
        for name, err in zip(metrics, errs):
            result.rows.append(_row(study, p, cfg.split_index, dt_real, cfg.tf, name, err))
        curves.setdefault(p, []).append((dt_real, *errs))

    for p, pts in curves.items():
        pts = np.array(sorted(pts))
        if pts.shape[0] < 2:
            continue  # single grid point: values only, no slope row
        for j, name in enumerate(metrics, start=1):
            order, window = fit_order(pts[:, 0], pts[:, j])
            if order is not None:
                result.rows.append(
                    _row(study, p, cfg.split_index, 0.0, cfg.tf, f"order_{name}", order)
                )
                excluded = pts[~window, 0]
                result.summary[f"fit_window_p{p}_{name}"] = (
                    f"used {int(window.sum())}/{window.size} points; "
                    f"excluded dt: {', '.join(f'{d:.3e}' for d in excluded) or 'none'}"
                )
            else:
                result.summary[f"fit_window_p{p}_{name}"] = "no asymptotic window found"
    result.payload["convergence"] = {"metrics": metrics, "curves": curves}
    return result


def sweep_tradeoff(cfg: RunConfig) -> StudyResult:
    """Accuracy / problem-size / wall-time trade-off over p (and optionally
    r).  Timing repetitions run serially; every row carries its realized
    micro step."""
    result = StudyResult()
    study = "tradeoff"
    r_values = cfg.r_list or [cfg.split_index]
    curves: dict = {}
    for r in r_values:
        msys = solve_modal(assemble_system(cfg.spacecraft), r)
        for p in cfg.p_list:
            grid = realized_grid(cfg.tf, cfg.dt, p)
            dt_real = grid.micro_step
            spec = rotation_maneuver_spec(msys, grid, cfg.maneuver_theta_deg)

            assemble_times = []
            solve_times = []
            solution = None
            for rep in range(cfg.repetitions):
                t0 = time.perf_counter()
                qp, layout = assemble(spec)
                t1 = time.perf_counter()
                solution = solve(qp)
                t2 = time.perf_counter()
                assemble_times.append(t1 - t0)
                solve_times.append(t2 - t1)
                result.rows.append(_row(study, p, r, dt_real, cfg.tf, "assemble_time_s", t1 - t0, rep))
                result.rows.append(_row(study, p, r, dt_real, cfg.tf, "solve_time_s", t2 - t1, rep))

            ref = lq_tpbvp_reference(spec, grid.macro_times())
            xi = solution.trajectory.modal_at_macro_nodes() @ msys.modal_matrix.T
            xi_ref = ref.states[:, : msys.n_coords] @ msys.modal_matrix.T
            e_rel = float(np.max(np.abs(xi - xi_ref)) / np.max(np.abs(xi_ref)))

            for metric, value in (
                ("n_slow_var", layout.n_slow_var),
                ("n_fast_var", layout.n_fast_var),
                ("n_total_var", layout.n_total_var),
                ("n_eq_con", layout.n_eq_con),
                ("n_decision_var", layout.n_decision_var),
                ("e_rel_xi", e_rel),
                ("mean_assemble_time_s", float(np.mean(assemble_times))),
                ("sd_assemble_time_s", float(np.std(assemble_times))),
                ("mean_solve_time_s", float(np.mean(solve_times))),
                ("sd_solve_time_s", float(np.std(solve_times))),
            ):
                result.rows.append(_row(study, p, r, dt_real, cfg.tf, metric, value))
            curves.setdefault(r, []).append(
                (
                    p,
                    layout.n_total_var,
                    layout.n_eq_con,
                    e_rel,
                    float(np.mean(assemble_times) + np.mean(solve_times)),
                    float(np.std(np.array(assemble_times) + np.array(solve_times))),
                )
            )
    result.payload["tradeoff"] = curves
    result.summary["repetitions"] = cfg.repetitions
    return result


def run_study(cfg: RunConfig, jobs: int = 1) -> StudyResult:
    """Dispatch on the configured study kind."""
    if cfg.study_kind == "free_response":
        result = run_free_response(cfg)
    elif cfg.study_kind == "maneuver":
        result = run_maneuver(cfg)
    elif cfg.study_kind in ("convergence_integrator", "convergence_ocp"):
        result = sweep_convergence(cfg, jobs=jobs)
    elif cfg.study_kind == "tradeoff":
        result = sweep_tradeoff(cfg)
    else:  # pragma: no cover - guarded by config validation
        raise ConfigError(f"unknown study kind {cfg.study_kind}")
    result.metadata = {
        "toolkit_version": __version__,
        "config_hash": cfg.config_hash,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
    }
    return result
