"""Static SVG figures for the study artifacts.

Plotting is best-effort: the run's contract is the CSV output, so callers
swallow plotting failures after logging them.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_FIGSIZE = (6.0, 4.0)


def _save(fig, out_dir: Path, name: str, written: list):
    path = out_dir / f"{name}.svg"
    fig.savefig(path, bbox_inches="tight")
    plt.close(fig)
    written.append(path.name)


def render(payload: dict, out_dir: Path) -> list:
    """Render all figures a study payload describes; returns written names."""
    written: list = []
    if "free_response" in payload:
        _free_response(payload["free_response"], out_dir, written)
    if "maneuver" in payload:
        _maneuver(payload["maneuver"], out_dir, written)
    if "convergence" in payload:
        _convergence(payload["convergence"], out_dir, written)
    if "tradeoff" in payload:
        _tradeoff(payload["tradeoff"], out_dir, written)
    return written


def _free_response(data, out_dir, written):
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    energy = data["energy"]
    ax.plot(energy[:, 0], energy[:, 1], lw=0.7, label="variational")
    if "rk4_energy" in data:
        rk4 = data["rk4_energy"]
        ax.plot(rk4[:, 0], rk4[:, 1], lw=0.7, label="RK4")
        ax.legend()
    ax.set_xlabel("time [s]")
    ax.set_ylabel("total energy")
    ax.set_title("Energy along the unforced trajectory")
    _save(fig, out_dir, "energy", written)

    momentum = data["momentum"]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(momentum[:, 0], momentum[:, 1] - momentum[0, 1], lw=0.7)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("hub momentum change")
    ax.set_title("Hub angular momentum preservation")
    _save(fig, out_dir, "hub_momentum", written)


def _maneuver(data, out_dir, written):
    traj = data["trajectory"]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6.0, 6.5), sharex=True)
    ax1.plot(traj[:, 0], traj[:, 1], lw=1.0)
    ax1.set_ylabel("hub angle [rad]")
    for j in range(2, traj.shape[1]):
        ax2.plot(traj[:, 0], traj[:, j], lw=0.8, label=f"mode {j - 1}")
    ax2.set_xlabel("time [s]")
    ax2.set_ylabel("modal amplitude [ft]")
    ax2.legend(fontsize=7, ncol=2)
    fig.suptitle("Rest-to-rest maneuver trajectory")
    _save(fig, out_dir, "trajectory", written)

    control = data["control"]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(control[:, 0], control[:, 1], lw=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("hub torque [lb-ft]")
    ax.set_title("Optimal control")
    _save(fig, out_dir, "control", written)

    cons = data["conservation"]
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(cons[:, 0], cons[:, 2], lw=0.8)
    ax.set_xlabel("time [s]")
    ax.set_ylabel("momentum-impulse defect")
    ax.set_title("Forced conservation law along the solution")
    _save(fig, out_dir, "conservation", written)


def _convergence(data, out_dir, written):
    metrics = data["metrics"]
    curves = data["curves"]
    for j, name in enumerate(metrics, start=1):
        fig, ax = plt.subplots(figsize=_FIGSIZE)
        for p, pts in sorted(curves.items()):
            arr = sorted(pts)
            dts = [row[0] for row in arr]
            errs = [row[j] for row in arr]
            ax.loglog(dts, errs, "o-", ms=3, lw=0.9, label=f"p = {p}")
        ax.set_xlabel("micro step [s]")
        ax.set_ylabel(name)
        ax.grid(True, which="both", lw=0.3, alpha=0.5)
        ax.legend(fontsize=8)
        ax.set_title(f"Convergence of {name}")
        _save(fig, out_dir, f"convergence_{name}", written)


def _tradeoff(curves, out_dir, written):
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for r, pts in sorted(curves.items()):
        arr = sorted(pts)
        ax.plot([a[0] for a in arr], [a[1] for a in arr], "o-", ms=3, label=f"vars, r = {r}")
        ax.plot([a[0] for a in arr], [a[2] for a in arr], "s--", ms=3, label=f"constraints, r = {r}")
    ax.set_xlabel("macro/micro proportionality p")
    ax.set_ylabel("count")
    ax.legend(fontsize=8)
    ax.set_title("Optimization problem size")
    _save(fig, out_dir, "tradeoff_size", written)

    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for r, pts in sorted(curves.items()):
        arr = sorted(pts)
        ax.semilogy([a[0] for a in arr], [a[3] for a in arr], "o-", ms=3, label=f"r = {r}")
    ax.set_xlabel("macro/micro proportionality p")
    ax.set_ylabel("relative trajectory error")
    ax.legend(fontsize=8)
    ax.set_title("Accuracy versus p")
    _save(fig, out_dir, "tradeoff_accuracy", written)

    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for r, pts in sorted(curves.items()):
        arr = sorted(pts)
        ax.errorbar(
            [a[0] for a in arr],
            [a[4] for a in arr],
            yerr=[a[5] for a in arr],
            fmt="o-",
            ms=3,
            capsize=2,
            label=f"r = {r}",
        )
    ax.set_xlabel("macro/micro proportionality p")
    ax.set_ylabel("assemble + solve wall time [s]")
    ax.legend(fontsize=8)
    ax.set_title("Mean wall time with standard deviation")
    _save(fig, out_dir, "tradeoff_time", written)
