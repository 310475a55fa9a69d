"""Matplotlib figures rendered next to the delimited report files.

Everything renders through the Agg backend with fixed sizes and no
timestamps, so repeated runs produce byte-identical image files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def _save(fig, path):
    fig.savefig(path, dpi=DPI)
    plt.close(fig)


def render_instrument_table(outcomes, density, kind, path) -> None:
    """Outcome density g(y) (grid) or mass P(n) (discrete)."""
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    if kind == "grid":
        ax.plot(outcomes, density, lw=1.2)
        ax.set_xlabel("outcome y")
        ax.set_ylabel("density g(y)")
    else:
        ax.bar(outcomes, density, width=0.85, color="tab:blue")
        ax.set_xlabel("count n")
        ax.set_ylabel("probability P(n)")
    ax.set_title("instrument outcome law")
    fig.tight_layout()
    _save(fig, path)


def render_trajectories(records, path) -> None:
    """Likelihood weight and output record for a handful of paths."""
    fig, (ax_g, ax_y) = plt.subplots(2, 1, figsize=(6.4, 5.6), sharex=True)
    for rec in records[:8]:
        ax_g.plot(rec.times, rec.weight, lw=0.9, label=f"stream {rec.stream}")
        ax_y.plot(rec.times, rec.output, lw=0.9)
    ax_g.set_ylabel("weight g(t)")
    ax_g.legend(fontsize=7, ncol=2)
    ax_y.set_ylabel("output record")
    ax_y.set_xlabel("t")
    fig.tight_layout()
    _save(fig, path)


def render_characteristic(p_grid, lhs, rhs, path) -> None:
    """Output vs coarse-grained characteristic functions and their gap."""
    fig, (ax_re, ax_err) = plt.subplots(2, 1, figsize=(6.4, 5.6), sharex=True)
    ax_re.plot(p_grid, lhs.real, lw=1.2, label="dilated Re")
    ax_re.plot(p_grid, rhs.real, "--", lw=1.2, label="object Re")
    ax_re.plot(p_grid, lhs.imag, lw=1.2, label="dilated Im")
    ax_re.plot(p_grid, rhs.imag, "--", lw=1.2, label="object Im")
    ax_re.set_ylabel("characteristic function")
    ax_re.legend(fontsize=7, ncol=2)
    err = np.abs(lhs - rhs)
    ax_err.semilogy(p_grid, np.maximum(err, 1e-18), lw=1.0, color="tab:red")
    ax_err.set_ylabel("|difference|")
    ax_err.set_xlabel("p")
    fig.tight_layout()
    _save(fig, path)


def render_trace_distance(times, distances, budget, path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.plot(times, distances, "o-", lw=1.2, label="trace distance")
    ax.axhline(budget, color="tab:red", ls="--", lw=1.0, label="budget")
    ax.set_xlabel("t")
    ax.set_ylabel("trace distance to master equation")
    ax.set_ylim(bottom=0)
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_histogram(edges, empirical, theoretical, kind, path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    centers = 0.5 * (np.asarray(edges[:-1]) + np.asarray(edges[1:]))
    width = np.diff(edges)
    ax.bar(centers, empirical, width=width, alpha=0.6, label="weighted ensemble")
    ax.step(edges, np.append(theoretical, theoretical[-1]), where="post",
            color="tab:red", lw=1.2, label="closed form")
    ax.set_xlabel("count n" if kind == "counting" else "output y")
    ax.set_ylabel("probability mass")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_convergence(dts, errors, fitted_order, path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    ax.loglog(dts, errors, "o-", lw=1.2, label="strong error")
    ref = errors[0] * (np.asarray(dts) / dts[0]) ** 0.5
    ax.loglog(dts, ref, "--", color="gray", lw=1.0, label="order 1/2 guide")
    ax.set_xlabel("dt")
    ax.set_ylabel("max pathwise error")
    ax.set_title(f"fitted order {fitted_order:.3f}")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, path)
