"""Ensemble-level verification of trajectory statistics.

Three consistency laws connect an ensemble of weighted trajectories to
closed-form references:

* the weighted mixture of posterior projectors reproduces the
  deterministic master-equation evolution of the unread state,
* the weighted output record follows the Gaussian-convolution law
  (diffusive) or the instrument's count law (counting),
* the weights themselves are a mean-one martingale under the reference
  measure.

Comparisons use the trace distance for density matrices and the sup norm of
cumulative distributions for output laws.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import instruments, trajectories
from .hilbert import DensityMatrix, herm_eig, max_abs
from .trajectories import (
    COUNTING,
    DIFFUSIVE,
    EULER_MARUYAMA,
    ModelSpec,
    SDEConfig,
    TrajectoryRecord,
    _euler_block,
    _CountingPropagator,
    _counting_walk,
    _stability_warning,
    poisson_path,
    wiener_path,
)

__all__ = [
    "EnsembleSummary",
    "OutputLawReport",
    "ConvergenceReport",
    "trace_distance",
    "mixture_budget",
    "master_equation_oracle",
    "ensemble_summary",
    "simulate_ensemble",
    "output_law_check",
    "diffusive_convergence",
    "counting_exactness",
    "weighted_histogram",
]


def trace_distance(a: DensityMatrix, b: DensityMatrix) -> float:
    """Half the sum of absolute eigenvalues of the difference."""
    w = np.linalg.eigvalsh(a.mat - b.mat)
    return 0.5 * float(np.sum(np.abs(w)))


def mixture_budget(n_paths: int, dt: float) -> float:
    """Error allowance for the mixture law: Monte Carlo plus scheme bias."""
    return 3.0 / math.sqrt(n_paths) + 10.0 * dt


def _lindblad_rhs(model: ModelSpec, rho: np.ndarray) -> np.ndarray:
    h = model.H.mat
    l = model.L.mat
    ld = l.conj().T
    ldl = ld @ l
    out = (-1j / model.hbar) * (h @ rho - rho @ h)
    out += l @ rho @ ld - 0.5 * (ldl @ rho + rho @ ldl)
    return out


def master_equation_oracle(model: ModelSpec, t_grid, dt: float = 1e-3) -> list[DensityMatrix]:
    """Deterministic unread-state evolution on a time grid.

    Classical fixed-step RK4 on the dissipative evolution
    ``drho/dt = -(i/hbar)[H, rho] + L rho L^dag - (L^dag L rho + rho L^dag L)/2``
    with substeps of ``dt/10``, ten times finer than the companion
    trajectory step, so the oracle error is negligible against Monte Carlo
    noise.  The trace is preserved to 1e-10.
    """
    ts = np.asarray(t_grid, dtype=float)
    if ts.ndim != 1 or ts.size == 0:
        raise ValueError("t_grid must be a nonempty 1-d array")
    if np.any(np.diff(ts) <= 0) or ts[0] < 0:
        raise ValueError("t_grid must be strictly increasing and nonnegative")
    sub = dt / 10.0
    rho = np.outer(model.initial.vec, model.initial.vec.conj())
    out = []
    t = 0.0
    for target in ts:
        span = target - t
        if span > 0:
            n_sub = max(1, int(math.ceil(span / sub - 1e-12)))
            h = span / n_sub
            for _ in range(n_sub):
                k1 = _lindblad_rhs(model, rho)
                k2 = _lindblad_rhs(model, rho + 0.5 * h * k1)
                k3 = _lindblad_rhs(model, rho + 0.5 * h * k2)
                k4 = _lindblad_rhs(model, rho + h * k3)
                rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t = target
        sym = 0.5 * (rho + rho.conj().T)
        out.append(DensityMatrix(sym, normalized=True))
    return out


@dataclass(eq=False)
class EnsembleSummary:
    """Weighted reductions of an ensemble at a set of requested times."""

    n_paths: int
    times: np.ndarray
    unraveling: str
    hbar: float
    model_hash: str
    dt: float
    rho_hat: list[DensityMatrix]
    mean_weight: np.ndarray
    weight_stderr: np.ndarray
    outputs: np.ndarray  # (n_times, n_paths): q_t (diffusive) or n_t (counting)
    weights: np.ndarray  # (n_times, n_paths)

    def time_index(self, t: float) -> int:
        idx = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[idx] - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"time {t} was not recorded in this summary")
        return idx

    def output_moments(self, t: float | None = None) -> tuple[float, float, float]:
        """Weighted (mean, variance, stderr-of-mean) of the raw output."""
        i = -1 if t is None else self.time_index(t)
        return _weighted_moments(self.outputs[i], self.weights[i])

    def output_histogram(self, t: float | None = None, bins=None):
        """Weighted histogram of the raw output; masses sum to one."""
        i = -1 if t is None else self.time_index(t)
        return weighted_histogram(self.outputs[i], self.weights[i],
                                  bins=bins, integer=self.unraveling == COUNTING)


def _weighted_moments(x: np.ndarray, g: np.ndarray) -> tuple[float, float, float]:
    total = float(np.sum(g))
    mean = float(np.sum(g * x)) / total
    var = float(np.sum(g * (x - mean) ** 2)) / total
    se = math.sqrt(float(np.sum((g * (x - mean)) ** 2))) / total
    return mean, var, se


def weighted_histogram(x: np.ndarray, g: np.ndarray, bins=None,
                       integer: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Normalized weighted histogram; Freedman-Diaconis bins by default.

    Integer-valued records get unit-width bins centered on the integers.
    Returns ``(edges, masses)`` with masses summing to one.
    """
    if integer:
        n_hi = int(np.max(x))
        edges = np.arange(-0.5, n_hi + 1.5)
    elif bins is None:
        edges = np.histogram_bin_edges(x, bins="fd")
    else:
        edges = np.histogram_bin_edges(x, bins=bins)
    masses, edges = np.histogram(x, bins=edges, weights=g)
    return edges, masses / float(np.sum(g))


class _Accumulator:
    """Ordered weighted reduction shared by both summary entry points."""

    def __init__(self, dim: int, n_times: int, n_paths: int):
        self.rho = np.zeros((n_times, dim, dim), dtype=np.complex128)
        self.sum_g = np.zeros(n_times)
        self.outputs = np.empty((n_times, n_paths))
        self.weights = np.empty((n_times, n_paths))
        self.cursor = 0

    def add_block(self, chi: np.ndarray, weight: np.ndarray, output: np.ndarray) -> None:
        # chi: (B, n_times, dim); weight/output: (B, n_times)
        b = chi.shape[0]
        self.rho += np.einsum("bti,btj->tij", chi, chi.conj())
        self.sum_g += weight.sum(axis=0)
        sl = slice(self.cursor, self.cursor + b)
        self.outputs[:, sl] = output.T
        self.weights[:, sl] = weight.T
        self.cursor += b

    def finish(self, times, unraveling, hbar, model_hash, dt) -> EnsembleSummary:
        n_paths = self.cursor
        rho_hat = []
        for k in range(len(times)):
            sym = 0.5 * (self.rho[k] + self.rho[k].conj().T) / self.sum_g[k]
            rho_hat.append(DensityMatrix(sym, normalized=True))
        mean_w = self.sum_g / n_paths
        stderr = self.weights.std(axis=1, ddof=1) / math.sqrt(n_paths) \
            if n_paths > 1 else np.zeros(len(times))
        return EnsembleSummary(
            n_paths=n_paths,
            times=np.asarray(times, dtype=float),
            unraveling=unraveling,
            hbar=hbar,
            model_hash=model_hash,
            dt=dt,
            rho_hat=rho_hat,
            mean_weight=mean_w,
            weight_stderr=stderr,
            outputs=self.outputs[:, :n_paths],
            weights=self.weights[:, :n_paths],
        )


def ensemble_summary(records: list[TrajectoryRecord], times=None) -> EnsembleSummary:
    """Reduce trajectory records sharing one model and grid.

    Records are aggregated in ascending stream order regardless of input
    order, so the result does not depend on any scheduling.

    Raises
    ------
    ValueError
        If the records mix models, grids or duplicate streams.
    """
    records = sorted(records, key=lambda r: (r.stream, r.seed))
    if not records:
        raise ValueError("no records to summarize")
    first = records[0]
    seen = set()
    for r in records:
        if (r.model_hash != first.model_hash or r.unraveling != first.unraveling
                or r.dt != first.dt or r.times.shape != first.times.shape
                or not np.array_equal(r.times, first.times)):
            raise ValueError("records come from mixed models or grids")
        key = (r.seed, r.stream)
        if key in seen:
            raise ValueError(f"duplicate trajectory stream {key}")
        seen.add(key)
    if times is None:
        times = first.times
    times = np.asarray(times, dtype=float)
    idx = [_grid_index(first.times, t) for t in times]
    acc = _Accumulator(first.chi.shape[1], len(times), len(records))
    for r in records:
        acc.add_block(r.chi[None, idx, :], r.weight[None, idx], r.output[None, idx])
    return acc.finish(times, first.unraveling, first.hbar, first.model_hash, first.dt)


def _grid_index(grid: np.ndarray, t: float) -> int:
    idx = int(np.argmin(np.abs(grid - t)))
    if abs(grid[idx] - t) > 1e-9 * max(1.0, abs(t)):
        raise ValueError(f"time {t} is not on the recorded grid")
    return idx


def simulate_ensemble(model: ModelSpec, config: SDEConfig, n_paths: int,
                      times=None, chunk_size: int = 4096) -> EnsembleSummary:
    """Integrate streams ``0..n_paths-1`` and reduce without storing paths.

    Equivalent to summarizing ``integrate_*`` records one per stream, but
    processed in fixed-size chunks so memory stays bounded for large
    ensembles.
    """
    if n_paths < 1:
        raise ValueError("n_paths must be positive")
    if times is None:
        times = [config.t_final]
    times = np.asarray(times, dtype=float)
    rec_times = config.record_times
    idx = [_grid_index(rec_times, t) for t in times]
    rec_steps = config.record_indices[idx]
    acc = _Accumulator(model.dim, len(times), n_paths)
    mh = model.model_hash()
    if model.unraveling == DIFFUSIVE:
        _stability_warning(model, config)
    for start in range(0, n_paths, chunk_size):
        streams = range(start, min(start + chunk_size, n_paths))
        if model.unraveling == DIFFUSIVE:
            dw = np.stack([wiener_path(config, s) for s in streams])
            chi, w = _euler_block(model, config, dw, rec_steps)
            weight = np.einsum("bti,bti->bt", chi.conj(), chi).real
            acc.add_block(chi, weight, math.sqrt(model.hbar) * w)
        else:
            if max_abs(model.H.mat) != 0.0:
                raise ValueError("the counting scheme is derived for H = 0")
            prop = _CountingPropagator(model)
            sel_times = rec_times[idx]
            chi = np.empty((len(streams), len(times), model.dim), dtype=np.complex128)
            counts = np.empty((len(streams), len(times)))
            for b, s in enumerate(streams):
                jumps = poisson_path(config, s)
                chi_b, n_b = _counting_walk(prop, model.initial.vec, sel_times, jumps)
                chi[b] = chi_b
                counts[b] = n_b
            weight = np.einsum("bti,bti->bt", chi.conj(), chi).real
            acc.add_block(chi, weight, counts)
    return acc.finish(times, model.unraveling, model.hbar, mh, config.dt)


@dataclass(eq=False)
class OutputLawReport:
    """Comparison of the weighted output record against its closed-form law."""

    unraveling: str
    time: float
    n_paths: int
    sup_cdf_error: float
    mean_empirical: float
    mean_theory: float
    mean_stderr: float
    var_empirical: float
    var_theory: float
    effective_sample_size: float
    # Tabulated law for reporting: outcome grid, empirical and theory masses.
    table: tuple[np.ndarray, np.ndarray, np.ndarray] = field(repr=False, default=None)


def _grouped_spectrum(r_op, xi_vec, tol: float = 1e-9):
    w, v = herm_eig(r_op)
    overlap = np.abs(v.conj().T @ xi_vec) ** 2
    xs: list[float] = []
    hs: list[float] = []
    for x, h in zip(w, overlap):
        if xs and abs(x - xs[-1]) <= tol:
            hs[-1] += h
        else:
            xs.append(float(x))
            hs.append(float(h))
    return np.asarray(xs), np.asarray(hs)


def _norm_cdf(z: np.ndarray) -> np.ndarray:
    from scipy.special import ndtr

    return ndtr(z)


def output_law_check(summary: EnsembleSummary, model: ModelSpec, t: float) -> OutputLawReport:
    """Weighted output record versus the model's closed-form output law.

    Diffusive records rescale to ``y = q_t / t`` and compare against the
    mixture of Gaussians ``sum_x h_xi(x) N(x, hbar/t)`` over the spectrum of
    ``R = sqrt(hbar)(L + L^dag)`` (the convolution of the sharp spectral
    distribution with the Gaussian error kernel).  Counting records compare
    against the count law ``P(n) = ||G(t, n) xi||^2 nu_n`` of the matching
    counting instrument.
    """
    i = summary.time_index(t)
    g = summary.weights[i]
    total = float(np.sum(g))
    if summary.unraveling == DIFFUSIVE:
        if t <= 0:
            raise ValueError("the diffusive output law needs t > 0")
        y = summary.outputs[i] / t
        xs, hs = _grouped_spectrum(model.coupling_observable(), model.initial.vec)
        sigma = math.sqrt(model.hbar / t)

        def cdf(v):
            z = (v[:, None] - xs[None, :]) / sigma
            return _norm_cdf(z) @ hs

        order = np.argsort(y, kind="stable")
        ys = y[order]
        gw = g[order] / total
        cum = np.cumsum(gw)
        theo = cdf(ys)
        sup = float(np.max(np.maximum(np.abs(cum - theo), np.abs((cum - gw) - theo))))
        mean_th = float(np.dot(hs, xs))
        var_th = float(np.dot(hs, xs ** 2)) - mean_th ** 2 + model.hbar / t
        mean_emp, var_emp, mean_se = _weighted_moments(y, g)
        edges = np.histogram_bin_edges(y, bins="fd")
        emp, _ = np.histogram(y, bins=edges, weights=g / total)
        theo_mass = np.diff(cdf(edges))
        table = (edges, emp, theo_mass)
    else:
        n = summary.outputs[i]
        instr = instruments.counting_instrument(model.L, t)
        pn = instruments.outcome_density(instr, model.initial) \
            * instr.space.quadrature_weights()
        n_grid = np.arange(len(pn))
        emp_mass = np.zeros(len(pn))
        np.add.at(emp_mass, n.astype(int), g / total)
        sup = float(np.max(np.abs(np.cumsum(emp_mass) - np.cumsum(pn))))
        mean_th = float(np.dot(pn, n_grid))
        var_th = float(np.dot(pn, n_grid ** 2)) - mean_th ** 2
        mean_emp, var_emp, mean_se = _weighted_moments(n, g)
        table = (np.arange(-0.5, len(pn) + 0.5), emp_mass, pn)
    ess = total ** 2 / float(np.sum(g ** 2))
    return OutputLawReport(
        unraveling=summary.unraveling,
        time=float(t),
        n_paths=summary.n_paths,
        sup_cdf_error=sup,
        mean_empirical=mean_emp,
        mean_theory=mean_th,
        mean_stderr=mean_se,
        var_empirical=var_emp,
        var_theory=var_th,
        effective_sample_size=ess,
        table=table,
    )


@dataclass(eq=False)
class ConvergenceReport:
    """Strong pathwise error against the closed form, per step size."""

    dt_values: np.ndarray
    max_errors: np.ndarray
    fitted_order: float
    monotone: bool


def diffusive_convergence(model: ModelSpec, config: SDEConfig, dt_values,
                          n_paths: int) -> ConvergenceReport:
    """Shared-noise strong convergence of the Euler scheme.

    Each path's Brownian increments are drawn once on the finest grid and
    aggregated for the coarser levels, so every level sees the same noise
    realization.  The per-level error is the ensemble mean over paths of the
    pathwise maximum amplitude deviation from the closed-form solution (the
    strong sup-norm error), evaluated on the common grid of the coarsest
    level so every level sups over the same comparison times; the order is
    the fitted log-log slope.

    Requires the closed-form regime ``H = 0``, Hermitian ``L``.
    """
    if max_abs(model.H.mat) != 0.0 or not model.L.is_hermitian(1e-10):
        raise ValueError("convergence check requires H = 0 and Hermitian L")
    dts = np.sort(np.asarray(dt_values, dtype=float))[::-1]
    dt_min = dts[-1]
    fine = SDEConfig(t_final=config.t_final, dt=dt_min, seed=config.seed,
                     scheme=EULER_MARUYAMA)
    ratios = []
    for dt in dts:
        ratio = dt / dt_min
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("every dt must be an integer multiple of the smallest")
        ratios.append(round(ratio))
    dw_fine = np.stack([wiener_path(fine, s) for s in range(n_paths)])
    ell, v = herm_eig(model.L)
    a0 = v.conj().T @ model.initial.vec
    # Common comparison grid needs every ratio to divide the coarsest one;
    # otherwise each level sups over its own full grid.
    nested = all(ratios[0] % r == 0 for r in ratios)
    errors = []
    for dt, ratio in zip(dts, ratios):
        n_level = fine.n_steps // ratio
        dw = dw_fine[:, :n_level * ratio].reshape(n_paths, n_level, ratio).sum(axis=2)
        level_cfg = SDEConfig(t_final=config.t_final, dt=float(dt),
                              seed=config.seed, scheme=EULER_MARUYAMA)
        rec = np.arange(0, n_level + 1, ratios[0] // ratio if nested else 1)
        chi_e, w = _euler_block(model, level_cfg, dw, rec)
        t_grid = rec * dt
        expo = np.exp(w[:, :, None] * ell[None, None, :]
                      - t_grid[None, :, None] * ell[None, None, :] ** 2)
        chi_o = np.einsum("ij,btj->bti", v, expo * a0[None, None, :])
        per_path_sup = np.max(np.abs(chi_e - chi_o), axis=(1, 2))
        errors.append(float(per_path_sup.mean()))
    errors = np.asarray(errors)
    slope = float(np.polyfit(np.log(dts), np.log(errors), 1)[0])
    monotone = bool(np.all(np.diff(errors) < 0))
    return ConvergenceReport(dt_values=dts, max_errors=errors,
                             fitted_order=slope, monotone=monotone)


def counting_exactness(model: ModelSpec, config: SDEConfig, n_paths: int) -> float:
    """Max amplitude error of the piecewise counting scheme vs the closed form.

    The scheme is exact, so the returned value is pure roundoff regardless
    of the step size.
    """
    worst = 0.0
    ell, v = herm_eig(model.L)
    a0 = v.conj().T @ model.initial.vec
    for stream in range(n_paths):
        rec = trajectories.integrate_counting(model, config, stream)
        ns = rec.noise.astype(int)
        expo = (ell[None, :] ** ns[:, None]) \
            * np.exp(0.5 * rec.times[:, None] * (1.0 - ell[None, :] ** 2))
        chi_o = np.einsum("ij,tj->ti", v, expo * a0[None, :])
        worst = max(worst, max_abs(rec.chi - chi_o))
    return worst
