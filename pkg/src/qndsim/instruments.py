"""Instantaneous generalized measurements.

An instrument is a family of reduction operators ``G(y)`` indexed by the
points of an outcome space, complete in the sense that the effects
``E(y) = G(y)^dag G(y)`` integrate to the identity against the reference
measure ``nu``.  Reading outcome ``y`` maps a normalized input ``xi`` to the
unnormalized vector ``chi(y) = G(y) xi`` whose squared norm is the outcome
probability density ``g_xi(y) = <xi, E(y) xi>``; the Bayes-conditioned
posterior is ``chi(y)/||chi(y)||`` with a fixed global-phase gauge.

Two concrete continuous-outcome families are provided:

* a Gaussian family ``G(y) = (t/h)^(1/4) exp(-(pi t / 2h) (y - R)^2)`` with
  ``h = 2 pi hbar``, the finite-duration unsharp measurement of a Hermitian
  observable ``R``, and
* a counting family ``G(t, n) = L^n exp((t/2)(1 - L^2))`` over Poisson
  reference weights ``nu_n = e^(-t) t^n / n!``, whose effects form a
  nonorthogonal resolution of the identity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import gammaln

from . import hilbert
from .errors import (
    CompletenessError,
    DimensionMismatchError,
    NondemolitionError,
    ZeroLikelihoodError,
)
from .hilbert import Operator, PureState, DensityMatrix, herm_eig, max_abs

# Completeness defect ceilings: exact sums for discrete outcome sets,
# a looser bound where grid quadrature error enters.
DISCRETE_COMPLETENESS_TOL = 1e-10
GRID_COMPLETENESS_TOL = 1e-6

# Outcomes whose density falls at or below this have no posterior state.
ZERO_LIKELIHOOD_TOL = 1e-14

PROJECTOR_TOL = 1e-10
COMMUTATOR_TOL = 1e-10

# Global-phase gauge for posterior states: first amplitude above 1e-12 is
# rotated to the positive real axis (see hilbert.fix_global_phase).
PHASE_CONVENTION = "first-nonzero-amplitude-real-positive"

__all__ = [
    "DISCRETE_COMPLETENESS_TOL",
    "GRID_COMPLETENESS_TOL",
    "ZERO_LIKELIHOOD_TOL",
    "PHASE_CONVENTION",
    "OutcomeSpace",
    "Instrument",
    "PosteriorResult",
    "effects",
    "posterior",
    "outcome_density",
    "bayes_conditional",
    "gaussian_instrument",
    "default_gaussian_space",
    "counting_instrument",
    "default_n_max",
    "apriori_state",
    "export_instrument",
]


@dataclass(frozen=True, eq=False)
class OutcomeSpace:
    """Discrete outcome labels with weights, or a uniform grid with a density.

    For grids the reference measure is ``dnu = f(y) dy`` with ``f == 1``
    (Lebesgue) unless a density callable is supplied; integration uses the
    trapezoidal rule on the uniform grid.
    """

    kind: str
    labels: np.ndarray | None = None
    weights: np.ndarray | None = None
    y_min: float | None = None
    y_max: float | None = None
    n_points: int | None = None
    density: Callable[[np.ndarray], np.ndarray] | None = None

    @classmethod
    def discrete(cls, labels, weights) -> "OutcomeSpace":
        labels = np.asarray(labels)
        weights = np.asarray(weights, dtype=float)
        if labels.ndim != 1 or weights.shape != labels.shape:
            raise ValueError("labels and weights must be 1-d and the same length")
        if labels.size == 0:
            raise ValueError("outcome space must contain at least one outcome")
        if np.any(weights <= 0.0):
            raise ValueError("discrete reference weights must be strictly positive")
        labels = labels.copy()
        weights = weights.copy()
        labels.setflags(write=False)
        weights.setflags(write=False)
        return cls(kind="discrete", labels=labels, weights=weights)

    @classmethod
    def grid(cls, y_min: float, y_max: float, n_points: int,
             density: Callable | None = None) -> "OutcomeSpace":
        if n_points < 2:
            raise ValueError("grid needs n_points >= 2")
        if not y_max > y_min:
            raise ValueError("grid needs y_max > y_min")
        return cls(kind="grid", y_min=float(y_min), y_max=float(y_max),
                   n_points=int(n_points), density=density)

    @property
    def outcomes(self) -> np.ndarray:
        """Outcome labels (discrete) or grid points (grid)."""
        if self.kind == "discrete":
            return self.labels
        return np.linspace(self.y_min, self.y_max, self.n_points)

    def quadrature_weights(self) -> np.ndarray:
        """Per-outcome weights integrating against the reference measure."""
        if self.kind == "discrete":
            return np.asarray(self.weights, dtype=float)
        pts = self.outcomes
        dy = (self.y_max - self.y_min) / (self.n_points - 1)
        w = np.full(self.n_points, dy)
        w[0] *= 0.5
        w[-1] *= 0.5
        if self.density is not None:
            w = w * np.asarray(self.density(pts), dtype=float)
        return w

    @property
    def step(self) -> float | None:
        if self.kind != "grid":
            return None
        return (self.y_max - self.y_min) / (self.n_points - 1)


class Instrument:
    """An outcome space with a complete family of reduction operators.

    Completeness ``sum_i G_i^dag G_i nu_i = I`` (or its grid quadrature) is
    checked at construction; the measured defect is cached on the instance.

    Parameters
    ----------
    space : OutcomeSpace
    reductions : ndarray, shape (n_outcomes, dim, dim)
        One reduction operator per outcome, in outcome order.
    completeness_tol : float, optional
        Defect ceiling; defaults to the discrete or grid tolerance.
    """

    def __init__(self, space: OutcomeSpace, reductions, completeness_tol: float | None = None):
        stack = np.asarray(reductions, dtype=np.complex128)
        if stack.ndim != 3 or stack.shape[1] != stack.shape[2]:
            raise DimensionMismatchError(
                f"reductions must be a stack of square matrices, got {stack.shape}"
            )
        n = space.outcomes.shape[0]
        if stack.shape[0] != n:
            raise DimensionMismatchError(
                f"{stack.shape[0]} reduction operators for {n} outcomes"
            )
        if completeness_tol is None:
            completeness_tol = (DISCRETE_COMPLETENESS_TOL if space.kind == "discrete"
                                else GRID_COMPLETENESS_TOL)
        stack = stack.copy()
        stack.setflags(write=False)
        self.space = space
        self._stack = stack
        self.completeness_tol = float(completeness_tol)
        w = space.quadrature_weights()
        gram = np.einsum("nji,n,njk->ik", stack.conj(), w, stack)
        self.completeness_defect = max_abs(gram - np.eye(self.dim))
        if self.completeness_defect > self.completeness_tol:
            raise CompletenessError(
                f"instrument completeness defect {self.completeness_defect:.3e} "
                f"exceeds tolerance {self.completeness_tol:.1e}"
            )

    @property
    def dim(self) -> int:
        return self._stack.shape[1]

    @property
    def n_outcomes(self) -> int:
        return self._stack.shape[0]

    @property
    def outcomes(self) -> np.ndarray:
        return self.space.outcomes

    @property
    def reduction_stack(self) -> np.ndarray:
        """Read-only (n_outcomes, dim, dim) array of the G(y)."""
        return self._stack

    def index_of(self, outcome) -> int:
        """Map an outcome label (discrete) or grid value to its index."""
        if self.space.kind == "discrete":
            matches = np.flatnonzero(self.space.labels == outcome)
            if matches.size == 0:
                raise ValueError(f"outcome {outcome!r} is not in the outcome space")
            return int(matches[0])
        y = float(outcome)
        idx = int(round((y - self.space.y_min) / self.space.step))
        if idx < 0 or idx >= self.space.n_points:
            raise ValueError(f"outcome {y} lies outside the grid")
        if abs(self.space.outcomes[idx] - y) > 0.5 * self.space.step * (1 + 1e-9):
            raise ValueError(f"outcome {y} does not match a grid point")
        return idx

    def reduction(self, outcome) -> Operator:
        return Operator(self._stack[self.index_of(outcome)])


@dataclass(frozen=True, eq=False)
class PosteriorResult:
    """Outcome, its density, and the Bayes-conditioned posterior state."""

    outcome: object
    posterior: PureState
    density: float
    phase_convention: str = PHASE_CONVENTION


def effects(instr: Instrument) -> dict:
    """Effects ``E(y) = G(y)^dag G(y)`` keyed by outcome.

    Each effect is Hermitian positive semidefinite by construction; its
    expectation in a state is that outcome's probability density.
    """
    stack = instr.reduction_stack
    es = np.einsum("nji,njk->nik", stack.conj(), stack)
    out = {}
    for key, e in zip(instr.outcomes.tolist(), es):
        out[key] = Operator(e, hermitian_hint=True)
    return out


def outcome_density(instr: Instrument, xi: PureState) -> np.ndarray:
    """Densities ``g_xi(y) = ||G(y) xi||^2`` over all outcomes at once."""
    if xi.dim != instr.dim:
        raise DimensionMismatchError(f"state dim {xi.dim} != instrument dim {instr.dim}")
    chi = instr.reduction_stack @ xi.vec
    return np.einsum("ni,ni->n", chi.conj(), chi).real


def posterior(instr: Instrument, xi: PureState, outcome) -> PosteriorResult:
    """Condition a normalized input state on an observed outcome.

    Returns the posterior ``chi(y)/||chi(y)||`` in the package phase gauge
    together with the density ``g_xi(y)``.

    Raises
    ------
    ZeroLikelihoodError
        If ``g_xi(y) <= 1e-14``; the posterior is defined only where the
        density does not vanish.
    """
    if not xi.normalized:
        raise ValueError("posterior requires a normalized input state")
    idx = instr.index_of(outcome)
    chi = instr.reduction_stack[idx] @ xi.vec
    g = float(np.vdot(chi, chi).real)
    if g <= ZERO_LIKELIHOOD_TOL:
        raise ZeroLikelihoodError(
            f"outcome {outcome!r} has zero likelihood (g = {g:.3e})"
        )
    phi = hilbert.fix_global_phase(chi / math.sqrt(g))
    return PosteriorResult(outcome=instr.outcomes[idx],
                           posterior=PureState(phi), density=g)


def _check_orthoprojector(p: Operator, name: str) -> None:
    if max_abs(p.mat - p.mat.conj().T) > PROJECTOR_TOL:
        raise ValueError(f"{name} is not Hermitian to {PROJECTOR_TOL:.0e}")
    if max_abs(p.mat @ p.mat - p.mat) > PROJECTOR_TOL:
        raise ValueError(f"{name} is not idempotent to {PROJECTOR_TOL:.0e}")


def bayes_conditional(o: Operator, p: Operator, psi: PureState) -> float:
    """Conditional probability of projector ``O`` given projector ``P``.

    Exists precisely when the projectors commute; in that case it is the
    Bayes quotient ``<psi, O P psi> / <psi, P psi>`` clamped to [0, 1].

    Raises
    ------
    NondemolitionError
        If ``max |[O, P]| > 1e-10``: conditioning on an incompatible
        observation has no conditional probability.
    ZeroLikelihoodError
        If the conditioning event has probability ``<= 1e-14``.
    """
    hilbert_dim = psi.dim
    if o.dim != hilbert_dim or p.dim != hilbert_dim:
        raise DimensionMismatchError("projectors and state must share one space")
    _check_orthoprojector(o, "O")
    _check_orthoprojector(p, "P")
    p_psi = p.mat @ psi.vec
    prob = float(np.vdot(psi.vec, p_psi).real)
    if prob <= 1e-14:
        raise ZeroLikelihoodError("conditioning event has zero probability")
    comm = max_abs(o.mat @ p.mat - p.mat @ o.mat)
    if comm > COMMUTATOR_TOL:
        raise NondemolitionError(
            f"no conditional probability: nondemolition violated (|[O,P]| = {comm:.3e})"
        )
    value = float(np.vdot(psi.vec, o.mat @ p_psi).real) / prob
    return min(1.0, max(0.0, value))


def default_gaussian_space(r: Operator, t: float, hbar: float,
                           n_points: int = 2048, n_sigmas: float = 6.0) -> OutcomeSpace:
    """Default grid for the Gaussian family: spectrum padded by 6 sigma.

    The per-eigenvalue density is Gaussian with standard deviation
    ``sqrt(hbar/t)``, so a 6-sigma margin keeps the truncated tail mass
    (hence the completeness defect) below 1e-6.
    """
    w, _ = herm_eig(r)
    sigma = math.sqrt(hbar / t)
    return OutcomeSpace.grid(float(w[0] - n_sigmas * sigma),
                             float(w[-1] + n_sigmas * sigma), n_points)


def gaussian_instrument(r: Operator, t: float, hbar: float,
                        space: OutcomeSpace | None = None) -> Instrument:
    """Finite-duration unsharp measurement of a Hermitian observable.

    Builds ``G(y) = (t/h)^(1/4) exp(-(pi t / 2h)(y - R)^2)`` with
    ``h = 2 pi hbar`` over a uniform grid, by functional calculus on the
    spectrum of ``R``.  The effects are Gaussian densities of variance
    ``hbar/t`` centered on the eigenvalues, so an eigenstate's outcome
    distribution is signal plus Gaussian error of that variance.

    Raises
    ------
    CompletenessError
        If the grid is too narrow or too coarse for the quadrature of the
        effects to resolve the identity to 1e-6 (the measured defect is
        reported).
    """
    if t <= 0.0:
        raise ValueError("duration t must be positive")
    if hbar <= 0.0:
        raise ValueError("hbar must be positive")
    w, v = herm_eig(r)
    if space is None:
        space = default_gaussian_space(r, t, hbar)
    if space.kind != "grid":
        raise ValueError("gaussian_instrument requires a grid outcome space")
    h = 2.0 * math.pi * hbar
    ys = space.outcomes
    # scal[n, j] = (t/h)^(1/4) exp(-(pi t / 2h) (y_n - w_j)^2)
    scal = (t / h) ** 0.25 * np.exp(-(math.pi * t / (2.0 * h))
                                    * (ys[:, None] - w[None, :]) ** 2)
    stack = np.einsum("ij,nj,kj->nik", v, scal.astype(np.complex128), v.conj())
    return Instrument(space, stack, completeness_tol=GRID_COMPLETENESS_TOL)


def default_n_max(l: Operator, t: float) -> int:
    """Poisson-tail default truncation ``ceil(lam + 10 sqrt(lam) + 20)``.

    ``lam = t * max|eig(L)|^2`` dominates every eigenvalue's count
    distribution; ten standard deviations plus a constant floor keeps the
    completeness tail defect under 1e-10.
    """
    w, _ = herm_eig(l)
    lam = t * float(np.max(np.abs(w))) ** 2
    return int(math.ceil(lam + 10.0 * math.sqrt(lam) + 20.0))


def _poisson_log_weights(t: float, n_max: int) -> np.ndarray:
    ns = np.arange(n_max + 1)
    if t == 0.0:
        out = np.full(n_max + 1, -np.inf)
        out[0] = 0.0
        return out
    return -t + ns * math.log(t) - gammaln(ns + 1.0)


def counting_instrument(l: Operator, t: float, n_max: int | None = None) -> Instrument:
    """Quanta-counting measurement over Poisson reference weights.

    Outcomes are counts ``n = 0..n_max`` with weights ``nu_n = e^-t t^n/n!``
    and reductions ``G(t, n) = L^n exp((t/2)(1 - L^2))`` for Hermitian ``L``.
    The family is complete but nonorthogonal: distinct counts are not
    mutually exclusive projections.

    ``t = 0`` degenerates to the single outcome ``n = 0`` with ``G = I``.

    Raises
    ------
    CompletenessError
        If the truncated family misses identity by more than 1e-10; the
        message includes an estimate of the smallest sufficient ``n_max``.
    """
    if t < 0.0:
        raise ValueError("duration t must be nonnegative")
    w, v = herm_eig(l)
    if t == 0.0:
        space = OutcomeSpace.discrete(np.array([0]), np.array([1.0]))
        return Instrument(space, np.eye(l.dim, dtype=np.complex128)[None, :, :],
                          completeness_tol=DISCRETE_COMPLETENESS_TOL)
    if n_max is None:
        n_max = default_n_max(l, t)
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    ns = np.arange(n_max + 1)
    weights = np.exp(_poisson_log_weights(t, n_max))
    drift = np.exp(0.5 * t * (1.0 - w ** 2))
    # scal[n, j] = w_j^n exp((t/2)(1 - w_j^2))
    scal = (w[None, :] ** ns[:, None]) * drift[None, :]
    stack = np.einsum("ij,nj,kj->nik", v, scal.astype(np.complex128), v.conj())
    space = OutcomeSpace.discrete(ns, weights)
    try:
        return Instrument(space, stack, completeness_tol=DISCRETE_COMPLETENESS_TOL)
    except CompletenessError as exc:
        lam = t * float(np.max(np.abs(w))) ** 2
        from scipy.stats import poisson

        sufficient = int(poisson.isf(DISCRETE_COMPLETENESS_TOL, lam)) + 1
        raise CompletenessError(
            f"{exc}; counting tail too heavy at n_max={n_max}, "
            f"n_max >= {sufficient} should suffice"
        ) from None


def apriori_state(instr: Instrument, xi: PureState) -> DensityMatrix:
    """Outcome-averaged (unread) state: the mixture of all posteriors.

    ``sigma_1 = sum_i nu_i G_i |xi><xi| G_i^dag`` (or its grid quadrature);
    its trace is within the instrument's completeness defect of 1.
    """
    if not xi.normalized:
        raise ValueError("apriori_state requires a normalized input state")
    if xi.dim != instr.dim:
        raise DimensionMismatchError(f"state dim {xi.dim} != instrument dim {instr.dim}")
    w = instr.space.quadrature_weights()
    chi = instr.reduction_stack @ xi.vec
    rho = np.einsum("n,ni,nj->ij", w, chi, chi.conj())
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(rho, normalized=False)


def export_instrument(instr: Instrument, directory) -> None:
    """Write an outcome table plus one operator file per outcome.

    ``outcomes.csv`` holds rows ``y, nu, G-matrix-ref``; each referenced file
    is in the operator text format of :mod:`qndsim.hilbert`.
    """
    import os

    os.makedirs(directory, exist_ok=True)
    w = instr.space.quadrature_weights()
    rows = ["# columns=y,nu,gref",
            f"# kind={instr.space.kind}",
            f"# completeness_defect={repr(instr.completeness_defect)}"]
    for i, (y, nu) in enumerate(zip(instr.outcomes.tolist(), w)):
        ref = f"g_{i:05d}.txt"
        hilbert.save_operator(Operator(instr.reduction_stack[i]),
                              os.path.join(directory, ref))
        rows.append(f"{y!r},{float(nu)!r},{ref}")
    with open(os.path.join(directory, "outcomes.csv"), "w", encoding="ascii") as fh:
        fh.write("\n".join(rows) + "\n")
