"""Discrete unitary dilation of a coarse-grained projective measurement.

The object observable ``R`` is coarse-grained by a partition ``{A_i}`` of its
spectrum with spectral cell projectors ``F_i``.  On object (x) pointer space,
with a cyclic pointer of size ``N``, the interaction is the block matrix
``S = [F_(i-k mod N)]``: it shifts the pointer by the cell index of the
object, ``S(|x> (x) |0>) = |x> (x) |i(x)>``, and is exactly unitary because
the ``F_i`` are orthogonal and complete.  Reading the pointer counting
operator after the interaction realizes the projection postulate: outcome
probabilities are ``<xi, F_i xi>`` and posteriors are the projected states.

The output observable is the Heisenberg transform ``Y = S^dag (I (x) k) S``.
On the no-wrap sector (pointer windows wide enough for the cell indices,
which the build precondition enforces for the vacuum column) it coincides
with ``i(R) (x) 1 + I (x) k``; as a full matrix at finite ``N`` only the
Heisenberg form commutes exactly with every transformed object operator,
so that form is what the model stores.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import hilbert
from .errors import DimensionMismatchError
from .hilbert import Operator, PureState, herm_eig, max_abs
from .instruments import Instrument, OutcomeSpace

UNITARITY_TOL = 1e-10

__all__ = [
    "UNITARITY_TOL",
    "CoarseGraining",
    "DilatedModel",
    "spectral_cell_projectors",
    "projective_instrument",
    "pointer_values",
    "build_dilation",
    "heisenberg",
    "nondemolition_check",
    "characteristic_match",
]


@dataclass(frozen=True)
class CoarseGraining:
    """An ordered partition of the real line into half-open cells [lo, hi).

    Cell ``i`` of the partition is outcome index ``i``; the index map sends
    an eigenvalue to the cell containing it.  Cells must be disjoint and
    ascending; the index range is contiguous by construction.
    """

    intervals: tuple[tuple[float, float], ...]

    def __post_init__(self) -> None:
        ivs = tuple((float(lo), float(hi)) for lo, hi in self.intervals)
        if not ivs:
            raise ValueError("coarse graining needs at least one cell")
        for lo, hi in ivs:
            if not hi > lo:
                raise ValueError(f"empty interval [{lo}, {hi})")
        for (lo0, hi0), (lo1, _hi1) in zip(ivs, ivs[1:]):
            if lo1 < hi0:
                raise ValueError(
                    f"intervals overlap or are out of order: [{lo0},{hi0}) then [{lo1},...)"
                )
        object.__setattr__(self, "intervals", ivs)

    @classmethod
    def from_edges(cls, edges) -> "CoarseGraining":
        """Contiguous cells from ascending breakpoints."""
        edges = [float(e) for e in edges]
        return cls(tuple(zip(edges[:-1], edges[1:])))

    @property
    def n_cells(self) -> int:
        return len(self.intervals)

    def index_of(self, x: float) -> int | None:
        """Cell index of a point, or None if uncovered."""
        for i, (lo, hi) in enumerate(self.intervals):
            if lo <= x < hi:
                return i
        return None


def spectral_cell_projectors(r: Operator, grain: CoarseGraining) -> list[Operator]:
    """Spectral projectors ``F_i`` of ``R`` onto the cells of the partition.

    Raises
    ------
    ValueError
        If some eigenvalue of ``R`` lies in no cell.
    """
    w, v = herm_eig(r)
    cells: list[list[int]] = [[] for _ in range(grain.n_cells)]
    for j, x in enumerate(w):
        idx = grain.index_of(float(x))
        if idx is None:
            raise ValueError(
                f"partition does not cover the spectrum: eigenvalue {x} is in no cell"
            )
        cells[idx].append(j)
    projs = []
    for members in cells:
        f = np.zeros((r.dim, r.dim), dtype=np.complex128)
        for j in members:
            f += np.outer(v[:, j], v[:, j].conj())
        projs.append(Operator(f, hermitian_hint=True))
    return projs


def projective_instrument(r: Operator, grain: CoarseGraining) -> Instrument:
    """The von Neumann instrument induced by the dilation: ``G(i) = F_i``.

    Discrete outcomes are the cell indices with unit reference weights; the
    repeated application of the same outcome leaves the posterior fixed.
    """
    projs = spectral_cell_projectors(r, grain)
    space = OutcomeSpace.discrete(np.arange(grain.n_cells),
                                  np.ones(grain.n_cells))
    return Instrument(space, np.stack([p.mat for p in projs]))


def pointer_values(n: int) -> np.ndarray:
    """Counting-operator spectrum on the cyclic pointer, centered at zero.

    Storage order k = 0..N-1 carries the value k for k < ceil(N/2) and
    k - N otherwise, i.e. the window {-floor(N/2), ..., ceil(N/2) - 1} with
    the vacuum at value 0.
    """
    k = np.arange(n)
    return np.where(k < (n + 1) // 2, k, k - n).astype(float)


@dataclass(frozen=True, eq=False)
class DilatedModel:
    """A built shift dilation: interaction, output observable and pointer."""

    object_dim: int
    pointer_size: int
    S: Operator
    Y: Operator
    k_hat: Operator
    phi0: PureState
    grain: CoarseGraining
    cell_projectors: tuple[Operator, ...]
    index_observable: Operator

    @property
    def dim(self) -> int:
        return self.object_dim * self.pointer_size

    def induced_instrument(self) -> Instrument:
        space = OutcomeSpace.discrete(np.arange(self.grain.n_cells),
                                      np.ones(self.grain.n_cells))
        return Instrument(space, np.stack([p.mat for p in self.cell_projectors]))


def build_dilation(r: Operator, grain: CoarseGraining, pointer_size: int) -> DilatedModel:
    """Construct the block-shift dilation of a coarse-grained observable.

    Parameters
    ----------
    r : Operator
        Hermitian object observable.
    grain : CoarseGraining
        Partition of the spectrum of ``r``; must cover every eigenvalue.
    pointer_size : int
        Cyclic pointer dimension ``N``.  Must exceed twice the index range
        of the partition so no physical shift wraps around the window.

    Raises
    ------
    ValueError
        If the partition misses an eigenvalue or the pointer is too small.
    """
    n = int(pointer_size)
    m = grain.n_cells
    if n <= 2 * (m - 1):
        raise ValueError(
            f"pointer size {n} too small for {m} cells; need N > {2 * (m - 1)}"
        )
    projs = spectral_cell_projectors(r, grain)
    d = r.dim
    # S block (i, k) on the pointer indices is F_(i-k mod N); viewing the
    # compound matrix as (object, pointer, object, pointer) makes the block
    # assignment a plain slice.
    s4 = np.zeros((d, n, d, n), dtype=np.complex128)
    for k in range(n):
        for j in range(m):
            i = (k + j) % n
            s4[:, i, :, k] = projs[j].mat
    s_mat = s4.reshape(d * n, d * n)
    s = Operator(s_mat)
    defect = max_abs(s_mat.conj().T @ s_mat - np.eye(d * n))
    if defect > UNITARITY_TOL:
        raise ValueError(f"interaction failed the unitarity check: defect {defect:.3e}")
    k_hat = Operator(np.diag(pointer_values(n)).astype(np.complex128),
                     hermitian_hint=True)
    pointer_obs = np.kron(np.eye(d), k_hat.mat)
    y_mat = s_mat.conj().T @ pointer_obs @ s_mat
    y = Operator(0.5 * (y_mat + y_mat.conj().T), hermitian_hint=True)
    index_obs = sum((float(i) * p.mat for i, p in enumerate(projs)),
                    np.zeros((d, d), dtype=np.complex128))
    return DilatedModel(
        object_dim=d,
        pointer_size=n,
        S=s,
        Y=y,
        k_hat=k_hat,
        phi0=hilbert.basis_state(n, 0),
        grain=grain,
        cell_projectors=tuple(projs),
        index_observable=Operator(index_obs, hermitian_hint=True),
    )


def heisenberg(model: DilatedModel, z: Operator) -> Operator:
    """Heisenberg transform ``S^dag Z S`` of a compound-space operator."""
    if z.dim != model.dim:
        raise DimensionMismatchError(
            f"operator dim {z.dim} != compound dim {model.dim}"
        )
    return Operator(model.S.mat.conj().T @ z.mat @ model.S.mat)


def nondemolition_check(model: DilatedModel, c: Operator) -> tuple[float, float]:
    """Commutator norms of an object operator against the output observable.

    Returns ``(hcomm, icomm)`` where ``hcomm = max|[S^dag (C(x)1) S, Y]|``
    (zero up to roundoff for every object operator: the measurement does not
    demolish the transformed object algebra) and ``icomm = max|[C(x)1, Y]|``
    (nonzero whenever ``C`` fails to commute with the coarse-grained
    observable: the *untransformed* operator is demolished).
    """
    if c.dim != model.object_dim:
        raise DimensionMismatchError(
            f"object operator dim {c.dim} != object dim {model.object_dim}"
        )
    c0 = np.kron(c.mat, np.eye(model.pointer_size))
    x = model.S.mat.conj().T @ c0 @ model.S.mat
    y = model.Y.mat
    hcomm = max_abs(x @ y - y @ x)
    icomm = max_abs(c0 @ y - y @ c0)
    return hcomm, icomm


def characteristic_match(model: DilatedModel, xi: PureState, p_grid) -> float:
    """Max deviation between output and coarse-grained characteristic functions.

    Compares ``<xi (x) phi0, e^{ipY} (xi (x) phi0)>`` with
    ``<xi, e^{ip i(R)} xi>`` over the given grid of ``p`` values.  Equality
    to roundoff shows the dilated observation reproduces the statistics of
    the direct coarse-grained measurement.
    """
    if xi.dim != model.object_dim:
        raise DimensionMismatchError(
            f"state dim {xi.dim} != object dim {model.object_dim}"
        )
    ps = np.asarray(p_grid, dtype=float)
    psi0 = np.kron(xi.vec, model.phi0.vec)
    wy, vy = herm_eig(model.Y)
    amp_y = np.abs(vy.conj().T @ psi0) ** 2
    wi, vi = herm_eig(model.index_observable)
    amp_i = np.abs(vi.conj().T @ xi.vec) ** 2
    lhs = np.exp(1j * np.outer(ps, wy)) @ amp_y
    rhs = np.exp(1j * np.outer(ps, wi)) @ amp_i
    return max_abs(lhs - rhs)
