"""Dense complex linear algebra on finite Hilbert spaces.

Thin immutable wrappers (`Operator`, `PureState`, `DensityMatrix`) around
complex128 numpy arrays, plus the handful of primitives every other module
is built on: commutators, Kronecker products, Hermitian eigendecomposition,
functional calculus and matrix exponentials.  All values are frozen after
construction and safe to share between workers; every function here is pure.

Target dimensions are small (a few hundred at most), so storage is always
dense and eigen-based methods are preferred over iterative ones.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DimensionMismatchError,
    HermiticityError,
    MatrixOverflowError,
    NormalizationError,
)

# Construction-time hints are held to a tighter tolerance than algorithmic
# preconditions, which must absorb accumulated roundoff.
HERMITIAN_HINT_TOL = 1e-12
HERMITIAN_ALGO_TOL = 1e-10

__all__ = [
    "HERMITIAN_HINT_TOL",
    "HERMITIAN_ALGO_TOL",
    "Operator",
    "PureState",
    "DensityMatrix",
    "identity",
    "zero_operator",
    "basis_state",
    "sigma_x",
    "sigma_y",
    "sigma_z",
    "projector",
    "commutator",
    "tensor",
    "tensor_state",
    "herm_eig",
    "herm_apply",
    "expm_scaled",
    "fix_global_phase",
    "max_abs",
    "operator_to_text",
    "operator_from_text",
    "state_to_text",
    "state_from_text",
    "save_operator",
    "load_operator",
    "save_state",
    "load_state",
]


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=np.complex128, copy=True)
    out.setflags(write=False)
    return out


def max_abs(a: np.ndarray) -> float:
    """Max-entry norm used for all tolerance checks in this package."""
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a)))


@dataclass(frozen=True, eq=False)
class Operator:
    """A dense complex square matrix on a finite Hilbert space.

    Parameters
    ----------
    mat : array_like
        Square complex matrix.
    hermitian_hint : bool, optional
        Cached hermiticity flag.  When True the matrix must satisfy
        ``max |A - A^dag| <= 1e-12``; violating the hint is an error.
    """

    mat: np.ndarray
    hermitian_hint: bool | None = None

    def __post_init__(self) -> None:
        m = np.asarray(self.mat)
        if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
            raise DimensionMismatchError(
                f"operator must be a square matrix, got shape {m.shape}"
            )
        object.__setattr__(self, "mat", _freeze(m))
        if self.hermitian_hint:
            defect = max_abs(self.mat - self.mat.conj().T)
            if defect > HERMITIAN_HINT_TOL:
                raise HermiticityError(
                    f"hermitian_hint set but |A - A^dag| = {defect:.3e} "
                    f"exceeds {HERMITIAN_HINT_TOL}"
                )

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def dagger(self) -> "Operator":
        return Operator(self.mat.conj().T, hermitian_hint=self.hermitian_hint)

    def is_hermitian(self, tol: float = HERMITIAN_ALGO_TOL) -> bool:
        return max_abs(self.mat - self.mat.conj().T) <= tol

    def __matmul__(self, other):
        if isinstance(other, Operator):
            _check_same_dim(self, other)
            return Operator(self.mat @ other.mat)
        if isinstance(other, PureState):
            if self.dim != other.dim:
                raise DimensionMismatchError(
                    f"operator dim {self.dim} != state dim {other.dim}"
                )
            return PureState(self.mat @ other.vec, normalized=False)
        return NotImplemented

    def __add__(self, other: "Operator") -> "Operator":
        _check_same_dim(self, other)
        return Operator(self.mat + other.mat)

    def __sub__(self, other: "Operator") -> "Operator":
        _check_same_dim(self, other)
        return Operator(self.mat - other.mat)

    def __mul__(self, scalar) -> "Operator":
        return Operator(self.mat * complex(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "Operator":
        return Operator(-self.mat)


@dataclass(frozen=True, eq=False)
class PureState:
    """A complex state vector; `normalized=True` enforces unit norm."""

    vec: np.ndarray
    normalized: bool = True

    def __post_init__(self) -> None:
        v = np.asarray(self.vec)
        if v.ndim != 1 or v.shape[0] < 1:
            raise DimensionMismatchError(
                f"state must be a vector, got shape {v.shape}"
            )
        object.__setattr__(self, "vec", _freeze(v))
        if self.normalized:
            defect = abs(float(np.vdot(self.vec, self.vec).real) - 1.0)
            if defect > 1e-12:
                raise NormalizationError(
                    f"state marked normalized but | ||psi||^2 - 1 | = {defect:.3e}"
                )

    @property
    def dim(self) -> int:
        return self.vec.shape[0]

    def norm(self) -> float:
        return float(np.linalg.norm(self.vec))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """A Hermitian positive-semidefinite matrix, unit trace when normalized."""

    mat: np.ndarray
    normalized: bool = True

    def __post_init__(self) -> None:
        m = np.asarray(self.mat)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatchError(
                f"density matrix must be square, got shape {m.shape}"
            )
        object.__setattr__(self, "mat", _freeze(m))
        herm_defect = max_abs(self.mat - self.mat.conj().T)
        if herm_defect > HERMITIAN_HINT_TOL:
            raise HermiticityError(
                f"density matrix not Hermitian: defect {herm_defect:.3e}"
            )
        if self.normalized:
            tr_defect = abs(float(np.trace(self.mat).real) - 1.0)
            if tr_defect > 1e-10:
                raise NormalizationError(
                    f"density matrix trace off by {tr_defect:.3e}"
                )
        min_eig = float(np.linalg.eigvalsh(self.mat)[0])
        if min_eig < -1e-10:
            raise NormalizationError(
                f"density matrix has negative eigenvalue {min_eig:.3e}"
            )

    @property
    def dim(self) -> int:
        return self.mat.shape[0]

    def trace(self) -> float:
        return float(np.trace(self.mat).real)


def _check_same_dim(a: Operator, b: Operator) -> None:
    if a.dim != b.dim:
        raise DimensionMismatchError(
            f"incompatible operators: dims {a.dim} and {b.dim}"
        )


def identity(dim: int) -> Operator:
    return Operator(np.eye(dim, dtype=np.complex128), hermitian_hint=True)


def zero_operator(dim: int) -> Operator:
    return Operator(np.zeros((dim, dim), dtype=np.complex128), hermitian_hint=True)


def basis_state(dim: int, index: int) -> PureState:
    v = np.zeros(dim, dtype=np.complex128)
    v[index] = 1.0
    return PureState(v)


def sigma_x() -> Operator:
    return Operator(np.array([[0, 1], [1, 0]], dtype=np.complex128), hermitian_hint=True)


def sigma_y() -> Operator:
    return Operator(np.array([[0, -1j], [1j, 0]], dtype=np.complex128), hermitian_hint=True)


def sigma_z() -> Operator:
    return Operator(np.array([[1, 0], [0, -1]], dtype=np.complex128), hermitian_hint=True)


def projector(psi: PureState) -> Operator:
    """Rank-one projector |psi><psi| of a normalized state."""
    return Operator(np.outer(psi.vec, psi.vec.conj()), hermitian_hint=True)


def commutator(a: Operator, b: Operator) -> Operator:
    """Return ``AB - BA``.

    Raises
    ------
    DimensionMismatchError
        If the operators live on different spaces.
    """
    _check_same_dim(a, b)
    return Operator(a.mat @ b.mat - b.mat @ a.mat)


def tensor(a: Operator, b: Operator) -> Operator:
    """Kronecker product with row-major block convention.

    ``result[i*dB + k, j*dB + l] = A[i, j] * B[k, l]``, which is numpy's
    ``kron`` layout; the left factor indexes the outer (object) space.
    """
    hint = True if (a.hermitian_hint and b.hermitian_hint) else None
    return Operator(np.kron(a.mat, b.mat), hermitian_hint=hint)


def tensor_state(a: PureState, b: PureState) -> PureState:
    return PureState(np.kron(a.vec, b.vec), normalized=a.normalized and b.normalized)


def herm_eig(a: Operator) -> tuple[np.ndarray, np.ndarray]:
    """Spectral decomposition of a Hermitian operator.

    Parameters
    ----------
    a : Operator
        Hermitian to within 1e-10 in max-entry norm.

    Returns
    -------
    (eigenvalues, eigenvectors)
        Real eigenvalues in ascending order and the orthonormal matrix of
        eigenvectors as columns, so that ``A = V diag(w) V^dag``.

    Raises
    ------
    HermiticityError
        If the input is not Hermitian to tolerance.
    """
    if not a.is_hermitian(HERMITIAN_ALGO_TOL):
        defect = max_abs(a.mat - a.mat.conj().T)
        raise HermiticityError(f"herm_eig requires a Hermitian operator (defect {defect:.3e})")
    w, v = np.linalg.eigh(a.mat)
    return w, v


def herm_apply(a: Operator, fn) -> Operator:
    """Apply a scalar function to a Hermitian operator by functional calculus.

    ``fn`` is evaluated on the (real) eigenvalue array and may return complex
    values; the result is ``V diag(fn(w)) V^dag``.
    """
    w, v = herm_eig(a)
    fw = np.asarray(fn(w), dtype=np.complex128)
    return Operator((v * fw) @ v.conj().T)


def expm_scaled(a: Operator, s: complex = 1.0) -> Operator:
    """Return ``exp(s A)``.

    Hermitian operators (by hint, or measured to 1e-12) go through the exact
    eigenvalue functional calculus; everything else uses scipy's
    scaling-and-squaring ``expm`` after splitting off the mean eigenvalue so
    the inverse residual check does not overflow on shifted spectra.

    Raises
    ------
    MatrixOverflowError
        If the exponential leaves the representable range, or the residual
        ``max |exp(sA) exp(-sA) - I|`` exceeds 1e-8.
    """
    s = complex(s)
    hermitian = a.hermitian_hint
    if hermitian is None:
        hermitian = a.is_hermitian(HERMITIAN_HINT_TOL)
    if hermitian:
        w, v = np.linalg.eigh(a.mat)
        with np.errstate(over="ignore", under="ignore"):
            ew = np.exp(s * w)
            ew_inv = np.exp(-s * w)
        if not np.all(np.isfinite(ew)):
            raise MatrixOverflowError("exp(sA) overflows double precision")
        out = (v * ew) @ v.conj().T
        # Underflowed eigenvalues are a valid exp(sA); exclude them from the
        # reciprocal product, which would overflow, and keep the
        # orthogonality part of the residual.
        ok = np.abs(ew) > 0
        pair = np.where(ok, ew * np.where(ok, ew_inv, 0.0), 1.0)
        resid = max_abs((v * pair) @ v.conj().T - np.eye(a.dim))
    else:
        # Exponent balancing: exp(sA) = e^c exp(B) with B traceless.
        c = s * np.trace(a.mat) / a.dim
        b = s * a.mat - c * np.eye(a.dim)
        with np.errstate(over="ignore"):
            eb = scipy.linalg.expm(b)
            eb_inv = scipy.linalg.expm(-b)
            scale = np.exp(c)
            out = scale * eb
        if not (np.all(np.isfinite(eb)) and np.isfinite(scale) and np.all(np.isfinite(out))):
            raise MatrixOverflowError("exp(sA) overflows double precision")
        resid = max_abs(eb @ eb_inv - np.eye(a.dim))
    if not np.isfinite(resid) or resid > 1e-8:
        raise MatrixOverflowError(
            f"exp(sA) failed the inverse residual check: {resid:.3e} > 1e-8"
        )
    return Operator(out)


def fix_global_phase(vec: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Rotate a vector so its first amplitude with ``|a| > tol`` is real positive.

    The gauge makes posterior states deterministic and comparable entrywise.
    Vectors with no amplitude above the threshold are returned unchanged.
    """
    v = np.asarray(vec, dtype=np.complex128)
    idx = np.flatnonzero(np.abs(v) > tol)
    if idx.size == 0:
        return v.copy()
    lead = v[idx[0]]
    return v * (abs(lead) / lead)


# --- columnar text serialization ---------------------------------------
#
# Header line `dim=<n>`, then one line per matrix row (or per amplitude for
# states) of comma-separated re,im pairs.  Floats are rendered with repr(),
# the shortest decimal form that round-trips at full double precision.


def _fmt_row(values: np.ndarray) -> str:
    parts: list[str] = []
    for z in values:
        parts.append(repr(float(z.real)))
        parts.append(repr(float(z.imag)))
    return ",".join(parts)


def _parse_row(line: str, expected: int, where: str) -> np.ndarray:
    parts = [p.strip() for p in line.split(",")]
    if len(parts) != 2 * expected:
        raise ValueError(
            f"{where}: expected {2 * expected} comma-separated values, got {len(parts)}"
        )
    nums = np.array([float(p) for p in parts])
    return nums[0::2] + 1j * nums[1::2]


def _parse_header(lines: list[str], where: str) -> int:
    if not lines or not lines[0].startswith("dim="):
        raise ValueError(f"{where}: missing 'dim=<n>' header")
    return int(lines[0][len("dim="):])


def operator_to_text(op: Operator) -> str:
    lines = [f"dim={op.dim}"]
    lines.extend(_fmt_row(row) for row in op.mat)
    return "\n".join(lines) + "\n"


def operator_from_text(text: str) -> Operator:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    dim = _parse_header(lines, "operator")
    if len(lines) != dim + 1:
        raise ValueError(f"operator: expected {dim} rows, got {len(lines) - 1}")
    rows = [_parse_row(lines[1 + i], dim, f"operator row {i}") for i in range(dim)]
    return Operator(np.vstack(rows))


def state_to_text(psi: PureState) -> str:
    lines = [f"dim={psi.dim}"]
    lines.extend(_fmt_row(np.array([z])) for z in psi.vec)
    return "\n".join(lines) + "\n"


def state_from_text(text: str, normalized: bool | None = None) -> PureState:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    dim = _parse_header(lines, "state")
    if len(lines) != dim + 1:
        raise ValueError(f"state: expected {dim} rows, got {len(lines) - 1}")
    amps = np.array([_parse_row(lines[1 + i], 1, f"state row {i}")[0] for i in range(dim)])
    if normalized is None:
        normalized = bool(abs(float(np.vdot(amps, amps).real) - 1.0) <= 1e-12)
    return PureState(amps, normalized=normalized)


def save_operator(op: Operator, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(operator_to_text(op))


def load_operator(path) -> Operator:
    with open(path, "r", encoding="ascii") as fh:
        return operator_from_text(fh.read())


def save_state(psi: PureState, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(state_to_text(psi))


def load_state(path, normalized: bool | None = None) -> PureState:
    with open(path, "r", encoding="ascii") as fh:
        return state_from_text(fh.read(), normalized=normalized)
