"""Continuous-time filtering trajectories under reference measures.

The linear filtering equations are simulated as written, under the standard
Wiener or unit-rate Poisson reference law, carrying the likelihood weight
``g_t = ||chi_t||^2`` instead of normalizing on the fly:

* diffusive:  ``d chi = -K chi dt + L chi dw``,  ``K = (i/hbar) H + L^dag L / 2``
  (Ito sense, Euler-Maruyama scheme);
* counting:   ``d chi = (1/2)(I - L^2) chi dt + (L - 1) chi dn``
  (exact piecewise scheme: drift exponential between jumps, ``chi -> L chi``
  at each jump), valid in the Hermitian-``L``, ``H = 0`` regime where the
  closed-form solution ``chi_t = L^(n_t) exp((t/2)(1 - L^2)) chi_0`` holds.

Physical (posterior-measure) statistics are recovered by weight-averaging
over an ensemble; the weights form a martingale of mean 1 under the
reference law.

Noise comes from the Philox counter-based generator keyed by
``(seed, stream)``, so every trajectory is bit-reproducible in isolation
and independent streams need no coordination.
"""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass

import numpy as np

from . import hilbert
from .errors import BlowUpError, DimensionMismatchError, HermiticityError
from .hilbert import Operator, PureState, herm_eig, max_abs

DIFFUSIVE = "diffusive"
COUNTING = "counting"
EULER_MARUYAMA = "euler_maruyama"
EXACT_PIECEWISE = "exact_piecewise"

BLOWUP_NORM = 1e12
VANISHING_NORM = 1e-150
STABILITY_LIMIT = 0.1

__all__ = [
    "DIFFUSIVE",
    "COUNTING",
    "EULER_MARUYAMA",
    "EXACT_PIECEWISE",
    "ModelSpec",
    "SDEConfig",
    "TrajectoryRecord",
    "path_generator",
    "wiener_path",
    "poisson_path",
    "poisson_jump_times",
    "integrate_diffusive",
    "integrate_counting",
    "diffusive_oracle",
    "counting_oracle",
    "normalize_and_weight",
    "save_trajectory",
    "load_trajectory",
]


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """A continuous-measurement model: hbar, H, coupling L, unraveling, input.

    ``H`` must be Hermitian; the counting unraveling additionally requires
    Hermitian ``L``.  The measured observable is ``R = sqrt(hbar)(L + L^dag)``.
    """

    hbar: float
    H: Operator
    L: Operator
    unraveling: str
    initial: PureState

    def __post_init__(self) -> None:
        if not self.hbar > 0.0:
            raise ValueError("hbar must be positive")
        if self.unraveling not in (DIFFUSIVE, COUNTING):
            raise ValueError(f"unknown unraveling {self.unraveling!r}")
        if self.H.dim != self.L.dim or self.initial.dim != self.L.dim:
            raise DimensionMismatchError("H, L and the initial state must share one space")
        if not self.H.is_hermitian(1e-10):
            raise HermiticityError("Hamiltonian must be Hermitian to 1e-10")
        if self.unraveling == COUNTING and not self.L.is_hermitian(1e-10):
            raise HermiticityError("counting unraveling requires Hermitian L")
        if not self.initial.normalized:
            raise ValueError("initial state must be normalized")

    @property
    def dim(self) -> int:
        return self.L.dim

    def coupling_observable(self) -> Operator:
        """The measured observable ``R = sqrt(hbar) (L + L^dag)``."""
        r = np.sqrt(self.hbar) * (self.L.mat + self.L.mat.conj().T)
        return Operator(r, hermitian_hint=True)

    def drift_generator(self) -> np.ndarray:
        """``K = (i/hbar) H + L^dag L / 2``."""
        return (1j / self.hbar) * self.H.mat + 0.5 * (self.L.mat.conj().T @ self.L.mat)

    def model_hash(self) -> str:
        payload = "|".join([
            repr(float(self.hbar)),
            self.unraveling,
            hilbert.operator_to_text(self.H),
            hilbert.operator_to_text(self.L),
            hilbert.state_to_text(self.initial),
        ])
        return hashlib.sha256(payload.encode("ascii")).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class SDEConfig:
    """Time grid, seed and scheme for one integration run.

    ``dt`` must divide ``t_final`` to one part in 1e9 and ``record_stride``
    must divide the step count, so the final time is always recorded.
    """

    t_final: float
    dt: float
    seed: int
    scheme: str
    record_stride: int = 1

    def __post_init__(self) -> None:
        if not self.t_final > 0.0:
            raise ValueError("t_final must be positive")
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.scheme not in (EULER_MARUYAMA, EXACT_PIECEWISE):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.record_stride < 1:
            raise ValueError("record_stride must be a positive integer")
        n = round(self.t_final / self.dt)
        if n < 1 or abs(n * self.dt - self.t_final) > 1e-9 * self.t_final:
            raise ValueError(
                f"dt={self.dt} does not divide t_final={self.t_final} to 1e-9"
            )
        if n % self.record_stride != 0:
            raise ValueError(
                f"record_stride={self.record_stride} does not divide {n} steps"
            )
        object.__setattr__(self, "seed", int(self.seed) & (2 ** 64 - 1))

    @property
    def n_steps(self) -> int:
        return round(self.t_final / self.dt)

    @property
    def record_indices(self) -> np.ndarray:
        return np.arange(0, self.n_steps + 1, self.record_stride)

    @property
    def record_times(self) -> np.ndarray:
        return self.record_indices * self.dt


@dataclass(eq=False)
class TrajectoryRecord:
    """One simulated path: recorded states, weights, noise and output.

    ``chi`` holds the unnormalized linear solution at the recorded times,
    ``weight`` its squared norms ``g_t``.  For the diffusive unraveling
    ``noise`` is the full per-step Wiener increment array and ``output`` the
    accumulated ``q_t = sqrt(hbar) w_t`` at the recorded times; for counting
    both ``noise`` and ``output`` are the cumulative counts ``n_t`` there.
    """

    times: np.ndarray
    chi: np.ndarray
    weight: np.ndarray
    noise: np.ndarray
    output: np.ndarray
    seed: int
    stream: int
    unraveling: str
    model_hash: str
    dt: float
    record_stride: int
    hbar: float = 1.0


def path_generator(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox generator for one trajectory, keyed by (seed, stream)."""
    key = np.array([seed & (2 ** 64 - 1), stream & (2 ** 64 - 1)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def wiener_path(config: SDEConfig, stream: int = 0) -> np.ndarray:
    """Independent N(0, dt) increments for every step, bit-reproducible."""
    gen = path_generator(config.seed, stream)
    return gen.standard_normal(config.n_steps) * np.sqrt(config.dt)


def poisson_jump_times(t_final: float, seed: int, stream: int = 0) -> np.ndarray:
    """Jump times of a unit-rate Poisson process on [0, t_final].

    Sampled as partial sums of unit-mean exponential inter-arrival times;
    ``t_final = 0`` yields no jumps.
    """
    if t_final < 0.0:
        raise ValueError("t_final must be nonnegative")
    gen = path_generator(seed, stream)
    jumps = []
    t = gen.exponential(1.0)
    while t <= t_final:
        jumps.append(t)
        t += gen.exponential(1.0)
    return np.asarray(jumps, dtype=float)


def poisson_path(config: SDEConfig, stream: int = 0) -> np.ndarray:
    """Jump times on the configured window, keyed like :func:`wiener_path`."""
    return poisson_jump_times(config.t_final, config.seed, stream)


def _stability_warning(model: ModelSpec, config: SDEConfig) -> None:
    l_norm = float(np.linalg.norm(model.L.mat, ord=2))
    if config.dt * l_norm ** 2 > STABILITY_LIMIT:
        warnings.warn(
            f"dt * ||L||^2 = {config.dt * l_norm ** 2:.3g} exceeds "
            f"{STABILITY_LIMIT}; the Euler scheme may be inaccurate",
            stacklevel=3,
        )


def _euler_block(model: ModelSpec, config: SDEConfig, dw: np.ndarray,
                 record_indices: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Euler-Maruyama on a (n_paths, n_steps) block of shared-layout noise.

    Returns ``chi`` of shape (n_paths, n_rec, dim) and the Wiener path
    values ``w`` of shape (n_paths, n_rec) at the recorded step indices.
    """
    n_paths, n_steps = dw.shape
    dim = model.dim
    step_mat = np.eye(dim) - config.dt * model.drift_generator()
    l_mat = model.L.mat
    rec_pos = {int(k): i for i, k in enumerate(record_indices)}
    chi_rec = np.empty((n_paths, len(record_indices), dim), dtype=np.complex128)
    w_rec = np.empty((n_paths, len(record_indices)))
    chi = np.tile(model.initial.vec, (n_paths, 1))
    w = np.zeros(n_paths)
    if 0 in rec_pos:
        chi_rec[:, rec_pos[0]] = chi
        w_rec[:, rec_pos[0]] = w
    for k in range(n_steps):
        drifted = np.einsum("ij,bj->bi", step_mat, chi)
        kicked = np.einsum("ij,bj->bi", l_mat, chi)
        chi = drifted + dw[:, k, None] * kicked
        w = w + dw[:, k]
        if (k + 1) in rec_pos:
            norms = np.einsum("bi,bi->b", chi.conj(), chi).real
            if not np.all(norms <= BLOWUP_NORM ** 2):  # catches NaN too
                raise BlowUpError(
                    f"|chi| exceeded {BLOWUP_NORM:.0e} at step {k + 1}; "
                    "reduce dt"
                )
            chi_rec[:, rec_pos[k + 1]] = chi
            w_rec[:, rec_pos[k + 1]] = w
    return chi_rec, w_rec


def integrate_diffusive(model: ModelSpec, config: SDEConfig,
                        stream: int = 0) -> TrajectoryRecord:
    """Integrate the linear diffusive filtering equation on one noise path.

    Euler-Maruyama update ``chi <- (I - K dt) chi + (L chi) dw`` per step,
    recording every ``record_stride`` steps.

    Raises
    ------
    BlowUpError
        If ``||chi||`` exceeds 1e12 (the advice is to reduce ``dt``).
    """
    if model.unraveling != DIFFUSIVE:
        raise ValueError("integrate_diffusive requires a diffusive model")
    if config.scheme != EULER_MARUYAMA:
        raise ValueError("the diffusive unraveling uses the euler_maruyama scheme")
    _stability_warning(model, config)
    dw = wiener_path(config, stream)
    rec = config.record_indices
    chi_rec, w_rec = _euler_block(model, config, dw[None, :], rec)
    chi = chi_rec[0]
    weight = np.einsum("ri,ri->r", chi.conj(), chi).real
    return TrajectoryRecord(
        times=config.record_times,
        chi=chi,
        weight=weight,
        noise=dw,
        output=np.sqrt(model.hbar) * w_rec[0],
        seed=config.seed,
        stream=stream,
        unraveling=DIFFUSIVE,
        model_hash=model.model_hash(),
        dt=config.dt,
        record_stride=config.record_stride,
        hbar=model.hbar,
    )


class _CountingPropagator:
    """Eigenbasis helper applying drift exponentials and jumps exactly."""

    def __init__(self, model: ModelSpec):
        self.ell, self.v = herm_eig(model.L)
        self.vh = self.v.conj().T

    def to_eigen(self, chi: np.ndarray) -> np.ndarray:
        return self.vh @ chi

    def from_eigen(self, a: np.ndarray) -> np.ndarray:
        return self.v @ a

    def drift(self, a: np.ndarray, span: float) -> np.ndarray:
        return a * np.exp(0.5 * span * (1.0 - self.ell ** 2))

    def jump(self, a: np.ndarray) -> np.ndarray:
        return a * self.ell


def _counting_walk(prop: _CountingPropagator, chi0: np.ndarray,
                   record_times: np.ndarray, jumps: np.ndarray
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Evolve through jump and record events in time order.

    A jump landing exactly on a record time counts at that time (the count
    path is right-continuous).  Returns recorded states and counts.
    """
    a = prop.to_eigen(chi0)
    chi_rec = np.empty((len(record_times), chi0.shape[0]), dtype=np.complex128)
    n_rec = np.empty(len(record_times), dtype=np.int64)
    t = 0.0
    j = 0
    for r, t_rec in enumerate(record_times):
        while j < len(jumps) and jumps[j] <= t_rec:
            a = prop.drift(a, jumps[j] - t)
            a = prop.jump(a)
            t = jumps[j]
            j += 1
        a = prop.drift(a, t_rec - t)
        t = t_rec
        chi_rec[r] = prop.from_eigen(a)
        n_rec[r] = j
    return chi_rec, n_rec


def integrate_counting(model: ModelSpec, config: SDEConfig,
                       stream: int = 0) -> TrajectoryRecord:
    """Integrate the linear counting filtering equation on one jump path.

    Between jumps the drift solution ``chi <- exp((span/2)(I - L^2)) chi``
    is applied for the exact elapsed span; each jump applies ``chi <- L chi``.
    Both factors commute, so the scheme is exact: at every recorded time the
    state equals ``L^(n_t) exp((t/2)(1 - L^2)) chi_0`` to roundoff.

    Requires the Hermitian-``L``, ``H = 0`` regime.
    """
    if model.unraveling != COUNTING:
        raise ValueError("integrate_counting requires a counting model")
    if config.scheme != EXACT_PIECEWISE:
        raise ValueError("the counting unraveling uses the exact_piecewise scheme")
    if max_abs(model.H.mat) != 0.0:
        raise ValueError("the counting scheme is derived for H = 0")
    jumps = poisson_path(config, stream)
    prop = _CountingPropagator(model)
    chi_rec, n_rec = _counting_walk(prop, model.initial.vec,
                                    config.record_times, jumps)
    weight = np.einsum("ri,ri->r", chi_rec.conj(), chi_rec).real
    return TrajectoryRecord(
        times=config.record_times,
        chi=chi_rec,
        weight=weight,
        noise=n_rec.astype(float),
        output=n_rec.astype(float),
        seed=config.seed,
        stream=stream,
        unraveling=COUNTING,
        model_hash=model.model_hash(),
        dt=config.dt,
        record_stride=config.record_stride,
        hbar=model.hbar,
    )


def diffusive_oracle(model: ModelSpec, w: float, t: float) -> PureState:
    """Closed-form diffusive solution ``exp(w L - t L^2) chi_0``.

    Valid only for ``H = 0`` and Hermitian ``L``, where the linear equation
    integrates in closed form as a function of the Wiener value ``w_t``.

    Raises
    ------
    ValueError
        Outside the closed-form regime.
    """
    if max_abs(model.H.mat) != 0.0:
        raise ValueError("the diffusive closed form requires H = 0")
    if not model.L.is_hermitian(1e-10):
        raise ValueError("the diffusive closed form requires Hermitian L")
    ell, v = herm_eig(model.L)
    a = v.conj().T @ model.initial.vec
    a = a * np.exp(w * ell - t * ell ** 2)
    return PureState(v @ a, normalized=False)


def counting_oracle(model: ModelSpec, n: int, t: float) -> PureState:
    """Closed-form counting solution ``L^n exp((t/2)(1 - L^2)) chi_0``."""
    if max_abs(model.H.mat) != 0.0:
        raise ValueError("the counting closed form requires H = 0")
    if not model.L.is_hermitian(1e-10):
        raise ValueError("the counting closed form requires Hermitian L")
    if n < 0:
        raise ValueError("count must be nonnegative")
    ell, v = herm_eig(model.L)
    a = v.conj().T @ model.initial.vec
    a = a * ell ** int(n) * np.exp(0.5 * t * (1.0 - ell ** 2))
    return PureState(v @ a, normalized=False)


def normalize_and_weight(record: TrajectoryRecord) -> tuple[np.ndarray, np.ndarray]:
    """Split the linear solution into normalized states and weights.

    Returns ``(phi, g)`` where ``phi[k] = chi[k] / ||chi[k]||`` in the
    package phase gauge and ``g[k] = ||chi[k]||^2``; posterior-measure
    expectations are ``g``-weighted ensemble averages.

    Raises
    ------
    ValueError
        If some recorded norm falls under 1e-150.
    """
    g = record.weight
    if np.any(np.sqrt(g) < VANISHING_NORM):
        raise ValueError("trajectory weight vanished; cannot normalize")
    phi = record.chi / np.sqrt(g)[:, None]
    phi = np.vstack([hilbert.fix_global_phase(row) for row in phi])
    return phi, g.copy()


# --- columnar persistence ------------------------------------------------


def save_trajectory(record: TrajectoryRecord, path) -> None:
    """Write a record as columnar text: ``t, w_or_n, g, re/im amplitudes``.

    The header carries the model hash, seed, stream and step size.  For the
    diffusive unraveling the ``w_or_n`` column stores the Wiener value
    ``w_t`` (the output is ``sqrt(hbar) w_t``); per-step increments are not
    persisted.
    """
    dim = record.chi.shape[1]
    if record.unraveling == DIFFUSIVE:
        w_or_n = record.output / np.sqrt(record.hbar)
    else:
        w_or_n = record.output
    cols = ["t", "w_or_n", "g"]
    for i in range(dim):
        cols.append(f"re_chi_{i + 1}")
        cols.append(f"im_chi_{i + 1}")
    lines = [
        f"# model_hash={record.model_hash}",
        f"# seed={record.seed}",
        f"# stream={record.stream}",
        f"# dt={record.dt!r}",
        f"# record_stride={record.record_stride}",
        f"# unraveling={record.unraveling}",
        f"# hbar={record.hbar!r}",
        "# columns=" + ",".join(cols),
        "# units=time,record,likelihood,amplitude...",
    ]
    for k, t in enumerate(record.times):
        vals = [repr(float(t)), repr(float(w_or_n[k])),
                repr(float(record.weight[k]))]
        for z in record.chi[k]:
            vals.append(repr(float(z.real)))
            vals.append(repr(float(z.imag)))
        lines.append(",".join(vals))
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")


def load_trajectory(path) -> TrajectoryRecord:
    """Read back a record written by :func:`save_trajectory`.

    The per-step noise array is not persisted; the loaded record carries the
    recorded output column in its place.
    """
    meta: dict[str, str] = {}
    rows = []
    with open(path, "r", encoding="ascii") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body:
                    key, val = body.split("=", 1)
                    meta[key.strip()] = val.strip()
                continue
            rows.append([float(p) for p in line.split(",")])
    data = np.asarray(rows)
    times = data[:, 0]
    w_or_n = data[:, 1]
    weight = data[:, 2]
    amps = data[:, 3::2] + 1j * data[:, 4::2]
    hbar = float(meta.get("hbar", "1.0"))
    unraveling = meta["unraveling"]
    output = np.sqrt(hbar) * w_or_n if unraveling == DIFFUSIVE else w_or_n
    return TrajectoryRecord(
        times=times,
        chi=amps,
        weight=weight,
        noise=w_or_n.copy(),
        output=output,
        seed=int(meta["seed"]),
        stream=int(meta["stream"]),
        unraveling=unraveling,
        model_hash=meta["model_hash"],
        dt=float(meta["dt"]),
        record_stride=int(meta["record_stride"]),
        hbar=hbar,
    )
