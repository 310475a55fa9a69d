"""Run-configuration files: flat key-value text with section headers.

Matrices are inline ``re+imj`` comma grids with ``;`` separating rows, or a
``@relative/path`` reference to an operator file in the columnar text format
of :mod:`qndsim.hilbert`.  States are comma lists of complex amplitudes (or
``@file``) and are normalized on load.  Seeds are mandatory wherever
randomness is consumed; the loader never invents entropy.
"""

from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import hilbert
from .errors import ConfigError
from .hilbert import Operator, PureState
from .trajectories import COUNTING, DIFFUSIVE, ModelSpec, SDEConfig

_KNOWN_KEYS = {
    "model": {"hbar", "h", "l", "unraveling", "initial"},
    "sde": {"t_final", "dt", "seed", "scheme", "record_stride"},
    "ensemble": {"n_paths"},
    "output": {"dir"},
    "instrument": {"kind", "r", "l", "t", "hbar", "initial",
                   "y_min", "y_max", "n_points", "n_max"},
    "shift": {"r", "partition", "pointer_size", "c", "n_random", "seed",
              "p_points", "p_max", "initial"},
    "ensemble_stats": {"times"},
    "oracle_compare": {"dt_values", "n_paths"},
}

_NAMED_OPERATORS = {
    "sigmax": hilbert.sigma_x,
    "sigmay": hilbert.sigma_y,
    "sigmaz": hilbert.sigma_z,
}


@dataclass
class RunConfig:
    """Parsed configuration plus the directory its references resolve against."""

    base_dir: Path
    sections: dict

    def hash(self) -> str:
        """Digest of the effective configuration (overrides included).

        The output location is excluded: runs differing only in where their
        files land are the same run and must produce identical bytes.
        """
        lines = []
        for section in sorted(self.sections):
            if section == "output":
                continue
            for key in sorted(self.sections[section]):
                lines.append(f"{section}.{key}={self.sections[section][key]}")
        return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:16]

    # -- raw access ----------------------------------------------------

    def has_section(self, section: str) -> bool:
        return section in self.sections

    def _section(self, section: str) -> dict:
        if section not in self.sections:
            raise ConfigError(f"[{section}]: missing required section")
        return self.sections[section]

    def get_str(self, section: str, key: str, default=None) -> str:
        sec = self._section(section)
        if key not in sec:
            if default is not None:
                return default
            raise ConfigError(f"[{section}] {key}: missing required field")
        return sec[key].strip()

    def get_float(self, section: str, key: str, default=None) -> float:
        raw = self.get_str(section, key, None if default is None else repr(default))
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: not a number: {raw!r}") from None

    def get_int(self, section: str, key: str, default=None) -> int:
        raw = self.get_str(section, key, None if default is None else str(default))
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: not an integer: {raw!r}") from None

    def get_floats(self, section: str, key: str) -> list[float]:
        raw = self.get_str(section, key)
        try:
            return [float(p) for p in raw.split(",") if p.strip()]
        except ValueError:
            raise ConfigError(f"[{section}] {key}: not a number list: {raw!r}") from None

    # -- structured values ----------------------------------------------

    def get_matrix(self, section: str, key: str) -> Operator:
        raw = self.get_str(section, key)
        where = f"[{section}] {key}"
        if raw.startswith("@"):
            path = self.base_dir / raw[1:]
            try:
                return hilbert.load_operator(path)
            except OSError as exc:
                raise ConfigError(f"{where}: cannot read {path}: {exc}") from None
            except ValueError as exc:
                raise ConfigError(f"{where}: bad operator file: {exc}") from None
        if raw.lower() in _NAMED_OPERATORS:
            return _NAMED_OPERATORS[raw.lower()]()
        try:
            rows = [[complex(e.strip().replace(" ", ""))
                     for e in row.split(",") if e.strip()]
                    for row in raw.split(";")]
            mat = np.array(rows, dtype=np.complex128)
        except ValueError as exc:
            raise ConfigError(f"{where}: bad matrix literal: {exc}") from None
        if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
            raise ConfigError(f"{where}: matrix is not square: shape {mat.shape}")
        return Operator(mat)

    def get_state(self, section: str, key: str) -> PureState:
        raw = self.get_str(section, key)
        where = f"[{section}] {key}"
        if raw.startswith("@"):
            path = self.base_dir / raw[1:]
            try:
                psi = hilbert.load_state(path, normalized=False)
            except OSError as exc:
                raise ConfigError(f"{where}: cannot read {path}: {exc}") from None
            except ValueError as exc:
                raise ConfigError(f"{where}: bad state file: {exc}") from None
            amps = psi.vec
        else:
            try:
                amps = np.array([complex(e.strip().replace(" ", ""))
                                 for e in raw.split(",") if e.strip()],
                                dtype=np.complex128)
            except ValueError as exc:
                raise ConfigError(f"{where}: bad state literal: {exc}") from None
        norm = float(np.linalg.norm(amps))
        if norm <= 0.0:
            raise ConfigError(f"{where}: state has zero norm")
        return PureState(amps / norm)


def load_config(path, overrides: dict | None = None) -> RunConfig:
    """Read a configuration file and apply command-line overrides.

    Overrides are ``{(section, key): value}`` replacements applied before
    hashing, so the recorded hash always names the effective run.
    """
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",),
                                       interpolation=None)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc}") from None
    sections: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in _KNOWN_KEYS:
            raise ConfigError(f"[{section}]: unknown section")
        body = {}
        for key, value in parser.items(section):
            if key not in _KNOWN_KEYS[section]:
                raise ConfigError(f"[{section}] {key}: unknown field")
            body[key] = value
        sections[section] = body
    cfg = RunConfig(base_dir=path.parent, sections=sections)
    for (section, key), value in (overrides or {}).items():
        if section in cfg.sections:
            cfg.sections[section][key] = str(value)
    return cfg


def build_model(cfg: RunConfig) -> ModelSpec:
    """Assemble the continuous-measurement model from [model]."""
    unraveling = cfg.get_str("model", "unraveling").lower()
    if unraveling not in (DIFFUSIVE, COUNTING):
        raise ConfigError(f"[model] unraveling: must be '{DIFFUSIVE}' or "
                          f"'{COUNTING}', got {unraveling!r}")
    h_op = cfg.get_matrix("model", "h")
    l_op = cfg.get_matrix("model", "l")
    initial = cfg.get_state("model", "initial")
    if not (h_op.dim == l_op.dim == initial.dim):
        raise ConfigError("[model] h/l/initial: inconsistent dimensions "
                          f"({h_op.dim}, {l_op.dim}, {initial.dim})")
    try:
        return ModelSpec(hbar=cfg.get_float("model", "hbar"), H=h_op, L=l_op,
                         unraveling=unraveling, initial=initial)
    except ValueError as exc:
        raise ConfigError(f"[model]: {exc}") from None


def build_sde(cfg: RunConfig) -> SDEConfig:
    """Assemble the integration grid from [sde]; the seed is mandatory."""
    try:
        return SDEConfig(
            t_final=cfg.get_float("sde", "t_final"),
            dt=cfg.get_float("sde", "dt"),
            seed=cfg.get_int("sde", "seed"),
            scheme=cfg.get_str("sde", "scheme"),
            record_stride=cfg.get_int("sde", "record_stride", default=1),
        )
    except ValueError as exc:
        raise ConfigError(f"[sde]: {exc}") from None


def parse_partition(cfg: RunConfig) -> tuple[tuple[float, float], ...]:
    raw = cfg.get_str("shift", "partition")
    cells = []
    for item in raw.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.split(":")
        if len(parts) != 2:
            raise ConfigError(f"[shift] partition: expected 'lo:hi', got {item!r}")
        try:
            cells.append((float(parts[0]), float(parts[1])))
        except ValueError:
            raise ConfigError(f"[shift] partition: bad interval {item!r}") from None
    if not cells:
        raise ConfigError("[shift] partition: no intervals given")
    return tuple(cells)
