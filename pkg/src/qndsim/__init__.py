"""Finite-dimensional simulator for quantum nondemolition measurement.

Subpackages cover the dense linear-algebra substrate (:mod:`qndsim.hilbert`),
instantaneous generalized instruments (:mod:`qndsim.instruments`), the
discrete shift dilation reconstructing the projection postulate
(:mod:`qndsim.shiftmodel`), continuous-time filtering trajectories
(:mod:`qndsim.trajectories`), ensemble verification (:mod:`qndsim.ensembles`)
and the command-line surface (:mod:`qndsim.cli`).
"""

from . import errors, hilbert, instruments, shiftmodel, trajectories, ensembles

__version__ = "0.1.0"

__all__ = [
    "errors",
    "hilbert",
    "instruments",
    "shiftmodel",
    "trajectories",
    "ensembles",
    "__version__",
]
