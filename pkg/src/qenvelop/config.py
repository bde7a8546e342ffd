"""Numeric tolerances used throughout the package, kept in one place."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    state_norm: float = 1e-10
    unitary: float = 1e-10
    hermitian: float = 1e-10
    psd: float = 1e-10
    completeness: float = 1e-9
    probability_sum: float = 1e-9
    imaginary_residue: float = 1e-10
    leakage_inner: float = 1e-12
    overlap: float = 1e-10
    envelopment: float = 1e-10
    prior_sum: float = 1e-12


TOL = Tolerances()
