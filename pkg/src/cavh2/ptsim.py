"""Matrix exponentials by scaled Taylor products with repeated doubling.

``expm_ptsim`` computes exp(A * dt) by slicing dt into 2^N equal pieces,
expanding exp(A * eps) - 1 to fourth order on one piece, and doubling the
increment N times with T <- 2T + T^2.  Accumulating the increment rather
than the full exponential avoids the round-off annihilation of adding a
tiny update to the identity 2^N times; the identity is restored once at
the end.

``expm_oracle`` is an independent cross-check built on different
mathematics: a Schur decomposition (diagonal for normal input, which
covers the Hermitian generators this package produces) and, for
non-normal input, plain scaling and squaring with a Taylor series summed
to floating-point convergence.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

MAX_DOUBLING_DEPTH = 62
_TAYLOR_TERMS = 4


class PtsimError(Exception):
    """Non-finite input or propagation, or an unusable configuration."""


@dataclass(frozen=True)
class PtsimConfig:
    """Doubling depth N for the piecewise exponential.  The per-piece
    Taylor order is fixed at 4 by the method."""

    doubling_depth: int = 20
    taylor_terms: int = _TAYLOR_TERMS

    def __post_init__(self):
        if not 0 <= self.doubling_depth <= MAX_DOUBLING_DEPTH:
            raise PtsimError(
                f"doubling depth must lie in [0, {MAX_DOUBLING_DEPTH}], got {self.doubling_depth}"
            )
        if self.taylor_terms != _TAYLOR_TERMS:
            raise PtsimError(f"the per-piece Taylor order is fixed at {_TAYLOR_TERMS}")


DEFAULT_PTSIM = PtsimConfig()


def _as_square(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise PtsimError(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise PtsimError("matrix contains NaN or Inf")
    return a


def expm_ptsim(a: np.ndarray, dt: float, config: PtsimConfig = DEFAULT_PTSIM) -> np.ndarray:
    """exp(a * dt) by N-fold doubling of a fourth-order piece.

    If ||a||_1 * dt / 2^N exceeds 1 the depth is raised automatically (with
    a warning) so the per-piece expansion stays inside its radius of
    accuracy; depths beyond the 2^62 piece limit are refused.
    """
    a = _as_square(a)
    n = a.shape[0]
    depth = config.doubling_depth
    norm = float(np.linalg.norm(a, 1)) * abs(dt)
    if norm > 0 and norm / 2**depth > 1.0:
        needed = int(math.ceil(math.log2(norm)))
        if needed > MAX_DOUBLING_DEPTH:
            raise PtsimError(
                f"||a||*dt = {norm:.3g} needs doubling depth {needed}, "
                f"beyond the limit of {MAX_DOUBLING_DEPTH}"
            )
        warnings.warn(
            f"||a||*dt = {norm:.3g} exceeds 2^{depth}; raising doubling depth to {needed}",
            stacklevel=2,
        )
        depth = needed

    eps = dt / 2.0**depth
    b = a * eps
    b2 = b @ b
    b3 = b2 @ b
    b4 = b2 @ b2
    t = b + b2 / 2.0 + b3 / 6.0 + b4 / 24.0
    for _ in range(depth):
        t = 2.0 * t + t @ t
    if not np.all(np.isfinite(t)):
        raise PtsimError("NaN or Inf produced during doubling; check the input scale")
    return np.eye(n, dtype=np.complex128) + t


_NORMALITY_RTOL = 1e-12


def _is_normal(a: np.ndarray) -> bool:
    scale = float(np.linalg.norm(a, 1))
    if scale == 0.0:
        return True
    comm = a @ a.conj().T - a.conj().T @ a
    return float(np.abs(comm).max()) <= _NORMALITY_RTOL * scale * scale


def expm_oracle(a: np.ndarray, dt: float) -> np.ndarray:
    """Reference exp(a * dt) on an independent route: unitary
    diagonalization via Schur for normal matrices, scaling and squaring
    with a to-convergence Taylor series otherwise."""
    a = _as_square(a)
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0), dtype=np.complex128)
    if _is_normal(a):
        t, z = scipy.linalg.schur(a * dt, output="complex")
        return (z * np.exp(np.diag(t))) @ z.conj().T
    # Non-normal fallback: halve until the norm is small, sum the series
    # until terms vanish in double precision, then square back up.
    m = a * dt
    norm = float(np.linalg.norm(m, 1))
    squarings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    m = m / 2.0**squarings
    result = np.eye(n, dtype=np.complex128)
    term = np.eye(n, dtype=np.complex128)
    for k in range(1, 60):
        term = term @ m / k
        result = result + term
        if float(np.abs(term).max()) < 1e-18 * float(np.abs(result).max()):
            break
    for _ in range(squarings):
        result = result @ result
    return result


def unitarity_residual(u: np.ndarray) -> float:
    """max |U^dagger U - I|; zero for exact unitaries."""
    u = np.asarray(u, dtype=np.complex128)
    n = u.shape[0]
    return float(np.abs(u.conj().T @ u - np.eye(n)).max())
