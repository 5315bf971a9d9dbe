"""Open-system time evolution.

One integrator step is unitary conjugation by exp(-i H dt / hbar) followed
by an explicit Euler application of the jump terms: per leaky mode a decay
superoperator gamma * (A rho A+ - {A+A, rho}/2) and, when the mode is
pumped, an influx term mu*gamma * (A+ rho A - {A A+, rho}/2).  Detailed
balance between decay and influx at ratio mu is what makes the per-mode
thermal state stationary.

``evolve`` is the production loop.  It permutes the state into the
connected components of the Hamiltonian's sparsity pattern so the
propagator is block diagonal (each block exponentiated separately and the
conjugation done block by block), folds the anticommutator halves into a
single precomputed damping mask, and applies the jump sandwiches through
their nonzero pattern only.  All of that is exact rearrangement, not
approximation; ``unitary_step`` and ``dissipative_step`` stay as the plain
reference implementations the tests compare against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .basis import MODE_NAMES, BasisIndex
from .ops import BasisMismatchError, SparseOperator, photon_op
from .ptsim import DEFAULT_PTSIM, PtsimConfig, expm_ptsim


class InvariantBreachError(Exception):
    """Trace or finiteness of the state broke during evolution; carries
    the partial trajectory recorded so far."""

    def __init__(self, message: str, trajectory: "Trajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


@dataclass
class DensityMatrix:
    """Dense density matrix tagged with its basis."""

    basis_id: str
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.complex128)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError(f"density matrix must be square, got shape {m.shape}")
        self.matrix = m

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def trace(self) -> float:
        return float(self.matrix.trace().real)

    def herm_residual(self) -> float:
        return float(np.abs(self.matrix - self.matrix.conj().T).max()) if self.dim else 0.0

    def min_eigenvalue(self) -> float:
        if self.dim == 0:
            return 0.0
        sym = 0.5 * (self.matrix + self.matrix.conj().T)
        return float(np.linalg.eigvalsh(sym)[0])

    def purity(self) -> float:
        return float(np.sum(np.abs(self.matrix) ** 2))

    @staticmethod
    def pure(idx: BasisIndex, i: int) -> "DensityMatrix":
        m = np.zeros((idx.dim, idx.dim), dtype=np.complex128)
        m[i, i] = 1.0
        return DensityMatrix(idx.basis_id, m)

    @staticmethod
    def from_vector(idx: BasisIndex, vec: np.ndarray) -> "DensityMatrix":
        v = np.asarray(vec, dtype=np.complex128).reshape(-1)
        if v.shape[0] != idx.dim:
            raise ValueError(f"vector length {v.shape[0]} does not match basis dim {idx.dim}")
        return DensityMatrix(idx.basis_id, np.outer(v, v.conj()))


@dataclass(frozen=True)
class JumpChannel:
    """One leaky cavity mode: annihilator, leak strength, influx ratio."""

    label: str
    op: SparseOperator
    gamma: float
    mu: float = 0.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"channel {self.label!r}: gamma must be non-negative")
        if not 0 <= self.mu < 1:
            raise ValueError(f"channel {self.label!r}: mu must lie in [0, 1)")

    @property
    def influx_rate(self) -> float:
        return self.mu * self.gamma


def make_channels(params, idx: BasisIndex) -> list[JumpChannel]:
    """One jump channel per cavity mode, from the model parameter set."""
    return [
        JumpChannel(
            label=name,
            op=photon_op(idx, name, "annihilate"),
            gamma=params.gamma[m],
            mu=params.mu[m],
        )
        for m, name in enumerate(MODE_NAMES)
    ]


def _dense(rho) -> np.ndarray:
    if isinstance(rho, DensityMatrix):
        return rho.matrix
    return np.asarray(rho, dtype=np.complex128)


def dissipator(channel: JumpChannel, rho) -> np.ndarray:
    """gamma * (A rho A+ - {A+A, rho} / 2)."""
    r = _dense(rho)
    a = channel.op.matrix
    ah = a.conj().T
    sandwich = a @ (a @ r.conj().T).conj().T
    gram = (ah @ a).toarray()
    return channel.gamma * (sandwich - 0.5 * (gram @ r + r @ gram))


def influx(channel: JumpChannel, rho) -> np.ndarray:
    """mu * gamma * (A+ rho A - {A A+, rho} / 2)."""
    if channel.influx_rate == 0.0:
        r = _dense(rho)
        return np.zeros_like(r)
    r = _dense(rho)
    a = channel.op.matrix
    ah = a.conj().T
    sandwich = ah @ (ah @ r.conj().T).conj().T
    gram = (a @ ah).toarray()
    return channel.influx_rate * (sandwich - 0.5 * (gram @ r + r @ gram))


def lindblad_rhs(channels: Sequence[JumpChannel], rho) -> np.ndarray:
    """Sum of all decay and influx superoperators applied to rho."""
    r = _dense(rho)
    out = np.zeros_like(r)
    for ch in channels:
        if ch.gamma == 0.0:
            continue
        out += dissipator(ch, r)
        if ch.influx_rate > 0.0:
            out += influx(ch, r)
    return out


def unitary_step(
    rho: DensityMatrix,
    h: SparseOperator,
    dt: float,
    *,
    hbar: float = 1.0,
    config: PtsimConfig = DEFAULT_PTSIM,
) -> DensityMatrix:
    """rho -> U rho U+ with U = exp(-i H dt / hbar)."""
    if rho.basis_id != h.basis_id:
        raise BasisMismatchError(f"state over {rho.basis_id}, Hamiltonian over {h.basis_id}")
    u = expm_ptsim(-1j * h.dense() / hbar, dt, config)
    return DensityMatrix(rho.basis_id, u @ rho.matrix @ u.conj().T)


def dissipative_step(
    rho: DensityMatrix,
    channels: Sequence[JumpChannel],
    dt: float,
    *,
    hbar: float = 1.0,
    check_positivity: bool = False,
) -> DensityMatrix:
    """Explicit Euler application of the jump terms."""
    out = DensityMatrix(rho.basis_id, rho.matrix + (dt / hbar) * lindblad_rhs(channels, rho))
    if check_positivity:
        low = out.min_eigenvalue()
        if low < -1e-8:
            import warnings

            warnings.warn(
                f"dissipative step drove the smallest eigenvalue to {low:.3g}; "
                "the step size is too large for these rates",
                stacklevel=2,
            )
    return out


# ---------------------------------------------------------------------------
# thermal utilities


def mu_temperature(
    omega: float,
    *,
    mu: float | None = None,
    temperature: float | None = None,
    hbar: float = 1.0,
    boltzmann: float = 1.0,
) -> float:
    """Convert between the influx ratio and the bath temperature of one
    mode: mu = exp(-hbar*omega / (k*T)), with mu = 0 <-> T = 0."""
    if (mu is None) == (temperature is None):
        raise ValueError("provide exactly one of mu or temperature")
    if omega <= 0:
        raise ValueError(f"mode frequency must be positive, got {omega}")
    if mu is not None:
        if not 0 <= mu < 1:
            raise ValueError(f"mu must lie in [0, 1), got {mu}")
        if mu == 0.0:
            return 0.0
        return hbar * omega / (boltzmann * math.log(1.0 / mu))
    if temperature < 0:
        raise ValueError(f"temperature must be non-negative, got {temperature}")
    if temperature == 0.0:
        return 0.0
    return math.exp(-hbar * omega / (boltzmann * temperature))


def gibbs_state(
    temperature: float,
    omega: float,
    n_max: int,
    *,
    hbar: float = 1.0,
    boltzmann: float = 1.0,
) -> DensityMatrix:
    """Single-mode thermal state on the truncated Fock ladder 0..n_max."""
    if temperature < 0:
        raise ValueError(f"temperature must be non-negative, got {temperature}")
    if n_max < 0:
        raise ValueError(f"n_max must be non-negative, got {n_max}")
    levels = np.arange(n_max + 1)
    if temperature == 0.0:
        weights = np.zeros(n_max + 1)
        weights[0] = 1.0
    else:
        weights = np.exp(-hbar * omega * levels / (boltzmann * temperature))
        weights /= weights.sum()
    return DensityMatrix(f"fock-{n_max}", np.diag(weights.astype(np.complex128)))


# ---------------------------------------------------------------------------
# production evolution loop


@dataclass(frozen=True)
class LinearCombination:
    """Time-dependent Hamiltonian H(t) = sum_i c_i(t) * W_i with static
    sparse parts and scalar coefficient functions."""

    terms: tuple[tuple[Callable[[float], float], SparseOperator], ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("need at least one term")
        ids = {op.basis_id for _, op in self.terms}
        if len(ids) != 1:
            raise BasisMismatchError(f"terms span several bases: {sorted(ids)}")

    @property
    def basis_id(self) -> str:
        return self.terms[0][1].basis_id

    @property
    def dim(self) -> int:
        return self.terms[0][1].dim

    def pattern(self) -> sp.csr_matrix:
        acc = None
        for _, op in self.terms:
            p = abs(op.matrix)
            acc = p if acc is None else acc + p
        return acc.tocsr()

    def value(self, t: float) -> SparseOperator:
        acc = None
        for fn, op in self.terms:
            piece = op.matrix * complex(fn(t))
            acc = piece if acc is None else acc + piece
        return SparseOperator(self.basis_id, acc.tocsr())


@dataclass
class Trajectory:
    """Recorded time grid, observable columns, and the final state."""

    times: np.ndarray
    columns: dict[str, np.ndarray]
    final: DensityMatrix | None = None
    snapshots: list[tuple[float, DensityMatrix]] = field(default_factory=list)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.ndim != 1:
            raise ValueError("time grid must be one-dimensional")
        if self.times.size > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("time grid must be strictly increasing")
        cols = {}
        for name, values in self.columns.items():
            v = np.asarray(values, dtype=np.float64)
            if v.shape != self.times.shape:
                raise ValueError(f"column {name!r} length {v.shape} does not match grid")
            cols[name] = v
        self.columns = cols

    def __len__(self) -> int:
        return int(self.times.size)

    def column(self, name: str) -> np.ndarray:
        return self.columns[name]


class _JumpApplier:
    """A weighted sandwich X -> w * A X A+ through A's nonzero pattern.

    Photon annihilators and creators hit each source state at most once
    and never merge targets, so the sandwich is a scaled submatrix
    scatter; a general fallback keeps the semantics for other shapes.
    """

    def __init__(self, op: sp.csr_matrix, weight: float):
        coo = op.tocoo()
        self.rows = coo.row.astype(np.intp)
        self.cols = coo.col.astype(np.intp)
        self.amps = coo.data * math.sqrt(weight)
        self.simple = len(np.unique(self.rows)) == len(self.rows)
        if not self.simple:
            self.mat = (op * math.sqrt(weight)).tocsr()

    def add_sandwich(self, x: np.ndarray, out: np.ndarray) -> None:
        if len(self.rows) == 0:
            return
        if self.simple:
            block = x[np.ix_(self.cols, self.cols)]
            scaled = (self.amps[:, None] * block) * self.amps.conj()[None, :]
            out[np.ix_(self.rows, self.rows)] += scaled
        else:
            out += self.mat @ (self.mat @ x.conj().T).conj().T


def _component_order(pattern: sp.csr_matrix) -> tuple[np.ndarray, list[slice]]:
    n_comp, labels = connected_components(pattern, directed=False)
    perm = np.argsort(labels, kind="stable")
    counts = np.bincount(labels, minlength=n_comp)
    blocks, start = [], 0
    for c in counts:
        blocks.append(slice(start, start + int(c)))
        start += int(c)
    return perm.astype(np.intp), blocks


def _permute_sparse(mat: sp.spmatrix, perm: np.ndarray) -> sp.csr_matrix:
    return mat.tocsr()[perm, :][:, perm].tocsr()


def evolve(
    rho0: DensityMatrix,
    hamiltonian: SparseOperator | LinearCombination,
    channels: Sequence[JumpChannel],
    *,
    dt: float,
    n_steps: int,
    hbar: float = 1.0,
    ptsim_config: PtsimConfig = DEFAULT_PTSIM,
    record_every: int = 1,
    observables: Mapping[str, Callable[[np.ndarray], float]] | None = None,
    t0: float = 0.0,
    record_initial: bool = True,
    trace_tol: float = 1e-9,
    herm_tol: float = 1e-9,
) -> Trajectory:
    """Run ``n_steps`` integrator steps, recording every ``record_every``.

    Records the built-in diagnostics (trace, Hermiticity residual,
    smallest eigenvalue, purity) plus the caller's observable functions,
    which receive the dense state in the caller's basis order.  Raises
    InvariantBreachError (with the partial trajectory attached) when the
    trace leaves 1 +- ``trace_tol``, the Hermiticity residual exceeds
    ``herm_tol``, or the state stops being finite.  Eigenvalue dips below
    the positivity floor are recorded, not fatal; the scenario layer
    reacts to them.
    """
    if dt <= 0 or not math.isfinite(dt):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    if n_steps < 0:
        raise ValueError(f"n_steps must be non-negative, got {n_steps}")
    if record_every < 1:
        raise ValueError(f"record_every must be at least 1, got {record_every}")
    static = isinstance(hamiltonian, SparseOperator)
    h_basis = hamiltonian.basis_id
    if rho0.basis_id != h_basis:
        raise BasisMismatchError(f"state over {rho0.basis_id}, Hamiltonian over {h_basis}")
    for ch in channels:
        if ch.op.basis_id != h_basis:
            raise BasisMismatchError(
                f"channel {ch.label!r} over {ch.op.basis_id}, Hamiltonian over {h_basis}"
            )
    dim = rho0.dim
    observables = dict(observables or {})

    pattern = abs(hamiltonian.matrix) if static else hamiltonian.pattern()
    perm, blocks = _component_order(pattern.tocsr())
    inv_perm = np.empty_like(perm)
    inv_perm[perm] = np.arange(dim, dtype=np.intp)
    trivial_perm = bool(np.all(perm == np.arange(dim)))

    rho = rho0.matrix[np.ix_(perm, perm)].copy()

    # Propagator blocks: dense per connected component of the pattern.
    if static:
        hp = _permute_sparse(hamiltonian.matrix, perm)
        u_blocks = [
            expm_ptsim(-1j * hp[sl, sl].toarray() / hbar, dt, ptsim_config) for sl in blocks
        ]
        term_blocks = None
    else:
        term_blocks = [
            (fn, [_permute_sparse(op.matrix, perm)[sl, sl].toarray() for sl in blocks])
            for fn, op in hamiltonian.terms
        ]
        u_blocks = None

    # Jump machinery in the permuted frame.  The damping mask below
    # tracks only per-state outflow, i.e. the diagonal of the jump
    # operator's Gram matrix, so it is exact only when that Gram matrix
    # IS diagonal (orthogonal columns; every photon ladder qualifies).
    # Anything else would leak trace at first order, so refuse it up
    # front instead of letting the trace invariant abort mid-run.
    def _require_orthogonal_columns(mat: sp.csr_matrix, label: str, what: str) -> None:
        gram = (mat.conj().T @ mat).tocsr()
        off = gram - sp.diags(gram.diagonal(), format="csr", dtype=gram.dtype)
        if off.nnz and float(np.abs(off.data).max()) > 1e-12 * max(
            1.0, float(np.abs(gram.diagonal()).max())
        ):
            raise ValueError(
                f"channel {label!r}: the {what} does not have orthogonal columns, "
                "so the per-state damping mask cannot represent its anticommutator; "
                "use operators with a diagonal Gram matrix"
            )

    appliers: list[_JumpApplier] = []
    w = np.zeros(dim)
    for ch in channels:
        if ch.gamma == 0.0:
            continue
        a = _permute_sparse(ch.op.matrix, perm)
        _require_orthogonal_columns(a, ch.label, "jump operator")
        absq = a.conj().multiply(a)
        w += ch.gamma * np.asarray(absq.sum(axis=0)).ravel().real
        appliers.append(_JumpApplier(a, ch.gamma))
        if ch.influx_rate > 0.0:
            ah = a.conj().T.tocsr()
            _require_orthogonal_columns(ah, ch.label, "influx operator")
            w += ch.influx_rate * np.asarray(absq.sum(axis=1)).ravel().real
            appliers.append(_JumpApplier(ah, ch.influx_rate))
    # Damping as a congruence d rho d with d_i = sqrt(1 - w_i dt): the
    # diagonal factors are exactly 1 - w_i dt, so the outflow matches the
    # sandwich refill and the trace is conserved to roundoff, while the
    # outer-product form keeps the step completely positive at any dt
    # (the additive mask 1 - (w_i + w_j) dt/2 is not a congruence and
    # leaks small negative eigenvalues through strong coherences).
    wdt = (dt / hbar) * w
    if wdt.size and float(wdt.max()) >= 1.0:
        raise ValueError(
            f"dissipative weight {w.max():g} too fast for dt={dt:g}; reduce the step"
        )
    droot = np.sqrt(1.0 - wdt)
    damp = np.outer(droot, droot)

    times: list[float] = []
    recorded: dict[str, list[float]] = {
        name: [] for name in ("trace", "herm_residual", "min_eig", "purity", *observables)
    }

    def partial() -> Trajectory:
        return Trajectory(
            np.asarray(times), {k: np.asarray(v) for k, v in recorded.items()}, final=None
        )

    def record(t: float, state: np.ndarray) -> None:
        diag = state.diagonal()
        if not np.all(np.isfinite(diag)):
            raise InvariantBreachError(f"state went non-finite at t={t:g}", partial())
        tr = float(diag.real.sum())
        herm = float(np.abs(state - state.conj().T).max()) if dim else 0.0
        if abs(tr - 1.0) > trace_tol:
            raise InvariantBreachError(
                f"trace drifted to {tr!r} at t={t:g} (tolerance {trace_tol:g})", partial()
            )
        if herm > herm_tol:
            raise InvariantBreachError(
                f"Hermiticity residual {herm:.3g} at t={t:g} (tolerance {herm_tol:g})", partial()
            )
        sym = 0.5 * (state + state.conj().T)
        eigs = np.linalg.eigvalsh(sym)
        times.append(t)
        recorded["trace"].append(tr)
        recorded["herm_residual"].append(herm)
        recorded["min_eig"].append(float(eigs[0]))
        recorded["purity"].append(float(np.sum(np.abs(state) ** 2)))
        if observables:
            original = state if trivial_perm else state[np.ix_(inv_perm, inv_perm)]
            for name, fn in observables.items():
                recorded[name].append(float(fn(original)))

    if record_initial:
        record(t0, rho)

    scratch = np.empty_like(rho)
    jumps = np.empty_like(rho)
    for step in range(n_steps):
        if not static:
            t_mid = t0 + (step + 0.5) * dt
            u_blocks = []
            for b, sl in enumerate(blocks):
                hb = None
                for fn, mats in term_blocks:
                    piece = complex(fn(t_mid)) * mats[b]
                    hb = piece if hb is None else hb + piece
                u_blocks.append(expm_ptsim(-1j * hb / hbar, dt, ptsim_config))
        # Unitary half: S = U rho U+, block by block.
        for sl, u in zip(blocks, u_blocks):
            scratch[sl, :] = u @ rho[sl, :]
        for sl, u in zip(blocks, u_blocks):
            scratch[:, sl] = scratch[:, sl] @ u.conj().T
        # Dissipative half: damping mask plus jump sandwiches.
        jumps[:] = 0.0
        for ap in appliers:
            ap.add_sandwich(scratch, jumps)
        np.multiply(scratch, damp, out=rho)
        rho += (dt / hbar) * jumps
        if (step + 1) % record_every == 0:
            record(t0 + (step + 1) * dt, rho)

    final_mat = rho if trivial_perm else rho[np.ix_(inv_perm, inv_perm)]
    traj = Trajectory(
        np.asarray(times),
        {k: np.asarray(v) for k, v in recorded.items()},
        final=DensityMatrix(rho0.basis_id, final_mat.copy()),
    )
    return traj
