"""Model parameters and Hamiltonian assembly.

The Hamiltonian splits into four physical pieces:

* the together-sector (molecular) piece: photon and orbital energies of
  the two molecular-transition modes plus their rotating-wave couplings,
  all gated by the nuclei-together projector;
* the apart-sector (atomic) piece: the same structure for the two
  atomic-transition modes, summed over both atoms, gated by the
  nuclei-apart projector;
* the electron-exchange (tunneling) piece: slot-pattern projectors times
  the nuclear shift, one term per charge arrangement of the two exc-slot
  groups, with independent strengths;
* the spin piece: the spin-flip mode energy (ungated), plus spin
  transition energy and rotating-wave coupling gated to the apart sector.

Every off-diagonal term is built from composed state actions, never from
products of restricted matrices, so building over a pruned basis that is
closed under the full Hamiltonian pattern reproduces the restriction of
the full-space matrix exactly.

Two frames are supported.  "lab" keeps the bare-energy diagonal exactly
as written above.  "rotating" subtracts that diagonal (every surviving
coupling is then resonant and static); the jump channels are unchanged by
the frame, and populations of energy eigenstates are frame independent.
The dynamical scenarios default to the rotating frame: with the stock
parameter set the bare-energy bookkeeping detunes every tunneling element
by an order of magnitude more than its strength, freezing the association
and dissociation pathways that the resonant frame supports.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .basis import (
    MODE_NAMES,
    N_MODES,
    NUCLEI_APART,
    NUCLEI_TOGETHER,
    BasisIndex,
    BasisState,
    mode_index,
    slot_index,
)
from .ops import (
    Action,
    SparseOperator,
    atomic_lower_action,
    build_operator,
    compose_actions,
    diagonal_operator,
    molecular_lower_action,
    photon_create_action,
    spin_lower_action,
    spin_raise_action,
    transition_lower_actions,
)

SC_ETA_LIMIT = 0.1


class SchedulingError(ValueError):
    """Inconsistent schedule/motion combination."""


@dataclass(frozen=True)
class ModelParams:
    """Static model constants, in units with hbar = 1 unless overridden.

    Tuples are ordered like ``basis.MODE_NAMES``: (mol_up, mol_dn,
    atom_up, atom_dn, spin).  ``gamma`` are the per-mode leak strengths
    entering the dissipator and ``mu`` the per-mode influx ratios
    (incoherent pump rate = mu * gamma).
    """

    hbar: float = 1.0
    freq: tuple[float, ...] = (5e9, 5e9, 1e10, 1e10, 1e9)
    coupling: tuple[float, ...] = (5e7, 5e7, 1e8, 1e8, 1e7)
    zeta0: float = 0.0
    zeta1: float = 1e8
    zeta2: float = 1e9
    gamma: tuple[float, ...] = (1e7, 1e7, 1e7, 1e7, 1e7)
    mu: tuple[float, ...] = (0.0, 0.0, 0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("freq", "coupling", "gamma", "mu"):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != N_MODES:
                raise ValueError(f"{name} needs {N_MODES} entries, got {len(vals)}")
            object.__setattr__(self, name, vals)
        if self.hbar <= 0:
            raise ValueError(f"hbar must be positive, got {self.hbar}")
        for name in ("freq", "coupling", "gamma"):
            if any(v < 0 for v in getattr(self, name)):
                raise ValueError(f"{name} entries must be non-negative")
        if any(not 0 <= m < 1 for m in self.mu):
            raise ValueError(f"influx ratios must lie in [0, 1), got {self.mu}")
        for name in ("zeta0", "zeta1", "zeta2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def freq_of(self, mode: int | str) -> float:
        return self.freq[mode_index(mode)]

    def coupling_of(self, mode: int | str) -> float:
        return self.coupling[mode_index(mode)]

    def with_mu(self, mu: Mapping[str, float]) -> "ModelParams":
        vals = list(self.mu)
        for mode, value in mu.items():
            vals[mode_index(mode)] = float(value)
        return replace(self, mu=tuple(vals))

    def with_coupling(self, coupling: Mapping[str, float]) -> "ModelParams":
        vals = list(self.coupling)
        for mode, value in coupling.items():
            vals[mode_index(mode)] = float(value)
        return replace(self, coupling=tuple(vals))


ATOMIC_GROUP = ("atom_up", "atom_dn", "spin")
MOLECULAR_GROUP = ("mol_up", "mol_dn")


@dataclass(frozen=True)
class CouplingSchedule:
    """Time profile of one mode group's couplings during classical nuclear
    motion.

    The profile multiplies each group mode's base coupling by a fraction
    in [0, 1].  For "association" the atomic group ramps 1 -> 0 and the
    molecular group 0 -> 1 over ``duration``; "dissociation" mirrors
    both.  Shapes: "straight" is linear, "trig" uses the quarter-cosine
    ramps.  ``g_max`` optionally overrides the base maxima per mode.
    """

    mode_group: str
    shape: str
    direction: str
    duration: float
    g_max: Mapping[str, float] | None = None

    def __post_init__(self):
        if self.mode_group not in ("atomic", "molecular"):
            raise SchedulingError(f"mode_group must be 'atomic' or 'molecular', got {self.mode_group!r}")
        if self.shape not in ("straight", "trig"):
            raise SchedulingError(f"shape must be 'straight' or 'trig', got {self.shape!r}")
        if self.direction not in ("association", "dissociation"):
            raise SchedulingError(
                f"direction must be 'association' or 'dissociation', got {self.direction!r}"
            )
        if not (self.duration > 0 and math.isfinite(self.duration)):
            raise SchedulingError(f"duration must be positive and finite, got {self.duration}")

    @property
    def modes(self) -> tuple[str, ...]:
        return ATOMIC_GROUP if self.mode_group == "atomic" else MOLECULAR_GROUP

    def fraction(self, t: float, *, warn: bool = True) -> float:
        """Scheduled fraction of the maximum coupling at time ``t``.
        Outside [0, duration] the endpoint value holds (the ramp is over);
        ``warn`` flags such evaluations for callers that treat them as
        suspect."""
        if t < 0 or t > self.duration:
            if warn:
                warnings.warn(
                    f"schedule evaluated at t={t:g} outside [0, {self.duration:g}]; clamping",
                    stacklevel=2,
                )
            t = min(max(t, 0.0), self.duration)
        x = t / self.duration
        # Fraction of the ramp that has completed, 0 -> 1.
        if self.shape == "straight":
            done = x
        else:
            done = (1.0 - math.cos(math.pi * x)) / 2.0
        fading = (self.mode_group == "atomic") == (self.direction == "association")
        return 1.0 - done if fading else done


def couplings_at(
    t: float, schedules: Sequence[CouplingSchedule], base: ModelParams
) -> ModelParams:
    """Instantaneous coupling set: each scheduled group's modes scaled by
    the schedule fraction; unscheduled modes keep their base values."""
    values = list(base.coupling)
    for sched in schedules:
        frac = sched.fraction(t)
        for mode in sched.modes:
            m = mode_index(mode)
            peak = base.coupling[m]
            if sched.g_max is not None and mode in sched.g_max:
                peak = float(sched.g_max[mode])
            values[m] = peak * frac
    return replace(base, coupling=tuple(values))


# ---------------------------------------------------------------------------
# Hamiltonian pieces


def _gated(action: Action, nucleus: int | None) -> Action:
    if nucleus is None:
        return action

    def act(s: BasisState):
        if s.nucleus == nucleus:
            yield from action(s)

    return act


def _rwa_interaction(
    idx: BasisIndex,
    g: float,
    mode: int | str,
    lower_actions: Sequence[Action],
    gate: int | None,
) -> SparseOperator:
    """g * (a_mode^dagger sum(sigma) + h.c.), gated to one nuclear sector."""
    m = mode_index(mode)
    cutoff = idx.spec.photon_truncations[m]
    create = photon_create_action(m, cutoff)

    def emit(s: BasisState):
        for low in lower_actions:
            yield from compose_actions(create, low)(s)

    emission = build_operator(idx, _gated(emit, gate)).scale(g)
    return emission + emission.adjoint()


def _projector_values(idx: BasisIndex, occupied: Sequence[int], empty: Sequence[int]) -> np.ndarray:
    mask = np.ones(idx.dim, dtype=bool)
    for pos in occupied:
        mask &= idx.slots[:, pos] == 1
    for pos in empty:
        mask &= idx.slots[:, pos] == 0
    return mask.astype(np.float64)


def build_H_A(params: ModelParams, idx: BasisIndex, *, gated: bool = True) -> SparseOperator:
    """Together-sector piece: photon and orbital energies of the molecular
    modes plus their rotating-wave couplings.  ``gated=False`` drops the
    nuclear projector (classical-motion assembly)."""
    hbar = params.hbar
    gate = NUCLEI_TOGETHER if gated else None
    diag = np.zeros(idx.dim)
    for spin, mode in (("up", "mol_up"), ("dn", "mol_dn")):
        m = mode_index(mode)
        diag += hbar * params.freq[m] * idx.photons[:, m]
        # One quantum of transition energy when the upper molecular
        # orbital is filled and the lower one of the same spin is free.
        upper = slot_index(1, "exc", spin)
        lower = slot_index(2, "exc", spin)
        diag += hbar * params.freq[m] * _projector_values(idx, [upper], [lower])
    if gated:
        diag = diag * (idx.nucleus == NUCLEI_TOGETHER)
    h = diagonal_operator(idx, diag)
    for spin, mode in (("up", "mol_up"), ("dn", "mol_dn")):
        g = params.coupling_of(mode)
        if g != 0.0:
            h = h + _rwa_interaction(idx, g, mode, [molecular_lower_action(spin)], gate)
    return h


def build_H_D(params: ModelParams, idx: BasisIndex, *, gated: bool = True) -> SparseOperator:
    """Apart-sector piece: the atomic-transition modes' energies and
    couplings, summed over both atoms."""
    hbar = params.hbar
    gate = NUCLEI_APART if gated else None
    diag = np.zeros(idx.dim)
    for spin, mode in (("up", "atom_up"), ("dn", "atom_dn")):
        m = mode_index(mode)
        diag += hbar * params.freq[m] * idx.photons[:, m]
        for atom in (1, 2):
            exc = slot_index(atom, "exc", spin)
            gnd = slot_index(atom, "gnd", spin)
            diag += hbar * params.freq[m] * _projector_values(idx, [exc], [gnd])
    if gated:
        diag = diag * (idx.nucleus == NUCLEI_APART)
    h = diagonal_operator(idx, diag)
    for spin, mode in (("up", "atom_up"), ("dn", "atom_dn")):
        g = params.coupling_of(mode)
        if g != 0.0:
            actions = [atomic_lower_action(1, spin), atomic_lower_action(2, spin)]
            h = h + _rwa_interaction(idx, g, mode, actions, gate)
    return h


# The four charge arrangements of the exc-slot groups that the electron
# exchange distinguishes, as (occupied, empty) slot lists: both electrons
# on group 1, one on each (two orderings), both on group 2.
_EXCHANGE_PATTERNS = (
    ("zeta2", (0, 1), (4, 5)),
    ("zeta1", (0, 5), (1, 4)),
    ("zeta1", (1, 4), (0, 5)),
    ("zeta0", (4, 5), (0, 1)),
)


def build_H_tun(params: ModelParams, idx: BasisIndex) -> SparseOperator:
    """Electron-exchange piece: pattern projectors times the nuclear shift
    (both directions), weighted by the matching strength."""

    weights = {"zeta0": params.zeta0, "zeta1": params.zeta1, "zeta2": params.zeta2}

    def act(s: BasisState):
        for name, occ, emp in _EXCHANGE_PATTERNS:
            w = weights[name]
            if w == 0.0:
                continue
            if all(s.slots[p] == 1 for p in occ) and all(s.slots[p] == 0 for p in emp):
                yield s.with_nucleus(1 - s.nucleus), w

    return build_operator(idx, act)


def build_H_spin(params: ModelParams, idx: BasisIndex, *, gated: bool = True) -> SparseOperator:
    """Spin piece: spin-flip mode photon energy (never gated), plus spin
    transition energy and rotating-wave coupling gated to the apart
    sector.  The transition-energy operator is the literal composite
    raise-after-lower, so it carries the cross-orbital exchange elements
    of the two-branch flip, not just a projector diagonal."""
    hbar = params.hbar
    gate = NUCLEI_APART if gated else None
    m = mode_index("spin")
    h = diagonal_operator(idx, hbar * params.freq[m] * idx.photons[:, m])

    def energy(s: BasisState):
        for atom in (1, 2):
            comp = compose_actions(spin_raise_action(atom), spin_lower_action(atom))
            yield from comp(s)

    h = h + build_operator(idx, _gated(energy, gate)).scale(hbar * params.freq[m])

    g = params.coupling_of("spin")
    if g != 0.0:
        actions = [spin_lower_action(1), spin_lower_action(2)]
        h = h + _rwa_interaction(idx, g, "spin", actions, gate)
    return h


def strip_diagonal(h: SparseOperator) -> SparseOperator:
    """The same operator with its diagonal removed (rotating frame)."""
    mat = h.matrix.copy().tolil()
    mat.setdiag(0.0)
    mat = mat.tocsr()
    mat.eliminate_zeros()
    return SparseOperator(h.basis_id, mat)


def build_total(
    t: float,
    params: ModelParams,
    schedules: Sequence[CouplingSchedule],
    idx: BasisIndex,
    *,
    frame: str = "lab",
) -> SparseOperator:
    """Full Hamiltonian at time ``t``.

    With no schedules the nuclear coordinate is dynamical: all pieces are
    gated and the electron-exchange terms are present.  With schedules the
    nuclear motion is classical: couplings follow ``couplings_at``, the
    nuclear projectors are dropped (the geometry lives in the schedule),
    and the exchange terms are off.
    """
    if frame not in ("lab", "rotating"):
        raise ValueError(f"frame must be 'lab' or 'rotating', got {frame!r}")
    if schedules:
        p = couplings_at(t, schedules, params)
        h = (
            build_H_A(p, idx, gated=False)
            + build_H_D(p, idx, gated=False)
            + build_H_spin(p, idx, gated=False)
        )
    else:
        h = (
            build_H_A(params, idx)
            + build_H_D(params, idx)
            + build_H_tun(params, idx)
            + build_H_spin(params, idx)
        )
    return strip_diagonal(h) if frame == "rotating" else h


@dataclass(frozen=True)
class EtaReport:
    """Coupling-to-frequency ratio check against the strong-coupling
    regime bound."""

    eta: float
    per_mode: tuple[float, ...]
    sc_ok: bool


def eta_check(params: ModelParams, *, warn: bool = True) -> EtaReport:
    """Largest g/(hbar*omega) over the active modes; the rotating-wave
    treatment stops being trustworthy at 0.1."""
    ratios = []
    for m in range(N_MODES):
        g = params.coupling[m]
        if g == 0.0:
            ratios.append(0.0)
            continue
        denom = params.hbar * params.freq[m]
        ratios.append(math.inf if denom == 0 else g / denom)
    eta = max(ratios)
    ok = eta < SC_ETA_LIMIT
    if warn and not ok:
        warnings.warn(
            f"coupling ratio eta={eta:.3g} is at or above {SC_ETA_LIMIT}; "
            "the rotating-wave model is outside its domain of validity",
            stacklevel=2,
        )
    return EtaReport(eta=eta, per_mode=tuple(ratios), sc_ok=ok)
