"""Enumeration and indexing of the finite second-quantized state space.

The model lives on a tensor product of five truncated cavity photon modes,
eight fermionic electron slots shared by a fixed number of electrons, and a
two-valued nuclear coordinate (nuclei together / nuclei apart).  Basis
states are enumerated once, in a fixed canonical order, so operator
matrices, CSV exports and tests are reproducible run to run.

Canonical order (most significant first):

* photon numbers ``(p_mol_up, p_mol_dn, p_atom_up, p_atom_dn, p_spin)``,
  each counting up to its truncation,
* the electron slot pattern, read as a big-endian 8-bit word
  ``l1 l2 ... l8`` and sorted ascending,
* the nuclear bit, 0 = together, 1 = apart.

Slot order: ``(atom1 exc up, atom1 exc dn, atom1 gnd up, atom1 gnd dn,
atom2 exc up, atom2 exc dn, atom2 gnd up, atom2 gnd dn)`` where "exc" is
the upper atomic orbital and "gnd" the lower one.

When the nuclei sit together the atomic "exc" slots double as the two
molecular orbitals: the upper (antibonding) molecular orbital of spin s is
stored in the atom-1 exc slot of spin s, the lower (bonding) one in the
atom-2 exc slot.  The two readings never coexist: molecular operators act
in the together sector, atomic ones in the apart sector.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import cached_property
from math import comb
from typing import Iterable, NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp

MODE_NAMES = ("mol_up", "mol_dn", "atom_up", "atom_dn", "spin")
N_MODES = 5
N_SLOTS = 8

SLOT_LABELS = (
    "a1_exc_up",
    "a1_exc_dn",
    "a1_gnd_up",
    "a1_gnd_dn",
    "a2_exc_up",
    "a2_exc_dn",
    "a2_gnd_up",
    "a2_gnd_dn",
)

# Molecular-orbital aliases of the exc slots (together sector only).
MOL_UPPER_UP, MOL_UPPER_DN = 0, 1
MOL_LOWER_UP, MOL_LOWER_DN = 4, 5

NUCLEI_TOGETHER = 0
NUCLEI_APART = 1

_SPINS = ("up", "dn")
_ORBITALS = ("exc", "gnd")


class BasisSizeError(Exception):
    """Requested state space exceeds the configured cap."""


class StateNotFoundError(KeyError):
    """State is not a member of the basis it was looked up in."""


def slot_index(atom: int, orbital: str, spin: str) -> int:
    """Return the canonical slot position for (atom, orbital, spin)."""
    if atom not in (1, 2):
        raise ValueError(f"atom must be 1 or 2, got {atom}")
    if orbital not in _ORBITALS:
        raise ValueError(f"orbital must be one of {_ORBITALS}, got {orbital!r}")
    if spin not in _SPINS:
        raise ValueError(f"spin must be one of {_SPINS}, got {spin!r}")
    return 4 * (atom - 1) + 2 * _ORBITALS.index(orbital) + _SPINS.index(spin)


def mode_index(mode: int | str) -> int:
    """Normalize a mode name or position to its canonical position."""
    if isinstance(mode, str):
        try:
            return MODE_NAMES.index(mode)
        except ValueError:
            raise ValueError(f"unknown mode {mode!r}; expected one of {MODE_NAMES}") from None
    if not 0 <= mode < N_MODES:
        raise ValueError(f"mode position out of range: {mode}")
    return int(mode)


class BasisState(NamedTuple):
    """One canonical basis vector: photon numbers, slot occupations, nuclear bit."""

    photons: tuple[int, ...]
    slots: tuple[int, ...]
    nucleus: int

    def with_photon(self, mode: int, value: int) -> "BasisState":
        p = list(self.photons)
        p[mode] = value
        return self._replace(photons=tuple(p))

    def with_slots(self, changes: dict[int, int]) -> "BasisState":
        s = list(self.slots)
        for pos, value in changes.items():
            s[pos] = value
        return self._replace(slots=tuple(s))

    def with_nucleus(self, value: int) -> "BasisState":
        return self._replace(nucleus=value)


@dataclass(frozen=True)
class ModeSpec:
    """Shape of the state space: per-mode photon cutoffs and electron count."""

    photon_truncations: tuple[int, ...] = (1, 1, 1, 1, 1)
    electron_count: int = 2

    def __post_init__(self):
        if len(self.photon_truncations) != N_MODES:
            raise ValueError(f"need {N_MODES} photon truncations, got {len(self.photon_truncations)}")
        if any(int(n) != n or n < 0 for n in self.photon_truncations):
            raise ValueError(f"photon truncations must be non-negative integers: {self.photon_truncations}")
        if not 0 <= self.electron_count <= N_SLOTS:
            raise ValueError(f"electron count must lie in [0, {N_SLOTS}], got {self.electron_count}")
        object.__setattr__(self, "photon_truncations", tuple(int(n) for n in self.photon_truncations))

    def dimension(self) -> int:
        dim = 2 * comb(N_SLOTS, self.electron_count)
        for n in self.photon_truncations:
            dim *= n + 1
        return dim


_BASIS_COUNTER = itertools.count()


@dataclass
class BasisIndex:
    """An immutable ordered basis with O(1) state <-> index lookup.

    Treat instances as read-only once built; the cached arrays are shared
    by every operator constructed over them.
    """

    states: tuple[BasisState, ...]
    spec: ModeSpec
    basis_id: str = field(default="")

    def __post_init__(self):
        if not self.basis_id:
            self.basis_id = f"basis-{next(_BASIS_COUNTER)}-d{len(self.states)}"

    @property
    def dim(self) -> int:
        return len(self.states)

    @cached_property
    def lookup(self) -> dict[BasisState, int]:
        return {s: i for i, s in enumerate(self.states)}

    @cached_property
    def photons(self) -> np.ndarray:
        """(dim, 5) int array of photon numbers."""
        return np.array([s.photons for s in self.states], dtype=np.int64).reshape(self.dim, N_MODES)

    @cached_property
    def slots(self) -> np.ndarray:
        """(dim, 8) int array of slot occupations."""
        return np.array([s.slots for s in self.states], dtype=np.int64).reshape(self.dim, N_SLOTS)

    @cached_property
    def nucleus(self) -> np.ndarray:
        """(dim,) int array of nuclear bits."""
        return np.array([s.nucleus for s in self.states], dtype=np.int64)


def _slot_patterns(electron_count: int) -> list[tuple[int, ...]]:
    """All 8-slot occupation patterns with the given electron count,
    ascending by big-endian word value."""
    patterns = []
    for word in range(1 << N_SLOTS):
        if bin(word).count("1") == electron_count:
            patterns.append(tuple((word >> (N_SLOTS - 1 - i)) & 1 for i in range(N_SLOTS)))
    return patterns


def enumerate_basis(spec: ModeSpec, *, state_cap: int = 1_000_000) -> BasisIndex:
    """Build the full canonical basis for ``spec``.

    Refuses with a sizing message when the dimension exceeds ``state_cap``.
    """
    dim = spec.dimension()
    if dim > state_cap:
        raise BasisSizeError(
            f"state space has {dim} states (truncations {spec.photon_truncations}, "
            f"{spec.electron_count} electrons), above the cap of {state_cap}; "
            "lower the photon truncations or raise state_cap"
        )
    patterns = _slot_patterns(spec.electron_count)
    photon_ranges = [range(n + 1) for n in spec.photon_truncations]
    states = [
        BasisState(photons, slots, k)
        for photons in itertools.product(*photon_ranges)
        for slots in patterns
        for k in (NUCLEI_TOGETHER, NUCLEI_APART)
    ]
    assert len(states) == dim
    return BasisIndex(tuple(states), spec)


def index_of(state: BasisState, idx: BasisIndex) -> int:
    """Dense index of ``state`` in ``idx``; explicit error when absent."""
    try:
        return idx.lookup[state]
    except KeyError:
        raise StateNotFoundError(f"state {state} is not in basis {idx.basis_id}") from None


def state_of(i: int, idx: BasisIndex) -> BasisState:
    if not 0 <= i < idx.dim:
        raise StateNotFoundError(f"index {i} out of range for basis {idx.basis_id} (dim {idx.dim})")
    return idx.states[i]


def _pattern_of(generator) -> sp.csr_matrix:
    mat = getattr(generator, "matrix", generator)
    if not sp.issparse(mat):
        mat = sp.csr_matrix(np.asarray(mat))
    pattern = abs(mat.tocsr())
    return pattern


def reachable_subspace(
    idx: BasisIndex,
    generators: Sequence,
    seeds: Iterable[BasisState | int],
) -> BasisIndex:
    """Closure of ``seeds`` under the sparsity pattern of ``generators``.

    ``generators`` may be SparseOperator instances or raw matrices over
    ``idx``.  Closure follows directed source -> target edges, so callers
    must list every operator the dynamics applies to the state, adjoints
    included where they act (e.g. both the annihilator of a leaky mode and
    the creator of a pumped one).  Evolving a state supported on the result
    under such dynamics never leaks outside it, so the restriction is exact
    rather than approximate.  The sub-basis keeps the canonical relative
    order.
    """
    seed_indices = []
    for s in seeds:
        seed_indices.append(index_of(s, idx) if isinstance(s, BasisState) else int(s))
    for i in seed_indices:
        if not 0 <= i < idx.dim:
            raise StateNotFoundError(f"seed index {i} out of range for basis {idx.basis_id}")
    if not generators:
        keep = sorted(set(seed_indices))
        return BasisIndex(tuple(idx.states[i] for i in keep), idx.spec)

    graph = None
    for g in generators:
        basis_id = getattr(g, "basis_id", None)
        if basis_id is not None and basis_id != idx.basis_id:
            raise ValueError(f"generator built over basis {basis_id}, expected {idx.basis_id}")
        pattern = _pattern_of(g)
        if pattern.shape != (idx.dim, idx.dim):
            raise ValueError(f"generator shape {pattern.shape} does not match basis dim {idx.dim}")
        graph = pattern if graph is None else graph + pattern
    # Hermitian generators contribute symmetric patterns on their own;
    # directed jump operators stay directed by design.
    graph = graph.tocsc()

    visited = np.zeros(idx.dim, dtype=bool)
    frontier = sorted(set(seed_indices))
    for i in frontier:
        visited[i] = True
    while frontier:
        nxt = []
        for j in frontier:
            rows = graph.indices[graph.indptr[j] : graph.indptr[j + 1]]
            for r in rows:
                if not visited[r]:
                    visited[r] = True
                    nxt.append(int(r))
        frontier = nxt
    keep = np.nonzero(visited)[0]
    return BasisIndex(tuple(idx.states[i] for i in keep), idx.spec)
