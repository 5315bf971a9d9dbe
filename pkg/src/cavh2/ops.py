"""Sparse second-quantized operators over an explicit basis.

Primitives are built state-by-state from their defining actions: photon
ladder operators with hard truncation (creating out of the top Fock level
gives zero), electron transition operators that move one electron between
a matched pair of slots, and the nuclear shift between the together and
apart sectors.  Pauli blocking is enforced at the action level, so every
transition operator squares to zero.

Operators carry the ``basis_id`` of the basis they were built over;
mixing bases in the algebra raises instead of silently misaligning
indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterator

import numpy as np
import scipy.sparse as sp

from .basis import (
    MODE_NAMES,
    BasisIndex,
    BasisState,
    mode_index,
    slot_index,
)

Action = Callable[[BasisState], Iterator[tuple[BasisState, complex]]]


class BasisMismatchError(Exception):
    """Two operators (or an operator and a state) live on different bases."""


@dataclass(frozen=True)
class SparseOperator:
    """A CSR-backed complex operator tagged with its basis."""

    basis_id: str
    matrix: sp.csr_matrix

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @property
    def nnz(self) -> int:
        return self.matrix.nnz

    def _check(self, other: "SparseOperator") -> None:
        if not isinstance(other, SparseOperator):
            raise TypeError(f"expected SparseOperator, got {type(other).__name__}")
        if other.basis_id != self.basis_id:
            raise BasisMismatchError(
                f"operator over {other.basis_id} combined with operator over {self.basis_id}"
            )

    def adjoint(self) -> "SparseOperator":
        return SparseOperator(self.basis_id, self.matrix.conj().T.tocsr())

    def scale(self, c: complex) -> "SparseOperator":
        return SparseOperator(self.basis_id, (self.matrix * c).tocsr())

    def add(self, other: "SparseOperator") -> "SparseOperator":
        self._check(other)
        return SparseOperator(self.basis_id, (self.matrix + other.matrix).tocsr())

    def compose(self, other: "SparseOperator") -> "SparseOperator":
        """Matrix product self @ other (self applied after other)."""
        self._check(other)
        return SparseOperator(self.basis_id, (self.matrix @ other.matrix).tocsr())

    def __add__(self, other):
        return self.add(other)

    def __sub__(self, other):
        return self.add(other.scale(-1.0))

    def __mul__(self, c):
        return self.scale(c)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return self.compose(other)

    def apply_to_density(self, rho: np.ndarray) -> np.ndarray:
        """Return A rho A^dagger for a dense density matrix."""
        a = self.matrix
        return np.asarray(a @ (a @ np.asarray(rho).conj().T).conj().T)

    def apply(self, vec: np.ndarray) -> np.ndarray:
        return np.asarray(self.matrix @ np.asarray(vec))

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def to_triplets(self) -> list[tuple[int, int, complex]]:
        coo = self.matrix.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [
            (int(coo.row[i]), int(coo.col[i]), complex(coo.data[i]))
            for i in order
        ]

    def dumps(self) -> str:
        """Triplet text dump: one ``row col re im`` line per entry,
        sorted by (row, col)."""
        lines = [
            f"{r} {c} {v.real:.17g} {v.imag:.17g}"
            for r, c, v in self.to_triplets()
        ]
        return "\n".join(lines) + ("\n" if lines else "")

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.dumps())


def build_operator(idx: BasisIndex, action: Action) -> SparseOperator:
    """Assemble the matrix of an action: for each source state the action
    yields (target, amplitude) pairs; targets outside ``idx`` are dropped,
    which is exact on bases closed under the action."""
    rows, cols, vals = [], [], []
    lookup = idx.lookup
    for j, s in enumerate(idx.states):
        for target, amp in action(s):
            i = lookup.get(target)
            if i is not None and amp != 0:
                rows.append(i)
                cols.append(j)
                vals.append(amp)
    mat = sp.csr_matrix(
        (np.asarray(vals, dtype=np.complex128), (rows, cols)),
        shape=(idx.dim, idx.dim),
    )
    mat.sum_duplicates()
    return SparseOperator(idx.basis_id, mat)


def diagonal_operator(idx: BasisIndex, values: np.ndarray) -> SparseOperator:
    values = np.asarray(values, dtype=np.complex128)
    if values.shape != (idx.dim,):
        raise ValueError(f"diagonal length {values.shape} does not match basis dim {idx.dim}")
    return SparseOperator(idx.basis_id, sp.diags(values, format="csr"))


def identity(idx: BasisIndex) -> SparseOperator:
    return SparseOperator(idx.basis_id, sp.identity(idx.dim, dtype=np.complex128, format="csr"))


# ---------------------------------------------------------------------------
# actions


def photon_annihilate_action(mode: int) -> Action:
    def act(s: BasisState):
        p = s.photons[mode]
        if p > 0:
            yield s.with_photon(mode, p - 1), np.sqrt(p)

    return act


def photon_create_action(mode: int, cutoff: int) -> Action:
    def act(s: BasisState):
        p = s.photons[mode]
        if p < cutoff:
            yield s.with_photon(mode, p + 1), np.sqrt(p + 1)

    return act


def slot_move_action(src: int, dst: int) -> Action:
    """Move one electron from slot ``src`` to slot ``dst`` (Pauli blocked)."""

    def act(s: BasisState):
        if s.slots[src] == 1 and s.slots[dst] == 0:
            yield s.with_slots({src: 0, dst: 1}), 1.0

    return act


def molecular_lower_action(spin: str) -> Action:
    """Upper (antibonding) -> lower (bonding) molecular orbital, one spin."""
    return slot_move_action(slot_index(1, "exc", spin), slot_index(2, "exc", spin))


def atomic_lower_action(atom: int, spin: str) -> Action:
    """exc -> gnd on one atom, one spin."""
    return slot_move_action(slot_index(atom, "exc", spin), slot_index(atom, "gnd", spin))


def spin_lower_action(atom: int) -> Action:
    """up -> dn on one atom, both orbitals (two Pauli-blocked branches)."""
    branches = [
        slot_move_action(slot_index(atom, orb, "up"), slot_index(atom, orb, "dn"))
        for orb in ("exc", "gnd")
    ]

    def act(s: BasisState):
        for b in branches:
            yield from b(s)

    return act


def spin_raise_action(atom: int) -> Action:
    """dn -> up on one atom, both orbitals."""
    branches = [
        slot_move_action(slot_index(atom, orb, "dn"), slot_index(atom, orb, "up"))
        for orb in ("exc", "gnd")
    ]

    def act(s: BasisState):
        for b in branches:
            yield from b(s)

    return act


def nuclear_lower_action() -> Action:
    """apart -> together."""

    def act(s: BasisState):
        if s.nucleus == 1:
            yield s.with_nucleus(0), 1.0

    return act


def compose_actions(outer: Action, inner: Action) -> Action:
    """Action of ``outer`` applied after ``inner``, without looking up the
    intermediate state, so composites stay exact on pruned bases."""

    def act(s: BasisState):
        for mid, a1 in inner(s):
            for target, a2 in outer(mid):
                yield target, a1 * a2

    return act


# ---------------------------------------------------------------------------
# public constructors


def photon_op(idx: BasisIndex, mode: int | str, kind: str) -> SparseOperator:
    """Ladder operator of one cavity mode; ``kind`` is "annihilate" or
    "create".  Creation out of the top truncated level maps to zero."""
    m = mode_index(mode)
    cutoff = idx.spec.photon_truncations[m]
    if kind == "annihilate":
        return build_operator(idx, photon_annihilate_action(m))
    if kind == "create":
        return build_operator(idx, photon_create_action(m, cutoff))
    raise ValueError(f"kind must be 'annihilate' or 'create', got {kind!r}")


def molecular_transition(idx: BasisIndex, spin: str, kind: str) -> SparseOperator:
    if kind == "lower":
        return build_operator(idx, molecular_lower_action(spin))
    if kind == "raise":
        up, lo = slot_index(1, "exc", spin), slot_index(2, "exc", spin)
        return build_operator(idx, slot_move_action(lo, up))
    raise ValueError(f"kind must be 'lower' or 'raise', got {kind!r}")


def atomic_transition(idx: BasisIndex, atom: int, spin: str, kind: str) -> SparseOperator:
    if kind == "lower":
        return build_operator(idx, atomic_lower_action(atom, spin))
    if kind == "raise":
        exc, gnd = slot_index(atom, "exc", spin), slot_index(atom, "gnd", spin)
        return build_operator(idx, slot_move_action(gnd, exc))
    raise ValueError(f"kind must be 'lower' or 'raise', got {kind!r}")


def spin_transition(idx: BasisIndex, atom: int, kind: str) -> SparseOperator:
    if kind == "lower":
        return build_operator(idx, spin_lower_action(atom))
    if kind == "raise":
        return build_operator(idx, spin_raise_action(atom))
    raise ValueError(f"kind must be 'lower' or 'raise', got {kind!r}")


def nuclear_op(idx: BasisIndex, kind: str) -> SparseOperator:
    if kind == "lower":
        return build_operator(idx, nuclear_lower_action())
    if kind == "raise":
        def act(s: BasisState):
            if s.nucleus == 0:
                yield s.with_nucleus(1), 1.0

        return build_operator(idx, act)
    raise ValueError(f"kind must be 'lower' or 'raise', got {kind!r}")


def transition_lower_actions(mode: int | str) -> list[Action]:
    """The electron lowering actions a cavity mode couples to: the matching
    molecular transition for the mol modes, the matching atomic transition
    on each atom for the atom modes, the spin flip on each atom for the
    spin mode."""
    m = mode_index(mode)
    name = MODE_NAMES[m]
    if name == "mol_up":
        return [molecular_lower_action("up")]
    if name == "mol_dn":
        return [molecular_lower_action("dn")]
    if name == "atom_up":
        return [atomic_lower_action(1, "up"), atomic_lower_action(2, "up")]
    if name == "atom_dn":
        return [atomic_lower_action(1, "dn"), atomic_lower_action(2, "dn")]
    return [spin_lower_action(1), spin_lower_action(2)]


def transition_op(idx: BasisIndex, mode: int | str, kind: str) -> SparseOperator:
    """Total electron transition operator a mode couples to (summed over
    atoms where applicable)."""
    if kind not in ("lower", "raise"):
        raise ValueError(f"kind must be 'lower' or 'raise', got {kind!r}")
    actions = transition_lower_actions(mode)

    def act(s: BasisState):
        for a in actions:
            yield from a(s)

    op = build_operator(idx, act)
    return op if kind == "lower" else op.adjoint()
