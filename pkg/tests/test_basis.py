"""State-space enumeration, indexing, and reachable-subspace pruning."""

import numpy as np
import pytest

from cavh2.basis import (
    MODE_NAMES,
    NUCLEI_APART,
    NUCLEI_TOGETHER,
    BasisIndex,
    BasisSizeError,
    BasisState,
    ModeSpec,
    StateNotFoundError,
    enumerate_basis,
    index_of,
    mode_index,
    reachable_subspace,
    slot_index,
    state_of,
)
from cavh2.ops import build_operator, photon_op, slot_move_action


def test_dimension_formula():
    # 2^5 photon configs x C(8,2) slot patterns x 2 nuclear values
    assert ModeSpec().dimension() == 32 * 28 * 2 == 1792
    assert ModeSpec((2, 1, 1, 1, 1)).dimension() == 48 * 28 * 2
    assert ModeSpec((0, 0, 0, 0, 0), electron_count=0).dimension() == 2


def test_enumeration_matches_dimension_and_is_unique():
    idx = enumerate_basis(ModeSpec())
    assert idx.dim == 1792
    assert len(set(idx.states)) == idx.dim


def test_canonical_order():
    idx = enumerate_basis(ModeSpec())
    # Slowest index: photon numbers; then slot word ascending; nucleus last.
    assert idx.states[0] == BasisState((0, 0, 0, 0, 0), (0, 0, 0, 0, 0, 0, 1, 1), 0)
    assert idx.states[1] == BasisState((0, 0, 0, 0, 0), (0, 0, 0, 0, 0, 0, 1, 1), 1)
    assert idx.states[2].slots == (0, 0, 0, 0, 0, 1, 0, 1)
    # The 57th state starts the next photon configuration.
    assert idx.states[56].photons == (0, 0, 0, 0, 1)


def test_index_round_trip():
    idx = enumerate_basis(ModeSpec())
    for i in (0, 1, 137, 1791):
        assert index_of(state_of(i, idx), idx) == i


def test_lookup_failures():
    idx = enumerate_basis(ModeSpec())
    stranger = BasisState((2, 0, 0, 0, 0), (0, 0, 0, 0, 0, 0, 1, 1), 0)
    with pytest.raises(StateNotFoundError):
        index_of(stranger, idx)
    with pytest.raises(StateNotFoundError):
        state_of(1792, idx)


def test_state_cap():
    with pytest.raises(BasisSizeError):
        enumerate_basis(ModeSpec(), state_cap=100)


def test_mode_spec_validation():
    with pytest.raises(ValueError):
        ModeSpec((1, 1, 1, 1))
    with pytest.raises(ValueError):
        ModeSpec((1, 1, 1, 1, -1))
    with pytest.raises(ValueError):
        ModeSpec(electron_count=9)


def test_slot_index_table():
    assert [slot_index(a, o, s) for a in (1, 2) for o in ("exc", "gnd") for s in ("up", "dn")] == [
        0, 1, 2, 3, 4, 5, 6, 7,
    ]
    with pytest.raises(ValueError):
        slot_index(3, "exc", "up")
    with pytest.raises(ValueError):
        slot_index(1, "mid", "up")


def test_mode_index():
    assert mode_index("spin") == 4
    assert mode_index(2) == 2
    with pytest.raises(ValueError):
        mode_index("omega")
    with pytest.raises(ValueError):
        mode_index(5)


def test_basis_state_edits():
    s = BasisState((0, 0, 1, 1, 1), (0, 0, 0, 1, 0, 0, 0, 1), NUCLEI_APART)
    assert s.with_photon(4, 0).photons == (0, 0, 1, 1, 0)
    assert s.with_slots({3: 0, 2: 1}).slots == (0, 0, 1, 0, 0, 0, 0, 1)
    assert s.with_nucleus(NUCLEI_TOGETHER).nucleus == 0
    # The original is untouched.
    assert s.photons == (0, 0, 1, 1, 1)


def test_cached_arrays_agree_with_states():
    idx = enumerate_basis(ModeSpec((1, 0, 0, 0, 0)))
    for i, s in enumerate(idx.states):
        assert tuple(idx.photons[i]) == s.photons
        assert tuple(idx.slots[i]) == s.slots
        assert idx.nucleus[i] == s.nucleus


# ---------------------------------------------------------------------------
# reachable subspace


def test_reachable_follows_directed_edges_only():
    idx = enumerate_basis(ModeSpec())
    # One-way move 7 -> 3: from the seed the closure adds the target but
    # never walks the edge backwards.
    op = build_operator(idx, slot_move_action(7, 3))
    seed = BasisState((0, 0, 0, 0, 0), (0, 0, 1, 0, 0, 0, 0, 1), NUCLEI_APART)
    sub = reachable_subspace(idx, [op], [seed])
    assert sub.dim == 2
    slots = {s.slots for s in sub.states}
    assert slots == {(0, 0, 1, 0, 0, 0, 0, 1), (0, 0, 1, 1, 0, 0, 0, 0)}
    # Seeding the target of the one-way edge reaches nothing new.
    target = BasisState((0, 0, 0, 0, 0), (0, 0, 1, 1, 0, 0, 0, 0), NUCLEI_APART)
    assert reachable_subspace(idx, [op], [target]).dim == 1


def test_reachable_keeps_canonical_relative_order():
    idx = enumerate_basis(ModeSpec())
    op = photon_op(idx, "spin", "annihilate")
    seed = BasisState((0, 0, 0, 0, 1), (0, 0, 0, 1, 0, 0, 0, 1), NUCLEI_APART)
    sub = reachable_subspace(idx, [op + op.adjoint()], [seed])
    positions = [index_of(s, idx) for s in sub.states]
    assert positions == sorted(positions)


def test_reachable_validates_inputs():
    idx = enumerate_basis(ModeSpec())
    other = enumerate_basis(ModeSpec())
    op = photon_op(other, "spin", "annihilate")
    with pytest.raises(ValueError):
        reachable_subspace(idx, [op], [0])
    with pytest.raises(StateNotFoundError):
        reachable_subspace(idx, [], [99999])


def test_reachable_without_generators_keeps_seeds():
    idx = enumerate_basis(ModeSpec())
    sub = reachable_subspace(idx, [], [5, 3, 5])
    assert [index_of(s, idx) for s in sub.states] == [3, 5]


def test_fresh_bases_get_distinct_ids():
    a = enumerate_basis(ModeSpec())
    b = enumerate_basis(ModeSpec())
    assert a.basis_id != b.basis_id
    assert isinstance(a, BasisIndex)
