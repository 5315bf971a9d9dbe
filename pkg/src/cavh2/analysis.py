"""State classification, population readout, and dark-state tools.

Named chemical species are defined photon-marginally: a basis state's
species depends only on its electron slots and nuclear bit, and a species
population sums the density-matrix diagonal over every photon
configuration with matching matter content.

* molecule: nuclei together and both electrons paired in the lower
  (bonding) molecular orbital;
* two neutral atoms: nuclei apart, one electron on each atom;
* ion pair: nuclei apart, both electrons on the same atom;
* other: every remaining configuration (all of them have the nuclei
  together).

The dark states are the antisymmetric two-electron combinations that the
even-parity cavity couplings cannot de-excite: the two decay branches of
such a superposition reach the same final state with opposite signs and
cancel.  ``verify_singlet`` checks exactly that, by applying the mode's
photon-creating de-excitation operator to a candidate vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .basis import (
    NUCLEI_APART,
    BasisIndex,
    BasisState,
    mode_index,
    slot_index,
)
from .ops import SparseOperator, build_operator, compose_actions, photon_create_action, transition_lower_actions

SPECIES = ("H2", "HH", "HmHp", "other")

_MOL_LOWER_UP = slot_index(2, "exc", "up")
_MOL_LOWER_DN = slot_index(2, "exc", "dn")


def classify(state: BasisState) -> str:
    """Species label of one basis state, ignoring photons."""
    on_atom1 = sum(state.slots[0:4])
    on_atom2 = sum(state.slots[4:8])
    if state.nucleus == NUCLEI_APART:
        if on_atom1 == 1 and on_atom2 == 1:
            return "HH"
        return "HmHp"
    paired = (
        state.slots[_MOL_LOWER_UP] == 1
        and state.slots[_MOL_LOWER_DN] == 1
        and on_atom1 == 0
        and on_atom2 == 2
    )
    return "H2" if paired else "other"


@dataclass(frozen=True)
class StateClassifier:
    """A named diagonal mask over a basis."""

    name: str
    predicate: Callable[[BasisState], bool]

    def mask(self, idx: BasisIndex) -> np.ndarray:
        return np.fromiter((self.predicate(s) for s in idx.states), dtype=bool, count=idx.dim)


def species_classifier(species: str) -> StateClassifier:
    if species not in SPECIES:
        raise ValueError(f"unknown species {species!r}; expected one of {SPECIES}")
    return StateClassifier(species, lambda s, _sp=species: classify(s) == _sp)


def population(rho, classifier: StateClassifier, idx: BasisIndex) -> float:
    """Total diagonal weight of the classifier's states."""
    mat = rho.matrix if hasattr(rho, "matrix") else np.asarray(rho)
    mask = classifier.mask(idx)
    return float(mat.diagonal().real[mask].sum())


def population_mask(idx: BasisIndex, species: str) -> np.ndarray:
    return species_classifier(species).mask(idx)


# ---------------------------------------------------------------------------
# dark states

# Each dark pair: the two slot patterns whose antisymmetric combination is
# dark, and the cavity mode whose de-excitation it is dark against.  The
# patterns are (occupied slot indices); both live in the apart sector.
DARK_PAIRS: dict[str, dict] = {
    # Opposite spins on opposite atoms, both in the lower orbital: dark
    # against the spin-flip mode.
    "D1": {
        "first": (slot_index(1, "gnd", "up"), slot_index(2, "gnd", "dn")),
        "second": (slot_index(1, "gnd", "dn"), slot_index(2, "gnd", "up")),
        "mode": "spin",
    },
    # One excited spin-down electron shared between the atoms: dark
    # against the spin-down atomic mode.
    "D2": {
        "first": (slot_index(1, "exc", "dn"), slot_index(2, "gnd", "dn")),
        "second": (slot_index(1, "gnd", "dn"), slot_index(2, "exc", "dn")),
        "mode": "atom_dn",
    },
}


def _pattern_state(photons: tuple[int, ...], occupied: Sequence[int]) -> BasisState:
    slots = [0] * 8
    for p in occupied:
        slots[p] = 1
    return BasisState(tuple(photons), tuple(slots), NUCLEI_APART)


def dark_pair_indices(
    idx: BasisIndex, name: str, pairs: dict | None = None
) -> list[tuple[int | None, int | None]]:
    """Index pairs (first, second) of one dark family, one pair per photon
    configuration present in the basis; a member missing from a pruned
    basis appears as None (its amplitude is identically zero there)."""
    spec_pairs = (pairs or DARK_PAIRS)[name]
    photon_configs = sorted({s.photons for s in idx.states})
    out = []
    for photons in photon_configs:
        i = idx.lookup.get(_pattern_state(photons, spec_pairs["first"]))
        j = idx.lookup.get(_pattern_state(photons, spec_pairs["second"]))
        if i is not None or j is not None:
            out.append((i, j))
    return out


def dark_state_vectors(
    idx: BasisIndex, name: str, pairs: dict | None = None
) -> list[np.ndarray]:
    """Unit vectors (first - second)/sqrt(2), one per photon configuration
    with both members present."""
    vectors = []
    for i, j in dark_pair_indices(idx, name, pairs):
        if i is None or j is None:
            continue
        v = np.zeros(idx.dim, dtype=np.complex128)
        v[i] = 1.0 / np.sqrt(2.0)
        v[j] = -1.0 / np.sqrt(2.0)
        vectors.append(v)
    return vectors


def dark_population(rho, idx: BasisIndex, which: str = "both") -> float:
    """Sum of <D|rho|D> over the dark vectors of one or both families."""
    mat = rho.matrix if hasattr(rho, "matrix") else np.asarray(rho)
    names = ("D1", "D2") if which == "both" else (which,)
    total = 0.0
    for name in names:
        for i, j in dark_pair_indices(idx, name):
            if i is None:
                total += 0.5 * mat[j, j].real
            elif j is None:
                total += 0.5 * mat[i, i].real
            else:
                total += 0.5 * (mat[i, i].real + mat[j, j].real) - mat[i, j].real
    return float(total)


def collective_emission_op(idx: BasisIndex, mode: str) -> SparseOperator:
    """The mode's de-excitation with photon emission, summed over its
    coupled transitions: a+_mode * (sigma_1 + sigma_2)."""
    m = mode_index(mode)
    cutoff = idx.spec.photon_truncations[m]
    create = photon_create_action(m, cutoff)
    lowers = transition_lower_actions(mode)

    def act(s):
        for low in lowers:
            yield from compose_actions(create, low)(s)

    return build_operator(idx, act)


def verify_singlet(vector: np.ndarray, idx: BasisIndex, mode: str) -> float:
    """Norm of the collective emission applied to ``vector``; zero (to
    round-off) certifies the vector dark against that mode."""
    op = collective_emission_op(idx, mode)
    return float(np.linalg.norm(op.apply(np.asarray(vector, dtype=np.complex128))))


def diagnostics(rho) -> dict[str, float]:
    """Trace, Hermiticity residual, smallest eigenvalue, purity."""
    mat = rho.matrix if hasattr(rho, "matrix") else np.asarray(rho, dtype=np.complex128)
    sym = 0.5 * (mat + mat.conj().T)
    return {
        "trace": float(mat.trace().real),
        "herm_residual": float(np.abs(mat - mat.conj().T).max()) if mat.size else 0.0,
        "min_eig": float(np.linalg.eigvalsh(sym)[0]) if mat.size else 0.0,
        "purity": float(np.sum(np.abs(mat) ** 2)),
    }
