"""Shared fixtures.

The four stock scenarios are expensive (the association run integrates
hundreds of thousands of steps), so each is simulated once per session
and shared by every test that inspects it.  Tests that need modified
scenarios build their own short-horizon variants instead of touching
these.
"""

from dataclasses import replace

import pytest

from cavh2.scenarios import builtin_scenarios, simulate


@pytest.fixture(scope="session")
def stock():
    return builtin_scenarios()


@pytest.fixture(scope="session")
def assoc_quantum_run(stock):
    return simulate(stock["assoc-quantum"])


@pytest.fixture(scope="session")
def dissoc_quantum_run(stock):
    return simulate(stock["dissoc-quantum"])


@pytest.fixture(scope="session")
def assoc_classical_straight_run(stock):
    return simulate(stock["assoc-classical"])


@pytest.fixture(scope="session")
def assoc_classical_trig_run(stock):
    return simulate(replace(stock["assoc-classical"], shape="trig"))


@pytest.fixture(scope="session")
def dissoc_classical_run(stock):
    return simulate(stock["dissoc-classical"])


@pytest.fixture(scope="session")
def all_builtin_runs(
    assoc_quantum_run,
    dissoc_quantum_run,
    assoc_classical_straight_run,
    dissoc_classical_run,
):
    return {
        "assoc-quantum": assoc_quantum_run,
        "dissoc-quantum": dissoc_quantum_run,
        "assoc-classical": assoc_classical_straight_run,
        "dissoc-classical": dissoc_classical_run,
    }
