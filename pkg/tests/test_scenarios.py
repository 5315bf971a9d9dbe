"""Tests for scenario definition, validation, config grammar, and runs."""

import hashlib
import json
import math
import os
import re
from dataclasses import replace

import numpy as np
import pytest

from cavh2.basis import MODE_NAMES, NUCLEI_APART, NUCLEI_TOGETHER, BasisState
from cavh2.dynamics import Trajectory
from cavh2.model import ModelParams
from cavh2.scenarios import (
    CSV_COLUMNS,
    OUTPUT_DIR_ENV,
    ScenarioError,
    apply_config_items,
    builtin_scenarios,
    parse_config,
    parse_overrides,
    resolve_out_dir,
    run_scenario,
    scenario_to_config,
    simulate,
    sweep,
    trajectory_csv,
    validate,
)


def errors_of(scenario):
    return [i.message for i in validate(scenario) if i.level == "error"]


def warnings_of(scenario):
    return [i.message for i in validate(scenario) if i.level == "warning"]


# ---------------------------------------------------------------------------
# built-in scenarios


def test_builtins_cover_both_directions_and_motions(stock):
    assert sorted(stock) == [
        "assoc-classical",
        "assoc-quantum",
        "dissoc-classical",
        "dissoc-quantum",
    ]
    for name, sc in stock.items():
        assert sc.name == name
        assert sc.frame == "rotating"
        assert sc.shape == "straight"
        assert sc.photon_truncations == (1, 1, 1, 1, 1)
        assert sc.prune is True
        assert not errors_of(sc)
        assert not warnings_of(sc)
    assert stock["assoc-quantum"].motion == "quantum"
    assert stock["assoc-classical"].motion == "classical"
    assert stock["assoc-quantum"].direction == "association"
    assert stock["dissoc-quantum"].direction == "dissociation"


def test_builtin_influx_targets_follow_the_direction(stock):
    # Association pumps the atomic and transition-energy modes; dissociation
    # pumps the molecular pair.  Influx ratio 0.5 on every driven mode.
    assert stock["assoc-quantum"].params.mu == (0.0, 0.0, 0.5, 0.5, 0.5)
    assert stock["assoc-classical"].params.mu == (0.0, 0.0, 0.5, 0.5, 0.5)
    assert stock["dissoc-quantum"].params.mu == (0.5, 0.5, 0.0, 0.0, 0.0)
    assert stock["dissoc-classical"].params.mu == (0.5, 0.5, 0.0, 0.0, 0.0)
    for sc in stock.values():
        assert sc.params.gamma == (1e7,) * 5


def test_builtin_initial_states(stock):
    aq = stock["assoc-quantum"]
    assert aq.initial_photons == (0, 0, 1, 1, 1)
    assert aq.initial_slots == (0, 0, 0, 1, 0, 0, 0, 1)
    assert aq.initial_nucleus == NUCLEI_APART
    dq = stock["dissoc-quantum"]
    assert dq.initial_photons == (1, 1, 0, 0, 0)
    assert dq.initial_slots == (0, 0, 0, 0, 1, 1, 0, 0)
    assert dq.initial_nucleus == NUCLEI_TOGETHER
    # Classical runs freeze the nuclear bit (no tunneling term), so it is
    # set to the configuration of the PRODUCT: the association ramp must
    # read out as a molecule, the dissociation ramp as separated atoms.
    assert stock["assoc-classical"].initial_nucleus == NUCLEI_TOGETHER
    assert stock["dissoc-classical"].initial_nucleus == NUCLEI_APART
    state = dq.initial_state()
    assert state == BasisState((1, 1, 0, 0, 0), (0, 0, 0, 0, 1, 1, 0, 0), NUCLEI_TOGETHER)


def test_leading_species_and_schedule_wiring(stock):
    assert stock["assoc-quantum"].leading_species() == "H2"
    assert stock["dissoc-classical"].leading_species() == "HH"
    assert stock["assoc-quantum"].schedules() == ()
    atomic, molecular = stock["dissoc-classical"].schedules()
    assert atomic.mode_group == "atomic"
    assert molecular.mode_group == "molecular"
    for sched in (atomic, molecular):
        assert sched.direction == "dissociation"
        assert sched.shape == "straight"
        assert sched.duration == stock["dissoc-classical"].schedule_duration


def test_resolved_dt_rules(stock):
    # Quantum: the electron-exchange strengths join the coupling scale, so
    # the 0.1*hbar/energy limit is the binding one (1e-10 at zeta2=1e9).
    assert stock["dissoc-quantum"].resolved_dt() == pytest.approx(1e-10)
    # Classical: exchange is inactive; coupling (1e8) and the leak
    # guideline (0.01*hbar/1e7) both land on 1e-9.
    assert stock["assoc-classical"].resolved_dt() == pytest.approx(1e-9)
    assert replace(stock["dissoc-quantum"], dt=7e-11).resolved_dt() == 7e-11
    dead = ModelParams(
        coupling=(0.0,) * 5, zeta0=0.0, zeta1=0.0, zeta2=0.0, gamma=(0.0,) * 5
    )
    with pytest.raises(ScenarioError, match="set dt explicitly"):
        replace(stock["dissoc-quantum"], params=dead).resolved_dt()


def test_resolved_t_cap_rules(stock):
    assert stock["assoc-quantum"].resolved_t_cap() == 6e-5
    assert stock["dissoc-quantum"].resolved_t_cap() == 6e-6
    assert stock["assoc-classical"].resolved_t_cap() == pytest.approx(1e-4)
    assert stock["dissoc-classical"].resolved_t_cap() == pytest.approx(1e-5)
    assert replace(stock["dissoc-quantum"], t_cap=3e-6).resolved_t_cap() == 3e-6


# ---------------------------------------------------------------------------
# validation


def test_validate_rejects_bad_fields(stock):
    base = stock["dissoc-quantum"]
    cases = [
        (replace(base, motion="brownian"), "motion must be"),
        (replace(base, direction="sideways"), "direction must be"),
        (replace(base, frame="galilean"), "frame must be"),
        (replace(base, shape="wiggle"), "shape must be"),
        (replace(base, photon_truncations=(1, 1, 1)), "non-negative integers"),
        (replace(base, initial_photons=(2, 0, 0, 0, 0)), "outside the truncations"),
        (replace(base, initial_photons=(1, 1)), "entries"),
        (replace(base, initial_slots=(1, 1, 0, 0, 0, 0, 0)), "eight bits"),
        (
            replace(base, initial_slots=(1, 1, 1, 0, 0, 0, 0, 0)),
            "exactly two electrons",
        ),
        (replace(base, initial_nucleus=2), "must be 0 or 1"),
        (replace(base, dt=-1e-10), "dt must be positive"),
        (replace(base, dt=math.nan), "dt must be positive"),
        (replace(base, t_end=0.0), "t_end must be positive"),
        (replace(base, record_every=0), "at least 1"),
        (replace(base, ptsim_depth=-1), r"\[0, 62\]"),
        (replace(base, ptsim_depth=63), r"\[0, 62\]"),
        (replace(base, plateau_tol=0.0), "plateau_tol must be positive"),
        (
            replace(stock["assoc-classical"], schedule_duration=None),
            "positive schedule_duration",
        ),
    ]
    for scenario, fragment in cases:
        msgs = errors_of(scenario)
        assert any(re.search(fragment, m) for m in msgs), f"expected {fragment!r} in {msgs}"
    with pytest.raises(ScenarioError, match="motion must be"):
        simulate(replace(base, motion="brownian"))


def test_validate_warnings_do_not_block(stock):
    lab = replace(stock["dissoc-classical"], frame="lab")
    assert not errors_of(lab)
    assert any("resonant frame" in m for m in warnings_of(lab))

    weak_sc = replace(
        stock["dissoc-quantum"],
        params=stock["dissoc-quantum"].params.with_coupling({"mol_up": 1e9}),
    )
    assert any("strong-coupling" in m for m in warnings_of(weak_sc))

    lazy = replace(stock["dissoc-quantum"], dt=1e-8)
    assert not errors_of(lazy)
    assert any("0.01 guideline" in m for m in warnings_of(lazy))


# ---------------------------------------------------------------------------
# config grammar


def test_config_round_trips_every_builtin(stock):
    for sc in stock.values():
        text = scenario_to_config(sc)
        for header in ("[scenario]", "[params]", "[basis]", "[ptsim]"):
            assert header in text
        assert parse_config(text) == sc


def test_parse_config_needs_a_known_base(stock):
    with pytest.raises(ScenarioError, match="built-in"):
        parse_config("[scenario]\ndt = 1e-10\n")
    with pytest.raises(ScenarioError, match="config parse error"):
        parse_config("scenario]\nbroken")
    patched = parse_config(
        "[scenario]\ndt = 2e-10\n", base=stock["dissoc-quantum"]
    )
    assert patched == replace(stock["dissoc-quantum"], dt=2e-10)


def test_apply_config_scenario_keys(stock):
    base = stock["dissoc-quantum"]
    out = apply_config_items(
        base,
        {
            ("scenario", "dt"): "auto",
            ("scenario", "t_end"): "5e-7",
            ("scenario", "prune"): "off",
            ("scenario", "record_every"): "25",
            ("scenario", "initial_photons"): "0, 1, 0, 0, 1",
            ("scenario", "initial_slots"): "00110000",
        },
    )
    assert out.dt is None
    assert out.t_end == 5e-7
    assert out.prune is False
    assert out.record_every == 25
    assert out.initial_photons == (0, 1, 0, 0, 1)
    assert out.initial_slots == (0, 0, 1, 1, 0, 0, 0, 0)

    with pytest.raises(ScenarioError, match="not meaningful here"):
        apply_config_items(base, {("scenario", "plateau_tol"): "auto"})
    with pytest.raises(ScenarioError, match="expected a boolean"):
        apply_config_items(base, {("scenario", "prune"): "maybe"})
    with pytest.raises(ScenarioError, match="expected 5 integers"):
        apply_config_items(base, {("scenario", "initial_photons"): "1,0"})
    with pytest.raises(ScenarioError, match="expected eight bits"):
        apply_config_items(base, {("scenario", "initial_slots"): "0101"})
    with pytest.raises(ScenarioError, match="expected a number"):
        apply_config_items(base, {("scenario", "dt"): "fast"})
    with pytest.raises(ScenarioError, match="expected an integer"):
        apply_config_items(base, {("scenario", "record_every"): "often"})
    with pytest.raises(ScenarioError, match=r"unknown key \[scenario\] widget"):
        apply_config_items(base, {("scenario", "widget"): "1"})


def test_apply_config_params_and_basis_keys(stock):
    base = stock["dissoc-quantum"]
    out = apply_config_items(
        base,
        {
            ("params", "coupling_spin"): "2e7",
            ("params", "mu_mol_up"): "0.25",
            ("params", "zeta2"): "5e8",
            ("basis", "n_max_spin"): "3",
            ("ptsim", "doubling_depth"): "12",
        },
    )
    assert out.params.coupling[MODE_NAMES.index("spin")] == 2e7
    assert out.params.mu[MODE_NAMES.index("mol_up")] == 0.25
    assert out.params.zeta2 == 5e8
    assert out.photon_truncations == (1, 1, 1, 1, 3)
    assert out.ptsim_depth == 12
    assert base.params.zeta2 == 1e9  # base untouched

    # Domain validation surfaces as ScenarioError, not a bare ValueError.
    with pytest.raises(ScenarioError, match="influx ratios"):
        apply_config_items(base, {("params", "mu_mol_up"): "1"})
    with pytest.raises(ScenarioError, match=r"unknown key \[params\]"):
        apply_config_items(base, {("params", "freq_nope"): "1"})
    with pytest.raises(ScenarioError, match=r"unknown key \[basis\]"):
        apply_config_items(base, {("basis", "n_max_widget"): "1"})
    with pytest.raises(ScenarioError, match=r"unknown key \[ptsim\]"):
        apply_config_items(base, {("ptsim", "order"): "1"})
    with pytest.raises(ScenarioError, match=r"unknown config section"):
        apply_config_items(base, {("widgets", "x"): "1"})


def test_parse_overrides_form():
    assert parse_overrides(["params.zeta2=5e8", "scenario.dt = 1e-10"]) == {
        ("params", "zeta2"): "5e8",
        ("scenario", "dt"): "1e-10",
    }
    with pytest.raises(ScenarioError, match="section.key=value"):
        parse_overrides(["zeta2=5e8"])


# ---------------------------------------------------------------------------
# execution


def test_pruning_changes_nothing_but_the_dimension(stock):
    # Restrict to the two molecular modes so the unpruned space stays small.
    base = replace(
        stock["dissoc-quantum"],
        photon_truncations=(1, 1, 0, 0, 0),
        t_end=2e-8,
        record_every=10,
    )
    traj_p, meta_p = simulate(base)
    traj_f, meta_f = simulate(replace(base, prune=False))
    assert meta_f["dim_pruned"] == meta_f["dim_full"] == 224
    assert meta_p["dim_pruned"] < meta_p["dim_full"]
    assert np.array_equal(traj_p.times, traj_f.times)
    for name in traj_p.columns:
        if name == "min_eig":
            # The unpruned state holds exact zeros for unreachable basis
            # states, so its spectrum bottoms out at 0 while the pruned
            # block's smallest eigenvalue is a small positive number.
            assert traj_p.column(name).min() >= -1e-10
            assert traj_f.column(name).min() >= -1e-10
            continue
        assert np.abs(traj_p.column(name) - traj_f.column(name)).max() <= 1e-12


def tiny_classical(stock):
    return replace(
        stock["dissoc-classical"],
        schedule_duration=1e-7,
        t_end=2e-7,
        record_every=10,
    )


def test_identical_runs_are_byte_identical(stock, tmp_path):
    sc = tiny_classical(stock)
    first = run_scenario(sc, out_dir=str(tmp_path / "a"), figure=False)
    second = run_scenario(sc, out_dir=str(tmp_path / "b"), figure=False)
    bytes_a = open(first.csv_path, "rb").read()
    bytes_b = open(second.csv_path, "rb").read()
    assert bytes_a == bytes_b
    assert first.record["csv_sha256"] == second.record["csv_sha256"]
    assert hashlib.sha256(bytes_a).hexdigest() == first.record["csv_sha256"]


def test_run_scenario_writes_csv_manifest_and_figure(stock, tmp_path):
    sc = tiny_classical(stock)
    res = run_scenario(sc, out_dir=str(tmp_path), figure=True)
    assert os.path.basename(res.csv_path) == "dissoc-classical.csv"
    assert os.path.exists(res.csv_path)
    assert os.path.exists(res.figure_path)
    assert open(res.figure_path, "rb").read(8)[1:4] == b"PNG"
    with open(res.manifest_path) as fh:
        record = json.load(fh)
    assert record["scenario"] == "dissoc-classical"
    assert record["figure"] == "dissoc-classical.png"
    assert record["execution"]["dim_pruned"] <= record["execution"]["dim_full"]
    assert set(record["final_values"]) == set(CSV_COLUMNS) - {"t"}
    assert record["diagnostics"]["max_trace_dev"] <= 1e-9
    # The manifest's config reproduces the run exactly.
    assert parse_config(record["config"]) == sc

    header = open(res.csv_path).readline().strip()
    assert header == ",".join(CSV_COLUMNS)


def test_output_dir_resolution(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "env"))
    assert resolve_out_dir(None) == str(tmp_path / "env")
    assert os.path.isdir(tmp_path / "env")
    assert resolve_out_dir(str(tmp_path / "explicit")) == str(tmp_path / "explicit")


def test_plateau_stops_at_the_first_flat_window(stock):
    sc = replace(
        stock["dissoc-quantum"], plateau_tol=1.0, t_cap=1e-8, record_every=1
    )
    traj, meta = simulate(sc)
    assert meta["plateau_found"] is True
    assert meta["auto_extended"] is False
    assert traj.times[-1] == pytest.approx(1e-8)
    assert np.allclose(np.diff(traj.times), meta["dt"])


def test_capped_run_warns_when_nothing_flattens(stock):
    sc = replace(
        stock["dissoc-quantum"], plateau_tol=1e-12, t_cap=1e-8, record_every=1
    )
    with pytest.warns(UserWarning, match="no plateau"):
        traj, meta = simulate(sc)
    assert meta["plateau_found"] is False
    assert traj.times[-1] == pytest.approx(1e-8)


def test_horizon_extends_until_the_window_fills(stock):
    # The first classical horizon (1.5x the ramp) holds too few recorded
    # points for the trailing-window test, so the run must extend itself.
    sc = replace(
        stock["dissoc-classical"],
        schedule_duration=2e-9,
        t_cap=2.5e-8,
        record_every=1,
        plateau_tol=1.0,
    )
    traj, meta = simulate(sc)
    assert meta["auto_extended"] is True
    assert meta["plateau_found"] is True
    assert 4e-9 < traj.times[-1] <= 2.5e-8 + 1e-12


def test_species_columns_partition_the_trace(dissoc_classical_run):
    traj, _ = dissoc_classical_run
    total = sum(
        traj.column(f"pop_{name}") for name in ("H2", "HH", "HmHp", "other")
    )
    assert np.abs(total - 1.0).max() <= 1e-9
    assert np.abs(total - traj.column("trace")).max() <= 1e-12


def test_quantum_run_prunes_a_strict_subspace(dissoc_quantum_run):
    _, meta = dissoc_quantum_run
    assert meta["dim_full"] == 1792
    assert 0 < meta["dim_pruned"] < meta["dim_full"]


# ---------------------------------------------------------------------------
# export


def test_trajectory_csv_round_trips_doubles():
    times = np.array([0.0, 1e-9 / 3.0, 2e-9 / 3.0])
    columns = {
        name: np.array([0.1, 1.0 / 3.0, 1e-17]) * (i + 1)
        for i, name in enumerate(c for c in CSV_COLUMNS if c != "t")
    }
    text = trajectory_csv(Trajectory(times, columns, None))
    lines = text.splitlines()
    assert text.endswith("\n")
    assert lines[0] == ",".join(CSV_COLUMNS)
    assert len(lines) == 4
    for i, line in enumerate(lines[1:]):
        cells = [float(c) for c in line.split(",")]
        assert cells[0] == times[i]  # 17 digits reproduce the double exactly
        for j, name in enumerate(CSV_COLUMNS[1:]):
            assert cells[j + 1] == columns[name][i]


def test_trajectory_csv_keeps_only_known_columns():
    traj = Trajectory(
        np.array([0.0, 1.0]), {"trace": np.array([1.0, 1.0])}, None
    )
    assert trajectory_csv(traj).splitlines()[0] == "t,trace"


# ---------------------------------------------------------------------------
# sweeps and convergence


def test_sweep_runs_one_scenario_per_value(stock, tmp_path):
    base = tiny_classical(stock)
    results = sweep(base, "scenario.dt", ["1e-9", "5e-10"], out_dir=str(tmp_path))
    assert len(results) == 2
    assert results[0].scenario.dt == 1e-9
    assert results[1].scenario.dt == 5e-10
    for value in ("1e-9", "5e-10"):
        assert (tmp_path / f"dissoc-classical__scenario.dt_{value}.csv").exists()
    summary = (tmp_path / "dissoc-classical__scenario.dt__sweep.csv").read_text()
    lines = summary.splitlines()
    assert lines[0] == "value," + ",".join(c for c in CSV_COLUMNS if c != "t")
    assert len(lines) == 3
    assert lines[1].startswith("1e-9,")
    # Halving dt barely moves the endpoint.
    final_coarse = float(lines[1].split(",")[2])
    final_fine = float(lines[2].split(",")[2])
    assert abs(final_coarse - final_fine) < 1e-3


def test_sweep_rejects_bad_axis_and_allows_empty_values(stock, tmp_path):
    base = tiny_classical(stock)
    with pytest.raises(ScenarioError, match="section.key"):
        sweep(base, "dt", ["1e-9"], out_dir=str(tmp_path))
    assert sweep(base, "scenario.dt", [], out_dir=str(tmp_path)) == []
    summary = (tmp_path / "dissoc-classical__scenario.dt__sweep.csv").read_text()
    assert summary.splitlines() == [
        "value," + ",".join(c for c in CSV_COLUMNS if c != "t")
    ]


def test_dt_halving_sweep_converges_at_first_order(stock, tmp_path):
    # Richardson check on the one-sided dissipative update: halving dt
    # must shrink the endpoint shift by ~2x (slope ~1 in log2).
    base = replace(stock["dissoc-quantum"], t_end=2e-7, record_every=100)
    results = sweep(
        base, "scenario.dt", ["2e-10", "1e-10", "5e-11"], out_dir=str(tmp_path)
    )
    finals = [res.trajectory.column("pop_HH")[-1] for res in results]
    assert finals[0] == pytest.approx(0.731541605879, abs=1e-9)
    assert finals[1] == pytest.approx(0.731251069685, abs=1e-9)
    assert finals[2] == pytest.approx(0.731106001963, abs=1e-9)
    slope = math.log2((finals[0] - finals[1]) / (finals[1] - finals[2]))
    assert 0.8 <= slope <= 1.2
    # The default-dt observable error is converged well under 1e-3.
    assert abs(finals[1] - finals[2]) < 1e-3


def test_raising_the_photon_cutoff_leaves_species_settled(stock):
    # Influx can populate Fock levels above the single-photon default, so
    # the cutoff is validated, not assumed: at the settled end of the
    # dissociation run, every species population moves by under 1e-3 when
    # each mode gains a second photon level.  (Dark-state weights are the
    # exception — the added levels hold fresh dark weight — so they only
    # get a loose bound.)  Both runs use the same dt so the integrator
    # bias cancels in the difference.  This is the slowest test in the
    # suite; the 675-dimensional leg integrates 15000 steps.
    base = replace(
        stock["dissoc-quantum"],
        t_end=3e-6,
        t_cap=3e-6,
        dt=2e-10,
        record_every=500,
    )
    finals = {}
    for n_max in (1, 2):
        traj, _ = simulate(replace(base, photon_truncations=(n_max,) * 5))
        finals[n_max] = {name: traj.column(name)[-1] for name in traj.columns}
    for species in ("H2", "HH", "HmHp", "other"):
        shift = abs(finals[1][f"pop_{species}"] - finals[2][f"pop_{species}"])
        assert shift < 1e-3, f"pop_{species} moved {shift:.3g} under the higher cutoff"
    assert abs(finals[1]["dark_total"] - finals[2]["dark_total"]) < 0.1
