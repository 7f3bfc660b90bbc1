import csv
import math
from dataclasses import replace

import numpy as np
import pytest

from pks_strain.dynamics import BLOWN_UP, HEALTHY, gaussian
from pks_strain.experiments import (PRESETS, ScenarioConfig, SweepSpec, moderate_mass_limit, preset,
                                    run, sweep, validate_hypotheses)
from pks_strain.grid import Grid2D, write_snapshot


def test_every_preset_builds():
    for name in PRESETS:
        cfg = preset(name)
        assert cfg.name == name
        assert cfg.initial_field().mass > 0


def test_unknown_preset():
    with pytest.raises(ValueError, match="unknown preset"):
        preset("static_hypercritical")


def test_preset_masses():
    assert preset("static_subcritical").mass == pytest.approx(4 * math.pi)
    assert preset("static_subcritical").amplitude == 0
    assert preset("static_supercritical").mass == pytest.approx(12 * math.pi)
    assert preset("static_supercritical").expected == BLOWN_UP


def test_strained_preset_amplitude_and_hypotheses():
    cfg = preset("strained_supercritical")
    n0 = cfg.initial_field()
    A = cfg.resolve_amplitude(n0)
    assert A == pytest.approx(96 * math.pi, rel=1e-6)
    hyp = validate_hypotheses(cfg, n0)
    assert hyp.passed
    assert hyp.r2 == pytest.approx(4.0**2 / (2 * 0.5**2), rel=5e-2)
    assert cfg.mass < moderate_mass_limit(hyp.r2, cfg.eta)


def test_overlapping_bumps_fail_r2():
    cfg = replace(preset("strained_supercritical"), y0=0.2, cells=256)
    hyp = validate_hypotheses(cfg, cfg.initial_field())
    assert hyp.r2 <= 1.2
    assert not hyp.flags["r2_above_one"]


def test_centred_gaussian_r2_half_normal():
    # half-normal: y+ = s sqrt(2/pi), V+ = M+ s^2 (1 - 2/pi)
    cfg = ScenarioConfig(initial="gaussian", mass=2.0, sigma=1.0, half_width=8.0, cells=256,
                         coverage="splitting")
    hyp = validate_hypotheses(cfg, cfg.initial_field())
    expected = (2 / math.pi) / (2 * (1 - 2 / math.pi))
    assert hyp.r2 == pytest.approx(expected, rel=1e-2)
    assert not hyp.passed


def test_config_validation():
    with pytest.raises(ValueError, match="N must be even"):
        ScenarioConfig(cells=255)
    with pytest.raises(ValueError):
        ScenarioConfig(initial="ring")
    with pytest.raises(ValueError):
        ScenarioConfig(a_mode="magic")
    with pytest.raises(ValueError):
        ScenarioConfig(checks=("virial", "astrology"))
    with pytest.raises(ValueError):
        ScenarioConfig(initial="snapshot")


def test_snapshot_initial_data(tmp_path):
    g = Grid2D(4.0, 32)
    write_snapshot(tmp_path / "n0.txt", gaussian(g, 1.0, 0.5), 0.0)
    cfg = ScenarioConfig(initial="snapshot", snapshot=str(tmp_path / "n0.txt"), half_width=4.0, cells=32)
    assert cfg.initial_field().mass == pytest.approx(1.0, rel=1e-6)
    with pytest.raises(ValueError):
        replace(cfg, cells=64).initial_field()


def test_heat_sanity_run_follows_variance_law():
    res = run(replace(preset("heat_sanity"), cells=128))
    h = res.history
    assert res.verdict == HEALTHY
    assert h[-1].V - h[0].V == pytest.approx(4 * h[0].M * 0.5, rel=1e-2)
    assert res.checks_passed, res.checks


def test_advection_sanity_run():
    res = run(replace(preset("advection_sanity"), cells=128))
    assert res.checks_passed, res.checks
    assert res.ledger.max_drift <= 1e-12 * res.history[0].M


def test_run_is_deterministic():
    cfg = ScenarioConfig(initial="two_bump", mass=10.0, y0=1.5, sigma=0.4, amplitude=1.0,
                         half_width=4.0, cells=64, t_max=0.05, output_interval=0.01)
    a, b = run(cfg), run(cfg)
    assert [r.row() for r in a.history] == [r.row() for r in b.history]


def test_observer_sees_every_record():
    seen = []
    cfg = replace(preset("heat_sanity"), cells=64, t_max=0.2)
    res = run(cfg, observer=lambda rec, state: seen.append(rec.t))
    assert seen == [r.t for r in res.history]
    np.testing.assert_allclose(np.diff(seen), 0.05, rtol=1e-9)


@pytest.mark.slow
def test_supercritical_run_blows_up_before_virial_bound():
    # the peak ratio the grid can show grows like (sigma / h)^2; N = 128 stays below the thresholds
    res = run(replace(preset("static_supercritical"), t_max=1.0, checks=("conservation",)))
    assert res.verdict == BLOWN_UP
    assert res.t_detect < res.history[0].V / (24 * math.pi)
    assert res.checks_passed


def test_strained_run_stops_at_box_time():
    cfg = replace(preset("strained_supercritical"), cells=128, half_width=16.0, checks=())
    res = run(cfg)
    assert res.t_end == pytest.approx(res.t_box)
    assert res.t_box == pytest.approx(math.log(0.5 * 16.0 / res.hypotheses.y_plus) / res.amplitude)


def test_sweep_rows_and_phase_table(tmp_path):
    template = ScenarioConfig(initial="gaussian", sigma=0.5, half_width=3.0, cells=32, t_max=0.02,
                              output_interval=0.01, checks=("conservation",))
    spec = SweepSpec(template, {"mass": [2.0, 4.0]})
    p = tmp_path / "phase.csv"
    rows = sweep(spec, p)
    assert [r["mass"] for r in rows] == [2.0, 4.0]
    with open(p) as fh:
        table = list(csv.reader(fh))
    assert table[0] == ["mass", "verdict", "t_end", "final_max_n", "final_E", "checks_passed"]
    assert len(table) == 3


def test_sweep_order_invariance():
    template = ScenarioConfig(initial="gaussian", sigma=0.5, half_width=3.0, cells=32, t_max=0.02,
                              output_interval=0.01, checks=("conservation",))
    a = sweep(SweepSpec(template, {"mass": [2.0, 5.0]}))
    b = sweep(SweepSpec(template, {"mass": [5.0, 2.0]}))
    assert a == b[::-1]


def test_sweep_records_failures_and_handles_empty_grid():
    template = ScenarioConfig(initial="gaussian", sigma=0.5, half_width=3.0, cells=32, t_max=0.02,
                              output_interval=0.01)
    rows = sweep(SweepSpec(template, {"epsilon": [1e-6]}))
    assert rows[0]["verdict"] == "error"
    assert sweep(SweepSpec(template, {"mass": []})) == []
    with pytest.raises(ValueError):
        SweepSpec(template, {"colour": [1]})


def test_amplitude_axis_switches_to_explicit_mode():
    spec = SweepSpec(preset("strained_supercritical"), {"amplitude": [0.0, 5.0]})
    cfgs = [spec.config_for(p) for p in spec.points()]
    assert all(c.a_mode == "explicit" for c in cfgs)
    assert cfgs[1].amplitude == 5.0
