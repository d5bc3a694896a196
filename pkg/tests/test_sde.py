import json

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import expit, logit

from equishoot.sde import (
    BinMismatch,
    ConfigError,
    NotNormalizable,
    SimConfig,
    ergodic_distance,
    histogram_frequency,
    run_metadata,
    simulate,
    stationary_density,
    stationary_law,
    write_occupation_csv,
    write_terminal_csv,
)
from equishoot.survival import scale_data

EDGES = np.linspace(0.0, 1.0, 51)


@pytest.fixture(scope="module")
def law(ref_eq):
    return stationary_law(ref_eq)


@pytest.fixture(scope="module")
def masses(law):
    return law.bin_masses(EDGES)


@pytest.fixture(scope="module")
def coupled_runs(ref_eq):
    """Same seed, stationary start: the two schemes and a halved step share one Brownian path."""
    base = dict(horizon=10.0, n_paths=200, seed=7, start="stationary", burn_in=0.0)
    return {
        "em": simulate(ref_eq, SimConfig(dt=1e-3, noise_substeps=2, **base)),
        "logit": simulate(ref_eq, SimConfig(dt=1e-3, noise_substeps=2, scheme="LogitTransform", **base)),
        "em_half": simulate(ref_eq, SimConfig(dt=5e-4, **base)),
    }


def test_config_validation():
    for bad in (dict(y0=0.0), dict(y0=1.0), dict(dt=0.0), dict(horizon=1e-4, dt=1e-3), dict(clamp_eps=0.5),
                dict(n_paths=0), dict(burn_in=1.0), dict(seed=-1), dict(scheme="Milstein"), dict(start="uniform")):
        with pytest.raises((ConfigError, ValueError)):
            SimConfig(**bad)


def test_bin_mismatch():
    with pytest.raises(BinMismatch):
        ergodic_distance(np.full(50, 0.02), np.full(40, 0.025))


def test_identical_inputs_have_zero_distance(masses):
    assert ergodic_distance(masses, masses) == 0.0


def test_masses_normalised(law, masses):
    assert masses.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.all(masses >= 0)
    assert float(law.cdf(0.0)[0]) == pytest.approx(0.0, abs=1e-12)
    assert float(law.cdf(1.0)[0]) == pytest.approx(1.0, abs=1e-12)


def test_density_integrates_to_cdf(law):
    """Independent quadrature of the density (in the logit variable) against the cumulative mass."""
    lo, hi = 1e-6, 1 - 1e-6
    val, _ = quad(lambda z: float(law.density(expit(z)) * expit(z) * expit(-z)), logit(lo), logit(hi),
                  limit=500, epsabs=1e-10, epsrel=1e-10)
    assert val == pytest.approx(float(law.cdf(hi)[0] - law.cdf(lo)[0]), abs=1e-8)


def test_density_tails(ref_eq, ref_params):
    g, d = ref_params.gamma, ref_params.delta
    y = np.geomspace(1e-6, 1e-4, 20)
    slope0 = np.polyfit(np.log(y), np.log(stationary_density(ref_eq, y)), 1)[0]
    assert slope0 == pytest.approx(1 + g, rel=0.02)
    s = np.geomspace(1e-6, 1e-4, 20)
    slope1 = np.polyfit(np.log(s), np.log(stationary_density(ref_eq, 1 - s)), 1)[0]
    assert -slope1 == pytest.approx(g + d / g + 1, rel=0.02) and g + d / g + 1 == pytest.approx(0.9)


def test_not_normalisable(equal_patience):
    _, _, eq = equal_patience
    with pytest.raises(NotNormalizable):
        stationary_law(eq)


def test_synthetic_exact_sampling(law, masses):
    rng = np.random.default_rng(123)
    tv = [ergodic_distance(histogram_frequency(law.sample(n, rng), 50), masses) for n in (10**4, 10**6)]
    assert tv[1] < 0.05
    assert tv[1] < tv[0]


def test_frequencies_sum_to_one(coupled_runs):
    for st in coupled_runs.values():
        assert st.occupation_frequency.sum() == pytest.approx(1.0, abs=1e-12)
        assert not st.aborted.any()


def test_scheme_agreement(coupled_runs):
    a, b = coupled_runs["em"], coupled_runs["logit"]
    bars = np.maximum(a.error_bars(), b.error_bars())
    assert np.all(np.abs(a.occupation_frequency - b.occupation_frequency) <= 2 * bars + 1e-15)


def test_step_refinement(coupled_runs):
    a, b = coupled_runs["em"], coupled_runs["em_half"]
    bars = np.maximum(a.error_bars(), b.error_bars())
    assert np.all(np.abs(a.occupation_frequency - b.occupation_frequency) <= bars + 1e-15)


def test_stationary_start_stays_stationary(coupled_runs, masses):
    assert ergodic_distance(coupled_runs["logit"].occupation_frequency, masses) < 0.1


def test_clamp_rate(coupled_runs):
    for st in coupled_runs.values():
        assert st.clamp_rate() < 1e-4


def test_seed_determinism(ref_eq):
    cfg = SimConfig(horizon=2.0, n_paths=16, seed=11)
    a, b = simulate(ref_eq, cfg), simulate(ref_eq, cfg)
    assert a == b
    c = simulate(ref_eq, SimConfig(horizon=2.0, n_paths=16, seed=12))
    assert not np.array_equal(a.terminal_values, c.terminal_values)


def test_independent_of_worker_count(ref_eq, monkeypatch):
    cfg = SimConfig(horizon=2.0, n_paths=9, seed=3, scheme="LogitTransform")
    serial = simulate(ref_eq, cfg, workers=1)
    monkeypatch.setenv("EQUISHOOT_THREADS", "3")
    parallel = simulate(ref_eq, cfg, workers=3)
    assert serial == parallel


def test_paths_are_a_prefix(ref_eq):
    # each path owns its stream, so adding paths leaves earlier ones untouched
    few = simulate(ref_eq, SimConfig(horizon=1.0, n_paths=4, seed=5))
    more = simulate(ref_eq, SimConfig(horizon=1.0, n_paths=8, seed=5))
    assert np.array_equal(few.terminal_values, more.terminal_values[:4])


def test_equal_patience_drifts_to_one(equal_patience):
    _, _, eq = equal_patience
    med = [np.median(simulate(eq, SimConfig(horizon=h, dt=1e-2, n_paths=200, seed=1)).terminal_values)
           for h in (5.0, 50.0, 500.0)]
    assert med[0] < med[1] < med[2]
    assert med[2] > 0.99


def test_no_path_sticks_to_the_lower_boundary(ref_eq, masses):
    st = simulate(ref_eq, SimConfig(horizon=20.0, dt=1e-2, n_paths=100, seed=2))
    assert np.all(st.inner_fraction > 0)
    assert st.occupation_frequency[0] < 1e-3 and masses[0] < 1e-3


def test_output_files(tmp_path, ref_eq, masses):
    cfg = SimConfig(horizon=1.0, n_paths=3, seed=0)
    st = simulate(ref_eq, cfg)
    occ, term = tmp_path / "occ.csv", tmp_path / "term.csv"
    write_occupation_csv(occ, st, masses, comment="tag")
    write_terminal_csv(term, st)
    assert occ.read_text().splitlines()[:2] == ["# tag", "bin_left,bin_right,occupation,stationary_mass"]
    assert term.read_text().splitlines()[0] == "path,terminal_y"
    meta = json.loads(run_metadata(cfg, st, "abc"))
    assert meta["certificate_hash"] == "abc" and meta["sim_config"]["n_paths"] == 3


def test_scale_grid_reaches_fit_windows(ref_eq):
    data = scale_data(ref_eq)
    assert data.y[0] <= 1e-8 and data.s[-1] <= 1e-8


def test_burn_in_segments(ref_eq):
    cfg = SimConfig(horizon=5.0, n_paths=6, seed=4, burn_in=0.2)
    st = simulate(ref_eq, cfg)
    np.testing.assert_array_equal(st.frequency_after(0.2), st.occupation_frequency)
    assert st.segment_counts.sum() == cfg.n_steps * cfg.n_paths
    with pytest.raises(ConfigError):
        st.frequency_after(0.25)
