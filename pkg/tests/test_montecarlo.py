from __future__ import annotations

import math

import numpy as np
import pytest

from levyexit import coupling as cp
from levyexit import dynamics as dy
from levyexit import geometry as geo
from levyexit import rng as crng
from levyexit.levy import JumpDecomposition, LevyModel
from levyexit.montecarlo import (ConfigError, Scenario, SimConfig, run_experiment,
                                 simulate_batch, simulate_path, validate_regime)
from levyexit.predictor import predict

EPS = 0.1


@pytest.fixture(scope="module")
def scen():
    m = LevyModel.isotropic_stable(1.5, 2)
    D = geo.ball([0, 0], 1.0)
    P = dy.ErgodicMeasure.point_mass([0.0, 0.0])
    targets = {"right": geo.HalfSpace([1, 0], 0.0)}
    rate = predict(P, D, targets, cp.additive(2), m, EPS, n_angles=256).rate
    return Scenario(dy.linear(2), D, cp.additive(2), m, np.zeros(2), rate, targets, "unit")


def cfg(**kw):
    base = dict(eps=EPS, n_paths=200, base_seed=5, t_max=50.0)
    base.update(kw)
    return SimConfig(**base)


def as_tuple(r):
    return (r.path_id, r.exit_time, tuple(r.exit_point), r.exited_at_jump, r.n_large_jumps,
            r.truncated, r.error)


def batch(scen, c, ids, seed=None):
    d = JumpDecomposition.build(scen.model, c.eps, c.rho, c.r_min, c.band_rate_cap)
    return simulate_batch(c, scen.field, scen.domain, scen.coupling, scen.model, d,
                          scen.x0, ids, c.base_seed if seed is None else seed,
                          c.t_max / scen.rate)


# -- reproducibility ---------------------------------------------------------------


def test_deterministic_given_seed(scen):
    a = run_experiment(cfg(), scen).records
    b = run_experiment(cfg(), scen).records
    assert [as_tuple(r) for r in a] == [as_tuple(r) for r in b]
    c = run_experiment(cfg(base_seed=6), scen).records
    assert [r.exit_time for r in a] != [r.exit_time for r in c]


def test_chunking_and_workers_do_not_matter(scen):
    ref = [as_tuple(r) for r in run_experiment(cfg(), scen).records]
    assert [as_tuple(r) for r in run_experiment(cfg(chunk_size=7), scen).records] == ref
    assert [as_tuple(r) for r in run_experiment(cfg(chunk_size=50), scen, workers=2).records] == ref


def test_single_path_matches_batch(scen):
    c = cfg()
    d = JumpDecomposition.build(scen.model, c.eps)
    full = batch(scen, c, np.arange(20))
    for pid in (0, 7, 19):
        one = simulate_path(c, scen.field, scen.domain, scen.coupling, scen.model, d, scen.x0,
                            crng.PathStream.of(c.base_seed, pid), c.t_max / scen.rate)
        assert as_tuple(one) == as_tuple(full[pid])


def test_prefix_property(scen):
    big = run_experiment(cfg(n_paths=200), scen).records
    small = run_experiment(cfg(n_paths=50), scen).records
    assert [as_tuple(r) for r in small] == [as_tuple(r) for r in big[:50]]


# -- path semantics ------------------------------------------------------------------


def test_exit_points_outside_domain(scen):
    recs = run_experiment(cfg(), scen).records
    pts = np.array([r.exit_point for r in recs])
    assert not np.any(scen.domain.contains(pts))
    cont = [r for r in recs if not r.exited_at_jump]
    for r in cont:
        # continuous exits are bisected onto the boundary
        assert abs(float(scen.domain.signed_distance(r.exit_point))) < 1e-6


def test_no_small_noise_means_jump_exits_only(scen):
    recs = run_experiment(cfg(small_noise="off"), scen).records
    assert all(r.exited_at_jump for r in recs)
    assert all(r.n_large_jumps >= 0 for r in recs)


def test_small_noise_changes_paths(scen):
    a = run_experiment(cfg(small_noise="off"), scen).records
    b = run_experiment(cfg(), scen).records
    assert [r.exit_time for r in a] != [r.exit_time for r in b]


def test_huge_domain_truncates(scen):
    big = Scenario(scen.field, geo.ball([0, 0], 1e6), scen.coupling, scen.model, scen.x0,
                   scen.rate, {}, "huge")
    ex = run_experiment(cfg(n_paths=20, t_max=0.5), big)
    assert all(r.truncated for r in ex.records)
    assert all(r.exit_time == pytest.approx(ex.horizon) for r in ex.records)
    assert ex.summary["truncated_fraction"] == 1.0
    assert any(">10%" in w for w in ex.summary["warnings"])


def test_start_must_lie_in_reduced_domain(scen):
    edge = Scenario(scen.field, scen.domain, scen.coupling, scen.model, np.array([0.99, 0.0]),
                    scen.rate)
    with pytest.raises(ConfigError):
        run_experiment(cfg(), edge)


def test_needs_rate(scen):
    s = Scenario(scen.field, scen.domain, scen.coupling, scen.model, scen.x0)
    with pytest.raises(ConfigError):
        run_experiment(cfg(), s)


def test_memoryless_exit_times(scen):
    # E[τ - s | τ > s] = E[τ] for an exponential law
    t = np.array([r.exit_time for r in run_experiment(cfg(n_paths=4000), scen).records])
    s = np.median(t)
    resid = t[t > s] - s
    se = math.hypot(t.std() / math.sqrt(t.size), resid.std() / math.sqrt(resid.size))
    assert abs(resid.mean() - t.mean()) < 4 * se


def test_summary_fields(scen):
    summ = run_experiment(cfg(), scen).summary
    for key in ("n", "n_exited", "mean_norm", "se_norm", "jump_exit_fraction", "ks",
                "locations", "warnings", "decomposition"):
        assert key in summ
    assert summ["n"] == 200
    assert 0 <= summ["locations"]["right"]["fraction"] <= 1


# -- configuration -------------------------------------------------------------------


@pytest.mark.parametrize("eps,gamma,rho", [(0.0, 0.1, 0.25), (1.0, 0.1, 0.25),
                                           (0.1, 0.2, 0.25), (0.1, 0.0, 0.25),
                                           (0.1, 0.1, 0.5), (0.1, 0.1, 0.0)])
def test_regime_rejected(eps, gamma, rho):
    with pytest.raises(ConfigError):
        validate_regime(eps, gamma, rho)


def test_regime_accepted():
    validate_regime(0.03, 0.19, 0.49)


@pytest.mark.parametrize("kw", [dict(small_noise="bogus"), dict(ode_step=0.0),
                                dict(t_max=-1.0), dict(n_paths=0)])
def test_sim_config_rejected(kw):
    with pytest.raises(ConfigError):
        cfg(**kw)


def test_delta_is_eps_power():
    assert cfg(gamma=0.1).delta == pytest.approx(EPS**0.1)
