from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from levyexit import coupling as cp
from levyexit import dynamics as dy
from levyexit import geometry as geo
from levyexit.levy import DiscreteSpectral, LevyModel
from levyexit.predictor import (PredictionError, QMeasure, boundary_shell_masses,
                                exit_set_mass, hole_extrapolation, predict)

ADD = cp.additive(2)


def point(*x):
    return dy.ErgodicMeasure.point_mass(np.array(x, dtype=float))


def ball_exit_oracle(y, R, alpha):
    """(α/2π) ∫_{‖x‖ ≥ R} ‖x - y‖^{-2-α} dx in polar coordinates about 0."""
    f = lambda s, phi: s * ((s * math.cos(phi) - y[0]) ** 2
                            + (s * math.sin(phi) - y[1]) ** 2) ** (-1 - alpha / 2)
    val, _ = integrate.dblquad(f, 0.0, 2 * math.pi, R, np.inf, epsabs=1e-11, epsrel=1e-11)
    return alpha / (2 * math.pi) * val


# -- examples -------------------------------------------------------------------


@pytest.mark.parametrize("R", [0.5, 1.0, 2.0])
def test_centered_ball(iso15, R):
    D = geo.ball([0, 0], R)
    assert exit_set_mass([0, 0], D.exterior(), ADD, iso15) == pytest.approx(R**-1.5, rel=1e-12)


@pytest.mark.parametrize("y", [(0.5, 0.0), (0.2, -0.6)])
def test_off_center_ball_oracle(iso15, y):
    D = geo.ball([0, 0], 1.0)
    got = exit_set_mass(y, D.exterior(), ADD, iso15, n_angles=4096)
    assert got == pytest.approx(ball_exit_oracle(y, 1.0, 1.5), rel=1e-6)


def test_ito_scaling_gives_power(iso15):
    D = geo.ball([0, 0], 1.0)
    y = [0.3, 0.1]
    a = exit_set_mass(y, D.exterior(), ADD, iso15)
    b = exit_set_mass(y, D.exterior(), cp.ito(2.0 * np.eye(2)), iso15)
    assert b / a == pytest.approx(2**1.5, rel=1e-12)


def test_predict_alpha1_rate():
    m = LevyModel.isotropic_stable(1.0, 2)
    pred = predict(point(0, 0), geo.ball([0, 0], 1.0), None, ADD, m, 0.01)
    assert pred.q_exit == pytest.approx(1.0, rel=1e-12)
    assert pred.rate == pytest.approx(2 * math.pi * 0.01, rel=1e-12)
    assert pred.lambda_eps == pytest.approx(pred.rate, rel=1e-12)


def test_symmetric_location_law(iso15):
    targets = {"left": geo.HalfSpace([-1, 0], 0.0), "right": geo.HalfSpace([1, 0], 0.0)}
    pred = predict(point(0, 0), geo.ball([0, 0], 1.0), targets, ADD, iso15, 0.03)
    assert pred.location_law["left"] == pytest.approx(0.5, abs=1e-12)
    assert pred.location_law["right"] == pytest.approx(0.5, abs=1e-12)


def test_prediction_json_round_trip(iso15):
    import json
    pred = predict(point(0.1, 0), geo.ball([0, 0], 1.0), {"r": geo.HalfSpace([1, 0], 0.0)},
                   ADD, iso15, 0.03, check_boundary=True)
    d = json.loads(pred.to_json())
    assert d["rate"] == pred.rate and d["location_law"]["r"] == pred.location_law["r"]


def test_errors(iso15):
    D = geo.ball([0, 0], 1.0)
    with pytest.raises(PredictionError):
        predict(point(0, 0), D, None, ADD, iso15, 1.5)
    # jumps only point left, and D^c lies to the right
    m = LevyModel(1.5, 2, spectral=DiscreteSpectral([[-1.0, 0.0]], [1.0]))
    with pytest.raises(PredictionError):
        predict(point(0, 0), geo.Domain(geo.HalfSpace([-1, 0], -1.0)), None, ADD, m, 0.03)


# -- properties --------------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(st.floats(0.3, 1.9), st.floats(0.0, 2 * math.pi), st.floats(0.0, 0.8))
def test_rotation_symmetry(alpha, ang, r):
    m = LevyModel.isotropic_stable(alpha, 2)
    D = geo.ball([0, 0], 1.0)
    a = exit_set_mass([r, 0.0], D.exterior(), ADD, m, 2048)
    b = exit_set_mass([r * math.cos(ang), r * math.sin(ang)], D.exterior(), ADD, m, 2048)
    assert a == pytest.approx(b, rel=1e-6)


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.5, 0.5), st.floats(-0.5, 0.5), st.floats(-0.9, 0.9))
def test_partition_additivity(x, y, c):
    m = LevyModel.isotropic_stable(1.5, 2)
    q = QMeasure(point(x, y), geo.ball([0, 0], 1.0), ADD, m, 512)
    left = q.mass(geo.HalfSpace([-1, 0], -c))
    right = q.mass(geo.HalfSpace([1, 0], c))
    assert left + right == pytest.approx(q.mass(), rel=1e-10)


def test_mixture_linearity(iso15):
    D = geo.ball([0, 0], 1.0)
    pts = np.array([[0.1, 0.2], [-0.4, 0.3]])
    P = dy.ErgodicMeasure(pts, np.array([0.25, 0.75]), "cloud")
    q = QMeasure(P, D, ADD, iso15, 512).mass()
    parts = [exit_set_mass(p, D.exterior(), ADD, iso15, 512) for p in pts]
    assert q == pytest.approx(0.25 * parts[0] + 0.75 * parts[1], rel=1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.6, 3.0), st.floats(0.6, 3.0))
def test_domain_monotonicity(r1, r2):
    m = LevyModel.isotropic_stable(1.5, 2)
    small, big = sorted((r1, r2))
    P = point(0.2, 0.1)
    qs = QMeasure(P, geo.ball([0, 0], small), ADD, m, 256).mass()
    qb = QMeasure(P, geo.ball([0, 0], big), ADD, m, 256).mass()
    assert qb <= qs * (1 + 1e-12)


@settings(max_examples=20, deadline=None)
@given(st.floats(1e-4, 0.5), st.floats(1e-4, 0.5))
def test_rate_eps_scaling(e1, e2):
    m = LevyModel.isotropic_stable(1.5, 2)
    q = QMeasure(point(0.3, 0), geo.ball([0, 0], 1.0), ADD, m, 256)
    p1 = predict(q.P, q.dom, None, ADD, m, e1, q=q)
    p2 = predict(q.P, q.dom, None, ADD, m, e2, q=q)
    assert p1.rate / p2.rate == pytest.approx((e1 / e2) ** 1.5, rel=1e-10)


def test_resolution_doubling_vdp(iso15, vdp_cycle, vdp_domain):
    P = dy.ErgodicMeasure(vdp_cycle.points[::8], np.full(64, 1 / 64), "limit_cycle",
                          vdp_cycle.period)
    a = QMeasure(P, vdp_domain, ADD, iso15, 512).mass()
    b = QMeasure(P, vdp_domain, ADD, iso15, 1024).mass()
    assert abs(a - b) / b < 5e-3


def test_marcus_constant_matches_ito(iso15):
    phi = np.array([[1.0, 0.2], [0.0, 0.8]])
    D = geo.ball([0, 0], 1.0)
    a = exit_set_mass([0.2, 0.1], D.exterior(), cp.ito(phi), iso15, 16)
    b = exit_set_mass([0.2, 0.1], D.exterior(), cp.marcus(phi), iso15, 16)
    assert a == pytest.approx(b, rel=1e-8)


def test_boundary_shells_vanish(iso15):
    D = geo.ball([0, 0], 1.0)
    shells = boundary_shell_masses(point(0.3, 0), D, ADD, iso15)
    ws = sorted(shells)
    assert all(shells[a] < shells[b] for a, b in zip(ws, ws[1:]))
    assert shells[ws[0]] < 1e-3


def test_boundary_shells_unavailable(iso15):
    D = geo.levelset(lambda x: x[..., 0] ** 2 + x[..., 1] ** 2, 1.0, [-2, -2], [2, 2])
    assert boundary_shell_masses(point(0, 0), D, ADD, iso15) is None


def test_hole_extrapolation(iso15):
    P = point(0.5, 0.0)
    make = lambda d: geo.annulus([0, 0], d, 1.0)
    # the fit drops an O(δ^4) term, so small holes need a fine angular grid
    res = hole_extrapolation(make, [0.005, 0.01, 0.02], P, ADD, iso15, 4096)
    full = exit_set_mass([0.5, 0.0], geo.ball([0, 0], 1.0).exterior(), ADD, iso15, 4096)
    assert res["q_exit_delta0"] == pytest.approx(full, rel=1e-5)
    assert res["q_exit"][0] > full
