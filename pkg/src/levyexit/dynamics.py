"""Deterministic flow, attractor detection and the ergodic measure.

The flow u(t; x) of ``u' = f(u)`` is integrated with the classical
fixed-step Runge-Kutta scheme.  Limit cycles are located with a Poincaré
section; crossings are pinned down with Hénon's trick, i.e. one RK4 step
of the system with the section function as independent variable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np


class FlowError(RuntimeError):
    """Non-finite state during integration."""

    def __init__(self, msg, time=None):
        super().__init__(msg if time is None else f"{msg} at t={time:.6g}")
        self.time = time


class AttractorUndetected(RuntimeError):
    pass


# --------------------------------------------------------------------------
# vector fields


class VectorField:
    """Autonomous vector field on R^dim; ``func`` maps (..., d) -> (..., d)."""

    def __init__(self, dim: int, func: Callable, jacobian: Optional[Callable] = None,
                 name: str = "custom"):
        self.dim = dim
        self._func = func
        self.jacobian = jacobian
        self.name = name

    def __call__(self, x):
        return self._func(x)

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r}, dim={self.dim})"


class Linear(VectorField):
    """f(u) = -rate * u: a globally attracting fixed point at the origin."""

    def __init__(self, dim: int = 2, rate: float = 1.0):
        self.dim = dim
        self.rate = rate
        self.name = "linear"

    def __call__(self, x):
        return -self.rate * np.asarray(x, dtype=float)

    def jacobian(self, x):
        return -self.rate * np.eye(self.dim)


class VanDerPol(VectorField):
    """u1' = u2,  u2' = -u1 + mu (1 - u1^2) u2."""

    dim = 2

    def __init__(self, mu: float = 1.0):
        self.mu = mu
        self.name = "van_der_pol"

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        u1 = x[..., 0]
        u2 = x[..., 1]
        return np.stack([u2, -u1 + self.mu * (1.0 - u1 * u1) * u2], axis=-1)

    def jacobian(self, x):
        u1, u2 = x[0], x[1]
        return np.array([[0.0, 1.0], [-1.0 - 2.0 * self.mu * u1 * u2, self.mu * (1.0 - u1 * u1)]])


def linear(dim: int = 2, rate: float = 1.0) -> Linear:
    return Linear(dim, rate)


def van_der_pol(mu: float = 1.0) -> VanDerPol:
    return VanDerPol(mu)


# --------------------------------------------------------------------------
# integration


def rk4_step(f, x, h):
    """One classical RK4 step; ``h`` may be an array broadcast over paths."""
    h = np.asarray(h, dtype=float)
    if h.ndim:
        h = h[..., None]
    k1 = f(x)
    k2 = f(x + 0.5 * h * k1)
    k3 = f(x + 0.5 * h * k2)
    k4 = f(x + h * k3)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def flow(field, x, t: float, step: float = 1e-3):
    """u(t; x) by fixed-step RK4; the last step is shortened to land on t."""
    if t < 0:
        raise ValueError("flow time must be nonnegative")
    if not step > 0:
        raise ValueError("step must be positive")
    x = np.array(x, dtype=float)
    n = int(math.ceil(t / step - 1e-12)) if t > 0 else 0
    done = 0.0
    for i in range(n):
        h = min(step, t - done)
        x = rk4_step(field, x, h)
        done = t if i == n - 1 else done + h
        if not np.all(np.isfinite(x)):
            raise FlowError("flow blew up", done)
    return x


def trajectory(field, x, t: float, step: float):
    """States on the grid 0, step, 2 step, ..., t (t a multiple of step)."""
    n = int(round(t / step))
    out = np.empty((n + 1, np.size(x)))
    out[0] = x
    for i in range(n):
        out[i + 1] = rk4_step(field, out[i], step)
    if not np.all(np.isfinite(out)):
        raise FlowError("trajectory blew up")
    return out


# --------------------------------------------------------------------------
# ergodic measure


@dataclass(frozen=True)
class ErgodicMeasure:
    """Equal- or general-weight point cloud approximating P on the attractor."""

    points: np.ndarray
    weights: np.ndarray
    kind: str = "fixed_point"
    period: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.points, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if len(p) != len(w) or len(p) == 0:
            raise ValueError("need one weight per point, at least one point")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "weights", w)

    @classmethod
    def point_mass(cls, v) -> "ErgodicMeasure":
        return cls(np.atleast_2d(v), np.ones(1), "fixed_point")

    def __len__(self):
        return len(self.weights)


def ergodic_average(P: ErgodicMeasure, phi: Callable) -> float:
    """∫ φ dP = Σ w_i φ(p_i)."""
    vals = np.array([float(phi(p)) for p in P.points])
    return float(P.weights @ vals)


def _crossing(field, x0, t0, n, m, step):
    """Hénon step from x0 (g(x0) < 0) to the section g(x) = n·(x - m) = 0."""

    def rhs(y):
        xs = y[:-1]
        fx = field(xs)
        s = float(n @ fx)
        return np.append(fx / s, 1.0 / s)

    y = np.append(x0, t0)
    dg = -float(n @ (x0 - m))
    y = rk4_step(rhs, y, dg)
    return y[:-1], y[-1]


def detect_attractor(field, dom, seed, *, step: float = 1e-3, horizon: float = 50.0,
                     n_points: int = 512, fixed_tol: float = 1e-8,
                     max_returns: int = 200, return_tol: float = 1e-10,
                     margin: float = 0.0) -> ErgodicMeasure:
    """Locate the attractor reached from ``seed`` and build P.

    After a transient of length ``horizon`` the state either sits at a fixed
    point (‖f‖ < ``fixed_tol``; P is a point mass there) or circulates on a
    limit cycle.  For the cycle, a section hyperplane through the running
    mean is crossed repeatedly until two successive return points agree to
    ``return_tol``; the period is the return time and P is sampled at
    ``n_points`` equally spaced times over one period.
    """
    seed = np.asarray(seed, dtype=float)
    if dom is not None and not bool(dom.contains(seed)):
        raise ValueError("seed lies outside the domain")
    x = flow(field, seed, horizon, step)
    if float(np.linalg.norm(field(x))) < fixed_tol:
        # polish onto the fixed point
        x = flow(field, x, horizon, step)
        P = ErgodicMeasure.point_mass(x)
        return _with_margin(P, dom, margin)

    # running mean over a further stretch of the trajectory
    traj = trajectory(field, x, horizon, step)
    m = traj.mean(axis=0)
    x = traj[-1]
    fx = field(x)
    if float(np.linalg.norm(fx)) < fixed_tol:
        return _with_margin(ErgodicMeasure.point_mass(x), dom, margin)
    r = x - m
    rn = float(r @ r)
    n = fx - (float(fx @ r) / rn) * r if rn > 0 else fx
    if not np.linalg.norm(n) > 0:
        raise AttractorUndetected("degenerate Poincaré section")
    n = n / np.linalg.norm(n)
    g = lambda y: float(n @ (y - m))

    t = 0.0
    crossings = []
    budget = horizon * max_returns
    prev_g = g(x)
    while t < budget:
        xn = rk4_step(field, x, step)
        if not np.all(np.isfinite(xn)):
            raise FlowError("flow blew up during attractor detection", t)
        gn = g(xn)
        if prev_g < 0 <= gn and float(n @ field(xn)) > 0:
            xc, tc = _crossing(field, x, t, n, m, step)
            crossings.append((xc, tc))
            if len(crossings) >= 3:
                (x1, t1), (x2, t2) = crossings[-2], crossings[-1]
                p_prev = crossings[-2][1] - crossings[-3][1]
                if (np.linalg.norm(x2 - x1) < return_tol * max(1.0, np.linalg.norm(x2))
                        and abs((t2 - t1) - p_prev) < 1e-9):
                    break
            if len(crossings) > max_returns:
                raise AttractorUndetected("section returns do not converge")
        x, prev_g, t = xn, gn, t + step
    else:
        raise AttractorUndetected("no fixed point and no periodic return within the horizon")

    (x1, t1), (x2, t2) = crossings[-2], crossings[-1]
    period = t2 - t1
    points = sample_cycle(field, x2, period, n_points, step)
    P = ErgodicMeasure(points, np.full(n_points, 1.0 / n_points), "limit_cycle", period,
                       {"section_normal": n, "section_point": m, "returns": len(crossings)})
    return _with_margin(P, dom, margin)


def sample_cycle(field, x0, period: float, n_points: int, step: float):
    """States at times k·period/n_points, k = 0..n_points-1, from x0."""
    dt = period / n_points
    sub = max(1, int(math.ceil(dt / step)))
    h = dt / sub
    pts = np.empty((n_points, np.size(x0)))
    x = np.asarray(x0, dtype=float)
    for k in range(n_points):
        pts[k] = x
        for _ in range(sub):
            x = rk4_step(field, x, h)
    return pts


def period_of(P: ErgodicMeasure) -> float:
    if P.period is None:
        raise ValueError("ergodic measure is not a limit cycle")
    return P.period


def _with_margin(P, dom, margin):
    if dom is None:
        return P
    sd = np.asarray(dom.signed_distance(P.points))
    if np.any(sd <= margin):
        raise AttractorUndetected(
            f"attractor comes within {sd.min():.3g} of the boundary (margin {margin})")
    P.meta["boundary_distance"] = float(sd.min())
    return P


# --------------------------------------------------------------------------
# diagnostics


@dataclass
class InwardReport:
    min_inner_product: float
    flagged: bool
    points: np.ndarray
    inner_products: np.ndarray


def boundary_samples(dom, n_samples: int, interior_point=None, rng=None):
    """Points on ∂D found along rays from an interior point."""
    rng = np.random.default_rng(0) if rng is None else rng
    region = dom.region
    d = dom.dim
    if interior_point is None:
        lo, hi = dom.bounding_box()
        interior_point = _interior_point(dom, lo, hi, rng)
    o = np.asarray(interior_point, dtype=float)
    pts = []
    while len(pts) < n_samples:
        u = rng.normal(size=d)
        u /= np.linalg.norm(u)
        for a, b in region.ray_intervals(o, u):
            for t in (a, b):
                if 0 < t < math.inf:
                    pts.append(o + t * u)
    return np.array(pts[:n_samples])


def _interior_point(dom, lo, hi, rng):
    for _ in range(10000):
        x = lo + (hi - lo) * rng.random(len(lo))
        if bool(dom.contains(x)):
            return x
    raise ValueError("could not find an interior point")


def check_inward(field, dom, n_samples: int, interior_point=None, rng=None) -> InwardReport:
    """Sample ∂D and report min ⟨f, inward unit normal⟩ (flagged if ≤ 0)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    pts = boundary_samples(dom, n_samples, interior_point, rng)
    h = 1e-6
    grads = np.stack([
        (dom.signed_distance(pts + h * e) - dom.signed_distance(pts - h * e)) / (2 * h)
        for e in np.eye(dom.dim)
    ], axis=-1)
    normals = grads / np.linalg.norm(grads, axis=-1, keepdims=True)
    ip = np.einsum("ij,ij->i", field(pts), normals)
    mn = float(ip.min())
    return InwardReport(mn, mn <= 0, pts, ip)


def lipschitz_estimate(field, dom, n: int = 1000, rng=None) -> float:
    """Largest sampled difference quotient ‖f(x) - f(y)‖ / ‖x - y‖ on D."""
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = dom.bounding_box()
    x = lo + (hi - lo) * rng.random((4 * n, len(lo)))
    x = x[dom.contains(x)][: 2 * n]
    a, b = x[0::2], x[1::2]
    k = min(len(a), len(b))
    a, b = a[:k], b[:k]
    num = np.linalg.norm(field(a) - field(b), axis=-1)
    den = np.linalg.norm(a - b, axis=-1)
    return float(np.max(num / den))
