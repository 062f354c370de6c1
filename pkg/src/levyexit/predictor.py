"""Limit law of the first exit: the measure Q, the rate Q(D^c) h_ε, and
the exit-location probabilities Q(U ∩ D^c) / Q(D^c).

For an attractor point y and a target set U the exit set is
E^U(y) = {z : y + G(y, z) ∈ U}; its μ-mass is computed along the spectral
directions from exact radial sections.  Q averages these masses over the
ergodic measure P.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional

import numpy as np

from .geometry import Intersection, Region, ray_section, section_table
from .levy import InfiniteMassError, LevyModel


class PredictionError(ValueError):
    pass


def exit_segments(y, target: Region, coupling, model: LevyModel, n_angles: int = 1024,
                  scale: float = 1.0, check: bool = True):
    """Radial segments of E^target(y) along the spectral quadrature directions.

    Returns flat arrays ``(lo, hi, weight)``, one entry per segment, with the
    direction's quadrature weight attached.
    """
    y = np.asarray(y, dtype=float)
    dirs, weights = model.spectral.quadrature(n_angles)
    if coupling.linear_in_jump:
        V = coupling.jump_increment(np.broadcast_to(y, (len(dirs), y.size)), dirs)
        try:
            lo, hi, inside = section_table(target, y, V)
        except NotImplementedError:
            pass
        else:
            if check and np.any(inside & (lo <= 0)):
                raise InfiniteMassError(
                    "target reachable by arbitrarily small jumps: mu-mass is infinite")
            w = np.broadcast_to(weights[:, None], lo.shape)
            return lo[inside], hi[inside], w[inside]
    los, his, ws = [], [], []
    for u, w in zip(dirs, weights):
        for a, b in ray_section(target, y, coupling, u, scale, check):
            los.append(a)
            his.append(b)
            ws.append(w)
    return np.array(los), np.array(his), np.array(ws)


def _mu_of_segments(alpha, lo, hi, w):
    if lo.size == 0:
        return 0.0
    with np.errstate(divide="ignore"):
        a = lo ** (-alpha)
    b = np.where(np.isinf(hi), 0.0, hi ** (-alpha))
    return float(np.sum(w * (a - b)))


def _nu_of_segments(model, lo, hi, w, eps):
    if lo.size == 0:
        return 0.0
    a = model.tail(lo / eps)
    fin = np.isfinite(hi)
    b = np.zeros_like(hi)
    if np.any(fin):
        b[fin] = model.tail(hi[fin] / eps)
    return float(np.sum(w * (a - b)))


def exit_set_mass(y, target: Region, coupling, model: LevyModel, n_angles: int = 1024,
                  scale: float = 1.0) -> float:
    """μ(E^target(y)) with μ(dr du) = α r^{-α-1} dr σ(du)."""
    return _mu_of_segments(model.alpha, *exit_segments(y, target, coupling, model, n_angles, scale))


@dataclass
class ExitLawPrediction:
    q_exit: float
    h_eps: float
    rate: float
    lambda_eps: float
    epsilon: float
    location_law: Dict[str, float] = field(default_factory=dict)
    diagnostics: Dict[str, object] = field(default_factory=dict)

    def to_dict(self):
        return {
            "eps": self.epsilon,
            "q_exit": self.q_exit,
            "h_eps": self.h_eps,
            "rate": self.rate,
            "lambda_eps": self.lambda_eps,
            "location_law": dict(self.location_law),
            "diagnostics": _jsonable(self.diagnostics),
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


class QMeasure:
    """Q(U) = ∫ μ(E^U(y)) P(dy) for one (P, D, coupling, model).

    The segments of the exit sets E^{D^c}(y) over all attractor points are
    computed once and reused for Q(D^c), for λ_ε at any ε and, for
    couplings linear in the jump, for target masses Q(U ∩ D^c): those
    intersect the stored D^c segments with the rays' sections of U.
    """

    def __init__(self, P, dom, coupling, model: LevyModel, n_angles: int = 1024,
                 scale: float = 1.0):
        self.P, self.dom, self.coupling, self.model = P, dom, coupling, model
        self.n_angles = n_angles
        self.scale = scale
        self._tables = self._ray_tables(dom.exterior())
        if self._tables is None:
            self._segments = self._collect(dom.exterior())
        else:
            self._segments = self._flatten(self._tables)

    def _ray_tables(self, region):
        if not self.coupling.linear_in_jump:
            return None
        dirs, weights = self.model.spectral.quadrature(self.n_angles)
        tables = []
        for y in self.P.points:
            V = self.coupling.jump_increment(np.broadcast_to(y, (len(dirs), y.size)), dirs)
            try:
                lo, hi, inside = section_table(region, y, V)
            except NotImplementedError:
                return None
            if np.any(inside & (lo <= 0)):
                raise InfiniteMassError(
                    "target reachable by arbitrarily small jumps: mu-mass is infinite")
            tables.append((y, V, lo, hi, inside))
        self._weights = weights
        return tables

    def _flatten(self, tables):
        los, his, ws = [], [], []
        for pw, (y, V, lo, hi, inside) in zip(self.P.weights, tables):
            w = np.broadcast_to(self._weights[:, None], lo.shape)
            los.append(lo[inside])
            his.append(hi[inside])
            ws.append(pw * w[inside])
        return np.concatenate(los), np.concatenate(his), np.concatenate(ws)

    def _collect(self, region):
        los, his, ws = [], [], []
        for pw, y in zip(self.P.weights, self.P.points):
            lo, hi, w = exit_segments(y, region, self.coupling, self.model,
                                      self.n_angles, self.scale)
            los.append(lo)
            his.append(hi)
            ws.append(pw * w)
        return np.concatenate(los), np.concatenate(his), np.concatenate(ws)

    def _target_mass(self, target):
        al = self.model.alpha
        total = 0.0
        for pw, (y, V, lo, hi, inside) in zip(self.P.weights, self._tables):
            lo2, hi2, in2 = section_table(target, y, V)
            L = np.maximum(lo[:, :, None], lo2[:, None, :])
            H = np.minimum(hi[:, :, None], hi2[:, None, :])
            ok = inside[:, :, None] & in2[:, None, :] & (H > L)
            if not np.any(ok):
                continue
            a = L[ok] ** (-al)
            b = np.where(np.isinf(H[ok]), 0.0, H[ok] ** (-al))
            w = np.broadcast_to(self._weights[:, None, None], ok.shape)[ok]
            total += pw * float(np.sum(w * (a - b)))
        return total

    def mass(self, target: Optional[Region] = None) -> float:
        """Q(target ∩ D^c); ``None`` gives Q(D^c)."""
        if target is None:
            return _mu_of_segments(self.model.alpha, *self._segments)
        if self._tables is not None:
            try:
                return self._target_mass(target)
            except NotImplementedError:
                pass
        segs = self._collect(Intersection((self.dom.exterior(), target)))
        return _mu_of_segments(self.model.alpha, *segs)

    def lambda_eps(self, eps: float) -> float:
        """λ_ε = ∫ ν(E^{D^c}(y) / ε) P(dy)."""
        return _nu_of_segments(self.model, *self._segments, eps)


def boundary_shell_masses(P, dom, coupling, model, widths=(1e-2, 1e-3, 1e-4),
                          n_angles: int = 256):
    """Q-mass of {|signed distance| < w} for shrinking w, where available."""
    out = {}
    for w in widths:
        inner = dom.offset(-w)
        outer = dom.offset(w)
        if inner is None or outer is None:
            return None
        shell = Intersection((inner, ~outer))
        try:
            out[w] = sum(pw * exit_set_mass(y, shell, coupling, model, n_angles)
                         for pw, y in zip(P.weights, P.points))
        except InfiniteMassError:
            out[w] = float("inf")
    return out


def predict(P, dom, targets: Optional[Mapping[str, Region]], coupling, model: LevyModel,
            eps: float, n_angles: int = 1024, q: Optional[QMeasure] = None,
            check_boundary: bool = False) -> ExitLawPrediction:
    """Rate Q(D^c) h(1/ε) and location law Q(U ∩ D^c) / Q(D^c)."""
    if not 0 < eps < 1:
        raise PredictionError("epsilon must lie in (0, 1)")
    if len(P) == 0:
        raise PredictionError("empty ergodic measure")
    q = q or QMeasure(P, dom, coupling, model, n_angles)
    q_exit = q.mass()
    if not q_exit > 0:
        raise PredictionError("Q(D^c) = 0: no exit in the limit")
    h_eps = float(model.tail(1.0 / eps))
    law = {name: q.mass(U) / q_exit for name, U in (targets or {}).items()}
    diag = {"n_angles": n_angles, "n_attractor_points": len(P)}
    if check_boundary:
        shells = boundary_shell_masses(P, dom, coupling, model)
        if shells is not None:
            diag["boundary_shell_masses"] = {str(k): v for k, v in shells.items()}
            diag["q_boundary_negligible"] = bool(min(shells.values()) < 1e-3 * q_exit)
    return ExitLawPrediction(q_exit, h_eps, q_exit * h_eps, q.lambda_eps(eps), eps, law, diag)


def hole_extrapolation(make_domain, deltas, P, coupling, model, n_angles: int = 1024):
    """Q(D^c) for domains with a removed δ-ball, extrapolated to δ = 0.

    The hole contributes mass ∝ δ^d for small δ, so q(δ) = q0 + k δ^d is
    fitted by least squares.
    """
    deltas = np.asarray(deltas, dtype=float)
    qs = np.array([QMeasure(P, make_domain(d), coupling, model, n_angles).mass() for d in deltas])
    dim = P.points.shape[1]
    A = np.stack([np.ones_like(deltas), deltas**dim], axis=-1)
    coef, *_ = np.linalg.lstsq(A, qs, rcond=None)
    return {"deltas": deltas.tolist(), "q_exit": qs.tolist(), "q_exit_delta0": float(coef[0])}
