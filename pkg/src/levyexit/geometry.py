"""Bounded domains, target sets and their ray sections.

Every set answers three questions: membership of points, the parameters
``t >= 0`` for which ``origin + t * v`` lies in the set (as a sorted list of
disjoint intervals), and, for the primitives, a signed distance to the
boundary.  Sets compose through :class:`Complement`, :class:`Intersection`
and :class:`Union`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .levy import InfiniteMassError

INF = math.inf

# ray sections for nonlinear couplings: log grid density and extent
GRID_PER_DECADE = 256
GRID_DECADES = (-6, 6)
BISECT_RTOL = 1e-10


class GeometryError(ValueError):
    pass


# --------------------------------------------------------------------------
# interval algebra on [0, inf)


def merge_intervals(iv):
    out = []
    for a, b in sorted((float(a), float(b)) for a, b in iv if b > a):
        if out and a <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], b))
        else:
            out.append((a, b))
    return out


def complement_intervals(iv):
    out, cur = [], 0.0
    for a, b in merge_intervals(iv):
        if a > cur:
            out.append((cur, a))
        cur = b
    if cur < INF:
        out.append((cur, INF))
    return out


def intersect_intervals(p, q):
    p, q = merge_intervals(p), merge_intervals(q)
    out, i, j = [], 0, 0
    while i < len(p) and j < len(q):
        a = max(p[i][0], q[j][0])
        b = min(p[i][1], q[j][1])
        if b > a:
            out.append((a, b))
        if p[i][1] < q[j][1]:
            i += 1
        else:
            j += 1
    return out


def _as_points(x):
    x = np.asarray(x, dtype=float)
    return x


# --------------------------------------------------------------------------
# set algebra


class Region:
    """Base class: subclasses implement contains and ray_intervals."""

    dim: int

    def contains(self, x):
        raise NotImplementedError

    def ray_intervals(self, origin, v):
        raise NotImplementedError

    def signed_distance(self, x):
        raise GeometryError(f"{type(self).__name__} has no signed distance")

    def crossings(self, origin, V):
        """Candidate boundary parameters t > 0 along many rays.

        ``V`` has shape (K, d); returns (K, c) with NaN padding.  Only the
        primitives with closed-form intersections implement this.
        """
        raise NotImplementedError

    def bounding_box(self):
        raise GeometryError(f"{type(self).__name__} is unbounded")

    def __and__(self, other):
        return Intersection((self, other))

    def __or__(self, other):
        return Union((self, other))

    def __invert__(self):
        return Complement(self)


@dataclass(frozen=True, eq=False)
class Ball(Region):
    """Open ball ‖x - center‖ < radius."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not self.radius > 0:
            raise GeometryError("ball radius must be positive")

    @property
    def dim(self):
        return self.center.size

    def contains(self, x):
        x = _as_points(x)
        return np.linalg.norm(x - self.center, axis=-1) < self.radius

    def signed_distance(self, x):
        return self.radius - np.linalg.norm(_as_points(x) - self.center, axis=-1)

    def ray_intervals(self, origin, v):
        d = np.asarray(origin, dtype=float) - self.center
        a = float(v @ v)
        if a == 0.0:
            return [(0.0, INF)] if d @ d < self.radius**2 else []
        b = float(d @ v)
        c = float(d @ d) - self.radius**2
        disc = b * b - a * c
        if disc <= 0:
            return []
        sq = math.sqrt(disc)
        # stable roots of a t^2 + 2 b t + c
        q = -(b + math.copysign(sq, b)) if b != 0 else sq
        t1, t2 = sorted((q / a, c / q if q != 0 else -q / a))
        return intersect_intervals([(t1, t2)], [(0.0, INF)])

    def crossings(self, origin, V):
        return _ball_crossings(self.center, self.radius, origin, V)

    def bounding_box(self):
        return self.center - self.radius, self.center + self.radius

    def offset(self, s):
        """The set {signed_distance > s}."""
        return Ball(self.center, self.radius - s)


@dataclass(frozen=True, eq=False)
class Annulus(Region):
    """Open annulus r_in < ‖x - center‖ < r_out."""

    center: np.ndarray
    r_in: float
    r_out: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if not 0 < self.r_in < self.r_out:
            raise GeometryError("annulus needs 0 < r_in < r_out")

    @property
    def dim(self):
        return self.center.size

    def contains(self, x):
        r = np.linalg.norm(_as_points(x) - self.center, axis=-1)
        return (r > self.r_in) & (r < self.r_out)

    def signed_distance(self, x):
        r = np.linalg.norm(_as_points(x) - self.center, axis=-1)
        return np.minimum(self.r_out - r, r - self.r_in)

    def ray_intervals(self, origin, v):
        outer = Ball(self.center, self.r_out).ray_intervals(origin, v)
        inner = Ball(self.center, self.r_in).ray_intervals(origin, v)
        return intersect_intervals(outer, complement_intervals(inner))

    def crossings(self, origin, V):
        return np.concatenate([_ball_crossings(self.center, self.r_in, origin, V),
                               _ball_crossings(self.center, self.r_out, origin, V)], axis=1)

    def bounding_box(self):
        return self.center - self.r_out, self.center + self.r_out

    def offset(self, s):
        return Annulus(self.center, self.r_in + s, self.r_out - s)


@dataclass(frozen=True, eq=False)
class HalfSpace(Region):
    """Open half-space {x : normal · x > offset}."""

    normal: np.ndarray
    offset_: float = 0.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float)
        if not np.any(n):
            raise GeometryError("half-space normal is zero")
        object.__setattr__(self, "normal", n)

    @property
    def dim(self):
        return self.normal.size

    def contains(self, x):
        return _as_points(x) @ self.normal > self.offset_

    def signed_distance(self, x):
        return (_as_points(x) @ self.normal - self.offset_) / np.linalg.norm(self.normal)

    def ray_intervals(self, origin, v):
        s = float(self.normal @ v)
        k = self.offset_ - float(self.normal @ origin)
        if s == 0.0:
            return [(0.0, INF)] if k < 0 else []
        t = k / s
        if s > 0:
            return [(max(t, 0.0), INF)]
        return [(0.0, t)] if t > 0 else []

    def crossings(self, origin, V):
        sv = V @ self.normal
        k = self.offset_ - float(self.normal @ origin)
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(sv != 0, k / sv, np.nan)
        return t[:, None]

    def offset(self, s):
        return HalfSpace(self.normal, self.offset_ + s * np.linalg.norm(self.normal))


@dataclass(frozen=True, eq=False)
class Polygon(Region):
    """Open simple polygon in the plane (even-odd rule)."""

    vertices: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise GeometryError("polygon needs at least three planar vertices")
        object.__setattr__(self, "vertices", v)

    dim = 2

    def _edges(self):
        a = self.vertices
        return a, np.roll(a, -1, axis=0)

    def _edge_distance(self, x):
        x = _as_points(x)
        a, b = self._edges()
        ab = b - a
        t = np.einsum("...kj,kj->...k", x[..., None, :] - a, ab) / np.einsum("kj,kj->k", ab, ab)
        t = np.clip(t, 0.0, 1.0)
        near = a + t[..., None] * ab
        return np.linalg.norm(x[..., None, :] - near, axis=-1).min(axis=-1)

    def contains(self, x):
        x = _as_points(x)
        px, py = x[..., 0], x[..., 1]
        inside = np.zeros(px.shape, dtype=bool)
        a, b = self._edges()
        for (x1, y1), (x2, y2) in zip(a, b):
            crosses = (y1 > py) != (y2 > py)
            with np.errstate(divide="ignore", invalid="ignore"):
                xint = x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            inside ^= crosses & (px < xint)
        return inside & (self._edge_distance(x) > 0)

    def signed_distance(self, x):
        d = self._edge_distance(x)
        return np.where(self.contains(x), d, -d)

    def ray_intervals(self, origin, v):
        o = np.asarray(origin, dtype=float)
        ts = []
        a, b = self._edges()
        for p, q in zip(a, b):
            e = q - p
            den = v[0] * (-e[1]) - v[1] * (-e[0])
            if den == 0:
                continue
            rhs = p - o
            t = (rhs[0] * (-e[1]) - rhs[1] * (-e[0])) / den
            s = (v[0] * rhs[1] - v[1] * rhs[0]) / den
            if t > 0 and -1e-14 <= s <= 1 + 1e-14:
                ts.append(t)
        return _sections_from_breakpoints(self, o, v, ts)

    def crossings(self, origin, V):
        o = np.asarray(origin, dtype=float)
        a, b = self._edges()
        e = b - a                                   # (E, 2)
        rhs = a - o                                 # (E, 2)
        den = V[:, None, 0] * (-e[None, :, 1]) + V[:, None, 1] * e[None, :, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            t = (rhs[None, :, 0] * (-e[None, :, 1]) + rhs[None, :, 1] * e[None, :, 0]) / den
            sp = (V[:, None, 0] * rhs[None, :, 1] - V[:, None, 1] * rhs[None, :, 0]) / den
        ok = (den != 0) & (sp >= -1e-14) & (sp <= 1 + 1e-14)
        return np.where(ok, t, np.nan)

    def bounding_box(self):
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


@dataclass(frozen=True, eq=False)
class StarPolygon(Polygon):
    """Polygon star-shaped about ``center``, with O(log n) membership.

    Vertices are reordered by polar angle about the center; each point is
    tested against the single edge facing it.
    """

    center: Optional[np.ndarray] = None

    def __post_init__(self):
        super().__post_init__()
        c = np.zeros(2) if self.center is None else np.asarray(self.center, dtype=float)
        rel = self.vertices - c
        ang = np.arctan2(rel[:, 1], rel[:, 0])
        order = np.argsort(ang)
        ang = ang[order]
        if np.any(np.diff(ang) <= 0) or np.any(np.linalg.norm(rel, axis=1) == 0):
            raise GeometryError("vertices are not star-shaped about the center")
        object.__setattr__(self, "vertices", self.vertices[order])
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "_angles", ang)

    def contains(self, x):
        x = _as_points(x)
        rel = x - self.center
        phi = np.arctan2(rel[..., 1], rel[..., 0])
        n = len(self.vertices)
        k = (np.searchsorted(self._angles, phi, side="right") - 1) % n
        a = self.vertices[k]
        b = self.vertices[(k + 1) % n]
        ab = b - a
        ax = x - a
        # counter-clockwise ordering puts the interior on the left of each edge
        return ab[..., 0] * ax[..., 1] - ab[..., 1] * ax[..., 0] > 0


def _ball_crossings(center, radius, origin, V):
    d = np.asarray(origin, dtype=float) - center
    a = np.einsum("kj,kj->k", V, V)
    b = V @ d
    c = float(d @ d) - radius**2
    disc = b * b - a * c
    ok = (disc > 0) & (a > 0)
    sq = np.sqrt(np.where(ok, disc, 0.0))
    q = -(b + np.copysign(sq, b))
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(ok, q / a, np.nan)
        t2 = np.where(ok & (q != 0), c / q, np.nan)
    return np.stack([t1, t2], axis=1)


def section_table(region: Region, origin, V):
    """Vectorized ray sections: segment endpoints and their membership.

    Returns ``(lo, hi, inside)`` each of shape (K, n): the rays
    ``origin + t V[k]`` are cut at every candidate crossing, and each
    segment is classified by the membership of its midpoint.
    """
    origin = np.asarray(origin, dtype=float)
    V = np.atleast_2d(np.asarray(V, dtype=float))
    T = region.crossings(origin, V)
    T = np.where(np.isfinite(T) & (T > 0), T, INF)
    T.sort(axis=1)
    # polygons pad every ray with one column per edge; keep only used columns
    T = T[:, : int(np.isfinite(T).any(axis=0).sum())]
    K = len(V)
    edges = np.concatenate([np.zeros((K, 1)), T, np.full((K, 1), INF)], axis=1)
    lo, hi = edges[:, :-1], edges[:, 1:]
    with np.errstate(invalid="ignore"):
        mid = np.where(np.isfinite(hi), 0.5 * (lo + hi), 2.0 * (lo + 1.0))
    valid = hi > lo
    mid = np.where(valid, mid, 1.0)
    pts = origin + mid[..., None] * V[:, None, :]
    inside = region.contains(pts) & valid
    return lo, hi, inside


def _sections_from_breakpoints(region, origin, v, ts):
    """Intervals between sorted crossing parameters, classified by midpoints."""
    pts = sorted(set(float(t) for t in ts if t > 0))
    edges = [0.0] + pts + [INF]
    mids = []
    for a, b in zip(edges[:-1], edges[1:]):
        mids.append(0.5 * (a + b) if b < INF else (a + 1.0) * 2.0)
    inside = region.contains(origin + np.outer(mids, v))
    return merge_intervals([(a, b) for a, b, ok in zip(edges[:-1], edges[1:], inside) if ok])


@dataclass(frozen=True, eq=False)
class LevelSet(Region):
    """Sublevel set {x : V(x) < level} inside a bounding box.

    ``func`` maps points of shape (..., d) to values of shape (...).  The
    signed distance is the first-order estimate (level - V)/‖∇V‖, accurate
    to O(distance²) near the boundary.
    """

    func: Callable
    level: float
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))

    @property
    def dim(self):
        return self.lower.size

    def _in_box(self, x):
        return np.all((x > self.lower) & (x < self.upper), axis=-1)

    def contains(self, x):
        x = _as_points(x)
        return (np.asarray(self.func(x)) < self.level) & self._in_box(x)

    def signed_distance(self, x):
        x = _as_points(x)
        h = 1e-6 * max(1.0, float(np.max(np.abs(self.upper - self.lower))))
        grad = np.stack([
            (self.func(x + h * e) - self.func(x - h * e)) / (2 * h)
            for e in np.eye(self.dim)
        ], axis=-1)
        g = np.linalg.norm(grad, axis=-1)
        return (self.level - self.func(x)) / np.maximum(g, 1e-300)

    def ray_intervals(self, origin, v):
        scale = float(np.linalg.norm(self.upper - self.lower)) / max(float(np.linalg.norm(v)), 1e-300)
        return numeric_ray_intervals(lambda t: self.contains(origin + np.outer(t, v)), scale)

    def bounding_box(self):
        return self.lower, self.upper


@dataclass(frozen=True, eq=False)
class Complement(Region):
    inner: Region

    @property
    def dim(self):
        return self.inner.dim

    def contains(self, x):
        return ~self.inner.contains(x)

    def signed_distance(self, x):
        return -self.inner.signed_distance(x)

    def ray_intervals(self, origin, v):
        return complement_intervals(self.inner.ray_intervals(origin, v))

    def crossings(self, origin, V):
        return self.inner.crossings(origin, V)


@dataclass(frozen=True, eq=False)
class Intersection(Region):
    parts: tuple

    @property
    def dim(self):
        return self.parts[0].dim

    def contains(self, x):
        out = self.parts[0].contains(x)
        for p in self.parts[1:]:
            out = out & p.contains(x)
        return out

    def signed_distance(self, x):
        return np.min([p.signed_distance(x) for p in self.parts], axis=0)

    def ray_intervals(self, origin, v):
        out = self.parts[0].ray_intervals(origin, v)
        for p in self.parts[1:]:
            out = intersect_intervals(out, p.ray_intervals(origin, v))
        return out

    def crossings(self, origin, V):
        return np.concatenate([p.crossings(origin, V) for p in self.parts], axis=1)

    def bounding_box(self):
        boxes = []
        for p in self.parts:
            try:
                boxes.append(p.bounding_box())
            except GeometryError:
                pass
        if not boxes:
            raise GeometryError("intersection of unbounded regions")
        return np.max([b[0] for b in boxes], axis=0), np.min([b[1] for b in boxes], axis=0)


@dataclass(frozen=True, eq=False)
class Union(Region):
    parts: tuple

    @property
    def dim(self):
        return self.parts[0].dim

    def contains(self, x):
        out = self.parts[0].contains(x)
        for p in self.parts[1:]:
            out = out | p.contains(x)
        return out

    def signed_distance(self, x):
        return np.max([p.signed_distance(x) for p in self.parts], axis=0)

    def ray_intervals(self, origin, v):
        out = []
        for p in self.parts:
            out.extend(p.ray_intervals(origin, v))
        return merge_intervals(out)

    def crossings(self, origin, V):
        return np.concatenate([p.crossings(origin, V) for p in self.parts], axis=1)


def numeric_ray_intervals(member: Callable, scale: float = 1.0,
                          per_decade: int = GRID_PER_DECADE,
                          decades=GRID_DECADES, rtol: float = BISECT_RTOL):
    """Intervals of ``{t > 0 : member(t)}`` from a log grid plus bisection.

    ``member`` takes an array of parameters and returns booleans.  Changes
    of membership between neighbouring grid points are refined by bisection
    to relative tolerance ``rtol``.  Membership at the innermost grid point
    is reported as an interval starting at 0.
    """
    lo, hi = decades
    n = (hi - lo) * per_decade + 1
    t = scale * np.logspace(lo, hi, n)
    ins = np.asarray(member(t), dtype=bool)
    flips = np.nonzero(ins[1:] != ins[:-1])[0]
    cuts = []
    for k in flips:
        a, b = t[k], t[k + 1]
        ia = ins[k]
        while (b - a) > rtol * b:
            m = 0.5 * (a + b)
            if bool(member(np.array([m]))[0]) == ia:
                a = m
            else:
                b = m
        cuts.append(0.5 * (a + b))
    out, start = [], (0.0 if ins[0] else None)
    for c, k in zip(cuts, flips):
        if start is None:
            start = c
        else:
            out.append((start, c))
            start = None
    if start is not None:
        out.append((start, INF))
    return out


# --------------------------------------------------------------------------
# domains


@dataclass(frozen=True, eq=False)
class Domain:
    """A bounded open domain D; exits are points with ``contains == False``."""

    region: Region
    kind: str = "custom"

    @property
    def dim(self):
        return self.region.dim

    def contains(self, x):
        return self.region.contains(x)

    def signed_distance(self, x):
        return self.region.signed_distance(x)

    def bounding_box(self):
        return self.region.bounding_box()

    def exterior(self) -> Region:
        return Complement(self.region)

    def reduced(self, delta: float) -> "ReducedDomain":
        return ReducedDomain(self, delta)

    def offset(self, s: float) -> Optional[Region]:
        """{signed_distance > s} when the region supports exact offsets."""
        off = getattr(self.region, "offset", None)
        return None if off is None else off(s)


@dataclass(frozen=True, eq=False)
class ReducedDomain:
    """D_δ: points of D farther than δ from the boundary."""

    base: Domain
    delta: float

    def __post_init__(self):
        if not self.delta > 0:
            raise GeometryError("delta must be positive")

    def contains(self, x):
        return self.base.contains(x) & (self.base.signed_distance(x) >= self.delta)


def ball(center, radius) -> Domain:
    return Domain(Ball(center, radius), "ball")


def annulus(center, r_in, r_out) -> Domain:
    return Domain(Annulus(center, r_in, r_out), "annulus")


def polygon(vertices) -> Domain:
    return Domain(Polygon(vertices), "polygon")


def star_annulus(outer_vertices, r_in, center=(0.0, 0.0)) -> Domain:
    """Star polygon about ``center`` with the ball B_{r_in}(center) removed."""
    c = np.asarray(center, dtype=float)
    outer = StarPolygon(outer_vertices, c)
    if not bool(outer.contains(c)):
        raise GeometryError("center must lie inside the outer polygon")
    return Domain(Intersection((outer, Complement(Ball(c, r_in)))), "star_annulus")


def levelset(func, level, lower, upper) -> Domain:
    return Domain(LevelSet(func, level, lower, upper), "levelset")


def contains(dom, x):
    return dom.contains(x)


def signed_distance(dom, x):
    return dom.signed_distance(x)


# --------------------------------------------------------------------------
# ray sections in jump space


def ray_section(target: Region, origin, coupling, direction, scale: float = 1.0,
                check: bool = True):
    """{r > 0 : origin + G(origin, r u) ∈ target} as a list of intervals.

    Couplings linear in the jump (additive, Itô) give a straight ray in
    state space and an exact section.  Marcus couplings are handled by a
    log-grid bracketing search over r with bisection refinement.  With
    ``check`` a section starting at r = 0 raises :class:`InfiniteMassError`.
    """
    origin = np.asarray(origin, dtype=float)
    u = np.asarray(direction, dtype=float)
    if coupling.linear_in_jump:
        v = coupling.jump_increment(origin, u)
        sec = target.ray_intervals(origin, v)
    else:
        def member(r):
            z = np.outer(r, u)
            x = origin + coupling.jump_increment(np.broadcast_to(origin, (len(r), origin.size)), z)
            return target.contains(x)

        sec = numeric_ray_intervals(member, scale)
    if check and sec and sec[0][0] <= 0.0:
        raise InfiniteMassError(
            "target reachable by arbitrarily small jumps: mu-mass is infinite")
    return sec
