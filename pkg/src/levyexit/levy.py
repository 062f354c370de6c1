"""Regularly varying Lévy measures and the ε-dependent jump decomposition.

A :class:`LevyModel` describes a Lévy measure in product (polar) form

    ν(dr, du) = -dh(r) σ(du),    h(r) = c / (r^α ℓ(r)),

with tail function ``h``, a probability measure ``σ`` on the unit sphere and
a slowly varying factor ``ℓ`` (identically 1 unless supplied).  Its
regular-variation limit is the self-similar measure

    μ(dr, du) = α r^{-α-1} dr σ(du),

normalized by definition so that μ(complement of the unit ball) = 1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, optimize, special


class LevyError(ValueError):
    """Invalid Lévy model or decomposition."""


class InfiniteMassError(LevyError):
    """A set reaching the origin of jump space has infinite μ-mass."""


class NoLargeJumpsError(LevyError):
    pass


# --------------------------------------------------------------------------
# angular (spectral) measures


class IsotropicSpectral:
    """Uniform probability measure on the unit sphere of R^dim."""

    symmetric = True

    def __init__(self, dim: int):
        if dim < 1:
            raise LevyError("dimension must be positive")
        self.dim = dim

    @property
    def mean_direction(self) -> np.ndarray:
        return np.zeros(self.dim)

    @property
    def second_moment(self) -> np.ndarray:
        return np.eye(self.dim) / self.dim

    @property
    def n_uniforms(self) -> int:
        # uniforms consumed per sampled direction
        if self.dim <= 2:
            return 1
        return 2 * ((self.dim + 1) // 2)

    def from_uniforms(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(u)
        if self.dim == 1:
            return np.where(u[:, :1] < 0.5, -1.0, 1.0)
        if self.dim == 2:
            ang = 2.0 * np.pi * u[:, 0]
            return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        rad = np.sqrt(-2.0 * np.log(u[:, 0::2]))
        ang = 2.0 * np.pi * u[:, 1::2]
        g = np.concatenate([rad * np.cos(ang), rad * np.sin(ang)], axis=-1)[:, : self.dim]
        return g / np.linalg.norm(g, axis=-1, keepdims=True)

    def quadrature(self, n: int):
        """Directions and weights integrating functions on the sphere.

        dim 1: the two points ±1.  dim 2: ``n`` equally spaced angles
        (periodic trapezoid rule).  dim 3: a Fibonacci lattice of ``n``
        points with equal weights.
        """
        if self.dim == 1:
            return np.array([[-1.0], [1.0]]), np.array([0.5, 0.5])
        if self.dim == 2:
            th = 2.0 * np.pi * (np.arange(n) + 0.5) / n
            return np.stack([np.cos(th), np.sin(th)], axis=-1), np.full(n, 1.0 / n)
        if self.dim == 3:
            i = np.arange(n) + 0.5
            zc = 1.0 - 2.0 * i / n
            phi = np.pi * (1.0 + 5**0.5) * i
            r = np.sqrt(1.0 - zc**2)
            dirs = np.stack([r * np.cos(phi), r * np.sin(phi), zc], axis=-1)
            return dirs, np.full(n, 1.0 / n)
        raise LevyError("isotropic quadrature implemented for dim <= 3 only")

    def __repr__(self):
        return f"IsotropicSpectral(dim={self.dim})"


class DiscreteSpectral:
    """Finitely many directions with nonnegative weights summing to one."""

    def __init__(self, directions, weights):
        d = np.atleast_2d(np.asarray(directions, dtype=float))
        w = np.asarray(weights, dtype=float)
        if d.shape[0] != w.size:
            raise LevyError("one weight per direction required")
        if np.any(w < 0):
            raise LevyError("spectral weights must be nonnegative")
        if abs(w.sum() - 1.0) > 1e-12:
            raise LevyError(f"spectral weights sum to {w.sum()!r}, not 1")
        norms = np.linalg.norm(d, axis=-1)
        if np.any(norms == 0):
            raise LevyError("zero direction")
        self.directions = d / norms[:, None]
        self.weights = w
        self.dim = d.shape[1]
        self._cdf = np.cumsum(w)
        self._cdf[-1] = 1.0

    @property
    def symmetric(self) -> bool:
        return bool(np.allclose(self.mean_direction, 0.0, atol=1e-14))

    @property
    def mean_direction(self) -> np.ndarray:
        return self.weights @ self.directions

    @property
    def second_moment(self) -> np.ndarray:
        return np.einsum("k,ki,kj->ij", self.weights, self.directions, self.directions)

    n_uniforms = 1

    def from_uniforms(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(u)
        idx = np.searchsorted(self._cdf, u[:, 0], side="right")
        return self.directions[np.minimum(idx, len(self.weights) - 1)]

    def quadrature(self, n: int = 0):
        return self.directions, self.weights

    def __repr__(self):
        return f"DiscreteSpectral(n={len(self.weights)}, dim={self.dim})"


# --------------------------------------------------------------------------
# the model


class LomaxCorrection:
    """ℓ(r) = ((1 + r) / r)^α, turning c r^{-α} into the Lomax tail c (1 + r)^{-α}."""

    def __init__(self, alpha: float):
        self.alpha = float(alpha)

    def __call__(self, r):
        return ((1.0 + r) / r) ** self.alpha

    def __repr__(self):
        return f"LomaxCorrection({self.alpha})"


def sphere_area(dim: int) -> float:
    """Surface area of the unit sphere in R^dim."""
    return 2.0 * math.pi ** (dim / 2) / special.gamma(dim / 2)


@dataclass(frozen=True)
class LevyModel:
    """Regularly varying Lévy measure with index ``alpha``.

    ``slowly_varying`` is ℓ in h(r) = tail_scale / (r^α ℓ(r)); None means
    ℓ ≡ 1.  ``drift`` is b and ``diffusion`` the diagonal of A in the
    Lévy-Itô decomposition; both default to zero.
    """

    alpha: float
    dim: int
    spectral: object = None
    tail_scale: float = 1.0
    slowly_varying: Optional[Callable[[float], float]] = None
    drift: Optional[np.ndarray] = None
    diffusion: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise LevyError("alpha must be positive")
        if not self.tail_scale > 0:
            raise LevyError("tail_scale must be positive")
        if self.spectral is None:
            object.__setattr__(self, "spectral", IsotropicSpectral(self.dim))
        if self.spectral.dim != self.dim:
            raise LevyError("spectral measure lives in the wrong dimension")
        for name in ("drift", "diffusion"):
            v = getattr(self, name)
            v = np.zeros(self.dim) if v is None else np.asarray(v, dtype=float)
            if v.shape != (self.dim,):
                raise LevyError(f"{name} must have length {self.dim}")
            object.__setattr__(self, name, v)
        if np.any(self.diffusion < 0):
            raise LevyError("diffusion diagonal must be nonnegative")

    @classmethod
    def isotropic_stable(cls, alpha: float, dim: int = 2, **kw) -> "LevyModel":
        """ν(dy) = dy / ‖y‖^{dim+α}, so h(r) = |S^{dim-1}| / (α r^α)."""
        return cls(alpha=alpha, dim=dim, spectral=IsotropicSpectral(dim),
                   tail_scale=sphere_area(dim) / alpha, **kw)

    @property
    def pure_power(self) -> bool:
        return self.slowly_varying is None

    # -- tail -------------------------------------------------------------

    def tail(self, r):
        """h(r) = ν(‖y‖ ≥ r), vectorized."""
        r = np.asarray(r, dtype=float)
        if np.any(~(r > 0)):
            raise LevyError("tail radius must be positive")
        out = self.tail_scale * r ** (-self.alpha)
        if self.slowly_varying is not None:
            out = out / np.vectorize(self.slowly_varying, otypes=[float])(r)
        return out

    def tail_inverse(self, mass):
        """Radius r with h(r) = mass (h is nonincreasing)."""
        mass = np.asarray(mass, dtype=float)
        if self.pure_power:
            return (self.tail_scale / mass) ** (1.0 / self.alpha)
        flat = mass.ravel()
        out = np.empty_like(flat)
        for i, m in enumerate(flat):
            g = lambda lr: math.log(float(self.tail(math.exp(lr)))) - math.log(m)
            lo, hi = -1.0, 1.0
            while g(lo) < 0:
                lo *= 2
            while g(hi) > 0:
                hi *= 2
            out[i] = math.exp(optimize.brentq(g, lo, hi, xtol=1e-14, rtol=1e-14))
        return out.reshape(mass.shape)

    def radial_moment(self, p: float, a: float, b: float) -> float:
        """∫_{a<r≤b} r^p (-dh(r)); ``a`` may be 0, ``b`` may be inf."""
        if b <= a:
            return 0.0
        al = self.alpha
        if self.pure_power:
            c = self.tail_scale * al
            if abs(p - al) < 1e-14:
                if a == 0 or math.isinf(b):
                    return math.inf
                return c * math.log(b / a)
            e = p - al
            if (a == 0 and e <= 0) or (math.isinf(b) and e >= 0):
                return math.inf
            lo = 0.0 if a == 0 else a**e
            hi = 0.0 if math.isinf(b) else b**e
            return c * (hi - lo) / e

        # -dh(r) = h(r) (α/r + ℓ'(r)/ℓ(r)) dr; differentiate h numerically
        def dens(r):
            step = 1e-6 * r
            return -(float(self.tail(r + step)) - float(self.tail(r - step))) / (2 * step)

        lo = a if a > 0 else 0.0
        val, _ = integrate.quad(lambda r: r**p * dens(r), lo if lo > 0 else 1e-300, b,
                                limit=200, epsabs=0.0, epsrel=1e-10)
        return val

    # -- directions and radii from uniforms -------------------------------

    def directions_from_uniforms(self, u):
        return self.spectral.from_uniforms(u)


def tail_mass(model: LevyModel, r: float) -> float:
    """h(r) = ν(‖y‖ ≥ r)."""
    if not r > 0:
        raise LevyError("tail_mass needs r > 0")
    return float(model.tail(r))


def interval_mu_mass(alpha: float, intervals: Sequence[tuple]) -> float:
    """∫ over radial intervals of α r^{-α-1} dr, in closed form."""
    tot = 0.0
    for a, b in intervals:
        if a <= 0:
            raise InfiniteMassError("radial section touches the origin of jump space")
        tot += a ** (-alpha) - (0.0 if math.isinf(b) else b ** (-alpha))
    return tot


def limit_measure(model: LevyModel, ray_section: Callable[[np.ndarray], list],
                  n_angles: int = 1024) -> float:
    """μ(E) for a set E given by its radial sections.

    ``ray_section(u)`` returns the intervals {r > 0 : r u ∈ E} for the unit
    direction ``u``.  The angular integral uses the model's spectral
    quadrature; the radial one is exact.
    """
    dirs, weights = model.spectral.quadrature(n_angles)
    total = 0.0
    for u, w in zip(dirs, weights):
        if w == 0:
            continue
        sec = ray_section(u)
        if sec:
            total += w * interval_mu_mass(model.alpha, sec)
    return total


# --------------------------------------------------------------------------
# ε-dependent decomposition


@dataclass(frozen=True)
class JumpDecomposition:
    """Split of εZ at the radius ρ^ε = ε^{-ρ} into large and small jumps.

    ``r_min`` is the inner cutoff of the simulated small-jump band: jumps in
    (r_min, ρ^ε] are simulated as compound Poisson, those below r_min are
    replaced by a Gaussian with matching covariance.
    """

    epsilon: float
    rho_exponent: float
    threshold: float
    beta: float
    drift_shift: np.ndarray
    r_min: float
    band_rate: float
    band_mean: np.ndarray = field(repr=False)
    small_cov: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, model: LevyModel, epsilon: float, rho: float = 0.25,
              r_min: Optional[float] = None, band_rate_cap: float = 10.0):
        if not 0 < epsilon < 1:
            raise LevyError("epsilon must lie in (0, 1)")
        if not 0 < rho < 0.5:
            raise LevyError("rho exponent must lie in (0, 1/2)")
        thr = epsilon ** (-rho)
        beta = float(model.tail(thr))
        m1 = model.radial_moment(1.0, 1.0, thr) if thr > 1 else -model.radial_moment(1.0, thr, 1.0)
        drift_shift = model.drift + m1 * model.spectral.mean_direction
        if r_min is None:
            r_min = min(epsilon**2, 0.01 * thr)
            # keep the band's jump intensity simulable
            if float(model.tail(r_min)) - beta > band_rate_cap:
                r_min = float(model.tail_inverse(beta + band_rate_cap))
        if not 0 < r_min < thr:
            raise LevyError("small-jump cutoff r_min must lie in (0, rho^eps)")
        band_rate = float(model.tail(r_min)) - beta
        band_mean = model.radial_moment(1.0, r_min, thr) * model.spectral.mean_direction
        m2 = model.radial_moment(2.0, 0.0, r_min)
        if not math.isfinite(m2):
            raise LevyError("small jumps have infinite variance (pure power tail needs alpha < 2)")
        small_cov = m2 * model.spectral.second_moment
        return cls(epsilon, rho, thr, beta, drift_shift, float(r_min), band_rate,
                   band_mean, small_cov)

    def band_radii_from_uniforms(self, model: LevyModel, u):
        """Radii distributed as ν restricted to (r_min, ρ^ε], normalized."""
        u = np.asarray(u, dtype=float)
        return model.tail_inverse(self.beta + u * self.band_rate)

    def large_radii_from_uniforms(self, model: LevyModel, u):
        """Radii distributed as ν restricted to ‖z‖ ≥ ρ^ε, normalized."""
        u = np.asarray(u, dtype=float)
        if model.pure_power:
            return self.threshold * u ** (-1.0 / model.alpha)
        return model.tail_inverse(u * self.beta)


def large_jumps_from_uniforms(decomp: JumpDecomposition, model: LevyModel, u):
    """Map uniforms of shape (n, 1 + spectral.n_uniforms) to jumps W ~ ν_ε."""
    u = np.atleast_2d(u)
    r = decomp.large_radii_from_uniforms(model, u[:, 0])
    return r[:, None] * model.spectral.from_uniforms(u[:, 1:])


def sample_large_jump(decomp: JumpDecomposition, model: LevyModel,
                      rng: np.random.Generator, size: Optional[int] = None):
    """Draw large jumps W ~ ν(· ∩ B^c_{ρ^ε}) / ν(B^c_{ρ^ε})."""
    if not decomp.beta > 0:
        raise NoLargeJumpsError("no large jumps: beta is zero")
    n = 1 if size is None else size
    u = rng.random((n, 1 + model.spectral.n_uniforms))
    u[u == 0.0] = np.finfo(float).tiny
    w = large_jumps_from_uniforms(decomp, model, u)
    return w[0] if size is None else w


def sample_waiting_time(decomp: JumpDecomposition, rng: np.random.Generator,
                        size: Optional[int] = None):
    """Exponential waiting time with rate β_ε between large jumps."""
    if not decomp.beta > 0:
        raise NoLargeJumpsError("no large jumps: beta is zero")
    n = 1 if size is None else size
    # -log(1-u) on [0,1) is strictly positive except at u=0, which rng.random can return
    t = -np.log1p(-rng.random(n)) / decomp.beta
    t[t <= 0] = np.finfo(float).tiny / decomp.beta
    return float(t[0]) if size is None else t


def poisson_from_uniforms(mean, u):
    """Inverse-CDF Poisson counts, vectorized over ``mean`` and ``u``."""
    mean = np.asarray(mean, dtype=float)
    u = np.asarray(u, dtype=float)
    mean, u = np.broadcast_arrays(mean, u)
    p = np.exp(-mean)
    cdf = p.copy()
    k = np.zeros(u.shape, dtype=np.int64)
    todo = u > cdf
    while np.any(todo):
        k[todo] += 1
        p = np.where(todo, p * mean / np.maximum(k, 1), p)
        cdf = np.where(todo, cdf + p, cdf)
        todo = todo & (u > cdf) & (p > 0)
    return k


def small_jump_increment(decomp: JumpDecomposition, model: LevyModel, dt: float,
                         rng: np.random.Generator) -> np.ndarray:
    """One increment of εξ^ε over ``dt``.

    Drift ε b_ε dt, Brownian part from A, compensated compound Poisson jumps
    with sizes in (r_min, ρ^ε], and a Gaussian with the covariance of the
    jumps below r_min.
    """
    if not dt > 0:
        raise LevyError("dt must be positive")
    m = model.dim
    out = decomp.drift_shift * dt - decomp.band_mean * dt
    cov = (decomp.small_cov + np.diag(model.diffusion)) * dt
    out = out + rng.multivariate_normal(np.zeros(m), cov, method="eigh") if np.any(cov) else out
    k = rng.poisson(decomp.band_rate * dt) if decomp.band_rate > 0 else 0
    if k:
        u = rng.random((k, 1 + model.spectral.n_uniforms))
        u[u == 0.0] = np.finfo(float).tiny
        r = decomp.band_radii_from_uniforms(model, u[:, 0])
        out = out + (r[:, None] * model.spectral.from_uniforms(u[:, 1:])).sum(axis=0)
    return decomp.epsilon * out
