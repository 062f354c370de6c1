"""First-exit Monte Carlo for  dX = f(X) dt + jumps G(X-, ε dZ).

Paths follow the ε-dependent Lévy-Itô split: between large-jump epochs
(exponential waiting times with rate β_ε) the state follows the
deterministic flow, optionally perturbed by the small-jump noise εξ^ε, and
at each epoch the large jump x -> x + G(x, εW) is applied.  Exits during
the continuous motion are located by bisection on the step; exits at
jump epochs are recorded as such.

Many paths advance together as numpy arrays, but every random number is
drawn from the path's own counter-based stream, so a path's record does
not depend on batch size, chunking or worker count.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from . import rng as crng
from .coupling import jump_increment
from .dynamics import rk4_step
from .stats import ks_exponential, location_fraction
from .levy import JumpDecomposition, LevyModel, large_jumps_from_uniforms, poisson_from_uniforms

SMALL_NOISE_MODES = ("off", "compound+gaussian")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    eps: float
    gamma: float = 0.1
    rho: float = 0.25
    ode_step: float = 0.01
    small_noise: str = "compound+gaussian"
    t_max: float = 50.0
    n_paths: int = 1000
    base_seed: int = 0
    r_min: Optional[float] = None
    band_rate_cap: float = 10.0
    crossing_tol: float = 1e-8
    chunk_size: int = 5000

    def __post_init__(self):
        validate_regime(self.eps, self.gamma, self.rho)
        if self.small_noise not in SMALL_NOISE_MODES:
            raise ConfigError(f"small_noise must be one of {SMALL_NOISE_MODES}")
        if not self.ode_step > 0:
            raise ConfigError("ode_step must be positive")
        if not self.t_max > 0:
            raise ConfigError("t_max must be positive")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be >= 1")

    @property
    def delta(self) -> float:
        """Start-point inset ε^γ."""
        return self.eps**self.gamma


def validate_regime(eps: float, gamma: float, rho: float):
    """Parameter regime of the exit theorem and its proof."""
    if not 0 < eps < 1:
        raise ConfigError(f"eps={eps} outside (0, 1)")
    if not 0 < gamma < 0.2:
        raise ConfigError(f"gamma={gamma} outside (0, 1/5)")
    if not 0 < rho < 0.5:
        raise ConfigError(f"rho={rho} outside (0, 1/2)")
    if not 1 - rho - 2.5 * gamma > 0:
        raise ConfigError(f"1 - rho - 5/2 gamma = {1 - rho - 2.5 * gamma:.3g} must be positive")


@dataclass
class ExitRecord:
    path_id: int
    exit_time: float
    exit_point: np.ndarray
    exited_at_jump: bool
    n_large_jumps: int
    truncated: bool = False
    error: Optional[str] = None

    @property
    def usable(self) -> bool:
        """Exited normally: neither truncated nor failed."""
        return not self.truncated and self.error is None


@dataclass
class Scenario:
    """Everything a run needs besides the numerical settings."""

    field: object
    domain: object
    coupling: object
    model: LevyModel
    x0: np.ndarray
    rate: Optional[float] = None
    targets: Dict[str, object] = field(default_factory=dict)
    name: str = "scenario"


# --------------------------------------------------------------------------
# the batch engine


class _SmallNoise:
    """Vectorized small-jump increments εξ^ε over per-path step lengths."""

    def __init__(self, decomp: JumpDecomposition, model: LevyModel):
        self.d = decomp
        self.model = model
        m = model.dim
        cov = decomp.small_cov + np.diag(model.diffusion)
        vals, vecs = np.linalg.eigh(cov)
        self.sqrt_cov = vecs * np.sqrt(np.clip(vals, 0.0, None))
        self.drift = decomp.drift_shift - decomp.band_mean
        self.n_norm = 2 * ((m + 1) // 2)
        self.base_blocks = (1 + self.n_norm + 1) // 2
        self.per_jump = 1 + model.spectral.n_uniforms
        self.blocks_per_jump = (self.per_jump + 1) // 2

    def __call__(self, streams, ids, steps, h):
        m = self.model.dim
        u = streams.uniforms(ids, crng.NOISE, steps, 1 + self.n_norm)
        uu = u[:, 1:]
        rad = np.sqrt(-2.0 * np.log(uu[:, 0::2]))
        ang = 2.0 * np.pi * uu[:, 1::2]
        z = np.empty((len(ids), self.n_norm))
        z[:, 0::2] = rad * np.cos(ang)
        z[:, 1::2] = rad * np.sin(ang)
        inc = self.drift * h[:, None] + np.sqrt(h)[:, None] * (z[:, :m] @ self.sqrt_cov.T)
        if self.d.band_rate > 0:
            k = poisson_from_uniforms(self.d.band_rate * h, u[:, 0])
            for j in range(int(k.max(initial=0))):
                sel = np.nonzero(k > j)[0]
                uj = streams.uniforms(ids[sel], crng.NOISE, steps[sel], self.per_jump,
                                      block0=self.base_blocks + j * self.blocks_per_jump)
                r = self.d.band_radii_from_uniforms(self.model, uj[:, 0])
                inc[sel] += r[:, None] * self.model.spectral.from_uniforms(uj[:, 1:])
        return self.d.epsilon * inc


def _waiting(streams, ids, index, beta):
    u = streams.uniforms(ids, crng.WAIT, index, 1)[:, 0]
    return -np.log(u) / beta


def _large_jumps(streams, ids, index, decomp, model):
    u = streams.uniforms(ids, crng.JUMP, index, 1 + model.spectral.n_uniforms)
    return large_jumps_from_uniforms(decomp, model, u)


def simulate_batch(cfg: SimConfig, field, dom, coupling, model: LevyModel,
                   decomp: JumpDecomposition, x0, path_ids, seed: int,
                   horizon: float) -> List[ExitRecord]:
    """Simulate the paths ``path_ids`` of stream family ``seed`` to exit.

    Paths still inside at time ``horizon`` are returned as truncated.
    """
    streams = crng.CounterStreams(seed)
    ids_all = np.asarray(path_ids, dtype=np.int64)
    N = ids_all.size
    x0 = np.asarray(x0, dtype=float)
    d = x0.size
    eps = decomp.epsilon
    noise = _SmallNoise(decomp, model) if cfg.small_noise != "off" else None
    dt = cfg.ode_step

    res_t = np.full(N, np.nan)
    res_x = np.full((N, d), np.nan)
    res_jump = np.zeros(N, dtype=bool)
    res_trunc = np.zeros(N, dtype=bool)
    res_nj = np.zeros(N, dtype=np.int64)
    res_err: Dict[int, str] = {}

    act = np.arange(N)
    ids = ids_all.astype(np.uint64)
    x = np.tile(x0, (N, 1))
    t = np.zeros(N)
    nj = np.zeros(N, dtype=np.int64)
    steps = np.zeros(N, dtype=np.int64)
    t_next = _waiting(streams, ids, nj, decomp.beta)

    def finish(mask, times, pts, at_jump=False, truncated=False):
        idx = act[mask]
        res_t[idx] = times[mask]
        res_x[idx] = pts[mask]
        res_jump[idx] = at_jump
        res_trunc[idx] = truncated
        # the exiting jump itself is not counted
        res_nj[idx] = nj[mask] - int(at_jump)

    while act.size:
        to_jump = t_next - t
        to_end = horizon - t
        h = np.minimum(dt, np.minimum(to_jump, to_end))
        hits_jump = (to_jump <= dt) & (to_jump <= to_end)
        hits_end = (to_end <= dt) & ~hits_jump

        xn = rk4_step(field, x, h)
        inc = None
        if noise is not None:
            dxi = noise(streams, ids, steps, h)
            inc = jump_increment(coupling, x, dxi, substeps=8, check=False)
            xn = xn + inc
        done = np.zeros(act.size, dtype=bool)

        bad = ~np.all(np.isfinite(xn), axis=1)
        if np.any(bad):
            for i in np.nonzero(bad)[0]:
                res_err[int(act[i])] = f"flow blew up at t={t[i] + h[i]:.6g}"
            finish(bad, t + h, xn)
            done |= bad

        out = ~dom.contains(xn) & ~done
        if np.any(out):
            sel = np.nonzero(out)[0]
            s_hi = _bisect_crossing(field, dom, x[sel], h[sel], None if inc is None else inc[sel],
                                    cfg.crossing_tol)
            pts = rk4_step(field, x[sel], s_hi)
            if inc is not None:
                pts = pts + (s_hi / h[sel])[:, None] * inc[sel]
            tt = t.copy()
            xx = xn.copy()
            tt[sel] = t[sel] + s_hi
            xx[sel] = pts
            finish(out, tt, xx)
            done |= out

        t = np.where(hits_jump, t_next, t + h)
        x = xn
        steps += 1

        jmp = hits_jump & ~done
        if np.any(jmp):
            sel = np.nonzero(jmp)[0]
            W = _large_jumps(streams, ids[sel], nj[sel], decomp, model)
            x[sel] = x[sel] + jump_increment(coupling, x[sel], eps * W)
            nj[sel] += 1
            left = np.zeros(act.size, dtype=bool)
            left[sel] = ~dom.contains(x[sel])
            if np.any(left):
                finish(left, t, x, at_jump=True)
                done |= left
            stay = sel[~left[sel]]
            t_next[stay] = t[stay] + _waiting(streams, ids[stay], nj[stay], decomp.beta)

        trunc = hits_end & ~done
        if np.any(trunc):
            finish(trunc, t, x, truncated=True)
            done |= trunc

        if np.any(done):
            keep = ~done
            act, ids, x, t, nj, steps, t_next = (
                a[keep] for a in (act, ids, x, t, nj, steps, t_next))

    return [
        ExitRecord(int(ids_all[i]), float(res_t[i]), res_x[i].copy(), bool(res_jump[i]),
                   int(res_nj[i]), bool(res_trunc[i]), res_err.get(i))
        for i in range(N)
    ]


def _bisect_crossing(field, dom, x, h, inc, tol):
    """Sub-step length at which the step from ``x`` first leaves D."""
    lo = np.zeros_like(h)
    hi = h.copy()
    while np.any(hi - lo > tol):
        mid = 0.5 * (lo + hi)
        y = rk4_step(field, x, mid)
        if inc is not None:
            y = y + (mid / h)[:, None] * inc
        inside = dom.contains(y)
        lo = np.where(inside, mid, lo)
        hi = np.where(inside, hi, mid)
    return hi


def simulate_path(cfg: SimConfig, field, dom, coupling, model: LevyModel,
                  decomp: JumpDecomposition, x0, rng: crng.PathStream,
                  horizon: float) -> ExitRecord:
    """One path on its own stream ``rng``; identical to its batch record."""
    return simulate_batch(cfg, field, dom, coupling, model, decomp, x0,
                          [rng.path_id], rng.family.seed, horizon)[0]


# --------------------------------------------------------------------------
# experiments


@dataclass
class Experiment:
    records: List[ExitRecord]
    summary: dict
    decomp: JumpDecomposition
    horizon: float


def _chunk_worker(args):
    cfg, scen, decomp, ids, seed, horizon = args
    return simulate_batch(cfg, scen.field, scen.domain, scen.coupling, scen.model, decomp,
                          scen.x0, ids, seed, horizon)


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get("LEVYEXIT_WORKERS", "1")))
    except ValueError:
        return 1


def run_experiment(cfg: SimConfig, scenario: Scenario, workers: Optional[int] = None,
                   ks_level: float = 0.01) -> Experiment:
    """Run ``cfg.n_paths`` paths with streams stream(base_seed, path_id)."""
    if scenario.rate is None or not scenario.rate > 0:
        raise ConfigError("scenario needs the predicted exit rate (time normalization)")
    if not bool(scenario.domain.reduced(cfg.delta).contains(scenario.x0)):
        raise ConfigError(f"start point not in the reduced domain D_delta, delta={cfg.delta:.4g}")
    decomp = JumpDecomposition.build(scenario.model, cfg.eps, cfg.rho, cfg.r_min,
                                     cfg.band_rate_cap)
    horizon = cfg.t_max / scenario.rate
    chunks = [np.arange(a, min(a + cfg.chunk_size, cfg.n_paths))
              for a in range(0, cfg.n_paths, cfg.chunk_size)]
    jobs = [(cfg, scenario, decomp, c, cfg.base_seed, horizon) for c in chunks]
    workers = default_workers() if workers is None else workers
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(_chunk_worker, jobs))
    else:
        parts = [_chunk_worker(j) for j in jobs]
    records = [r for p in parts for r in p]
    summary = summarize(records, scenario, ks_level)
    summary["decomposition"] = {
        "threshold": decomp.threshold, "beta": decomp.beta, "r_min": decomp.r_min,
        "band_rate": decomp.band_rate, "horizon": horizon,
    }
    return Experiment(records, summary, decomp, horizon)


def summarize(records: List[ExitRecord], scenario: Scenario, ks_level: float = 0.01) -> dict:
    n = len(records)
    good = [r for r in records if r.usable]
    n_trunc = sum(r.truncated for r in records)
    warn = []
    if n_trunc > 0.1 * n:
        warn.append(f"{n_trunc} of {n} paths truncated (>10%): rate prediction unreliable")
    errors = sum(r.error is not None for r in records)
    if errors:
        warn.append(f"{errors} paths hit a numerical blow-up")
    times = np.array([r.exit_time for r in good])
    norm = scenario.rate * times
    out = {
        "n": n,
        "n_exited": len(good),
        "continuous_exit_fraction": None,
        "n_truncated": n_trunc,
        "truncated_fraction": n_trunc / n if n else 0.0,
        "n_errors": errors,
    }
    if len(good):
        out.update({
            "mean_exit_time": float(times.mean()),
            "var_exit_time": float(times.var(ddof=1)) if len(good) > 1 else 0.0,
            "mean_norm": float(norm.mean()),
            "se_norm": float(norm.std(ddof=1) / math.sqrt(len(good))) if len(good) > 1 else math.nan,
            "median_over_mean": float(np.median(norm) / norm.mean()),
            "jump_exit_fraction": float(np.mean([r.exited_at_jump for r in good])),
            "continuous_exit_fraction": float(np.mean([not r.exited_at_jump for r in good])),
            "mean_large_jumps": float(np.mean([r.n_large_jumps for r in good])),
        })
        if len(good) >= 8:
            out["ks"] = ks_exponential(norm, 1.0, level=ks_level).to_dict()
        locs = {}
        for name, U in scenario.targets.items():
            frac, k = location_fraction(good, U)
            locs[name] = {"fraction": frac, "count": k}
        out["locations"] = locs
    out["warnings"] = warn
    return out
