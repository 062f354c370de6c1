"""Jump couplings x -> x + G(x, z) for additive, Itô and Marcus noise.

G is always the *increment*: the post-jump state is ``x + G(x, z)``.
For Itô noise G(x, z) = Φ(x) z; for Marcus (canonical) noise
G(x, z) = φ^z(x) - x with φ^z the time-one map of y' = Φ(y) z.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .dynamics import rk4_step


class CouplingError(ValueError):
    pass


class MarcusBlowUp(RuntimeError):
    def __init__(self, time):
        super().__init__(f"Marcus flow blew up at flow time {time:.6g}")
        self.time = time


# --------------------------------------------------------------------------
# matrix functions Φ(x), vectorized over leading axes of x


class ConstantMatrix:
    def __init__(self, matrix):
        self.matrix = np.atleast_2d(np.asarray(matrix, dtype=float))

    @property
    def shape(self):
        return self.matrix.shape

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(self.matrix, x.shape[:-1] + self.matrix.shape)

    def apply(self, x, z):
        return np.asarray(z, dtype=float) @ self.matrix.T

    constant = True


class DiagonalOfState:
    """Φ(x) = diag(offset + scale * x)  (square, d = m)."""

    def __init__(self, scale, offset=None):
        self.scale = np.asarray(scale, dtype=float)
        self.offset = np.zeros_like(self.scale) if offset is None else np.asarray(offset, dtype=float)
        d = self.scale.size
        self.shape = (d, d)

    def __call__(self, x):
        diag = self.offset + self.scale * np.asarray(x, dtype=float)
        return diag[..., :, None] * np.eye(self.shape[0])

    def apply(self, x, z):
        return (self.offset + self.scale * np.asarray(x, dtype=float)) * z

    constant = False


class MatrixFunction:
    """Arbitrary user Φ: callable mapping x (..., d) to (..., d, m)."""

    def __init__(self, func: Callable, shape):
        self.func = func
        self.shape = tuple(shape)

    def __call__(self, x):
        return self.func(x)

    def apply(self, x, z):
        return np.einsum("...ij,...j->...i", self.func(x), z)

    constant = False


def _as_matrix_function(phi):
    if phi is None or isinstance(phi, (ConstantMatrix, DiagonalOfState, MatrixFunction)):
        return phi
    if callable(phi):
        raise CouplingError("wrap callables in MatrixFunction(func, shape)")
    return ConstantMatrix(phi)


# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class JumpCoupling:
    """How a jump z in R^m moves the state x in R^d."""

    kind: str
    dim: int
    jump_dim: int
    phi: Optional[object] = None
    lipschitz: Optional[float] = None
    substeps: int = 64
    rtol: float = 1e-10
    max_substeps: int = 1 << 16

    def __post_init__(self):
        if self.kind not in ("additive", "ito", "marcus"):
            raise CouplingError(f"unknown coupling kind {self.kind!r}")
        object.__setattr__(self, "phi", _as_matrix_function(self.phi))
        if self.kind == "additive":
            if self.dim != self.jump_dim:
                raise CouplingError("additive coupling needs d = m")
        elif self.phi is None:
            raise CouplingError(f"{self.kind} coupling needs a matrix function Phi")
        elif tuple(self.phi.shape) != (self.dim, self.jump_dim):
            raise CouplingError(f"Phi has shape {self.phi.shape}, expected {(self.dim, self.jump_dim)}")

    @property
    def linear_in_jump(self) -> bool:
        return self.kind in ("additive", "ito")

    def jump_increment(self, x, z, *, substeps: Optional[int] = None, check: bool = True):
        return jump_increment(self, x, z, substeps=substeps, check=check)


def additive(dim: int) -> JumpCoupling:
    return JumpCoupling("additive", dim, dim)


def ito(phi, dim: Optional[int] = None, jump_dim: Optional[int] = None, **kw) -> JumpCoupling:
    phi = _as_matrix_function(phi)
    d, m = phi.shape
    return JumpCoupling("ito", dim or d, jump_dim or m, phi, **kw)


def marcus(phi, dim: Optional[int] = None, jump_dim: Optional[int] = None, **kw) -> JumpCoupling:
    phi = _as_matrix_function(phi)
    d, m = phi.shape
    return JumpCoupling("marcus", dim or d, jump_dim or m, phi, **kw)


def _marcus_flow(phi, x, z, n):
    h = 1.0 / n
    f = lambda y: phi.apply(y, z)
    y = x
    for i in range(n):
        y = rk4_step(f, y, h)
        if not np.all(np.isfinite(y)):
            raise MarcusBlowUp((i + 1) * h)
    return y


def jump_increment(c: JumpCoupling, x, z, *, substeps: Optional[int] = None,
                   check: bool = True):
    """G(x, z), vectorized over leading axes of x and z.

    Marcus increments integrate y' = Φ(y) z over unit time by RK4.  With
    ``check`` the substep count is doubled until two successive results
    agree to ``c.rtol`` relative; without it a single pass with
    ``substeps`` steps is made.
    """
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if c.kind == "additive":
        return np.broadcast_to(z, np.broadcast_shapes(x.shape, z.shape)).copy()
    if c.kind == "ito":
        return c.phi.apply(x, z)
    n = substeps or c.substeps
    y = _marcus_flow(c.phi, x, z, n)
    if not check:
        return y - x
    while True:
        n2 = 2 * n
        y2 = _marcus_flow(c.phi, x, z, n2)
        g1, g2 = y - x, y2 - x
        scale = np.maximum(np.linalg.norm(g2, axis=-1), 1e-300)
        if np.all(np.linalg.norm(g2 - g1, axis=-1) <= c.rtol * np.maximum(scale, 1.0)):
            return g2
        if n2 >= c.max_substeps:
            raise CouplingError("Marcus flow did not converge under substep doubling")
        n, y = n2, y2


@dataclass
class InverseMap:
    """δ -> z with G(x, z) = δ; ``singular`` marks the zero-map convention."""

    matrix: np.ndarray
    singular: bool = False

    def __call__(self, delta):
        return np.asarray(delta, dtype=float) @ self.matrix.T


def displacement_inverse(c: JumpCoupling, x) -> InverseMap:
    """Inverse of z -> G(x, z) for additive or square Itô couplings.

    A singular Φ(x) yields the zero map with ``singular=True``.
    """
    if c.kind == "additive":
        return InverseMap(np.eye(c.dim))
    if c.kind == "marcus":
        raise CouplingError("Marcus couplings have no closed-form inverse; use ray sections")
    if c.dim != c.jump_dim:
        raise CouplingError("inverse requires a square Phi")
    mat = np.asarray(c.phi(np.asarray(x, dtype=float)), dtype=float)
    if np.linalg.matrix_rank(mat) < c.dim:
        return InverseMap(np.zeros((c.jump_dim, c.dim)), singular=True)
    return InverseMap(np.linalg.inv(mat))


def lipschitz_ratios(c: JumpCoupling, xs, ys, ws):
    """Sampled ‖G(x,w) - G(y,w)‖ / (e^{L(‖w‖∧L)} ‖x - y‖).

    Values at most ``c.lipschitz`` mean the jump Lipschitz bound
    ‖G(x,w) - G(y,w)‖ ≤ L e^{L(‖w‖∧L)} ‖x - y‖ holds on the sample.
    """
    L = c.lipschitz if c.lipschitz is not None else 1.0
    gx = jump_increment(c, xs, ws)
    gy = jump_increment(c, ys, ws)
    num = np.linalg.norm(gx - gy, axis=-1)
    wn = np.minimum(np.linalg.norm(ws, axis=-1), L)
    den = np.exp(L * wn) * np.linalg.norm(np.asarray(xs) - np.asarray(ys), axis=-1)
    return num / den
