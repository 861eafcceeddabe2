"""Structured norms used as signal and corruption regularizers.

Two norms are provided: the l1 norm and the block (group) l1/l2 norm, which
sums the Euclidean norms of consecutive, non-overlapping blocks.  The l1 norm
is the block norm with block size one, so every derived quantity is written
once for blocks and shortcut for l1 where numpy makes that cheaper.

All array-valued operations that geometry estimators call in bulk
(``dist_to_scaled_subdiff``, ``dist_to_descent_cone`` and the projection
helpers) accept a stack of vectors with shape ``(..., dim)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .errors import DimensionMismatchError, InvalidSpecError

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


def soft_threshold(w, t):
    return np.sign(w) * np.maximum(np.abs(w) - t, 0.0)


def project_l1_ball(w, radius):
    """Euclidean projection of a 1-D array onto ``{u : ||u||_1 <= radius}``.

    Sort-and-threshold search for the shrinkage level.  Ties in the sorted
    magnitudes are broken by the (stable) sort order.
    """
    w = np.asarray(w, dtype=float)
    a = np.abs(w)
    if a.sum() <= radius:
        return w.copy()
    if radius == 0.0:
        return np.zeros_like(w)
    mu = np.sort(a, kind="stable")[::-1]
    css = np.cumsum(mu)
    k = np.arange(1, a.size + 1)
    # rounding can empty the candidate set for subnormal radii; k = 1 is then exact
    hits = np.nonzero(mu * k > css - radius)[0]
    rho = hits[-1] if hits.size else 0
    theta = (css[rho] - radius) / (rho + 1.0)
    return np.sign(w) * np.maximum(a - theta, 0.0)


@dataclass(frozen=True)
class SubdiffAnchor:
    """Point at which a subdifferential is taken, with its active pattern.

    ``support`` lists active block indices (coordinates for l1) and
    ``signs`` holds the matching unit directions, shape ``(len(support),
    block)``; for l1 these are the signs of the nonzero entries.
    """

    anchor: np.ndarray
    support: np.ndarray
    signs: np.ndarray

    @property
    def sparsity(self) -> int:
        return int(self.support.size)


@dataclass(frozen=True)
class Regularizer:
    """A block l1/l2 norm on R^dim; ``kind="l1"`` is the block-size-1 case."""

    kind: str
    dim: int
    block: int = 1
    _nblocks: int = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("l1", "block_l1l2"):
            raise InvalidSpecError(f"unknown regularizer kind {self.kind!r}")
        if self.kind == "l1" and self.block != 1:
            raise InvalidSpecError("l1 regularizer has block size 1")
        if self.dim < 1 or self.block < 1 or self.dim % self.block:
            raise InvalidSpecError(
                f"dim={self.dim} is not a positive multiple of block={self.block}"
            )
        object.__setattr__(self, "_nblocks", self.dim // self.block)

    # -- construction / serialization -------------------------------------

    @classmethod
    def from_config(cls, cfg: dict[str, Any]) -> "Regularizer":
        kind = cfg.get("kind")
        dim = int(cfg.get("dim", 0))
        if kind == "l1":
            return cls("l1", dim)
        return cls(str(kind), dim, int(cfg.get("block", 1)))

    def to_config(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind, "dim": self.dim}
        if self.kind == "block_l1l2":
            out["block"] = self.block
        return out

    @property
    def nblocks(self) -> int:
        return self._nblocks

    @property
    def is_l1(self) -> bool:
        return self.block == 1

    def _check(self, w) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.shape[-1:] != (self.dim,):
            raise DimensionMismatchError(
                f"expected trailing dimension {self.dim}, got shape {w.shape}"
            )
        return w

    def _blocks(self, w: np.ndarray) -> np.ndarray:
        return w.reshape(w.shape[:-1] + (self._nblocks, self.block))

    def block_norms(self, w) -> np.ndarray:
        w = self._check(w)
        if self.is_l1:
            return np.abs(w)
        return np.linalg.norm(self._blocks(w), axis=-1)

    # -- norm, dual, prox, projection --------------------------------------

    def value(self, w) -> float:
        return self.block_norms(w).sum(axis=-1)

    def dual_value(self, w) -> float:
        """Dual norm: l-infinity for l1, largest block l2 norm for blocks."""
        return self.block_norms(w).max(axis=-1)

    def dual_attaining(self, w) -> np.ndarray:
        """A point ``u`` with ``value(u) == 1`` and ``<w, u> == dual_value(w)``."""
        w = self._check(w)
        u = np.zeros(self.dim)
        norms = self.block_norms(w)
        j = int(np.argmax(norms))
        if norms[j] == 0.0:
            u[j * self.block] = 1.0
            return u
        sl = slice(j * self.block, (j + 1) * self.block)
        u[sl] = w[sl] / norms[j]
        return u

    def prox(self, w, t: float) -> np.ndarray:
        """argmin_u 0.5*||u - w||^2 + t*value(u)."""
        if t < 0:
            raise InvalidSpecError(f"prox parameter must be nonnegative, got {t}")
        w = self._check(w)
        if self.is_l1:
            return soft_threshold(w, t)
        wb = self._blocks(w)
        norms = np.linalg.norm(wb, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(norms > t, 1.0 - t / norms, 0.0)
        return (wb * scale).reshape(w.shape)

    def project_ball(self, w, radius: float) -> np.ndarray:
        """Euclidean projection onto ``{u : value(u) <= radius}``."""
        if radius < 0:
            raise InvalidSpecError(f"ball radius must be nonnegative, got {radius}")
        w = self._check(w)
        if self.is_l1:
            return project_l1_ball(w, radius)
        wb = self._blocks(w)
        norms = np.linalg.norm(wb, axis=-1)
        target = project_l1_ball(norms, radius)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(norms > 0, target / norms, 0.0)
        return (wb * scale[:, None]).reshape(w.shape)

    def project_dual_ball(self, w, radius: float = 1.0) -> np.ndarray:
        w = self._check(w)
        if self.is_l1:
            return np.clip(w, -radius, radius)
        wb = self._blocks(w)
        norms = np.linalg.norm(wb, axis=-1, keepdims=True)
        scale = radius / np.maximum(norms, radius)
        return (wb * scale).reshape(w.shape)

    def compatibility_alpha(self) -> float:
        """sup_{u != 0} value(u) / ||u||_2."""
        return float(np.sqrt(self._nblocks))

    def ball_radius_r(self) -> float:
        """Largest Euclidean norm on the unit ball of this norm."""
        return 1.0

    # -- subdifferential geometry ------------------------------------------

    def anchor(self, x, tol: float = 0.0) -> SubdiffAnchor:
        """Subdifferential anchor at ``x``; blocks with norm <= tol are zeroed."""
        x = self._check(x).copy()
        norms = self.block_norms(x)
        xb = self._blocks(x)
        xb[norms <= tol] = 0.0
        support = np.flatnonzero(norms > tol)
        signs = xb[support] / norms[support, None]
        return SubdiffAnchor(x, support, signs)

    def _validate_anchor(self, anchor: SubdiffAnchor) -> None:
        x = self._check(anchor.anchor)
        norms = self.block_norms(x)
        support = np.asarray(anchor.support)
        if not np.array_equal(np.sort(support), np.flatnonzero(norms > 0)):
            raise InvalidSpecError("anchor support disagrees with its nonzero pattern")
        signs = np.asarray(anchor.signs, dtype=float)
        if signs.size != support.size * self.block:
            raise InvalidSpecError("anchor signs do not match the support size")
        if support.size:
            dirs = self._blocks(x)[support] / norms[support, None]
            if not np.allclose(dirs, signs.reshape(dirs.shape), atol=1e-9):
                raise InvalidSpecError("anchor signs disagree with the anchor vector")

    def _direction_field(self, anchor: SubdiffAnchor) -> tuple[np.ndarray, np.ndarray]:
        self._validate_anchor(anchor)
        active = np.zeros(self._nblocks, dtype=bool)
        active[anchor.support] = True
        dirs = np.zeros((self._nblocks, self.block))
        dirs[anchor.support] = np.asarray(anchor.signs, dtype=float).reshape(-1, self.block)
        return active, dirs

    def _sq_dist_scaled(self, gb, tau, active, dirs):
        # gb: (..., nb, B); tau broadcastable to gb.shape[:-2]
        tau = np.asarray(tau, dtype=float)[..., None]
        on = ((gb - tau[..., None] * dirs) ** 2).sum(axis=-1)
        off = np.maximum(np.linalg.norm(gb, axis=-1) - tau, 0.0) ** 2
        return np.where(active, on, off).sum(axis=-1)

    def dist_to_scaled_subdiff(self, gauss, tau, anchor: SubdiffAnchor):
        """Euclidean distance from ``gauss`` to ``tau * subdiff(anchor)``."""
        if np.any(np.asarray(tau) < 0):
            raise InvalidSpecError("tau must be nonnegative")
        g = self._check(gauss)
        active, dirs = self._direction_field(anchor)
        return np.sqrt(self._sq_dist_scaled(self._blocks(g), tau, active, dirs))

    def project_scaled_subdiff(self, gauss, tau: float, anchor: SubdiffAnchor) -> np.ndarray:
        """Nearest point to ``gauss`` in ``tau * subdiff(anchor)``."""
        g = self._check(gauss)
        active, dirs = self._direction_field(anchor)
        gb = self._blocks(g)
        norms = np.linalg.norm(gb, axis=-1, keepdims=True)
        clipped = gb * (tau / np.maximum(norms, tau)) if tau > 0 else np.zeros_like(gb)
        out = np.where(active[:, None], tau * dirs, clipped)
        return out.reshape(g.shape)

    def optimal_tau(self, gauss, anchor: SubdiffAnchor, tol: float = 1e-8):
        """Scale(s) tau >= 0 minimising the distance to ``tau * subdiff``.

        Golden-section search on the convex map tau -> dist^2, bracket
        ``[0, 10 * max block norm]`` grown while the minimum sits at the
        right edge.  Works row-wise on stacked inputs.
        """
        g = self._check(gauss)
        active, dirs = self._direction_field(anchor)
        gb = self._blocks(g)
        batch = g.shape[:-1]

        def obj(t):
            return self._sq_dist_scaled(gb, t, active, dirs)

        lo = np.zeros(batch)
        hi = 10.0 * np.linalg.norm(gb, axis=-1).max(axis=-1) + 1.0
        hi = np.broadcast_to(hi, batch).astype(float)
        for _ in range(60):
            at_edge = obj(hi) < obj(hi * (1.0 - 1e-6))
            if not np.any(at_edge):
                break
            hi = np.where(at_edge, 2.0 * hi, hi)

        a, b = lo.copy(), hi.copy()
        c = b - _GOLDEN * (b - a)
        d = a + _GOLDEN * (b - a)
        fc, fd = obj(c), obj(d)
        while np.max(b - a) > tol:
            left = fc <= fd
            b = np.where(left, d, b)
            a = np.where(left, a, c)
            new_c = b - _GOLDEN * (b - a)
            new_d = a + _GOLDEN * (b - a)
            c_next = np.where(left, new_c, d)
            d_next = np.where(left, c, new_d)
            fc_next = np.where(left, obj(new_c), fd)
            fd_next = np.where(left, fc, obj(new_d))
            c, d, fc, fd = c_next, d_next, fc_next, fd_next
        t = 0.5 * (a + b)
        # the minimum may sit exactly at tau = 0
        return np.where(obj(np.zeros(batch)) <= obj(t), 0.0, t)

    def dist_to_descent_cone(self, gauss, anchor: SubdiffAnchor):
        """Distance from ``gauss`` to the cone generated by subdiff(anchor).

        By the polar decomposition this equals the norm of the projection of
        ``gauss`` onto the tangent (descent) cone of the norm at the anchor.
        """
        g = self._check(gauss)
        tau = self.optimal_tau(g, anchor)
        return self.dist_to_scaled_subdiff(g, tau, anchor)

    def project_tangent_cone(self, gauss, anchor: SubdiffAnchor) -> np.ndarray:
        """Projection onto the closed descent cone at the anchor (1-D input)."""
        g = self._check(gauss)
        if g.ndim != 1:
            raise DimensionMismatchError("project_tangent_cone takes a single vector")
        tau = float(self.optimal_tau(g, anchor))
        return g - self.project_scaled_subdiff(g, tau, anchor)

    def descent_derivative(self, direction, anchor: SubdiffAnchor):
        """One-sided directional derivative of the norm at the anchor.

        Equals the support function of the subdifferential:
        sum of <d_B, a_B> over active blocks plus ||a_B|| over inactive ones.
        """
        a = self._check(direction)
        active, dirs = self._direction_field(anchor)
        ab = self._blocks(a)
        on = (ab * dirs).sum(axis=-1)
        off = np.linalg.norm(ab, axis=-1)
        return np.where(active, on, off).sum(axis=-1)


def make_regularizer(kind: str, dim: int, block: int = 1) -> Regularizer:
    if kind in ("block", "block-l1l2", "block_l1l2"):
        return Regularizer("block_l1l2", dim, block)
    return Regularizer(kind, dim, block)
