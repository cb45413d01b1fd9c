"""
GPND — Decoder Linearization
Numerical Jacobian of the decoder at a latent point, its thin SVD, and the
split of a test sample into tangent and orthogonal coordinates.

The orthogonal complement U_perp is never formed: only the norm of the
orthogonal component is needed, and it follows from Pythagoras.
"""

import logging
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from gpnd.config import JACOBIAN_STEP, RANK_TOLERANCE
from gpnd.errors import DimensionError, NumericError
from gpnd.nn import DenseNetwork, forward

log = logging.getLogger(__name__)

Decoder = DenseNetwork | Callable[[np.ndarray], np.ndarray]


class ThinSvd(NamedTuple):
    u_par: np.ndarray       # (m, n), orthonormal columns
    s: np.ndarray           # (n,), descending, floored when degenerate
    v: np.ndarray           # (n, n), orthogonal
    degenerate: bool


@dataclass(frozen=True, eq=False)
class TangentDecomposition:
    u_par: np.ndarray
    s: np.ndarray
    v: np.ndarray
    z_bar: np.ndarray
    x_par: np.ndarray       # f(z_bar)
    degenerate: bool = False


class LocalCoordinates(NamedTuple):
    w_par: np.ndarray       # U_par^T x_par
    w_perp_norm: float      # ||U_perp^T (x - x_par)||


# ─── Public API ───────────────────────────────────────────────────────────────

def numerical_jacobian(
    decoder: Decoder,
    z_bar: np.ndarray,
    step: float = JACOBIAN_STEP,
) -> np.ndarray:
    """Central-difference Jacobian, column j = (f(z+h e_j) - f(z-h e_j)) / 2h.

    A DenseNetwork decoder is evaluated on all 2n points in one batch; any
    other callable is applied to one point at a time.
    """
    if step <= 0:
        raise ValueError(f"jacobian step must be > 0, got {step}")
    z_bar = np.asarray(z_bar, dtype=np.float64).ravel()
    n = z_bar.shape[0]
    offsets = step * np.eye(n)
    points = np.vstack([z_bar + offsets, z_bar - offsets])
    values = _evaluate(decoder, points)
    if not np.all(np.isfinite(values)):
        raise NumericError("decoder produced non-finite values around z_bar")
    plus, minus = values[:n], values[n:]
    return ((plus - minus) / (2.0 * step)).T


def thin_svd(jacobian: np.ndarray, tolerance: float = RANK_TOLERANCE) -> ThinSvd:
    """J = U_par diag(S) V^T with U_par of shape (m, n).

    Each V column is signed so its first nonzero entry is positive (U follows).
    When s_min < tolerance * s_max the sample is flagged degenerate and the
    small singular values are floored at that level.
    """
    j = np.asarray(jacobian, dtype=np.float64)
    if j.ndim != 2 or j.shape[0] < j.shape[1]:
        raise DimensionError(f"jacobian must be (m, n) with m >= n, got {j.shape}")
    if not np.all(np.isfinite(j)):
        raise NumericError("jacobian contains non-finite entries")

    u, s, vt = np.linalg.svd(j, full_matrices=False)
    v = vt.T
    for col in range(v.shape[1]):
        nonzero = np.flatnonzero(v[:, col])
        if nonzero.size and v[nonzero[0], col] < 0:
            v[:, col] *= -1.0
            u[:, col] *= -1.0

    s_max = s[0] if s.size else 0.0
    floor = tolerance * s_max if s_max > 0 else np.finfo(np.float64).tiny
    degenerate = bool(s.size and s[-1] < floor)
    if degenerate:
        log.warning(
            "Degenerate jacobian: s_min=%.3e below %.3e; flooring singular values",
            s[-1], floor,
        )
        s = np.maximum(s, floor)
    return ThinSvd(u, s, v, degenerate)


def linearize(
    decoder: Decoder,
    z_bar: np.ndarray,
    step: float = JACOBIAN_STEP,
) -> TangentDecomposition:
    """Jacobian + thin SVD + projection point f(z_bar)."""
    z_bar = np.asarray(z_bar, dtype=np.float64).ravel()
    svd = thin_svd(numerical_jacobian(decoder, z_bar, step))
    x_par = _evaluate(decoder, z_bar.reshape(1, -1))[0]
    return TangentDecomposition(svd.u_par, svd.s, svd.v, z_bar, x_par, svd.degenerate)


def local_coordinates(x: np.ndarray, decomposition: TangentDecomposition) -> LocalCoordinates:
    """Tangent coordinates of the projection and the norm of the off-tangent residual."""
    x = np.asarray(x, dtype=np.float64).ravel()
    u = decomposition.u_par
    if x.shape[0] != u.shape[0]:
        raise DimensionError(f"sample has dim {x.shape[0]}, decomposition expects {u.shape[0]}")
    residual = x - decomposition.x_par
    in_plane = u.T @ residual
    perp_sq = float(residual @ residual - in_plane @ in_plane)
    return LocalCoordinates(u.T @ decomposition.x_par, float(np.sqrt(max(0.0, perp_sq))))


# ─── Internal helpers ─────────────────────────────────────────────────────────

def _evaluate(decoder: Decoder, points: np.ndarray) -> np.ndarray:
    if isinstance(decoder, DenseNetwork):
        return forward(decoder, points)[0]
    return np.array([np.asarray(decoder(p), dtype=np.float64).ravel() for p in points])
