"""Matrix operators that drive the cost recursions.

Everything here acts on symmetric matrices ``U`` of the state dimension and is
parameterized by one model and one discount ``alpha``.  The noise-induced
diagonal corrections are what separates these maps from the classical
Lyapunov / Riccati steps: quadratic growth of the noise intensity shows up as
``Diag(diag(S' U S))`` terms, and the mixed baseline/growth products feed the
piecewise-linear part of the cost through the diagonals returned in
:class:`NoiseForms`.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import MaxIterations, SingularLambda
from .model import SystemModel

SYMMETRY_WARN_TOL = 1e-9


def symmetrize(U, warn_tol=SYMMETRY_WARN_TOL):
    """Return (U + U')/2, warning when the asymmetry exceeds ``warn_tol``."""
    U = np.asarray(U, dtype=float)
    if U.size:
        skew = float(np.abs(U - U.T).max())
        if skew > warn_tol:
            warnings.warn(
                f"symmetrizing a matrix with asymmetry {skew:.3e}", RuntimeWarning,
                stacklevel=2,
            )
    return 0.5 * (U + U.T)


class NoiseForms(NamedTuple):
    """Noise-induced corrections evaluated at one cost matrix U.

    Zx, Wx are n x n diagonal; Zu, Wu are m x m diagonal; Wxd/Wud are their
    diagonals as vectors; varpi1 is the constant noise floor trace term.
    """

    Zx: np.ndarray
    Wx: np.ndarray
    Zu: np.ndarray
    Wu: np.ndarray
    varpi1: float
    Wxd: np.ndarray
    Wud: np.ndarray


class SigmaLambda(NamedTuple):
    Sigma: np.ndarray   # m x n cross gain numerator
    Lambda: np.ndarray  # m x m control curvature


def _diag_quad(S, U, T):
    # diag(S' U T) without forming the full product
    return np.einsum("pi,pq,qi->i", S, U, T)


def congruence_matrix(M):
    """Matrix of ``U -> M' U M`` acting on column-stacked vec(U)."""
    return np.kron(M.T, M.T)


def diag_congruence_matrix(S):
    """Matrix of ``U -> Diag(diag(S' U S))`` on column-stacked vec(U).

    ``S`` is n x q; the output lives in q x q matrices, so the matrix maps
    length n*n vectors to length q*q vectors.
    """
    n, q = S.shape
    M = np.zeros((q * q, n * n))
    for i in range(q):
        M[i + q * i, :] = np.kron(S[:, i], S[:, i])
    return M


@dataclass(frozen=True)
class OperatorSet:
    """Stateless bundle of the cost-propagation operators at a fixed discount."""

    model: SystemModel
    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")

    def noise_quadratic_forms(self, U) -> NoiseForms:
        """Evaluate all noise corrections at ``U`` in one pass."""
        md = self.model
        U = np.asarray(U, dtype=float)
        zx = _diag_quad(md.sigma_bar_x, U, md.sigma_bar_x)
        wx = _diag_quad(md.sigma_bar_x, U, md.sigma_x) + _diag_quad(md.sigma_x, U, md.sigma_bar_x)
        zu = _diag_quad(md.sigma_bar_u, U, md.sigma_bar_u)
        wu = _diag_quad(md.sigma_bar_u, U, md.sigma_u) + _diag_quad(md.sigma_u, U, md.sigma_bar_u)
        floor = md.sigma @ md.sigma.T + md.sigma_x @ md.sigma_x.T + md.sigma_u @ md.sigma_u.T
        varpi1 = float(np.einsum("ij,ji->", U, floor))
        return NoiseForms(np.diag(zx), np.diag(wx), np.diag(zu), np.diag(wu), varpi1, wx, wu)

    def lyapunov_step(self, U):
        """One application of the discounted state-propagation map to ``U``."""
        md = self.model
        U = np.asarray(U, dtype=float)
        zx = _diag_quad(md.sigma_bar_x, U, md.sigma_bar_x)
        return self.alpha * (md.A.T @ U @ md.A + np.diag(zx))

    def sigma_lambda(self, U) -> SigmaLambda:
        md = self.model
        U = np.asarray(U, dtype=float)
        Sigma = md.B.T @ U @ md.A + md.D.T @ md.C / self.alpha
        zu = _diag_quad(md.sigma_bar_u, U, md.sigma_bar_u)
        Lambda = md.B.T @ U @ md.B + np.diag(zu) + md.D.T @ md.D / self.alpha
        return SigmaLambda(Sigma, Lambda)

    def riccati_step(self, U):
        """One value-iteration step; raises :class:`SingularLambda` on a singular curvature."""
        md = self.model
        Sigma, Lambda = self.sigma_lambda(U)
        try:
            gain_term = np.linalg.solve(Lambda, Sigma)
        except np.linalg.LinAlgError as exc:
            raise SingularLambda(
                "control curvature matrix is singular; the model needs D'D positive definite"
            ) from exc
        return self.lyapunov_step(U) - self.alpha * Sigma.T @ gain_term + md.C.T @ md.C

    def operator_matrix(self, kind: str, G=None):
        """Vectorized matrix of a linear operator on symmetric matrices.

        kind is one of:
          "lyapunov"    the discounted propagation map alpha*(A'UA + Zx(U))
          "transition"  the bare congruence A'UA
          "state_noise" the state noise correction Zx(U)
          "closed_loop" the linear part of the closed-loop cost map for a
                        gain G, alpha*((A+BG)'U(A+BG) + Zx(U) + G'Zu(U)G)
        """
        md = self.model
        if kind == "transition":
            return congruence_matrix(md.A)
        if kind == "state_noise":
            return diag_congruence_matrix(md.sigma_bar_x)
        if kind == "lyapunov":
            return self.alpha * (
                congruence_matrix(md.A) + diag_congruence_matrix(md.sigma_bar_x)
            )
        if kind == "closed_loop":
            if G is None:
                raise ValueError("kind='closed_loop' requires a gain G")
            G = np.asarray(G, dtype=float)
            Acl = md.A + md.B @ G
            return self.alpha * (
                congruence_matrix(Acl)
                + diag_congruence_matrix(md.sigma_bar_x)
                + congruence_matrix(G) @ diag_congruence_matrix(md.sigma_bar_u)
            )
        raise ValueError(f"unknown operator kind {kind!r}")


def spectral_radius(M, method="auto", tol=1e-12, max_iters=20000):
    """Spectral radius of a square matrix.

    Small matrices go through the dense eigensolver; large ones (as produced
    by vectorizing operators on big state spaces) use power iteration, which
    is adequate because the operators of interest leave the semidefinite cone
    invariant and therefore have a dominant real nonnegative eigenvalue.
    """
    M = np.asarray(M, dtype=float)
    d = M.shape[0]
    if M.shape != (d, d):
        raise ValueError(f"expected a square matrix, got shape {M.shape}")
    if d == 0:
        return 0.0
    if method == "eig" or (method == "auto" and d <= 400):
        return float(np.abs(np.linalg.eigvals(M)).max())
    if method not in ("power", "auto"):
        raise ValueError(f"unknown method {method!r}")

    # start inside the cone image when d is a perfect square (vec of identity)
    k = int(round(np.sqrt(d)))
    if k * k == d:
        v = np.eye(k).reshape(-1, order="F")
    else:
        v = np.ones(d)
    v /= np.linalg.norm(v)
    estimate = 0.0
    steady = 0
    for it in range(max_iters):
        w = M @ v
        r = float(np.linalg.norm(w))
        if r == 0.0:
            return 0.0
        v = w / r
        if abs(r - estimate) <= tol * max(1.0, r):
            steady += 1
            if steady >= 3:
                return r
        else:
            steady = 0
        estimate = r
    raise MaxIterations(
        f"power iteration did not settle after {max_iters} steps (last estimate {estimate:.6e})",
        iterations=max_iters,
        residual=abs(r - estimate),
    )
