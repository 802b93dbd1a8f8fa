"""Stability and detectability certificates for the noisy plant.

All tests reduce to properties of the vectorized propagation map.  Strict
inequalities are checked with a margin: values inside the band around the
threshold give a ``None`` (indeterminate) answer instead of a coin flip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CsviuError
from .model import SystemModel
from .operators import (
    OperatorSet,
    congruence_matrix,
    diag_congruence_matrix,
    spectral_radius,
    symmetrize,
)

MARGIN = 1e-10


def _strict_below(value, threshold, margin=MARGIN):
    """True/False when clearly on one side of the threshold, None inside the band."""
    if not np.isfinite(value):
        return False
    if value < threshold - margin:
        return True
    if value > threshold + margin:
        return False
    return None


def _min_eig_normalized(U):
    eigs = np.linalg.eigvalsh(symmetrize(U, warn_tol=np.inf))
    scale = max(1.0, float(np.abs(eigs).max()))
    return float(eigs.min()) / scale


@dataclass
class StabilityReport:
    """Outcome of the five equivalent second-moment stability conditions."""

    alpha: float
    radius: float
    inverse_positive: bool | None
    d_stable: bool | None
    lyapunov_ok: bool | None
    lyapunov_witness: np.ndarray | None
    eig_ok: bool | None
    max_abs_eig: float
    resolvent_ok: bool | None
    resolvent_radius: float
    counter_discount_eig_ok: bool | None
    verdict: str

    @property
    def conditions(self):
        """The five condition outcomes in their conventional order."""
        cond_v = _combine(self.eig_ok, self.resolvent_ok)
        return (self.inverse_positive, self.d_stable, self.lyapunov_ok, self.d_stable, cond_v)


def _combine(a, b):
    if a is False or b is False:
        return False
    if a is None or b is None:
        return None
    return True


def check_alpha_stability(model: SystemModel, alpha: float, probes: int = 10, seed: int = 0) -> StabilityReport:
    """Run all five stability conditions for the given discount and report each.

    The verdict is "stable" / "unstable" only when the applicable equivalence
    holds cleanly; borderline numerics or a failed precondition (for
    alpha >= 1, the eigenvalues of alpha*A must lie in the open unit disk for
    the five conditions to be conclusive) give "indeterminate".
    """
    ops = OperatorSet(model, alpha)
    n = model.n
    M = ops.operator_matrix("lyapunov")
    radius = spectral_radius(M)

    d_stable = _strict_below(radius, 1.0)

    eye_vec = np.eye(n).reshape(-1, order="F")
    IM = np.eye(n * n) - M

    # (iii): positive definite witness of the one-step contraction
    lyapunov_ok = None
    witness = None
    try:
        u_vec = np.linalg.solve(IM, eye_vec)
        U = symmetrize(u_vec.reshape((n, n), order="F"), warn_tol=np.inf)
        witness = U
        shrink = U - (M @ U.reshape(-1, order="F")).reshape((n, n), order="F")
        u_min = _min_eig_normalized(U)
        s_min = _min_eig_normalized(shrink)
        ok_u = None if abs(u_min) <= MARGIN else (u_min > 0)
        ok_s = None if abs(s_min) <= MARGIN else (s_min > 0)
        lyapunov_ok = _combine(ok_u, ok_s)
    except np.linalg.LinAlgError:
        lyapunov_ok = None
        # a singular map also rules out a spectral radius strictly below one
        if d_stable is None:
            d_stable = False

    # (i): inverse positivity probed on the identity plus random semidefinite inputs
    inverse_positive = None
    try:
        rng = np.random.default_rng(seed)
        worst = np.inf
        for probe in range(probes + 1):
            if probe == 0:
                q = np.eye(n)
            else:
                root = rng.standard_normal((n, n))
                q = root @ root.T
            x_vec = np.linalg.solve(IM, q.reshape(-1, order="F"))
            X = x_vec.reshape((n, n), order="F")
            worst = min(worst, _min_eig_normalized(X))
        if worst < -MARGIN:
            inverse_positive = False
        else:
            inverse_positive = True
    except np.linalg.LinAlgError:
        inverse_positive = None

    # (v): split into the mean-dynamics eigenvalue test and the resolvent test
    sqrt_alpha = np.sqrt(alpha)
    eig_A = np.linalg.eigvals(model.A)
    max_abs_eig = float(np.abs(eig_A).max()) * sqrt_alpha
    eig_ok = _strict_below(max_abs_eig, 1.0)
    resolvent_radius = np.nan
    resolvent_ok = None
    if eig_ok:
        K_A = congruence_matrix(model.A)
        K_Z = diag_congruence_matrix(model.sigma_bar_x)
        try:
            resolvent = np.linalg.solve(np.eye(n * n) - alpha * K_A, K_Z)
            resolvent_radius = spectral_radius(resolvent)
            resolvent_ok = _strict_below(resolvent_radius, 1.0 / alpha)
        except np.linalg.LinAlgError:
            resolvent_ok = None
    elif eig_ok is False:
        resolvent_ok = False

    counter_discount_eig_ok = None
    if alpha >= 1.0:
        counter_discount_eig_ok = _strict_below(alpha * float(np.abs(eig_A).max()), 1.0)

    conds = (inverse_positive, d_stable, lyapunov_ok, d_stable, _combine(eig_ok, resolvent_ok))
    if any(c is None for c in conds):
        verdict = "indeterminate"
    elif all(conds):
        # concluding stability at alpha >= 1 additionally needs the mean
        # dynamics inside the shrunken disk; a failed precondition leaves
        # the equivalence inconclusive rather than certifying anything
        if alpha >= 1.0 and counter_discount_eig_ok is not True:
            verdict = "indeterminate"
        else:
            verdict = "stable"
    else:
        verdict = "unstable"

    return StabilityReport(
        alpha=alpha,
        radius=radius,
        inverse_positive=inverse_positive,
        d_stable=d_stable,
        lyapunov_ok=lyapunov_ok,
        lyapunov_witness=witness,
        eig_ok=eig_ok,
        max_abs_eig=max_abs_eig,
        resolvent_ok=resolvent_ok,
        resolvent_radius=float(resolvent_radius),
        counter_discount_eig_ok=counter_discount_eig_ok,
        verdict=verdict,
    )


@dataclass(frozen=True)
class DetectabilityCheck:
    ok: bool
    radius: float


def check_detectability(model: SystemModel, alpha: float, H) -> DetectabilityCheck:
    """Test whether the output injection H makes the noisy loop shrink in second moment."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    n, p = model.n, model.p
    if H.shape != (n, p):
        raise CsviuError(f"H has shape {H.shape}, expected {(n, p)}")
    M = alpha * (
        congruence_matrix(model.A + H @ model.C)
        + diag_congruence_matrix(model.sigma_bar_x)
    )
    radius = spectral_radius(M)
    return DetectabilityCheck(ok=bool(radius < 1.0), radius=radius)


def detectability_search(model: SystemModel, alpha: float, attempts: int = 30, seed: int = 0):
    """Look for an output injection certifying detectability; None when the search fails.

    Deterministic for fixed arguments: a shrinking line search through the
    pseudo-inverse cancellation candidate, then seeded random perturbations
    around it, up to ``attempts`` candidate evaluations in total.
    """
    if attempts < 1:
        raise ValueError(f"attempts must be >= 1, got {attempts}")
    H0 = -model.A @ np.linalg.pinv(model.C)
    candidates = [t * H0 for t in np.linspace(1.0, 0.0, num=min(attempts, 11))]
    rng = np.random.default_rng(seed)
    scale = 1.0
    while len(candidates) < attempts:
        candidates.append(H0 + scale * rng.standard_normal(H0.shape))
        scale *= 0.7
    for H in candidates[:attempts]:
        if check_detectability(model, alpha, H).ok:
            return H
    return None


def closed_loop_cost_step(model: SystemModel, alpha: float, U, G):
    """One step of the cost recursion under a fixed linear gain.

    Evaluates the expanded closed-loop form and cross-checks it against the
    equivalent factored form; a disagreement means corrupted inputs and
    raises instead of returning silently wrong numbers.
    """
    ops = OperatorSet(model, alpha)
    U = np.asarray(U, dtype=float)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    md = model
    Acl = md.A + md.B @ G
    Ccl = md.C + md.D @ G
    forms = ops.noise_quadratic_forms(U)
    expanded = (
        alpha * (Acl.T @ U @ Acl + forms.Zx + G.T @ forms.Zu @ G) + Ccl.T @ Ccl
    )
    Sigma, Lambda = ops.sigma_lambda(U)
    factored = (
        ops.lyapunov_step(U)
        + md.C.T @ md.C
        + alpha * (Sigma.T @ G + G.T @ Sigma + G.T @ Lambda @ G)
    )
    gap = float(np.abs(expanded - factored).max())
    if gap > 1e-12 * max(1.0, float(np.abs(expanded).max())):
        raise CsviuError(f"closed-loop step forms disagree by {gap:.3e}; inputs look corrupted")
    return expanded


@dataclass(frozen=True)
class ClosedLoopCheck:
    ok: bool
    radius: float
    gain_radius: float
    gain_radius_ok: bool | None


def closed_loop_check(model: SystemModel, alpha: float, G) -> ClosedLoopCheck:
    """Second-moment contraction test for the loop closed with gain G.

    For alpha > 1 the mean closed-loop matrix additionally needs its spectral
    radius below 1/alpha for the infinite-horizon quantities to exist.
    """
    ops = OperatorSet(model, alpha)
    G = np.atleast_2d(np.asarray(G, dtype=float))
    radius = spectral_radius(ops.operator_matrix("closed_loop", G=G))
    Acl = model.A + model.B @ G
    gain_radius = spectral_radius(Acl)
    gain_radius_ok = None
    if alpha > 1.0:
        gain_radius_ok = bool(gain_radius < 1.0 / alpha)
    ok = bool(radius < 1.0) and (gain_radius_ok is not False)
    return ClosedLoopCheck(ok=ok, radius=radius, gain_radius=gain_radius, gain_radius_ok=gain_radius_ok)
