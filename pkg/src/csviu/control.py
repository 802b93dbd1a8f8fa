"""The nonsmooth per-stage control problem and its successive-relaxation solver.

At each state the optimal control minimizes a strictly convex quadratic plus
a weighted l1 term,

    J(u) = u' Lambda u + <b, u> + <c, |u|>,      c >= 0,

whose stationarity condition is a generalized normal equation coupling the
control to a clipped auxiliary vector.  A Gauss-Seidel style relaxation sweep
solves that equation; for relaxation factors in (0, 2) the sweep is a
contraction, so failure to converge indicates corrupted inputs rather than a
hard problem instance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssumptionViolated, CsviuError, MaxIterations, SingularLambda
from .mu import mu_asymptotic, mu_rollout
from .riccati import RiccatiSolution


@dataclass(frozen=True)
class ControlSubproblem:
    """Data of one per-stage minimization; W is half the inverse curvature."""

    W: np.ndarray
    b: np.ndarray
    c: np.ndarray
    Lambda: np.ndarray
    x: np.ndarray | None = None
    mu: np.ndarray | None = None

    @classmethod
    def from_parts(cls, Lambda, b, c) -> "ControlSubproblem":
        """Build a bare instance from the quadratic/linear/l1 coefficients."""
        Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
        b = np.asarray(b, dtype=float).reshape(-1)
        c = np.asarray(c, dtype=float).reshape(-1)
        m = b.size
        if Lambda.shape != (m, m) or c.shape != (m,):
            raise ValueError(
                f"inconsistent sizes: Lambda {Lambda.shape}, b {b.shape}, c {c.shape}"
            )
        if np.any(c < 0):
            raise AssumptionViolated("the l1 weights c must be nonnegative")
        eigs = np.linalg.eigvalsh(0.5 * (Lambda + Lambda.T))
        if eigs.min() <= 0:
            raise SingularLambda("Lambda must be positive definite")
        W = 0.5 * np.linalg.inv(Lambda)
        W = 0.5 * (W + W.T)
        return cls(W=W, b=b, c=c, Lambda=Lambda)


@dataclass(frozen=True)
class SorState:
    """Converged relaxation sweep: the control is ``nu``; ``theta`` are the
    per-channel saturation ratios appearing in the equivalent diagonal form."""

    z: np.ndarray
    gamma: np.ndarray
    nu: np.ndarray
    theta: np.ndarray
    iterations: int
    residual: float


def build_subproblem(sol: RiccatiSolution, x, mu) -> ControlSubproblem:
    """Assemble the stage problem at state ``x`` with value slope ``mu``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    n, m = sol.model.n, sol.model.m
    if x.shape != (n,) or mu.shape != (n,):
        raise ValueError(f"x and mu must have length {n}, got {x.size} and {mu.size}")
    Lambda = sol.Lambda
    eigs = np.linalg.eigvalsh(0.5 * (Lambda + Lambda.T))
    if eigs.min() <= 0:
        raise SingularLambda("control curvature at the fixed point is not positive definite")
    c = sol.forms.Wud
    if np.any(c < -1e-12 * max(1.0, float(np.abs(c).max()))):
        raise AssumptionViolated(
            "the control deadzone weights came out negative; the noise data "
            "violates the positivity assumption on the mixed control terms"
        )
    W = 0.5 * np.linalg.inv(Lambda)
    return ControlSubproblem(
        W=0.5 * (W + W.T),
        b=sol.model.B.T @ mu + 2.0 * sol.Sigma @ x,
        c=np.maximum(c, 0.0),
        Lambda=Lambda,
        x=x,
        mu=mu,
    )


def cost_Ju(sub: ControlSubproblem, u) -> float:
    """Objective value of the stage problem at ``u``."""
    u = np.asarray(u, dtype=float).reshape(-1)
    return float(u @ sub.Lambda @ u + sub.b @ u + sub.c @ np.abs(u))


def _sor_sweeps(W, B, C, omega, Z0, tol, max_iters):
    """Relaxation sweeps over a batch of instances sharing W and C.

    B and Z0 are (paths, m); returns (Z, Gamma, Nu, iterations, residual).
    """
    m = W.shape[0]
    Wd = np.diag(W).copy()
    if np.any(Wd <= 0):
        raise SingularLambda("the relaxation matrix must have positive diagonal")
    Z = Z0.copy()
    Gamma = np.clip(Z, -C, C)
    offdiag = W.copy()
    np.fill_diagonal(offdiag, 0.0)
    for sweep in range(1, max_iters + 1):
        for i in range(m):
            coupling = (Gamma + B) @ offdiag[i]
            Z[:, i] = (1.0 - omega) * Z[:, i] - (omega / Wd[i]) * coupling - omega * B[:, i]
            Gamma[:, i] = np.clip(Z[:, i], -C[i], C[i])
        Nu = np.sign(Z) * np.maximum(0.0, Wd * (np.abs(Z) - C))
        residual = float(np.abs(Nu + (Gamma + B) @ W.T).max())
        if residual <= tol:
            return Z, Gamma, Nu, sweep, residual
    raise MaxIterations(
        f"relaxation did not reach tol={tol:.1e} in {max_iters} sweeps "
        f"(residual {residual:.3e}); with omega in (0, 2) this indicates bad inputs",
        iterations=max_iters,
        residual=residual,
    )


def sor_solve(
    sub: ControlSubproblem,
    omega: float = 1.0,
    z0=None,
    tol: float = 1e-10,
    max_iters: int = 10000,
) -> SorState:
    """Solve the generalized normal equation of one stage problem."""
    if not (0.0 < omega < 2.0):
        raise ValueError(f"omega must lie in (0, 2), got {omega}")
    m = sub.b.size
    Z0 = np.zeros((1, m)) if z0 is None else np.asarray(z0, dtype=float).reshape(1, m)
    Z, Gamma, Nu, iterations, residual = _sor_sweeps(
        sub.W, sub.b.reshape(1, m), sub.c, omega, Z0, tol, max_iters
    )
    z, gamma, nu = Z[0], Gamma[0], Nu[0]
    Wd = np.diag(sub.W)
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(sub.c > 0, Wd * np.maximum(0.0, np.abs(z) - sub.c) / sub.c, 0.0)
    return SorState(z=z, gamma=gamma, nu=nu, theta=theta, iterations=iterations, residual=residual)


def sor_solve_batch(sub_W, B, c, omega=1.0, tol=1e-10, max_iters=10000):
    """Batch form of :func:`sor_solve` for many right-hand sides at once.

    ``B`` is (paths, m); returns the (paths, m) control batch.  Used by the
    simulation and region-scan paths where thousands of stage problems share
    the same curvature.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    Z0 = np.zeros_like(B)
    _, _, Nu, _, _ = _sor_sweeps(sub_W, B, c, omega, Z0, tol, max_iters)
    return Nu


def resolve_mu(sol: RiccatiSolution, x, mu=None, mu_kind: str = "zero", mu_sweeps: int = 3, **rollout_kwargs):
    """Produce the slope vector used by the stage problem at ``x``.

    "zero" ignores the slope, "asymptotic" freezes signs at the current state
    and runs a few fixed-point sweeps on the control sign pattern, "rollout"
    delegates to the Monte Carlo series estimator.
    """
    n = sol.model.n
    if mu is not None:
        mu = np.asarray(mu, dtype=float).reshape(-1)
        if mu.shape != (n,):
            raise ValueError(f"mu has length {mu.size}, expected {n}")
        return mu
    if mu_kind == "zero":
        return np.zeros(n)
    if mu_kind == "asymptotic":
        x = np.asarray(x, dtype=float).reshape(-1)
        s_x = np.sign(x)
        s_u = np.zeros(sol.model.m)
        value = mu_asymptotic(sol, s_x, s_u)
        for _ in range(mu_sweeps):
            sub = build_subproblem(sol, x, value)
            u = sor_solve(sub).nu
            s_u_next = np.sign(u)
            value = mu_asymptotic(sol, s_x, s_u_next)
            if np.array_equal(s_u_next, s_u):
                break
            s_u = s_u_next
        return value
    if mu_kind == "rollout":
        return mu_rollout(sol, x, **rollout_kwargs).value
    raise ValueError(f"unknown mu_kind {mu_kind!r}")


@dataclass(frozen=True)
class ControlResult:
    u_star: np.ndarray
    gamma: np.ndarray
    mu: np.ndarray
    margins: np.ndarray
    sub: ControlSubproblem
    sor: SorState


def optimal_control(
    sol: RiccatiSolution,
    x,
    mu=None,
    mu_kind: str = "zero",
    omega: float = 1.0,
    tol: float = 1e-10,
    max_iters: int = 10000,
    **mu_kwargs,
) -> ControlResult:
    """Optimal stage control at ``x``: solve, then cross-check the closed form.

    The converged clipped vector reconstructs the control through the inverse
    curvature; a mismatch there would mean the sweep settled on a wrong point,
    so it is treated as an internal error.
    """
    mu_val = resolve_mu(sol, x, mu=mu, mu_kind=mu_kind, **mu_kwargs)
    sub = build_subproblem(sol, x, mu_val)
    state = sor_solve(sub, omega=omega, tol=tol, max_iters=max_iters)
    u_star = state.nu
    reconstructed = -np.linalg.solve(
        sub.Lambda,
        sol.Sigma @ sub.x + 0.5 * (sol.model.B.T @ mu_val + state.gamma),
    )
    gap = float(np.abs(reconstructed - u_star).max())
    if gap > max(1e-9, 100.0 * tol) * max(1.0, float(np.abs(u_star).max())):
        raise CsviuError(
            f"converged control fails its closed-form reconstruction by {gap:.3e}"
        )
    margins = sub.c - np.abs(sub.b)
    return ControlResult(
        u_star=u_star, gamma=state.gamma, mu=mu_val, margins=margins, sub=sub, sor=state
    )


def inaction_test(sol: RiccatiSolution, x, mu, channel: int | None = None):
    """Whether each control channel stays switched off at ``x``.

    A channel is strictly inactive when the linear pull on it is smaller than
    its deadzone weight; the margin is positive inside the inaction region,
    negative outside, near zero on the boundary.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    pull = 2.0 * sol.Sigma @ x + sol.model.B.T @ mu
    margins = sol.forms.Wud - np.abs(pull)
    inactive = margins > 0
    if channel is not None:
        return bool(inactive[channel]), float(margins[channel])
    return inactive, margins


def rho_stage(sol: RiccatiSolution, x, u, mu) -> float:
    """Stage residual of the cost ledger at an arbitrary control ``u``.

    Documented normalization: the quadratic deviation enters undiscounted
    while the completion term carries the discount.  For exact ledger
    accounting across a step use :func:`stage_value`, which discounts both;
    the two agree at alpha = 1.
    """
    u = np.asarray(u, dtype=float).reshape(-1)
    dev, completion = _stage_parts(sol, x, u, mu)
    return float(dev - sol.alpha / 4.0 * completion)


def stage_value(sol: RiccatiSolution, x, u, mu) -> float:
    """Telescoping-exact stage residual: alpha times (deviation - completion/4)."""
    u = np.asarray(u, dtype=float).reshape(-1)
    dev, completion = _stage_parts(sol, x, u, mu)
    return float(sol.alpha * (dev - completion / 4.0))


def _stage_parts(sol: RiccatiSolution, x, u, mu):
    x = np.asarray(x, dtype=float).reshape(-1)
    mu = np.asarray(mu, dtype=float).reshape(-1)
    h = sol.model.B.T @ mu + sol.forms.Wud * np.sign(u)
    u0 = -np.linalg.solve(sol.Lambda, sol.Sigma @ x + 0.5 * h)
    dev = (u - u0) @ sol.Lambda @ (u - u0)
    completion = h @ np.linalg.solve(sol.Lambda, h)
    return dev, completion


def stage_value_batch(sol: RiccatiSolution, X, U, Mu):
    """Vectorized :func:`stage_value` over (paths, n)/(paths, m) batches."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Mu = np.atleast_2d(np.asarray(Mu, dtype=float))
    H = Mu @ sol.model.B + np.sign(U) * sol.forms.Wud
    rhs = X @ sol.Sigma.T + 0.5 * H
    U0 = -np.linalg.solve(sol.Lambda, rhs.T).T
    dev = np.einsum("pi,ij,pj->p", U - U0, sol.Lambda, U - U0)
    completion = np.einsum("pi,ij,pj->p", H, np.linalg.inv(sol.Lambda), H)
    return sol.alpha * (dev - completion / 4.0)


def optimal_control_batch(
    sol: RiccatiSolution,
    X,
    Mu=None,
    mu_kind: str = "zero",
    omega: float = 1.0,
    tol: float = 1e-10,
    max_iters: int = 10000,
    mu_sweeps: int = 3,
):
    """Optimal controls for a whole (paths, n) state batch at once.

    Returns ``(U, Mu)`` with shapes (paths, m) and (paths, n).  Row for row
    this matches :func:`optimal_control` up to the solver tolerance; the
    batch exists because simulations and region scans solve thousands of
    stage problems sharing one curvature matrix.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    paths = X.shape[0]
    n, m = sol.model.n, sol.model.m
    if X.shape[1] != n:
        raise ValueError(f"state batch has width {X.shape[1]}, expected {n}")
    Lambda = sol.Lambda
    W = 0.5 * np.linalg.inv(Lambda)
    W = 0.5 * (W + W.T)
    c = np.maximum(sol.forms.Wud, 0.0)

    def solve_batch(Mu_batch):
        B_rhs = Mu_batch @ sol.model.B + 2.0 * X @ sol.Sigma.T
        return sor_solve_batch(W, B_rhs, c, omega=omega, tol=tol, max_iters=max_iters)

    if Mu is None:
        if mu_kind == "zero":
            Mu = np.zeros((paths, n))
        elif mu_kind == "asymptotic":
            alpha = sol.alpha
            resolvent = np.eye(n) - alpha * sol.Acl.T
            Sx = np.sign(X)
            Su = np.zeros((paths, m))

            def asym(Su_batch):
                drive = Sx * sol.forms.Wxd + (Su_batch * sol.forms.Wud) @ sol.G
                return alpha * np.linalg.solve(resolvent, drive.T).T

            Mu = asym(Su)
            for _ in range(mu_sweeps):
                U = solve_batch(Mu)
                Su_next = np.sign(U)
                Mu = asym(Su_next)
                if np.array_equal(Su_next, Su):
                    break
                Su = Su_next
        else:
            raise ValueError(
                f"mu_kind {mu_kind!r} is not supported in batch mode; pass Mu explicitly"
            )
    else:
        Mu = np.atleast_2d(np.asarray(Mu, dtype=float))
        if Mu.shape != (paths, n):
            raise ValueError(f"Mu batch has shape {Mu.shape}, expected {(paths, n)}")

    U = solve_batch(Mu)
    return U, Mu


@dataclass(frozen=True)
class RhoMin:
    rho: float
    u0: np.ndarray
    u_star: np.ndarray
    mu: np.ndarray


def rho_min(sol: RiccatiSolution, x, mu=None, mu_kind: str = "zero", **kwargs) -> RhoMin:
    """Minimized stage residual at ``x`` along with the minimizer pair."""
    result = optimal_control(sol, x, mu=mu, mu_kind=mu_kind, **kwargs)
    u_star = result.u_star
    h = sol.model.B.T @ result.mu + sol.forms.Wud * np.sign(u_star)
    u0 = -np.linalg.solve(sol.Lambda, sol.Sigma @ result.sub.x + 0.5 * h)
    return RhoMin(
        rho=rho_stage(sol, x, u_star, result.mu),
        u0=u0,
        u_star=u_star,
        mu=result.mu,
    )
