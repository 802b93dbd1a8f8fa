"""Fixed point of the perturbed value recursion and the associated gain.

Value iteration from zero is monotone for this family of maps, so the
iteration either climbs to the minimal positive semidefinite fixed point or
blows up; both outcomes are detected and reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MaxIterations, MonotonicityViolation, SingularLambda
from .model import CriterionConfig, SystemModel
from .operators import NoiseForms, OperatorSet, spectral_radius, symmetrize
from .stability import detectability_search

MONOTONE_TOL = 1e-10
DIVERGENCE_FACTOR = 1e6


@dataclass(frozen=True)
class RiccatiSolution:
    """Stationary cost matrix with the quantities downstream modules reuse.

    ``L`` is the minimal positive semidefinite fixed point reached from zero,
    ``G`` the induced feedback gain and ``Acl = A + B G`` the mean closed
    loop.  ``Sigma``/``Lambda``/``forms`` are the operator evaluations at
    ``L`` so callers do not recompute them.
    """

    model: SystemModel
    alpha: float
    L: np.ndarray
    G: np.ndarray
    Acl: np.ndarray
    Sigma: np.ndarray
    Lambda: np.ndarray
    forms: NoiseForms
    iterations: int
    residual: float
    closed_loop_radius: float
    alpha_condition_ok: bool | None
    detectable_ok: bool | None = field(default=None, compare=False)

    @property
    def ops(self) -> OperatorSet:
        return OperatorSet(self.model, self.alpha)


def _require_pd_curvature(model: SystemModel):
    dtd = model.D.T @ model.D
    if model.m and np.linalg.eigvalsh(dtd).min() <= 0:
        raise SingularLambda(
            "D'D is not positive definite; every control channel needs direct output weight"
        )


def _iterate(ops: OperatorSet, steps: int, tol: float | None, collect: bool = False):
    """Shared monotone iteration core; returns (P, iterations, delta, history)."""
    n = ops.model.n
    P = np.zeros((n, n))
    history = [P.copy()] if collect else None
    scale_ref = None
    delta = np.inf
    for k in range(steps):
        P_next = symmetrize(ops.riccati_step(P), warn_tol=np.inf)
        diff = P_next - P
        delta = float(np.abs(diff).max())
        if np.linalg.eigvalsh(symmetrize(diff, warn_tol=np.inf)).min() < -MONOTONE_TOL * max(
            1.0, float(np.abs(P_next).max())
        ):
            raise MonotonicityViolation(
                f"value iteration lost monotonicity at step {k + 1}"
            )
        norm = float(np.abs(P_next).max())
        if scale_ref is None and norm > 0:
            scale_ref = norm
        if scale_ref is not None and norm > DIVERGENCE_FACTOR * max(1.0, scale_ref):
            raise MaxIterations(
                "no positive semidefinite solution detected: iterates grew by a factor "
                f"{norm / max(scale_ref, 1e-300):.2e} after {k + 1} steps",
                iterations=k + 1,
                residual=delta,
            )
        P = P_next
        if collect:
            history.append(P.copy())
        if tol is not None and delta <= tol:
            return P, k + 1, delta, history
    if tol is not None:
        raise MaxIterations(
            f"value iteration did not converge in {steps} steps (last step size {delta:.3e})",
            iterations=steps,
            residual=delta,
        )
    return P, steps, delta, history


def solve_riccati(
    model: SystemModel,
    alpha: float | None = None,
    config: CriterionConfig | None = None,
    check_detectable: bool = False,
) -> RiccatiSolution:
    """Iterate the value map from zero until it settles and package the result.

    ``alpha`` falls back to the model's criterion config and then to 1.
    """
    if config is None:
        config = model.criterion or CriterionConfig()
    if alpha is None:
        alpha = config.alpha
    _require_pd_curvature(model)
    ops = OperatorSet(model, alpha)

    L, iterations, _, _ = _iterate(ops, config.max_iters, config.tol_fixed_point)
    L = symmetrize(L, warn_tol=np.inf)
    residual = float(np.abs(ops.riccati_step(L) - L).max())

    Sigma, Lambda = ops.sigma_lambda(L)
    G = -np.linalg.solve(Lambda, Sigma)
    Acl = model.A + model.B @ G
    closed_loop_radius = spectral_radius(Acl)
    alpha_condition_ok = None
    if alpha > 1.0:
        alpha_condition_ok = bool(closed_loop_radius < 1.0 / alpha)

    detectable_ok = None
    if check_detectable:
        detectable_ok = detectability_search(model, alpha) is not None

    return RiccatiSolution(
        model=model,
        alpha=alpha,
        L=L,
        G=G,
        Acl=Acl,
        Sigma=Sigma,
        Lambda=Lambda,
        forms=ops.noise_quadratic_forms(L),
        iterations=iterations,
        residual=residual,
        closed_loop_radius=closed_loop_radius,
        alpha_condition_ok=alpha_condition_ok,
        detectable_ok=detectable_ok,
    )


def finite_horizon_riccati(model: SystemModel, alpha: float, kappa: int) -> list[np.ndarray]:
    """Backward cost matrices over a horizon of kappa steps.

    Returns ``[P_0, ..., P_kappa]`` with the terminal matrix zero; shares the
    iteration core with the stationary solver, so ``P_0`` equals the
    kappa-th value iterate exactly.
    """
    if kappa < 0:
        raise ValueError(f"kappa must be >= 0, got {kappa}")
    _require_pd_curvature(model)
    ops = OperatorSet(model, alpha)
    _, _, _, history = _iterate(ops, kappa, tol=None, collect=True)
    return list(reversed(history))
