"""Estimators for the piecewise-linear value slope.

The optimal value function carries, next to the quadratic term, a term linear
in |x| whose slope vector is only defined through a forward-looking series in
the closed loop.  Nothing here is exact for a generic state; the module
offers a conservative magnitude bound, a frozen-sign closed form that is
accurate deep inside an orthant, and a Monte Carlo rollout of the series
itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import SeriesDivergent
from .operators import spectral_radius
from .riccati import RiccatiSolution
from . import simulator


@dataclass(frozen=True)
class MuEstimate:
    value: np.ndarray
    kind: str
    bound: np.ndarray | None = None
    stderr: np.ndarray | None = None
    depth: int | None = None
    paths: int | None = None


def _require_contracting(alpha: float, radius: float, what: str):
    if alpha * radius >= 1.0 - 1e-12:
        raise SeriesDivergent(
            f"{what} needs alpha * closed-loop radius < 1, got {alpha * radius:.6f}"
        )


def mu_bound(sol: RiccatiSolution) -> np.ndarray:
    """Componentwise magnitude cap on the stationary slope vector.

    Conservative by construction: it majorizes the series with its worst-case
    resolvent amplification, so any admissible slope estimate should stay
    inside it on well-conditioned problems.
    """
    alpha = sol.alpha
    _require_contracting(alpha, spectral_radius(sol.Acl), "the slope bound")
    n = sol.model.n
    resolvent = np.linalg.inv(np.eye(n) - alpha * sol.Acl.T)
    amplification = spectral_radius(resolvent)
    return alpha * amplification * (np.abs(sol.forms.Wxd) + np.abs(sol.G.T) @ np.abs(sol.forms.Wud))


def mu_asymptotic(sol: RiccatiSolution, sign_x, sign_u, resolvent: str = "discounted") -> np.ndarray:
    """Frozen-sign slope: exact in the limit where state and control signs stop flipping.

    ``resolvent="discounted"`` keeps the discount inside the series resolvent,
    which is the form consistent with summing the series term by term;
    ``"plain"`` drops it there, an alternative normalization kept selectable
    for comparison.
    """
    sign_x = np.asarray(sign_x, dtype=float).reshape(-1)
    sign_u = np.asarray(sign_u, dtype=float).reshape(-1)
    n, m = sol.model.n, sol.model.m
    if sign_x.shape != (n,) or sign_u.shape != (m,):
        raise ValueError(f"expected sign patterns of lengths {n} and {m}")
    alpha = sol.alpha
    rho = spectral_radius(sol.Acl)
    drive = sol.forms.Wxd * sign_x + sol.G.T @ (sol.forms.Wud * sign_u)
    if resolvent == "discounted":
        _require_contracting(alpha, rho, "the frozen-sign slope")
        return alpha * np.linalg.solve(np.eye(n) - alpha * sol.Acl.T, drive)
    if resolvent == "plain":
        _require_contracting(1.0, rho, "the plain-resolvent slope")
        return alpha * np.linalg.solve(np.eye(n) - sol.Acl.T, drive)
    raise ValueError(f"unknown resolvent form {resolvent!r}")


def mu_rollout(
    sol: RiccatiSolution,
    x,
    policy=None,
    depth: int | None = None,
    paths: int = 256,
    seed: int = 0,
    noise_kind: str = "gaussian",
    tail_tol: float = 1e-6,
) -> MuEstimate:
    """Monte Carlo truncation of the forward series defining the slope at ``x``.

    ``policy`` maps a (paths, n) state batch to a (paths, m) control batch
    and defaults to the linear gain.  The truncation depth is chosen so the
    geometric tail falls below ``tail_tol`` unless given explicitly.
    """
    model = sol.model
    alpha = sol.alpha
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (model.n,):
        raise ValueError(f"x has length {x.size}, expected {model.n}")
    rho = spectral_radius(sol.Acl)
    if depth is None:
        _require_contracting(alpha, rho, "the rollout slope")
        base = alpha * rho
        if base <= 0.0:
            depth = 1
        else:
            depth = min(int(math.ceil(math.log(tail_tol) / math.log(base))), 100000)
            depth = max(depth, 1)
    if policy is None:
        G = sol.G

        def policy(X):
            return X @ G.T

    elif isinstance(policy, simulator.Policy):
        policy = policy.fn

    n, m = model.n, model.m
    X = np.tile(x, (paths, 1))
    noise = simulator.draw_noise_block(model, depth + 1, paths, seed, noise_kind)
    totals = np.zeros((paths, n))
    M = alpha * np.eye(n)
    Wxd, Wud = sol.forms.Wxd, sol.forms.Wud
    for j in range(depth + 1):
        U = np.atleast_2d(np.asarray(policy(X), dtype=float))
        drive = np.sign(X) * Wxd + (np.sign(U) * Wud) @ sol.G
        totals += drive @ M.T
        X = simulator.step_batch(model, X, U, noise[:, j, :])
        M = alpha * (sol.Acl.T @ M)
    value = totals.mean(axis=0)
    stderr = totals.std(axis=0, ddof=1) / math.sqrt(paths) if paths > 1 else np.zeros(n)
    return MuEstimate(
        value=value,
        kind="rollout",
        bound=mu_bound(sol),
        stderr=stderr,
        depth=depth,
        paths=paths,
    )
