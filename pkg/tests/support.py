"""Shared model builders for the test suite."""

from __future__ import annotations

import numpy as np

from csviu import SystemModel
from csviu.operators import NoiseForms, spectral_radius
from csviu.riccati import RiccatiSolution

# hand-checked single-state reference used across the suite
SCALAR_DATA = {
    "A": 0.5,
    "B": 1.0,
    "C": 1.0,
    "D": 1.0,
    "sigma": 0.1,
    "sigma_x": 0.2,
    "sigma_bar_x": 0.3,
    "sigma_u": 0.2,
    "sigma_bar_u": 0.4,
}


def scalar_model() -> SystemModel:
    return SystemModel.from_dict(SCALAR_DATA)


def scalar_lq_model() -> SystemModel:
    """Scalar reference with the magnitude-growth channels switched off."""
    data = dict(SCALAR_DATA, sigma_bar_x=0.0, sigma_bar_u=0.0)
    return SystemModel.from_dict(data)


def stacked_output_model() -> SystemModel:
    """Single state, output stacking the state above the control; no growth noise."""
    return SystemModel.from_dict(
        {"A": 0.5, "B": 1.0, "C": [[1.0], [0.0]], "D": [[0.0], [1.0]], "sigma": 0.1}
    )


def random_model(
    rng: np.random.Generator,
    n: int = 2,
    m: int = 1,
    p: int | None = None,
    r: int = 1,
    radius: float = 0.7,
    noise_scale: float = 0.1,
    growth_scale: float = 0.1,
    lq: bool = False,
) -> SystemModel:
    """Random well-posed model: D'D positive definite, mean dynamics scaled to
    the requested spectral radius, control growth noise aligned with its
    baseline so the deadzone weights stay nonnegative."""
    p = p if p is not None else n + m
    if p < m:
        raise ValueError("need p >= m for a positive definite D'D")
    A = rng.standard_normal((n, n))
    eig_max = float(np.abs(np.linalg.eigvals(A)).max())
    if eig_max > 0:
        A *= radius / eig_max
    B = rng.standard_normal((n, m))
    C = rng.standard_normal((p, n))
    U, _, Vt = np.linalg.svd(rng.standard_normal((p, m)), full_matrices=False)
    D = U @ np.diag(0.4 + 0.6 * rng.random(m)) @ Vt
    sigma = noise_scale * rng.standard_normal((n, r))
    sigma_x = noise_scale * rng.standard_normal((n, n))
    sigma_u = noise_scale * rng.standard_normal((n, m))
    if lq:
        sigma_bar_x = np.zeros((n, n))
        sigma_bar_u = np.zeros((n, m))
    else:
        sigma_bar_x = growth_scale * rng.standard_normal((n, n))
        sigma_bar_u = sigma_u @ np.diag(growth_scale * (0.5 + rng.random(m)))
    return SystemModel(A, B, C, D, sigma, sigma_x, sigma_bar_x, sigma_u, sigma_bar_u)


def synthetic_solution(
    A,
    B,
    G,
    alpha: float = 1.0,
    Wxd=None,
    Wud=None,
    Sigma=None,
    Lambda=None,
    L=None,
    model: SystemModel | None = None,
) -> RiccatiSolution:
    """Hand-assembled solution object with chosen slopes and curvature.

    Lets a test pin the downstream inputs (deadzone weights, gain, curvature)
    to round numbers instead of whatever a solve produces, so expected outputs
    stay checkable by hand.  The embedded model is noise free unless one is
    passed in.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    n, m = A.shape[0], B.shape[1]
    if model is None:
        model = SystemModel.from_dict({"A": A.tolist(), "B": B.tolist()})
    L = np.zeros((n, n)) if L is None else np.atleast_2d(np.asarray(L, dtype=float))
    Wxd = np.zeros(n) if Wxd is None else np.asarray(Wxd, dtype=float).reshape(-1)
    Wud = np.zeros(m) if Wud is None else np.asarray(Wud, dtype=float).reshape(-1)
    Sigma = np.zeros((m, n)) if Sigma is None else np.atleast_2d(np.asarray(Sigma, dtype=float))
    Lambda = np.eye(m) if Lambda is None else np.atleast_2d(np.asarray(Lambda, dtype=float))
    forms = NoiseForms(
        Zx=np.zeros((n, n)),
        Wx=np.diag(Wxd),
        Zu=np.zeros((m, m)),
        Wu=np.diag(Wud),
        varpi1=0.0,
        Wxd=Wxd,
        Wud=Wud,
    )
    Acl = A + B @ G
    return RiccatiSolution(
        model=model,
        alpha=alpha,
        L=L,
        G=G,
        Acl=Acl,
        Sigma=Sigma,
        Lambda=Lambda,
        forms=forms,
        iterations=0,
        residual=0.0,
        closed_loop_radius=float(spectral_radius(Acl)),
        alpha_condition_ok=None,
    )


def regression_models() -> list[tuple[str, SystemModel]]:
    """Fixed menagerie exercised by the cross-module invariants."""
    rng = np.random.default_rng(20240817)
    return [
        ("scalar", scalar_model()),
        ("scalar-lq", scalar_lq_model()),
        ("stacked", stacked_output_model()),
        ("two-state", random_model(rng, n=2, m=1)),
        ("three-state", random_model(rng, n=3, m=2, radius=0.6)),
        ("wide-noise", random_model(rng, n=2, m=2, r=3, noise_scale=0.15, growth_scale=0.12)),
    ]
