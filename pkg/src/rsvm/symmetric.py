"""Solver variant for symmetric p x p matrices with a single precision.

The left and right singular vectors of a symmetric matrix coincide up to
sign, so one precision matrix serves both sides. The posterior covariance
is expanded in a Kronecker-sum decomposition (rearrangement + SVD) whose
terms feed the precision update; with the full number of terms the update
is exact, fewer terms trade accuracy for speed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Estimate, Hyperparameters, effective_rank
from .kronops import (
    KronSum,
    nearest_kron_sum,
    posterior_covariance,
    spd_inverse,
    symmetrize,
    unvec,
    vec,
)
from .sensing import ProblemInstance


@dataclass
class SymmetricState:
    x_hat: np.ndarray
    alpha: np.ndarray
    beta: float
    sigma_kron: KronSum
    s_terms: int


def _sigma_contractions(ks: KronSum, alpha: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Kronecker-term contractions of the covariance against alpha.

    Returns (sum_k tr(left_k alpha) right_k, sum_k tr(right_k alpha) left_k).
    Antisymmetric factor pairs contribute nothing against a symmetric alpha.
    """
    p = alpha.shape[0]
    first = np.zeros((p, p))
    second = np.zeros((p, p))
    for left, right in ks.terms:
        first += float(np.sum(left * alpha.T)) * right
        second += float(np.sum(right * alpha.T)) * left
    return first, second


def _clip_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(symmetrize(m))
    if vals[0] >= 0:
        return m
    return (vecs * np.maximum(vals, 0.0)) @ vecs.T


def update_precision_symmetric(state: SymmetricState,
                               hyper: Hyperparameters) -> np.ndarray:
    """alpha <- nu_eff (2 X alpha X + sigma_contractions + eps I)^{-1}.

    The exact (full-term) contraction pair is positive semidefinite; a
    truncated expansion can dip indefinite, so the pair is clipped to the
    nearest PSD matrix before inversion.
    """
    x = state.x_hat
    p = x.shape[0]
    sig_a, sig_b = _sigma_contractions(state.sigma_kron, state.alpha)
    mat = 2.0 * x @ state.alpha @ x + _clip_psd(sig_a + sig_b) \
        + hyper.epsilon_scale * np.eye(p)
    return symmetrize(hyper.nu_eff * spd_inverse(symmetrize(mat), hyper.jitter))


def solve_symmetric(inst: ProblemInstance,
                    hyper: Hyperparameters | None = None,
                    s_terms: int | None = None,
                    trace_path=None) -> Estimate:
    """Iterate the single-precision solver on a square instance.

    The estimate is projected onto symmetric matrices each iteration
    (Frobenius projection (X + X^T)/2). s_terms defaults to p^2, the exact
    decomposition.
    """
    from .core import _write_trace_header, _write_trace_row

    hyper = hyper or Hyperparameters()
    p, q = inst.p, inst.q
    if p != q:
        raise ValueError(f"symmetric solver needs p == q, got {p}x{q}")
    s = p * p if s_terms is None else int(s_terms)

    alpha = np.eye(p)
    energy = float(inst.y @ inst.y)
    beta = 10.0 * inst.m / energy if energy > 0 else 1.0

    x_prev = np.zeros((p, p))
    converged = False
    it = 0
    trace_fh = open(trace_path, "w") if trace_path is not None else None
    if trace_fh:
        _write_trace_header(trace_fh)
    try:
        for it in range(1, hyper.max_iter + 1):
            sigma = posterior_covariance(alpha, alpha, inst.operator, beta,
                                         jitter=hyper.jitter)
            x = unvec(beta * (sigma @ inst.operator.apply_adjoint(inst.y)), p, p)
            x = symmetrize(x)
            rel = float(np.linalg.norm(x - x_prev, "fro")
                        / max(np.linalg.norm(x_prev, "fro"), 1e-12))

            ks = nearest_kron_sum(sigma, p, s)
            state = SymmetricState(x, alpha, beta, ks, s)
            alpha = update_precision_symmetric(state, hyper)
            fx = float(np.linalg.norm(x, "fro"))
            if fx >= 1e-14:
                alpha = alpha * (float(np.trace(spd_inverse(alpha))) / fx)

            resid = inst.y - inst.operator.apply(vec(x))
            beta = (inst.m + 2.0 * hyper.c) / (
                float(resid @ resid) + inst.operator.trace_quadratic(sigma)
                + 2.0 * hyper.d)

            if trace_fh:
                obj = 0.5 * beta * float(resid @ resid) \
                    + 0.5 * float(np.sum((alpha @ x @ alpha) * x))
                _write_trace_row(trace_fh, it, rel, obj, beta,
                                 effective_rank(x))
            if rel < hyper.tol:
                converged = True
                break
            x_prev = x
    finally:
        if trace_fh:
            trace_fh.close()
    return Estimate(
        x_hat=x,
        effective_rank=effective_rank(x),
        beta_hat=beta,
        iterations=it,
        converged=converged,
    )
