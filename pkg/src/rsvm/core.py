"""Bayesian low-rank matrix solver with Wishart-type precision updates.

For fixed precisions the estimate is the regularized least-squares solve

    vec(x_hat) = beta * Sigma * A^T y,
    Sigma = ((alpha_r kron alpha_l) + beta A^T A)^{-1},

followed by closed-form updates of the left/right precision matrices, a
rescaling step keeping the two precisions commensurate, and a gamma-prior
update of the noise precision. Iterated to a relative-change tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kronops import (
    posterior_covariance,
    spd_inverse,
    symmetrize,
    trace_contract_left,
    trace_contract_right,
    unvec,
    vec,
)
from .sensing import ProblemInstance


@dataclass(frozen=True)
class Hyperparameters:
    """Solver knobs.

    epsilon_scale is the scale of the precision-prior floor (eps * I added
    inside the precision updates); c, d parameterize the gamma prior on the
    noise precision; nu_eff is the post-balancing multiplier (any positive
    constant is equivalent after rescaling).

    The iteration is semi-convergent on noisy data: once the fit starts
    chasing noise the estimated noise precision inflates and accuracy
    slowly degrades, so the moderate max_iter default acts as the stopping
    regularizer. It is calibrated across the benchmark regimes (well-
    sampled problems peak earlier, undersampled ones later); noiseless
    exact-recovery runs keep improving if run longer.
    """

    epsilon_scale: float = 1e-6
    c: float = 1e-6
    d: float = 1e-6
    nu_eff: float = 1.0
    tol: float = 1e-6
    max_iter: int = 25
    jitter: float = 0.0

    def __post_init__(self):
        if self.epsilon_scale <= 0:
            raise ValueError("epsilon_scale must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class PrecisionState:
    alpha_l: np.ndarray
    alpha_r: np.ndarray
    beta: float


@dataclass
class SolverState:
    x_hat: np.ndarray
    sigma: np.ndarray | None
    precisions: PrecisionState
    iter: int = 0
    history: list = field(default_factory=list)


@dataclass
class Estimate:
    """Solver output: point estimate plus convergence diagnostics."""

    x_hat: np.ndarray
    effective_rank: int
    beta_hat: float
    iterations: int
    converged: bool


class SolverDivergenceError(RuntimeError):
    """Non-finite values appeared; carries the last state for diagnosis."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


def effective_rank(x: np.ndarray, rel_threshold: float = 1e-3) -> int:
    s = np.linalg.svd(np.asarray(x, dtype=float), compute_uv=False)
    if s.size == 0 or s[0] <= 0:
        return 0
    return int(np.count_nonzero(s > rel_threshold * s[0]))


def init_state(inst: ProblemInstance, hyper: Hyperparameters) -> SolverState:
    """Identity precisions; beta0 = 10 m / ||y||^2 (1 when y = 0)."""
    p, q = inst.p, inst.q
    energy = float(inst.y @ inst.y)
    beta0 = 10.0 * inst.m / energy if energy > 0 else 1.0
    prec = PrecisionState(np.eye(p), np.eye(q), beta0)
    return SolverState(x_hat=np.zeros((p, q)), sigma=None, precisions=prec)


def map_estimate(state: SolverState, inst: ProblemInstance,
                 jitter: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mode and covariance for the current precisions."""
    prec = state.precisions
    sigma = posterior_covariance(prec.alpha_l, prec.alpha_r, inst.operator,
                                 prec.beta, jitter=jitter)
    rhs = prec.beta * inst.operator.apply_adjoint(inst.y)
    x_hat = unvec(sigma @ rhs, inst.p, inst.q)
    return x_hat, sigma


def update_precisions(state: SolverState,
                      hyper: Hyperparameters) -> PrecisionState:
    """Gauss-Seidel precision update: alpha_l first (old alpha_r), then alpha_r."""
    x = state.x_hat
    sigma = state.sigma
    prec = state.precisions
    eps = hyper.epsilon_scale
    p, q = x.shape

    sig_r = trace_contract_right(sigma, prec.alpha_r)
    al = hyper.nu_eff * spd_inverse(
        sig_r + x @ prec.alpha_r @ x.T + eps * np.eye(p), hyper.jitter)
    sig_l = trace_contract_left(sigma, al)
    ar = hyper.nu_eff * spd_inverse(
        sig_l + x.T @ al @ x + eps * np.eye(q), hyper.jitter)
    return PrecisionState(symmetrize(al), symmetrize(ar), prec.beta)


def update_noise_precision(state: SolverState, inst: ProblemInstance,
                           hyper: Hyperparameters) -> float:
    """Gamma-posterior mode for the noise precision."""
    resid = inst.y - inst.operator.apply(vec(state.x_hat))
    denom = float(resid @ resid) + inst.operator.trace_quadratic(state.sigma) \
        + 2.0 * hyper.d
    if denom <= 0:
        raise ValueError("noise precision denominator must be positive")
    return (inst.m + 2.0 * hyper.c) / denom


def balance_precisions(prec: PrecisionState,
                       x_hat: np.ndarray) -> PrecisionState:
    """Rescale alpha_l -> alpha_l*g*h, alpha_r -> alpha_r*g/h.

    g = sqrt(tr(alpha_l^-1) tr(alpha_r^-1)) / ||x_hat||_F matches the scale
    of the precisions to the estimate; h = sqrt(||alpha_r||_F/||alpha_l||_F)
    equalizes their Frobenius norms. Skipped when ||x_hat||_F ~ 0.
    """
    fx = float(np.linalg.norm(x_hat, "fro"))
    if fx < 1e-14:
        return prec
    tl = float(np.trace(spd_inverse(prec.alpha_l)))
    tr = float(np.trace(spd_inverse(prec.alpha_r)))
    g = np.sqrt(tl * tr) / fx
    h = np.sqrt(np.linalg.norm(prec.alpha_r, "fro")
                / np.linalg.norm(prec.alpha_l, "fro"))
    return PrecisionState(prec.alpha_l * (g * h), prec.alpha_r * (g / h),
                          prec.beta)


def neg_log_joint(state: SolverState, inst: ProblemInstance,
                  hyper: Hyperparameters) -> float:
    """Data misfit plus prior quadratic form, up to X-independent constants."""
    prec = state.precisions
    x = state.x_hat
    resid = inst.y - inst.operator.apply(vec(x))
    prior = float(np.sum((prec.alpha_l @ x @ prec.alpha_r) * x))
    return 0.5 * prec.beta * float(resid @ resid) + 0.5 * prior


def _write_trace_header(fh, extra=()):
    cols = ["iter", "rel_change", "neg_log_joint", "beta", "effective_rank"]
    fh.write(",".join(cols + list(extra)) + "\n")


def _write_trace_row(fh, it, rel, obj, beta, rank, extra=()):
    vals = [str(it), f"{rel:.6g}", f"{obj:.6g}", f"{beta:.6g}", str(rank)]
    fh.write(",".join(vals + [str(v) for v in extra]) + "\n")


def solve(inst: ProblemInstance, hyper: Hyperparameters | None = None,
          trace_path=None) -> Estimate:
    """Run the full solver until the estimate stabilizes.

    Each iteration: posterior mode/covariance, precision updates, precision
    balancing, noise-precision update. Stops when the relative Frobenius
    change of the estimate drops below hyper.tol or at hyper.max_iter.

    Raises SolverDivergenceError (with the offending state attached) if
    non-finite values appear.
    """
    hyper = hyper or Hyperparameters()
    state = init_state(inst, hyper)
    x_prev = state.x_hat
    converged = False
    trace_fh = open(trace_path, "w") if trace_path is not None else None
    if trace_fh:
        _write_trace_header(trace_fh)
    try:
        for it in range(1, hyper.max_iter + 1):
            x, sigma = map_estimate(state, inst, hyper.jitter)
            if not np.all(np.isfinite(x)):
                raise SolverDivergenceError(
                    f"non-finite estimate at iteration {it}", state)
            state.x_hat, state.sigma = x, sigma
            rel = float(np.linalg.norm(x - x_prev, "fro")
                        / max(np.linalg.norm(x_prev, "fro"), 1e-12))

            state.precisions = update_precisions(state, hyper)
            state.precisions = balance_precisions(state.precisions, x)
            state.precisions.beta = update_noise_precision(state, inst, hyper)
            state.iter = it

            obj = neg_log_joint(state, inst, hyper)
            state.history.append((it, rel, obj))
            if trace_fh:
                _write_trace_row(trace_fh, it, rel, obj,
                                 state.precisions.beta, effective_rank(x))
            if rel < hyper.tol:
                converged = True
                break
            x_prev = x
    finally:
        if trace_fh:
            trace_fh.close()
    return Estimate(
        x_hat=state.x_hat,
        effective_rank=effective_rank(state.x_hat),
        beta_hat=state.precisions.beta,
        iterations=state.iter,
        converged=converged,
    )
