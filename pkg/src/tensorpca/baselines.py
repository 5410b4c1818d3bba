"""Reference algorithms: naive power iteration and tensor unfolding."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatchError,
    NoConvergedTrialsError,
    UnsupportedOrderError,
)
from .power_methods import (
    BUDGET_EXHAUSTED,
    DEGENERATE,
    DEGENERATE_NORM,
    SIMPLE,
    operator_tensor,
)
from .smpi import RecoveryResult, TrialResult, _check_truth, trial_initializations
from .tensor_core import (
    TRIAL_STREAM,
    as_tensor,
    contract_all,
    make_rng,
    power_contract,
    random_unit_vector,
    row_dots,
)

CONSECUTIVE_CONVERGED = "consecutive_converged"
NAIVE_INITS = 10
# iteration budget is ceil(NAIVE_LOG_FACTOR * ln n)
NAIVE_LOG_FACTOR = 10.0

UNFOLD_STREAM = 3
UNFOLD_TOL = 1e-10
UNFOLD_MAX_STEPS = 1000


def naive_budget(n: int, factor: float = NAIVE_LOG_FACTOR) -> int:
    return max(2, math.ceil(factor * math.log(n)))


def naive_pi_recover(
    T,
    n_init: int = NAIVE_INITS,
    max_iter: int | None = None,
    master_seed: int = 0,
    eps: float = 1e-6,
    truth=None,
    variant: str = SIMPLE,
) -> RecoveryResult:
    """Power iteration with a consecutive-step stopping rule and a log budget.

    Each of ``n_init`` random starts iterates until |<v_{j-1}, v_j>| >= 1 - eps
    or ``max_iter`` steps (default ``ceil(10 ln n)``); the start with the
    largest T(v, v, v) wins. Initializations use the same streams as
    :func:`tensorpca.smpi.smpi_recover`, so the two are paired trial by trial.

    The default ``variant="simple"`` iterates T(:, v, v) on the tensor as
    given, the classical scheme; on a symmetric tensor both variants agree.
    """
    T = as_tensor(T)
    if len(set(T.dims)) != 1:
        raise DimensionMismatchError(f"power iteration needs equal dimensions, got {T.dims}")
    op = operator_tensor(T, variant)
    n = op.dims[0]
    if n_init < 1:
        raise ValueError("n_init must be positive")
    max_iter = naive_budget(n) if max_iter is None else int(max_iter)
    if max_iter < 1:
        raise ValueError("max_iter must be positive")
    truth = _check_truth(truth, n)

    X = trial_initializations(master_seed, n, range(n_init))
    G = np.zeros_like(X)
    sq = np.zeros(n_init)
    dots = np.zeros(n_init)
    iterations = np.full(n_init, max_iter, dtype=np.int64)
    reasons = [BUDGET_EXHAUSTED] * n_init
    active = np.arange(n_init, dtype=np.int64)
    for j in range(1, max_iter + 1):
        power_contract(op, X, active, G)
        row_dots(G, G, active, sq)
        norms = np.sqrt(sq[active])
        bad = ~(norms >= DEGENERATE_NORM)
        for r in active[bad]:
            iterations[r] = j
            reasons[r] = DEGENERATE
        active, norms = active[~bad], norms[~bad]
        G[active] /= norms[:, None]
        row_dots(G, X, active, dots)
        X[active] = G[active]
        done = np.abs(dots[active]) >= 1.0 - eps
        for r in active[done]:
            iterations[r] = j
            reasons[r] = CONSECUTIVE_CONVERGED
        active = active[~done]
        if active.size == 0:
            break

    objectives = row_dots(power_contract(op, X), X)
    per_trial = [
        TrialResult(
            trial=t,
            final=X[t].copy(),
            objective=float(objectives[t]),
            iterations_used=int(iterations[t]),
            stop_reason=reasons[t],
            correlation=None if truth is None else float(X[t] @ truth),
            init_seed=(int(master_seed), TRIAL_STREAM, t),
        )
        for t in range(n_init)
    ]
    valid = [t for t in range(n_init) if reasons[t] != DEGENERATE]
    if not valid:
        raise NoConvergedTrialsError(f"all {n_init} trials degenerated")
    best = max(valid, key=lambda t: (objectives[t], -t))
    chosen = per_trial[best]
    return RecoveryResult(
        estimate=chosen.final.copy(),
        objective=chosen.objective,
        selected_trial=best,
        per_trial=per_trial,
        config=dict(
            algorithm="naive_pi",
            n_init=n_init,
            max_iter=max_iter,
            eps=eps,
            variant=variant,
            master_seed=int(master_seed),
        ),
        correlation=chosen.correlation,
    )


@dataclass
class UnfoldingResult:
    """Leading left singular vector of the n x n^2 unfolding, sign-aligned."""

    estimate: np.ndarray
    objective: float
    singular_value: float
    iterations_used: int
    converged: bool
    residual: float
    config: dict = field(default_factory=dict)

    @property
    def warning(self) -> bool:
        return not self.converged


def _gram_matvec(data, axis, w):
    # M M^T w where M unfolds ``axis`` against the remaining axes
    A = np.moveaxis(data, axis, 0)
    u = np.tensordot(w, A, axes=(0, 0))
    return np.tensordot(A, u, axes=(list(range(1, A.ndim)), list(range(u.ndim))))


def unfolding_recover(
    T,
    axis: int = 0,
    tol: float = UNFOLD_TOL,
    max_steps: int = UNFOLD_MAX_STEPS,
    seed: int = 0,
) -> UnfoldingResult:
    """Spectral estimate from the unfolding M (n x n^2) of an order-3 tensor.

    Iterates w <- M M^T w / ||M M^T w|| through two tensor contractions,
    without forming M M^T, until ||w_j - w_{j-1}|| <= ``tol`` or
    ``max_steps`` steps. The result is then sign-aligned so that
    T(v, v, v) >= 0. Hitting the step cap returns the current iterate with
    ``converged=False``.
    """
    T = as_tensor(T)
    if T.order != 3:
        raise UnsupportedOrderError("unfolding recovery is implemented for order 3")
    if len(set(T.dims)) != 1:
        raise DimensionMismatchError(f"unfolding recovery needs equal dimensions, got {T.dims}")
    n = T.dims[0]
    w = random_unit_vector(make_rng(seed, UNFOLD_STREAM, 0), n)
    converged = False
    steps = 0
    for steps in range(1, max_steps + 1):
        g = _gram_matvec(T.data, axis, w)
        norm = np.linalg.norm(g)
        if not norm >= DEGENERATE_NORM:
            # w orthogonal to the range; restart from a new draw
            w = random_unit_vector(make_rng(seed, UNFOLD_STREAM, steps), n)
            continue
        w_new = g / norm
        delta = np.linalg.norm(w_new - w)
        w = w_new
        if delta <= tol:
            converged = True
            break
    g = _gram_matvec(T.data, axis, w)
    lam = float(w @ g)
    residual = float(np.linalg.norm(g - lam * w))
    obj = contract_all(T, [w, w, w])
    if obj < 0:
        w, obj = -w, -obj
    return UnfoldingResult(
        estimate=w,
        objective=obj,
        singular_value=math.sqrt(max(lam, 0.0)),
        iterations_used=steps,
        converged=converged,
        residual=residual,
        config=dict(algorithm="unfolding", axis=axis, tol=tol, max_steps=max_steps, seed=int(seed)),
    )
