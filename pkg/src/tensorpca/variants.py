"""Recovery with unequal axis dimensions and greedy CP decomposition by deflation."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, NoConvergedTrialsError
from .power_methods import (
    BUDGET_EXHAUSTED,
    DEGENERATE,
    DEGENERATE_NORM,
    LAG_CONVERGED,
    IterationConfig,
    iterate_batch,
)
from .tensor_core import (
    AXIS_TRIAL_STREAM,
    TRIAL_STREAM,
    DenseTensor,
    as_tensor,
    bilinear_contract,
    contract_all,
    make_rng,
    outer_power,
    random_unit_vector,
    row_dots,
    symmetrize,
)

MAX_RESEEDS = 10
DUPLICATE_CORR = 0.99


def deflate(T, v, alpha: float) -> DenseTensor:
    """Return T - alpha * v^(x)k; a symmetric flag carries over."""
    T = as_tensor(T)
    if len(set(T.dims)) != 1:
        raise DimensionMismatchError(f"deflation needs equal dimensions, got {T.dims}")
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (T.dims[0],):
        raise DimensionMismatchError(f"vector of length {v.shape} for dims {T.dims}")
    if abs(np.linalg.norm(v) - 1.0) > 1e-10:
        raise ValueError("deflation vector must have unit norm")
    data = T.data - float(alpha) * outer_power(v, T.order)
    return DenseTensor(data, symmetric=T.symmetric, copy=False)


# ----------------------------------------------------------------------------
# unequal dimensions


@dataclass
class AxisTrial:
    trial: int
    vectors: tuple[np.ndarray, np.ndarray, np.ndarray]
    objective: float
    iterations_used: int
    stop_reason: str
    reseeds: int = 0


@dataclass
class AsymmetricRecovery:
    """Per-axis estimates (a, b, c) of the trial with the largest T(a, b, c)."""

    vectors: tuple[np.ndarray, np.ndarray, np.ndarray]
    objective: float
    selected_trial: int
    per_trial: list[AxisTrial]
    reseeds: int
    config: dict = field(default_factory=dict)

    def correlations(self, truth) -> tuple[float, float, float]:
        """Signed <v_hat_axis, u_axis> for the three planted factors."""
        return tuple(float(v @ (u / np.linalg.norm(u))) for v, u in zip(self.vectors, truth))


def _axis_inits(master_seed, dims, trial, rng=None):
    rng = make_rng(master_seed, AXIS_TRIAL_STREAM, trial) if rng is None else rng
    return rng, [random_unit_vector(rng, d) for d in dims]


def _alternating(ops, A, Bv, C, m_iter, lag, eps):
    """Batched (a, b, c) sweeps with the lag rule applied on all three axes."""
    T0, T1, T2 = ops
    R = A.shape[0]
    hist = [np.empty((lag + 1,) + X.shape) for X in (A, Bv, C)]
    for h, X in zip(hist, (A, Bv, C)):
        h[0] = X
    G = [np.zeros_like(A), np.zeros_like(Bv), np.zeros_like(C)]
    sq = np.zeros(R)
    dots = np.zeros(R)
    obj = np.zeros(R)
    iterations = np.full(R, m_iter, dtype=np.int64)
    reasons = [BUDGET_EXHAUSTED] * R
    active = np.arange(R, dtype=np.int64)
    for j in range(1, m_iter + 1):
        # a <- T(:, b, c), b <- T(a, :, c), c <- T(a, b, :), each normalized
        for axis, (op, Y, W, X) in enumerate(((T0, Bv, C, A), (T1, A, C, Bv), (T2, A, Bv, C))):
            bilinear_contract(op, Y, W, active, G[axis])
            row_dots(G[axis], G[axis], active, sq)
            norms = np.sqrt(sq[active])
            bad = ~(norms >= DEGENERATE_NORM)
            if bad.any():
                for r in active[bad]:
                    iterations[r] = j
                    reasons[r] = DEGENERATE
                active = active[~bad]
                norms = norms[~bad]
            X[active] = G[axis][active] / norms[:, None]
            if axis == 2:
                # T(a, b, c_new) = ||T(a, b, :)||
                obj[active] = norms
        for h, X in zip(hist, (A, Bv, C)):
            h[j % (lag + 1)][active] = X[active]
        if j > lag:
            done = np.ones(active.size, dtype=bool)
            for h, X in zip(hist, (A, Bv, C)):
                row_dots(h[(j - lag) % (lag + 1)], X, active, dots)
                done &= np.abs(dots[active]) >= 1.0 - eps
            for r in active[done]:
                iterations[r] = j
                reasons[r] = LAG_CONVERGED
            active = active[~done]
        if active.size == 0:
            break
    return obj, iterations, reasons


def asymmetric_recover(
    T,
    m_init: int | None = None,
    m_iter: int | None = None,
    master_seed: int = 0,
    lag: int | None = None,
    eps: float = 1e-6,
    block_size: int = 256,
) -> AsymmetricRecovery:
    """Multi-start alternating power iteration for a spike u1 (x) u2 (x) u3.

    Every trial draws independent unit initializations for the three axes
    from stream ``(AXIS_TRIAL_STREAM, t)``, then sweeps a <- T(:, b, c),
    b <- T(a, :, c), c <- T(a, b, :) with normalization. A trial stops early
    when all three axes pass the lag test; otherwise it runs ``m_iter``
    sweeps. A trial whose contraction vanishes is restarted from fresh draws
    of its own stream, at most ``MAX_RESEEDS`` times.

    Defaults are m_init = m_iter = 10 * mean(dims) and lag = max(dims).
    """
    T = as_tensor(T)
    if T.order != 3:
        raise DimensionMismatchError("asymmetric recovery is defined for order 3")
    dims = T.dims
    nbar = sum(dims) / 3
    m_init = int(round(10 * nbar)) if m_init is None else int(m_init)
    m_iter = int(round(10 * nbar)) if m_iter is None else int(m_iter)
    lag = max(dims) if lag is None else int(lag)
    if m_init < 1 or m_iter < 1:
        raise ValueError("m_init and m_iter must be positive")
    if not 0.0 < eps < 1.0:
        raise ValueError("eps must lie in (0, 1)")
    lag = max(1, min(lag, m_iter - 1))

    # copies with the updated axis first, so one kernel serves all three updates
    ops = (
        T,
        DenseTensor(np.ascontiguousarray(T.data.transpose(1, 0, 2)), copy=False),
        DenseTensor(np.ascontiguousarray(T.data.transpose(2, 0, 1)), copy=False),
    )

    per_trial: list[AxisTrial | None] = [None] * m_init
    total_reseeds = 0
    for s in range(0, m_init, block_size):
        trials = list(range(s, min(s + block_size, m_init)))
        pending = {}
        for t in trials:
            pending[t] = _axis_inits(master_seed, dims, t)
        reseeds = {t: 0 for t in trials}
        while pending:
            order = sorted(pending)
            inits = [pending[t][1] for t in order]
            A = np.array([x[0] for x in inits])
            Bv = np.array([x[1] for x in inits])
            C = np.array([x[2] for x in inits])
            obj, its, reasons = _alternating(ops, A, Bv, C, m_iter, lag, eps)
            retry = {}
            for r, t in enumerate(order):
                if reasons[r] == DEGENERATE and reseeds[t] < MAX_RESEEDS:
                    reseeds[t] += 1
                    total_reseeds += 1
                    rng = pending[t][0]
                    retry[t] = _axis_inits(master_seed, dims, t, rng)
                    continue
                per_trial[t] = AxisTrial(
                    trial=t,
                    vectors=(A[r].copy(), Bv[r].copy(), C[r].copy()),
                    objective=float(obj[r]),
                    iterations_used=int(its[r]),
                    stop_reason=reasons[r],
                    reseeds=reseeds[t],
                )
            pending = retry

    best, best_obj = None, -math.inf
    for i, tr in enumerate(per_trial):
        if tr.stop_reason != DEGENERATE and tr.objective > best_obj:
            best, best_obj = i, tr.objective
    if best is None:
        raise NoConvergedTrialsError(f"all {m_init} trials degenerated")
    chosen = per_trial[best]
    return AsymmetricRecovery(
        vectors=tuple(v.copy() for v in chosen.vectors),
        objective=chosen.objective,
        selected_trial=best,
        per_trial=per_trial,
        reseeds=total_reseeds,
        config=dict(algorithm="asymmetric", m_init=m_init, m_iter=m_iter, lag=lag, eps=eps, master_seed=int(master_seed)),
    )


# ----------------------------------------------------------------------------
# CP decomposition


@dataclass(frozen=True)
class CPComponent:
    vector: np.ndarray
    alpha: float
    beta_hat: float
    objective: float
    trial: int


@dataclass(frozen=True)
class AcceptanceRecord:
    trial: int
    accepted: bool
    iterations_used: int
    stop_reason: str
    alpha: float | None = None


@dataclass
class CPResult:
    """Components ordered by decreasing T(v, ..., v) on the input tensor."""

    components: list[CPComponent]
    residual: DenseTensor
    log: list[AcceptanceRecord]
    accepted: list[CPComponent]
    merged: int
    shortfall: bool
    config: dict = field(default_factory=dict)

    @property
    def vectors(self) -> np.ndarray:
        return np.array([c.vector for c in self.components])

    @property
    def beta_hats(self) -> np.ndarray:
        return np.array([c.beta_hat for c in self.components])


def _merge_duplicates(accepted, threshold):
    # greedy, strongest first: a vector is dropped when it matches a kept one
    kept = []
    for comp in sorted(accepted, key=lambda c: (-c.objective, c.trial)):
        if all(abs(float(comp.vector @ k.vector)) <= threshold for k in kept):
            kept.append(comp)
    return kept


def cp_decompose(
    T,
    p: int,
    m_init: int | None = None,
    m_iter: int | None = None,
    lag: int | None = None,
    eps: float = 1e-6,
    master_seed: int = 0,
    duplicate_corr: float = DUPLICATE_CORR,
) -> CPResult:
    """Greedy rank-p symmetric CP decomposition by selective deflation.

    Initializations are processed in order. Each runs power iteration on the
    current residual with the lag stopping rule; a trajectory that passes
    the lag test is accepted, its coefficient alpha = <R, v^(x)k> is
    subtracted and the next initialization sees the deflated residual.
    Accepted vectors that nearly coincide (|<u, w>| > ``duplicate_corr``)
    are merged, keeping the one with the larger objective. The sum of
    objectives over a subset is separable, so the best subset of size p is
    the p accepted vectors with the largest individual T(v, ..., v).

    Defaults are m_init = m_iter = 10 n and lag = n. ``beta_hat`` is
    alpha / sqrt(n).
    """
    T = as_tensor(T)
    if len(set(T.dims)) != 1:
        raise DimensionMismatchError(f"CP decomposition needs equal dimensions, got {T.dims}")
    if p < 1:
        raise ValueError("p must be >= 1")
    n, k = T.dims[0], T.order
    m_init = 10 * n if m_init is None else int(m_init)
    cfg = IterationConfig.for_dimension(
        n, **{key: val for key, val in dict(m_iter=m_iter, lag=lag, eps=eps).items() if val is not None}
    )
    original = T if T.symmetric else symmetrize(T)
    residual = original
    log, accepted = [], []
    for t in range(m_init):
        v_init = random_unit_vector(make_rng(master_seed, TRIAL_STREAM, t), n)
        out = iterate_batch(residual, v_init[None, :], cfg)
        reason = out.stop_reasons[0]
        its = int(out.iterations[0])
        if reason != LAG_CONVERGED:
            log.append(AcceptanceRecord(t, False, its, reason))
            continue
        v = out.final[0].copy()
        alpha = contract_all(residual, [v] * k)
        residual = deflate(residual, v, alpha)
        accepted.append(
            CPComponent(
                vector=v,
                alpha=alpha,
                beta_hat=alpha / math.sqrt(n),
                objective=contract_all(original, [v] * k),
                trial=t,
            )
        )
        log.append(AcceptanceRecord(t, True, its, reason, alpha))

    kept = _merge_duplicates(accepted, duplicate_corr)
    chosen = kept[:p]
    return CPResult(
        components=chosen,
        residual=residual,
        log=log,
        accepted=accepted,
        merged=len(accepted) - len(kept),
        shortfall=len(chosen) < p,
        config=dict(
            algorithm="cp",
            p=p,
            m_init=m_init,
            m_iter=cfg.m_iter,
            lag=cfg.lag,
            eps=cfg.eps,
            master_seed=int(master_seed),
            duplicate_corr=duplicate_corr,
        ),
    )


def match_components(estimates, planted) -> tuple[np.ndarray, np.ndarray]:
    """Optimal one-to-one assignment maximizing the total |correlation|.

    Returns ``(assignment, correlations)``: ``assignment[l]`` is the index of
    the estimate matched to planted vector ``l`` (-1 when there are fewer
    estimates) and ``correlations[l]`` the signed inner product (0 when
    unmatched). Exhaustive search, intended for a handful of components.
    """
    import itertools

    E = [np.asarray(e, dtype=np.float64) for e in estimates]
    P = [np.asarray(u, dtype=np.float64) / np.linalg.norm(u) for u in planted]
    m = max(len(E), len(P))
    C = np.zeros((m, m))
    for l, u in enumerate(P):
        for e, v in enumerate(E):
            C[l, e] = float(v @ u)
    best, best_val = None, -math.inf
    for perm in itertools.permutations(range(m)):
        val = sum(abs(C[l, perm[l]]) for l in range(len(P)))
        if val > best_val:
            best, best_val = perm, val
    assignment = np.array([best[l] if best[l] < len(E) else -1 for l in range(len(P))], dtype=np.int64)
    corrs = np.array([C[l, best[l]] for l in range(len(P))])
    return assignment, corrs
