"""Multi-start power iteration with lag stopping and objective-based selection.

Each trial draws its own initialization from stream ``(TRIAL_STREAM, t)`` of
the master seed, iterates the symmetrized tensor until the lag rule fires or
the budget runs out, and the trial with the largest T(v, v, v) wins. Trials
are independent, so they can be evaluated in blocks and on worker threads
without changing any result.
"""

from __future__ import annotations

import math
from concurrent.futures import Executor
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatchError, NoConvergedTrialsError
from .power_methods import (
    DEGENERATE,
    SYMMETRIZED,
    IterationConfig,
    Trajectory,
    iterate_batch,
)
from .tensor_core import (
    TRIAL_STREAM,
    DenseTensor,
    as_tensor,
    contract_all,
    make_rng,
    random_unit_vector,
    symmetrize,
)

DEFAULT_BLOCK = 256
SUCCESS_CORR = 0.9


@dataclass
class TrialResult:
    """Outcome of one initialization."""

    trial: int
    final: np.ndarray
    objective: float
    iterations_used: int
    stop_reason: str
    correlation: float | None = None
    trajectory: Trajectory | None = None
    # (master_seed, stream domain, trial) that reproduces the initialization
    init_seed: tuple[int, int, int] | None = None


@dataclass
class RecoveryResult:
    """Estimate chosen among trials, plus everything needed to audit the choice."""

    estimate: np.ndarray
    objective: float
    selected_trial: int
    per_trial: list[TrialResult]
    config: dict = field(default_factory=dict)
    correlation: float | None = None

    @property
    def selected(self) -> TrialResult:
        return self.per_trial[self.selected_trial]

    @property
    def iterations_used(self) -> int:
        return self.selected.iterations_used

    @property
    def stop_reason(self) -> str:
        return self.selected.stop_reason


def trial_initializations(master_seed: int, n: int, trials) -> np.ndarray:
    """Initial vectors for the given trial indices, one per row."""
    trials = list(trials)
    X = np.empty((len(trials), n))
    for r, t in enumerate(trials):
        X[r] = random_unit_vector(make_rng(master_seed, TRIAL_STREAM, t), n)
    return X


def _check_truth(truth, n):
    if truth is None:
        return None
    truth = np.asarray(truth, dtype=np.float64)
    if truth.shape != (n,):
        raise DimensionMismatchError(f"ground truth must have length {n}")
    return truth / np.linalg.norm(truth)


def _run_block(op, master_seed, trials, cfg, record):
    X0 = trial_initializations(master_seed, op.dims[0], trials)
    return trials, iterate_batch(op, X0, cfg, record=record, objectives=record)


def smpi_recover(
    T,
    m_init: int | None = None,
    cfg: IterationConfig | None = None,
    master_seed: int = 0,
    truth=None,
    block_size: int = DEFAULT_BLOCK,
    executor: Executor | None = None,
    record: bool | None = None,
) -> RecoveryResult:
    """Recover the planted direction of a (possibly non-symmetric) tensor.

    Parameters
    ----------
    T : DenseTensor or ndarray
        Order-k tensor with equal dimensions; symmetrized when not already
        flagged symmetric.
    m_init : int, optional
        Number of random initializations, default 10 n.
    cfg : IterationConfig, optional
        Per-trial iteration settings, default ``IterationConfig.for_dimension(n)``.
        The variant is ignored because the tensor is symmetrized up front.
    master_seed : int
        Seed of the initialization streams.
    truth : array, optional
        Planted vector; when given, per-trial and selected correlations are filled in.
    block_size : int
        Trials iterated together. Results do not depend on it.
    executor : concurrent.futures.Executor, optional
        Blocks are submitted here when given; the kernels release the GIL, so
        a thread pool gives real parallelism.
    record : bool, optional
        Keep per-trial trajectories (defaults to ``cfg.record_trajectory``).

    Raises
    ------
    NoConvergedTrialsError
        Every trial degenerated.
    """
    T = as_tensor(T)
    if len(set(T.dims)) != 1:
        raise DimensionMismatchError(f"SMPI needs equal dimensions, got {T.dims}")
    n = T.dims[0]
    if m_init is None:
        m_init = 10 * n
    if m_init < 1:
        raise ValueError("m_init must be positive")
    if block_size < 1:
        raise ValueError("block_size must be positive")
    if cfg is None:
        cfg = IterationConfig.for_dimension(n)
    record = cfg.record_trajectory if record is None else record
    truth = _check_truth(truth, n)
    op = T if T.symmetric else symmetrize(T)

    blocks = [list(range(s, min(s + block_size, m_init))) for s in range(0, m_init, block_size)]
    if executor is None:
        outcomes = [_run_block(op, master_seed, b, cfg, record) for b in blocks]
    else:
        futures = [executor.submit(_run_block, op, master_seed, b, cfg, record) for b in blocks]
        outcomes = [f.result() for f in futures]

    per_trial = []
    for trials, out in outcomes:
        for r, t in enumerate(trials):
            final = out.final[r].copy()
            per_trial.append(
                TrialResult(
                    trial=t,
                    final=final,
                    objective=float(out.objectives[r]),
                    iterations_used=int(out.iterations[r]),
                    stop_reason=out.stop_reasons[r],
                    correlation=None if truth is None else float(final @ truth),
                    trajectory=out.trajectories[r] if out.trajectories is not None else None,
                    init_seed=(int(master_seed), TRIAL_STREAM, t),
                )
            )

    best = _argmax_objective(per_trial)
    if best is None:
        raise NoConvergedTrialsError(f"all {m_init} trials degenerated")
    chosen = per_trial[best]
    return RecoveryResult(
        estimate=chosen.final.copy(),
        objective=chosen.objective,
        selected_trial=best,
        per_trial=per_trial,
        config=dict(
            algorithm="smpi",
            m_init=m_init,
            m_iter=cfg.m_iter,
            lag=cfg.lag,
            eps=cfg.eps,
            variant=SYMMETRIZED,
            master_seed=int(master_seed),
        ),
        correlation=chosen.correlation,
    )


def _argmax_objective(per_trial):
    best, best_obj = None, -math.inf
    for i, tr in enumerate(per_trial):
        if tr.stop_reason == DEGENERATE:
            continue
        if tr.objective > best_obj:
            best, best_obj = i, tr.objective
    return best


def select_best(candidates, T) -> tuple[int, np.ndarray]:
    """The candidate maximizing T(v, ..., v) and its index; ties go to the lowest index."""
    T = as_tensor(T)
    candidates = [np.asarray(c, dtype=np.float64) for c in candidates]
    if not candidates:
        raise ValueError("no candidates to select from")
    values = [contract_all(T, [c] * T.order) for c in candidates]
    best = int(np.argmax(values))
    return best, candidates[best]


@dataclass(frozen=True)
class SuccessStats:
    """Per-initialization success probability and the implied trial budget."""

    p: float
    successes: int
    trials: int
    success_corr: float

    def m_for_rate(self, rate: float = 0.99) -> float:
        return m_for_rate(self.p, rate)


def m_for_rate(p: float, rate: float = 0.99) -> float:
    """Smallest m with 1 - (1 - p)^m >= rate.

    ``inf`` when p = 0 and 1 when p = 1.
    """
    if not 0.0 < rate < 1.0:
        raise ValueError("rate must lie in (0, 1)")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if p == 0.0:
        return math.inf
    if p == 1.0:
        return 1
    m = math.ceil(math.log1p(-rate) / math.log1p(-p) - 1e-9)
    return max(m, 1)


def success_stats(results, success_corr: float = SUCCESS_CORR, truth=None) -> SuccessStats:
    """Fraction of trials whose final iterate has |<v, v0>| >= ``success_corr``.

    ``results`` is a :class:`RecoveryResult` or a list of :class:`TrialResult`.
    Correlations recorded at recovery time are used unless ``truth`` is given.
    Degenerate trials count as failures.
    """
    trials = results.per_trial if isinstance(results, RecoveryResult) else list(results)
    if not trials:
        raise ValueError("no trials")
    if truth is not None:
        truth = np.asarray(truth, dtype=np.float64)
        truth = truth / np.linalg.norm(truth)
    hits = 0
    for tr in trials:
        if tr.stop_reason == DEGENERATE:
            continue
        corr = float(tr.final @ truth) if truth is not None else tr.correlation
        if corr is None:
            raise ValueError("trials carry no correlation; pass truth")
        if abs(corr) >= success_corr:
            hits += 1
    return SuccessStats(p=hits / len(trials), successes=hits, trials=len(trials), success_corr=success_corr)


def as_operator(T) -> DenseTensor:
    """The symmetric tensor SMPI actually iterates."""
    T = as_tensor(T)
    return T if T.symmetric else symmetrize(T)
