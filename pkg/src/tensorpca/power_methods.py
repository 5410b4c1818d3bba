"""Power-iteration steps and the lag-stopped iteration engine.

The engine stops a trajectory when iterates ``lag`` steps apart nearly
coincide, |<v_{j-lag}, v_j>| >= 1 - eps, and never on two consecutive
iterates. Oscillating or slowly drifting phases are therefore not mistaken
for convergence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDirectionError, DimensionMismatchError
from .tensor_core import (
    DenseTensor,
    as_tensor,
    contract_leave_one,
    power_contract,
    row_dots,
    symmetrize,
)

LAG_CONVERGED = "lag_converged"
BUDGET_EXHAUSTED = "budget_exhausted"
DEGENERATE = "degenerate"

SIMPLE = "simple"
SYMMETRIZED = "symmetrized"

# below this norm a contraction is treated as the zero vector
DEGENERATE_NORM = 1e-300
UNIT_TOL = 1e-10
MAX_STORED_ITERATES = 10_000


@dataclass(frozen=True)
class IterationConfig:
    """Knobs of one power-iteration trajectory.

    ``lag`` must be smaller than ``m_iter``. Use :meth:`for_dimension` for the
    defaults m_iter = 10 n and lag = n.
    """

    m_iter: int
    lag: int
    eps: float = 1e-6
    record_trajectory: bool = False
    variant: str = SYMMETRIZED

    def __post_init__(self):
        if self.m_iter < 1:
            raise ValueError("m_iter must be positive")
        if not 1 <= self.lag < self.m_iter:
            raise ValueError(f"need 1 <= lag < m_iter, got lag={self.lag}, m_iter={self.m_iter}")
        if not 0.0 < self.eps < 1.0:
            raise ValueError("eps must lie in (0, 1)")
        if self.variant not in (SIMPLE, SYMMETRIZED):
            raise ValueError(f"unknown variant {self.variant!r}")

    @classmethod
    def for_dimension(cls, n: int, **overrides) -> "IterationConfig":
        params = dict(m_iter=10 * n, lag=n)
        params.update(overrides)
        return cls(**params)

    def stride(self) -> int:
        """Spacing of stored iterates when recording a trajectory."""
        if self.m_iter <= MAX_STORED_ITERATES:
            return 1
        return math.ceil(self.m_iter / MAX_STORED_ITERATES)


@dataclass
class Trajectory:
    """One recorded run. ``objectives[j-1]`` is T(v_j, v_j, v_j) for j = 1..iterations_used."""

    initial: np.ndarray
    final: np.ndarray
    objectives: np.ndarray
    stop_reason: str
    iterations_used: int
    iterates: np.ndarray = field(default_factory=lambda: np.empty((0, 0)))
    iterate_steps: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def converged(self) -> bool:
        return self.stop_reason == LAG_CONVERGED


@dataclass
class BatchOutcome:
    """Result of iterating a batch of independent trajectories."""

    final: np.ndarray
    objectives: np.ndarray
    iterations: np.ndarray
    stop_reasons: list
    trajectories: list | None = None

    @property
    def degenerate(self) -> np.ndarray:
        return np.array([r == DEGENERATE for r in self.stop_reasons])


def _unit(v, n, what="v"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.shape[0] != n:
        raise DimensionMismatchError(f"{what}: expected a vector of length {n}, got shape {v.shape}")
    if abs(np.linalg.norm(v) - 1.0) > UNIT_TOL:
        raise ValueError(f"{what} must have unit norm")
    return v


def _normalize(g, what="contraction"):
    norm = np.linalg.norm(g)
    if not norm >= DEGENERATE_NORM:
        raise DegenerateDirectionError(f"{what} has norm {norm:.3g}; draw a new initialization")
    return g / norm


def power_step(T, v) -> np.ndarray:
    """One simple step v <- T(:, v, ..., v) / ||T(:, v, ..., v)||."""
    T = as_tensor(T)
    v = _unit(v, T.dims[0])
    return _normalize(contract_leave_one(T, 0, [v] * (T.order - 1)))


def symmetrized_power_step(T, v) -> np.ndarray:
    """One step on the sum of the k one-axis contractions.

    Equal to :func:`power_step` on ``symmetrize(T)``; for a tensor flagged
    symmetric the k terms coincide and the simple step is returned.
    """
    T = as_tensor(T)
    v = _unit(v, T.dims[0])
    if T.symmetric:
        return power_step(T, v)
    if len(set(T.dims)) != 1:
        raise DimensionMismatchError("the symmetrized step needs equal dimensions")
    g = sum(contract_leave_one(T, a, [v] * (T.order - 1)) for a in range(T.order))
    return _normalize(g)


def projected_gradient(T, v) -> np.ndarray:
    """Sphere-projected gradient of H(v) = -T(v, ..., v), up to the factor k.

    Returns -T(:, v, v) + T(v, v, v) v, which is orthogonal to v. Power
    iteration moves along v - g / T(v, v, v) rescaled, i.e. gradient descent
    with step size 1 / T(v, v, v).
    """
    T = as_tensor(T)
    v = _unit(v, T.dims[0])
    g = contract_leave_one(T, 0, [v] * (T.order - 1))
    return -g + float(g @ v) * v


def operator_tensor(T, variant: str) -> DenseTensor:
    """Tensor whose simple power step realizes ``variant`` on ``T``."""
    T = as_tensor(T)
    if variant == SYMMETRIZED and not T.symmetric:
        return symmetrize(T)
    if len(set(T.dims[1:])) != 1 or T.dims[0] != T.dims[1]:
        raise DimensionMismatchError(f"power iteration needs equal dimensions, got {T.dims}")
    return T


def iterate_batch(
    T, X0, cfg: IterationConfig, record: bool | None = None, objectives: bool | None = None
) -> BatchOutcome:
    """Run independent lag-stopped trajectories from the rows of ``X0``.

    Rows are iterated with the per-row deterministic kernel, so each row's
    trajectory is identical to running it alone. Converged rows leave the
    active set; a row whose contraction vanishes stops with reason
    ``"degenerate"`` and keeps its last valid iterate.

    Parameters
    ----------
    T : DenseTensor
        Input tensor; symmetrized first for the symmetrized variant.
    X0 : ndarray, shape (B, n)
        Unit initial vectors, one per row.
    cfg : IterationConfig
    record : bool, optional
        Store iterates (thinned per ``cfg.stride()``); overrides
        ``cfg.record_trajectory``.
    objectives : bool, optional
        Store the per-iteration objective; defaults to ``record``. Either
        flag makes the outcome carry one :class:`Trajectory` per row.
    """
    op = operator_tensor(T, cfg.variant)
    record = cfg.record_trajectory if record is None else record
    track_obj = record if objectives is None else objectives
    keep = record or track_obj
    X = np.array(X0, dtype=np.float64, order="C", ndmin=2)
    B, n = X.shape
    if n != op.dims[0]:
        raise DimensionMismatchError(f"initial vectors have length {n}, tensor dims {op.dims}")
    for b in range(B):
        _unit(X[b], n, f"initial vector {b}")

    lag = cfg.lag
    ring = np.empty((lag + 1, B, n))
    ring[0] = X
    G = np.zeros((B, n))
    sq = np.zeros(B)
    dots = np.zeros(B)
    prev_obj = np.zeros(B)
    iterations = np.full(B, cfg.m_iter, dtype=np.int64)
    reasons = [BUDGET_EXHAUSTED] * B
    active = np.arange(B, dtype=np.int64)

    stride = cfg.stride()
    if keep:
        obj_hist = [[] for _ in range(B)]
        it_hist = [[] for _ in range(B)]
        step_hist = [[] for _ in range(B)]

    for j in range(1, cfg.m_iter + 1):
        power_contract(op, X, active, G)
        row_dots(G, G, active, sq)
        if track_obj and j > 1:
            row_dots(G, X, active, prev_obj)
            for r in active:
                obj_hist[r].append(prev_obj[r])
        norms = np.sqrt(sq[active])
        bad = ~(norms >= DEGENERATE_NORM)
        if bad.any():
            for r in active[bad]:
                iterations[r] = j
                reasons[r] = DEGENERATE
            active = active[~bad]
            norms = norms[~bad]
        X[active] = G[active] / norms[:, None]
        ring[j % (lag + 1), active] = X[active]
        if record and (j % stride == 0 or j == cfg.m_iter):
            for r in active:
                it_hist[r].append(X[r].copy())
                step_hist[r].append(j)
        if j > lag:
            row_dots(ring[(j - lag) % (lag + 1)], X, active, dots)
            done = np.abs(dots[active]) >= 1.0 - cfg.eps
            if done.any():
                for r in active[done]:
                    iterations[r] = j
                    reasons[r] = LAG_CONVERGED
                active = active[~done]
        if active.size == 0:
            break

    final_obj = row_dots(power_contract(op, X), X)
    trajectories = None
    if keep:
        trajectories = []
        for r in range(B):
            steps = step_hist[r]
            its = it_hist[r]
            if not record:
                steps, its = [], []
            if reasons[r] != DEGENERATE and (not steps or steps[-1] != iterations[r]):
                steps.append(int(iterations[r]))
                its.append(X[r].copy())
            objs = obj_hist[r][: max(int(iterations[r]) - 1, 0)]
            if reasons[r] != DEGENERATE and track_obj:
                objs = objs + [final_obj[r]]
            trajectories.append(
                Trajectory(
                    initial=np.array(X0[r], dtype=np.float64),
                    final=X[r].copy(),
                    objectives=np.asarray(objs),
                    stop_reason=reasons[r],
                    iterations_used=int(iterations[r]),
                    iterates=np.array(its).reshape(len(its), n),
                    iterate_steps=np.asarray(steps, dtype=np.int64),
                )
            )
    return BatchOutcome(
        final=X,
        objectives=final_obj,
        iterations=iterations,
        stop_reasons=reasons,
        trajectories=trajectories,
    )


def run_iteration(T, v_init, cfg: IterationConfig, trial=None) -> Trajectory:
    """Iterate one initial vector until the lag rule fires or the budget runs out.

    Raises
    ------
    DegenerateDirectionError
        The contraction vanished; ``trial`` and the iteration are attached.
    """
    T = as_tensor(T)
    v_init = _unit(v_init, T.dims[0], "v_init")
    out = iterate_batch(T, v_init[None, :], cfg, objectives=True)
    traj = out.trajectories[0]
    if traj.stop_reason == DEGENERATE:
        raise DegenerateDirectionError(
            f"contraction vanished at iteration {traj.iterations_used}",
            trial=trial,
            iteration=traj.iterations_used,
        )
    return traj
