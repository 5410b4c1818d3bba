"""Analysis instruments: gradient split, plateau formula, escape events, thresholds."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionMismatchError, SingularPlateauError, UnsupportedOrderError
from .power_methods import DEGENERATE_NORM, IterationConfig, Trajectory, iterate_batch
from .tensor_core import (
    as_tensor,
    contract_all,
    contract_leave_one,
    contract_leave_two,
    generate_spiked,
    power_contract,
    symmetrize,
)

# A point stuck near a minimum oscillates around it, so stagnation is judged
# on iterates two steps apart; period=1 gives the plain consecutive test.
STAGNATION_TOL = 0.1
STAGNATION_WINDOW = 20
STAGNATION_PERIOD = 2
THRESHOLD_FRACTION = 0.95


# ----------------------------------------------------------------------------
# gradient decomposition and the plateau


@dataclass(frozen=True)
class GradientSplit:
    """T(:, v, v) split into the noise part Z(:, v, v) and the signal part."""

    g_noise: np.ndarray
    g_signal: np.ndarray
    noise_alignment: float
    ratio: float

    @property
    def total(self) -> np.ndarray:
        return self.g_noise + self.g_signal


def gradient_split(Z, s: float, v0, v) -> GradientSplit:
    """Split of T(:, v, ..., v) for T = Z + s v0^(x)k.

    ``noise_alignment`` is <g_N / ||g_N||, v0> and ``ratio`` is
    <g_N, v0> / ||g_S|| (NaN when the signal part vanishes).
    """
    Z = as_tensor(Z)
    k = Z.order
    v0 = np.asarray(v0, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if v0.shape != (Z.dims[0],) or v.shape != (Z.dims[1],):
        raise DimensionMismatchError(f"vectors {v0.shape}, {v.shape} do not match dims {Z.dims}")
    g_noise = contract_leave_one(Z, 0, [v] * (k - 1))
    c = float(v @ v0)
    g_signal = (float(s) * c ** (k - 1)) * v0
    norm_n = np.linalg.norm(g_noise)
    norm_s = np.linalg.norm(g_signal)
    proj = float(g_noise @ v0)
    return GradientSplit(
        g_noise=g_noise,
        g_signal=g_signal,
        noise_alignment=proj / norm_n if norm_n > 0 else math.nan,
        ratio=proj / norm_s if norm_s > 0 else math.nan,
    )


def plateau_statistic(Z, v0, v) -> float:
    """Direct <Z(:, v, v) / ||Z(:, v, v)||, v0>."""
    return gradient_split(Z, 0.0, v0, v).noise_alignment


def plateau_predicted(c: float, t: float, s: float) -> float:
    """Closed-form noise alignment at a fixed point of power iteration.

    At a fixed point T(:, v, v) = t v with c = <v, v0> and T = Z + s v0^(x)3,
    Z(:, v, v) = t v - s c^2 v0, hence

        <Z(:, v, v) / ||Z(:, v, v)||, v0> = c (t - s c) / sqrt(t^2 + s^2 c^4 - 2 s c^3 t).

    Raises
    ------
    SingularPlateauError
        The radicand is at most 1e-12 t^2, as at a noiseless fixed point
        (c = 1, t = s) where Z(:, v, v) vanishes.
    """
    c, t, s = float(c), float(t), float(s)
    radicand = t * t + s * s * c**4 - 2.0 * s * c**3 * t
    if not radicand > 1e-12 * t * t:
        raise SingularPlateauError(f"radicand {radicand:.3g} too small for t={t:.6g}")
    return c * (t - s * c) / math.sqrt(radicand)


def refine_fixed_point(T, v, tol: float = 1e-13, max_iter: int = 100_000) -> tuple[np.ndarray, bool]:
    """Polish ``v`` by simple power steps until consecutive iterates agree to ``tol``.

    Meant for points already near an attracting fixed point, such as the
    output of a lag-converged run. Sign flips between steps are tolerated.
    """
    T = as_tensor(T)
    op = T if T.symmetric else symmetrize(T)
    x = np.array(v, dtype=np.float64, ndmin=2)
    for _ in range(max_iter):
        g = power_contract(op, x)[0]
        norm = np.linalg.norm(g)
        if not norm >= DEGENERATE_NORM:
            return x[0], False
        y = g / norm
        if min(np.linalg.norm(y - x[0]), np.linalg.norm(y + x[0])) <= tol:
            return y, True
        x[0] = y
    return x[0], False


# ----------------------------------------------------------------------------
# escape events


@dataclass(frozen=True)
class EscapeEvent:
    """A stagnation window and the stability test at its center.

    ``start`` and ``end`` are iteration numbers (0 is the initialization).
    ``lambda1`` is the largest-magnitude eigenvalue of T(:, :, m) on the
    complement of m and ``direction`` its eigenvector. ``alignment`` is
    |<(v_{e+1} - v_e) / ||.||, direction>| at the first step after the
    window (NaN when the trajectory ends there).
    """

    start: int
    end: int
    minimum: np.ndarray
    lambda1: float
    direction: np.ndarray
    objective: float
    unstable: bool
    alignment: float
    reliable: bool = True


def _complement_basis(m):
    # Householder reflector sending m to e1; its other columns span m-perp
    n = m.shape[0]
    u = m.copy()
    u[0] += math.copysign(1.0, m[0]) if m[0] != 0 else 1.0
    H = np.eye(n) - 2.0 * np.outer(u, u) / (u @ u)
    return H[:, 1:]


def transverse_eigen(T, m) -> tuple[float, np.ndarray, bool]:
    """Largest-magnitude eigenpair of T(:, :, m) restricted to the complement of m.

    Returns ``(lambda1, w, reliable)``. The slice is symmetrized (a no-op for
    symmetric T), compressed onto an orthonormal basis of the complement and
    diagonalized densely.
    """
    T = as_tensor(T)
    if T.order != 3:
        raise UnsupportedOrderError("escape analysis is implemented for order 3")
    m = np.asarray(m, dtype=np.float64)
    m = m / np.linalg.norm(m)
    M = contract_leave_two(T, (0, 1), m)
    M = 0.5 * (M + M.T)
    Q = _complement_basis(m)
    B = Q.T @ M @ Q
    try:
        vals, vecs = np.linalg.eigh(0.5 * (B + B.T))
    except np.linalg.LinAlgError:
        return math.nan, np.zeros_like(m), False
    idx = int(np.argmax(np.abs(vals)))
    w = Q @ vecs[:, idx]
    return float(vals[idx]), w / np.linalg.norm(w), bool(np.all(np.isfinite(vals)))


def escape_condition(T, m) -> EscapeEvent:
    """Stability test of power iteration at a point m (window fields set to 0)."""
    lam, w, ok = transverse_eigen(T, m)
    m = np.asarray(m, dtype=np.float64) / np.linalg.norm(m)
    obj = contract_all(T, [m, m, m])
    return EscapeEvent(
        start=0,
        end=0,
        minimum=m,
        lambda1=lam,
        direction=w,
        objective=obj,
        unstable=bool(2.0 * abs(lam) > obj),
        alignment=math.nan,
        reliable=ok,
    )


def stagnation_windows(
    iterates,
    tol: float = STAGNATION_TOL,
    window: int = STAGNATION_WINDOW,
    period: int = STAGNATION_PERIOD,
) -> list[tuple[int, int]]:
    """Maximal runs with ||v_{i+period} - v_i|| < tol for at least ``window`` steps.

    Returns ``(start, end)`` index pairs into ``iterates`` covering every
    iterate of the run; a run lasting to the last iterate (the final
    convergence) is omitted.
    """
    if period < 1 or window < 1:
        raise ValueError("period and window must be positive")
    V = np.asarray(iterates, dtype=np.float64)
    if V.shape[0] <= period:
        return []
    small = np.linalg.norm(V[period:] - V[:-period], axis=1) < tol
    out, i, last = [], 0, small.shape[0]
    while i < last:
        if not small[i]:
            i += 1
            continue
        j = i
        while j < last and small[j]:
            j += 1
        if j - i >= window and j < last:
            out.append((i, j - 1 + period))
        i = j
    return out


def escape_analysis(
    T,
    trajectory: Trajectory,
    stagnation_tol: float = STAGNATION_TOL,
    window: int = STAGNATION_WINDOW,
    period: int = STAGNATION_PERIOD,
) -> list[EscapeEvent]:
    """Escape events along a recorded trajectory of symmetric power iteration.

    The trajectory must store every iterate (no thinning); its initial
    vector counts as iteration 0. Each stagnation window yields one event
    whose minimum estimate is the renormalized mean of the window iterates.
    """
    T = as_tensor(T)
    op = T if T.symmetric else symmetrize(T)
    steps = np.asarray(trajectory.iterate_steps)
    if steps.size and not np.array_equal(steps, np.arange(1, steps.size + 1)):
        raise ValueError("escape analysis needs a densely recorded trajectory")
    if steps.size == 0 and trajectory.iterations_used > 0:
        raise ValueError("trajectory holds no iterates; record it with record_trajectory=True")
    V = np.vstack([trajectory.initial[None, :], trajectory.iterates])
    events = []
    for a, b in stagnation_windows(V, stagnation_tol, window, period):
        m = V[a : b + 1].mean(axis=0)
        m /= np.linalg.norm(m)
        base = escape_condition(op, m)
        d = V[b + 1] - V[b] if b + 1 < V.shape[0] else None
        if d is not None and np.linalg.norm(d) > 0:
            align = abs(float(d @ base.direction)) / float(np.linalg.norm(d))
        else:
            align = math.nan
        events.append(
            EscapeEvent(
                start=a,
                end=b,
                minimum=base.minimum,
                lambda1=base.lambda1,
                direction=base.direction,
                objective=base.objective,
                unstable=base.unstable,
                alignment=align,
                reliable=base.reliable,
            )
        )
    return events


def record_trial(T, v_init, cfg: IterationConfig) -> Trajectory:
    """Re-run one initialization with dense recording (bitwise the same path)."""
    T = as_tensor(T)
    op = T if T.symmetric else symmetrize(T)
    out = iterate_batch(op, np.asarray(v_init, dtype=np.float64)[None, :], cfg, record=True, objectives=True)
    return out.trajectories[0]


# ----------------------------------------------------------------------------
# thresholds


def empirical_alpha(beta1: float, n1: float, beta2: float, n2: float) -> float:
    """Log-log slope (log beta2 - log beta1) / (log n2 - log n1)."""
    if min(beta1, beta2, n1, n2) <= 0:
        raise ValueError("empirical_alpha needs positive inputs")
    if n1 == n2:
        raise ValueError("n1 and n2 must differ")
    return (math.log(beta2) - math.log(beta1)) / (math.log(n2) - math.log(n1))


def load_reference_curve(path) -> Callable[[float], float]:
    """Read a ``beta,corr_opt`` CSV and return a linear interpolant in beta."""
    betas, corrs = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"beta", "corr_opt"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected columns beta,corr_opt")
        for row in reader:
            betas.append(float(row["beta"]))
            corrs.append(float(row["corr_opt"]))
    order = np.argsort(betas)
    xs, ys = np.asarray(betas)[order], np.asarray(corrs)[order]
    if xs.size == 0:
        raise ValueError(f"{path}: no rows")
    return lambda beta: float(np.interp(beta, xs, ys))


@dataclass(frozen=True)
class ThresholdScan:
    threshold: float | None
    betas: tuple[float, ...]
    mean_correlations: tuple[float, ...]
    targets: tuple[float, ...]


def threshold_scan(
    algorithm: Callable,
    n: int,
    beta_grid: Sequence[float],
    target_corr,
    seeds: Sequence[int],
    k: int = 3,
    symmetric_noise: bool = False,
    fraction: float = THRESHOLD_FRACTION,
) -> ThresholdScan:
    """Scan ``beta_grid`` upward; stop at the first beta that clears the target.

    ``algorithm(instance)`` returns an estimate of the planted vector; the
    correlation used is |<v_hat, v0>|. ``target_corr`` is a number or a
    function of beta. Instance ``i`` of every grid point uses seed
    ``seeds[i]``, so grid points share their noise tensors.
    """
    grid = [float(b) for b in beta_grid]
    if any(b2 <= b1 for b1, b2 in zip(grid, grid[1:])):
        raise ValueError("beta_grid must be strictly increasing")
    if not seeds:
        raise ValueError("need at least one seed")
    target = target_corr if callable(target_corr) else (lambda _b, c=float(target_corr): c)
    seen_b, seen_c, seen_t = [], [], []
    for beta in grid:
        corrs = []
        for seed in seeds:
            inst = generate_spiked(n, k, beta, seed=seed, symmetric_noise=symmetric_noise)
            est = np.asarray(algorithm(inst), dtype=np.float64)
            corrs.append(abs(float(est @ inst.v0)) / float(np.linalg.norm(est)))
        mean = float(np.mean(corrs))
        goal = fraction * float(target(beta))
        seen_b.append(beta)
        seen_c.append(mean)
        seen_t.append(goal)
        if mean > goal:
            return ThresholdScan(beta, tuple(seen_b), tuple(seen_c), tuple(seen_t))
    return ThresholdScan(None, tuple(seen_b), tuple(seen_c), tuple(seen_t))


def empirical_threshold(algorithm, n, beta_grid, target_corr, seeds, **kwargs) -> float | None:
    """Smallest grid beta whose mean |correlation| exceeds 0.95 * target; None if absent."""
    return threshold_scan(algorithm, n, beta_grid, target_corr, seeds, **kwargs).threshold


def planted_branch_correlation(inst, cfg: IterationConfig | None = None) -> float:
    """|<v, v0>| of the fixed point reached by power iteration started at v0.

    This is an informed run: it measures the correlation available on the
    signal branch of the landscape, which is the self-calibrated target used
    for thresholds when no external reference curve is supplied.
    """
    T = as_tensor(inst.tensor)
    op = T if T.symmetric else symmetrize(T)
    n = op.dims[0]
    cfg = IterationConfig.for_dimension(n) if cfg is None else cfg
    out = iterate_batch(op, np.asarray(inst.v0, dtype=np.float64)[None, :], cfg)
    return abs(float(out.final[0] @ inst.v0))


def self_calibrated_target(n: int, seeds: Sequence[int], k: int = 3, symmetric_noise: bool = False, cfg=None):
    """Target curve beta -> mean planted-branch correlation over ``seeds``."""
    cache: dict[float, float] = {}

    def target(beta: float) -> float:
        key = float(beta)
        if key not in cache:
            vals = [
                planted_branch_correlation(generate_spiked(n, k, key, seed=s, symmetric_noise=symmetric_noise), cfg)
                for s in seeds
            ]
            cache[key] = float(np.mean(vals))
        return cache[key]

    return target
