"""Paired sweeps over (algorithm, n, beta, instance) and their CSV/JSON reports.

Every cell draws one spiked instance and runs each requested algorithm on
that same tensor. The instance seed depends on the master seed, the
dimensions and the instance number but not on beta, so the rows of one
instance number share their noise tensor and planted vector across the
beta grid as well.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import platform
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .baselines import naive_pi_recover, unfolding_recover
from .diagnostics import escape_analysis, plateau_statistic, record_trial
from .errors import TensorPCAError
from .power_methods import IterationConfig
from .smpi import SUCCESS_CORR, smpi_recover, trial_initializations
from .tensor_core import SpikedInstance, generate_spiked, symmetrize
from .variants import asymmetric_recover, cp_decompose, match_components

log = logging.getLogger(__name__)

ALGORITHMS = ("smpi", "naive_pi", "unfolding", "asymmetric", "cp")
CSV_HEADER = (
    "algo",
    "n",
    "k",
    "beta",
    "instance_seed",
    "correlation",
    "objective",
    "iterations",
    "stop_reason",
    "escapes",
    "plateau_stat",
    "wall_ms",
)
SWEEP_STREAM = 4


class ReportError(TensorPCAError, OSError):
    """Writing a report failed; the message names the path."""


@dataclass
class SweepConfig:
    """What to run. Give either ``ns`` (equal dims) or one ``dims`` tuple."""

    algorithms: Sequence[str]
    betas: Sequence[float]
    ns: Sequence[int] = ()
    dims: Sequence[int] | None = None
    k: int = 3
    instances: int = 1
    master_seed: int = 0
    overrides: dict = field(default_factory=dict)
    out: str | None = None
    trajectory: bool = False
    symmetric_noise: bool = False
    num_spikes: int = 1
    success_corr: float = SUCCESS_CORR
    workers: int = 1

    def __post_init__(self):
        self.algorithms = tuple(self.algorithms)
        self.betas = tuple(float(b) for b in self.betas)
        self.ns = tuple(int(n) for n in self.ns)
        self.dims = None if self.dims is None else tuple(int(d) for d in self.dims)
        if not self.algorithms:
            raise ValueError("no algorithms requested")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms {sorted(unknown)}; choose from {ALGORITHMS}")
        if not self.betas:
            raise ValueError("beta list is empty")
        if self.dims is None and not self.ns:
            raise ValueError("give an n list or dims")
        if self.dims is not None and self.ns:
            raise ValueError("give either an n list or dims, not both")
        if self.instances < 1:
            raise ValueError("instances must be >= 1")
        if self.k not in (3, 4):
            raise ValueError("k must be 3 or 4")
        if not 0.0 < self.success_corr < 1.0:
            raise ValueError("success_corr must lie in (0, 1)")
        unknown = set(self.overrides) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"overrides for unknown algorithms {sorted(unknown)}")

    def shapes(self) -> list[tuple[int, ...]]:
        if self.dims is not None:
            return [self.dims]
        return [(n,) * self.k for n in self.ns]

    def cells(self) -> list[tuple[tuple[int, ...], float, int]]:
        return [(shape, beta, i) for shape in self.shapes() for beta in self.betas for i in range(self.instances)]


@dataclass
class SweepRecord:
    algo: str
    n: str
    k: int
    beta: float
    instance_seed: int
    correlation: float
    objective: float
    iterations: int
    stop_reason: str
    escapes: int | None = None
    plateau_stat: float | None = None
    wall_ms: float = 0.0
    instance: int = 0
    tensor_hash: str = ""
    extra: dict = field(default_factory=dict)
    # in-memory only, never written to the CSV or sidecar
    estimate: np.ndarray | None = field(default=None, repr=False, compare=False)
    trial_correlations: np.ndarray | None = field(default=None, repr=False, compare=False)


@dataclass
class SweepFailure:
    algo: str
    n: str
    beta: float
    instance_seed: int
    reason: str


@dataclass
class CellAggregate:
    algo: str
    n: str
    beta: float
    count: int
    mean_correlation: float
    ci_half_width: float
    success_rate: float
    median_abs_correlation: float
    mean_plateau: float | None
    mean_escapes: float | None


@dataclass
class SweepReport:
    config: SweepConfig
    records: list[SweepRecord]
    failures: list[SweepFailure] = field(default_factory=list)

    def aggregates(self) -> list[CellAggregate]:
        return aggregate_records(self.records, self.config.success_corr)

    def cell(self, algo: str, n, beta: float) -> CellAggregate | None:
        key = (algo, _n_label(n), float(beta))
        for agg in self.aggregates():
            if (agg.algo, agg.n, agg.beta) == key:
                return agg
        return None


def _n_label(shape) -> str:
    if isinstance(shape, str):
        return shape
    if isinstance(shape, (int, np.integer)):
        return str(int(shape))
    shape = tuple(shape)
    return str(shape[0]) if len(set(shape)) == 1 else "x".join(str(d) for d in shape)


def instance_seed(master_seed: int, shape, instance: int) -> int:
    """64-bit seed of instance ``instance`` at the given dimensions."""
    seq = np.random.SeedSequence(int(master_seed), spawn_key=(SWEEP_STREAM, *map(int, shape), int(instance)))
    return int(seq.generate_state(1, np.uint64)[0])


def aggregate_records(records: Sequence[SweepRecord], success_corr: float = SUCCESS_CORR) -> list[CellAggregate]:
    """Per (algo, n, beta): mean correlation with 1.96 s / sqrt(count) and rates."""
    groups: dict[tuple, list[SweepRecord]] = {}
    for rec in records:
        groups.setdefault((rec.algo, rec.n, rec.beta), []).append(rec)
    out = []
    for (algo, n, beta), recs in groups.items():
        corr = np.array([r.correlation for r in recs], dtype=np.float64)
        count = corr.size
        half = 1.96 * float(np.std(corr, ddof=1)) / math.sqrt(count) if count > 1 else math.nan
        plateaus = [r.plateau_stat for r in recs if r.plateau_stat is not None]
        esc = [r.escapes for r in recs if r.escapes is not None and abs(r.correlation) >= success_corr]
        out.append(
            CellAggregate(
                algo=algo,
                n=n,
                beta=beta,
                count=count,
                mean_correlation=float(corr.mean()),
                ci_half_width=half,
                success_rate=float(np.mean(np.abs(corr) >= success_corr)),
                median_abs_correlation=float(np.median(np.abs(corr))),
                mean_plateau=float(np.mean(plateaus)) if plateaus else None,
                mean_escapes=float(np.mean(esc)) if esc else None,
            )
        )
    return out


# ----------------------------------------------------------------------------
# running algorithms


def _smpi_config(n: int, params: dict) -> tuple[int, IterationConfig]:
    m_init = int(params.get("m_init", 10 * n))
    m_iter = int(params.get("m_iter", 10 * n))
    lag = int(params.get("lag", min(n, m_iter - 1)))
    eps = float(params.get("eps", 1e-6))
    return m_init, IterationConfig(m_iter=m_iter, lag=lag, eps=eps)


def _equal_noise(inst: SpikedInstance):
    return symmetrize(inst.noise)


def run_algorithm(
    algo: str,
    inst: SpikedInstance,
    params: dict | None = None,
    master_seed: int = 0,
    trajectory: bool = False,
    plateau: bool = True,
) -> dict:
    """Run one algorithm on one instance and return the CSV fields it determines.

    The keys are ``correlation``, ``objective``, ``iterations``,
    ``stop_reason``, ``escapes``, ``plateau_stat`` and ``extra``, plus the
    in-memory ``estimate`` and (SMPI only) ``trial_correlations``; wall time
    is measured by the caller.
    """
    params = dict(params or {})
    T = inst.tensor
    v0 = inst.v0
    out = dict(escapes=None, plateau_stat=None, extra={}, estimate=None, trial_correlations=None)
    if algo == "smpi":
        n = T.dims[0]
        m_init, cfg = _smpi_config(n, params)
        res = smpi_recover(T, m_init, cfg, master_seed=master_seed, truth=v0, block_size=int(params.get("block_size", 256)))
        est = res.estimate
        out.update(objective=res.objective, iterations=res.iterations_used, stop_reason=res.stop_reason)
        out["extra"] = dict(selected_trial=res.selected_trial)
        out["trial_correlations"] = np.array([tr.correlation for tr in res.per_trial])
        if trajectory:
            init = trial_initializations(master_seed, n, [res.selected_trial])[0]
            traj = record_trial(T, init, cfg)
            out["escapes"] = len(escape_analysis(T, traj))
    elif algo == "naive_pi":
        kw = {key: params[key] for key in ("n_init", "max_iter", "eps", "variant") if key in params}
        res = naive_pi_recover(T, master_seed=master_seed, truth=v0, **kw)
        est = res.estimate
        out.update(objective=res.objective, iterations=res.iterations_used, stop_reason=res.stop_reason)
    elif algo == "unfolding":
        kw = {key: params[key] for key in ("tol", "max_steps", "axis") if key in params}
        res = unfolding_recover(T, seed=master_seed, **kw)
        est = res.estimate
        out.update(
            objective=res.objective,
            iterations=res.iterations_used,
            stop_reason="converged" if res.converged else "step_cap",
        )
    elif algo == "asymmetric":
        kw = {key: params[key] for key in ("m_init", "m_iter", "lag", "eps") if key in params}
        res = asymmetric_recover(T, master_seed=master_seed, **kw)
        corrs = res.correlations(inst.spikes[0].factors)
        tr = res.per_trial[res.selected_trial]
        out.update(
            correlation=float(np.mean(np.abs(corrs))),
            objective=res.objective,
            iterations=tr.iterations_used,
            stop_reason=tr.stop_reason,
        )
        out["extra"] = dict(axis_correlations=[float(c) for c in corrs], reseeds=res.reseeds)
        return out
    elif algo == "cp":
        kw = {key: params[key] for key in ("m_init", "m_iter", "lag", "eps") if key in params}
        p = int(params.get("p", len(inst.spikes)))
        res = cp_decompose(T, p, master_seed=master_seed, **kw)
        planted = [sp.factors[0] for sp in inst.spikes]
        _, corrs = match_components(res.vectors, planted)
        out.update(
            correlation=float(np.mean(np.abs(corrs))),
            objective=float(sum(c.objective for c in res.components)),
            iterations=int(sum(rec.iterations_used for rec in res.log)),
            stop_reason="shortfall" if res.shortfall else "complete",
        )
        out["extra"] = dict(
            matched_correlations=[float(c) for c in corrs],
            beta_hat=[float(c.beta_hat) for c in res.components],
            accepted=len(res.accepted),
            merged=res.merged,
        )
        return out
    else:
        raise ValueError(f"unknown algorithm {algo!r}")
    out["correlation"] = float(est @ v0)
    out["estimate"] = est
    if plateau:
        out["plateau_stat"] = plateau_statistic(_equal_noise(inst), v0, est)
    return out


def _run_cell(cfg: SweepConfig, shape, beta, index):
    seed = instance_seed(cfg.master_seed, shape, index)
    label = _n_label(shape)
    records, failures = [], []
    try:
        inst = generate_spiked(
            shape,
            cfg.k,
            [beta] * cfg.num_spikes,
            seed=seed,
            symmetric_noise=cfg.symmetric_noise,
            num_spikes=cfg.num_spikes,
        )
        thash = inst.tensor.entry_hash()
    except Exception as exc:  # recorded, the sweep continues
        for algo in cfg.algorithms:
            failures.append(SweepFailure(algo, label, beta, seed, f"instance: {type(exc).__name__}: {exc}"))
        return records, failures
    for algo in cfg.algorithms:
        params = cfg.overrides.get(algo, {})
        start = time.perf_counter_ns()
        try:
            fields = run_algorithm(algo, inst, params, master_seed=seed, trajectory=cfg.trajectory)
        except Exception as exc:
            log.warning("cell %s beta=%s #%d %s failed: %s", label, beta, index, algo, exc)
            failures.append(SweepFailure(algo, label, beta, seed, f"{type(exc).__name__}: {exc}"))
            continue
        wall = (time.perf_counter_ns() - start) / 1e6
        records.append(
            SweepRecord(
                algo=algo,
                n=label,
                k=cfg.k,
                beta=float(beta),
                instance_seed=seed,
                correlation=fields["correlation"],
                objective=fields["objective"],
                iterations=int(fields["iterations"]),
                stop_reason=fields["stop_reason"],
                escapes=fields["escapes"],
                plateau_stat=fields["plateau_stat"],
                wall_ms=wall,
                instance=index,
                tensor_hash=thash,
                extra=fields["extra"],
                estimate=fields["estimate"],
                trial_correlations=fields["trial_correlations"],
            )
        )
    log.info("cell n=%s beta=%s instance=%d done", label, beta, index)
    return records, failures


def run_sweep(cfg: SweepConfig) -> SweepReport:
    """Run every cell of ``cfg``; results are ordered by cell regardless of workers."""
    cells = cfg.cells()
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(lambda c: _run_cell(cfg, *c), cells))
    else:
        results = [_run_cell(cfg, *c) for c in cells]
    records, failures = [], []
    for recs, fails in results:
        records.extend(recs)
        failures.extend(fails)
    report = SweepReport(config=cfg, records=records, failures=failures)
    if cfg.out:
        write_report(report, cfg.out)
    return report


# ----------------------------------------------------------------------------
# output


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def record_row(rec: SweepRecord) -> list[str]:
    return [
        rec.algo,
        rec.n,
        _fmt(rec.k),
        _fmt(rec.beta),
        _fmt(rec.instance_seed),
        _fmt(rec.correlation),
        _fmt(rec.objective),
        _fmt(rec.iterations),
        rec.stop_reason,
        _fmt(rec.escapes),
        _fmt(rec.plateau_stat),
        f"{rec.wall_ms:.3f}",
    ]


def records_csv(records: Sequence[SweepRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for rec in records:
        writer.writerow(record_row(rec))
    return buf.getvalue()


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return None if not math.isfinite(float(obj)) else float(obj)
    return obj


def software_versions() -> dict:
    import numba

    return dict(
        tensorpca=__version__,
        numpy=np.__version__,
        numba=numba.__version__,
        python=platform.python_version(),
    )


def report_metadata(report: SweepReport) -> dict:
    cfg = asdict(report.config)
    return _json_safe(
        dict(
            config=cfg,
            software=software_versions(),
            csv_header=list(CSV_HEADER),
            records=len(report.records),
            aggregates=[asdict(a) for a in report.aggregates()],
            failures=[asdict(f) for f in report.failures],
            cells=[
                dict(
                    algo=r.algo,
                    n=r.n,
                    beta=r.beta,
                    instance=r.instance,
                    instance_seed=r.instance_seed,
                    tensor_hash=r.tensor_hash,
                    extra=r.extra,
                )
                for r in report.records
            ],
        )
    )


def write_report(report: SweepReport, path) -> Path:
    """Write the CSV to ``path`` and the JSON sidecar next to it (``.json``)."""
    path = Path(path)
    side = sidecar_path(path)
    try:
        path.write_text(records_csv(report.records))
        side.write_text(json.dumps(report_metadata(report), indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise ReportError(f"{exc.filename or path}: cannot write report ({exc.strerror or exc})") from exc
    return path


def read_records(path) -> list[dict]:
    """Parse a report CSV back into dicts of strings."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return list(reader)
