"""Command line front end: ``tensorpca {generate,recover,sweep,diagnose,cp}``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

from .diagnostics import (
    STAGNATION_PERIOD,
    STAGNATION_TOL,
    STAGNATION_WINDOW,
    escape_analysis,
    plateau_statistic,
    record_trial,
)
from .errors import TensorPCAError
from .harness import (
    ALGORITHMS,
    SweepConfig,
    SweepRecord,
    _n_label,
    records_csv,
    run_algorithm,
    run_sweep,
    write_report,
)
from .power_methods import IterationConfig
from .smpi import SUCCESS_CORR, smpi_recover, trial_initializations
from .tensor_core import generate_spiked, symmetrize
from .tensor_io import read_tensor_file, write_tensor_file
from .variants import cp_decompose, match_components


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated integers, got {text!r}") from None


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _common(p: argparse.ArgumentParser, multi: bool = False):
    p.add_argument("--n", type=_int_list if multi else int, help="dimension" + (" list, e.g. 50,100" if multi else ""))
    p.add_argument("--dims", type=_int_list, help="dimensions a,b,c (asymmetric spikes)")
    p.add_argument("--k", type=int, choices=(3, 4), default=3, help="tensor order")
    p.add_argument("--beta", type=_float_list if multi else float, help="SNR" + (" list" if multi else ""))
    p.add_argument("--seed", type=int, default=0, help="master seed")
    p.add_argument("--symmetric-noise", action="store_true", help="average-symmetrize the noise")
    p.add_argument("--spikes", type=int, default=1, help="number of planted spikes")
    p.add_argument("--m-init", type=int, help="initializations (default 10 n)")
    p.add_argument("--m-iter", type=int, help="iteration budget (default 10 n)")
    p.add_argument("--lag", type=int, help="lag of the stopping rule (default n)")
    p.add_argument("--eps", type=float, help="stopping tolerance (default 1e-6)")
    p.add_argument("--success-corr", type=float, default=SUCCESS_CORR, help="|<v, v0>| counted as success")
    p.add_argument("--out", help="output path")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tensorpca", description="Spiked tensor PCA experiments.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw a spiked instance and write it to a tensor file")
    _common(p)

    p = sub.add_parser("recover", help="run one algorithm on one instance, one CSV row")
    _common(p)
    p.add_argument("--input", help="tensor file with ground truth (instead of --n/--beta)")
    p.add_argument("--algo", choices=ALGORITHMS, default="smpi")
    p.add_argument("--trajectory", action="store_true", help="count escape events on the selected trial")

    p = sub.add_parser("sweep", help="paired sweep over n, beta and instances")
    _common(p, multi=True)
    p.add_argument("--algo", default="smpi,naive_pi,unfolding", help="comma separated algorithms")
    p.add_argument("--instances", type=int, default=1)
    p.add_argument("--trajectory", action="store_true", help="count escape events on the selected SMPI trial")
    p.add_argument("--workers", type=int, default=1, help="cells run concurrently")

    p = sub.add_parser("diagnose", help="trajectory, escape events and plateau statistic of one SMPI run")
    _common(p)
    p.add_argument("--input", help="tensor file with ground truth (instead of --n/--beta)")
    p.add_argument("--trial", type=int, help="trial to trace (default: the selected one)")
    p.add_argument("--stagnation-tol", type=float, default=STAGNATION_TOL)
    p.add_argument("--window", type=int, default=STAGNATION_WINDOW)
    p.add_argument("--period", type=int, default=STAGNATION_PERIOD)

    p = sub.add_parser("cp", help="CP decomposition by deflation")
    _common(p)
    p.add_argument("--input", help="tensor file (ground truth optional)")
    p.add_argument("--p", type=int, help="components to extract (default: --spikes)")
    return parser


# ----------------------------------------------------------------------------


def _shape(args):
    if args.dims:
        if len(args.dims) != args.k:
            raise SystemExit(f"--dims needs {args.k} entries")
        return tuple(args.dims)
    if args.n is None:
        raise SystemExit("give --n or --dims")
    return (args.n,) * args.k


def _instance(args):
    if getattr(args, "input", None):
        _, inst = read_tensor_file(args.input)
        if inst is None:
            raise SystemExit(f"{args.input}: no ground truth stored")
        return inst
    if args.beta is None:
        raise SystemExit("give --beta (or --input)")
    return generate_spiked(
        _shape(args),
        args.k,
        [args.beta] * args.spikes,
        seed=args.seed,
        symmetric_noise=args.symmetric_noise,
        num_spikes=args.spikes,
    )


def _params(args) -> dict:
    keys = {"m_init": args.m_init, "m_iter": args.m_iter, "lag": args.lag, "eps": args.eps}
    return {k: v for k, v in keys.items() if v is not None}


def _emit(text: str, out):
    if out:
        try:
            Path(out).write_text(text)
        except OSError as exc:
            raise SystemExit(f"{out}: cannot write ({exc.strerror or exc})")
    else:
        sys.stdout.write(text)


def cmd_generate(args):
    inst = _instance(args)
    if not args.out:
        raise SystemExit("generate needs --out")
    write_tensor_file(args.out, None, inst)
    print(f"wrote {args.out}: dims={inst.tensor.dims} spikes={len(inst.spikes)} hash={inst.tensor.entry_hash()[:16]}")


def _single_params(args):
    params = _params(args)
    if args.algo == "naive_pi":
        params = {"eps": args.eps} if args.eps is not None else {}
    if args.algo == "unfolding":
        params = {}
    return params


def cmd_recover(args):
    inst = _instance(args)
    params = _single_params(args)
    start = time.perf_counter_ns()
    fields = run_algorithm(args.algo, inst, params, master_seed=args.seed, trajectory=args.trajectory)
    wall = (time.perf_counter_ns() - start) / 1e6
    rec = SweepRecord(
        algo=args.algo,
        n=_n_label(inst.tensor.dims),
        k=inst.tensor.order,
        beta=float(inst.beta),
        instance_seed=int(inst.seed),
        correlation=fields["correlation"],
        objective=fields["objective"],
        iterations=int(fields["iterations"]),
        stop_reason=fields["stop_reason"],
        escapes=fields["escapes"],
        plateau_stat=fields["plateau_stat"],
        wall_ms=wall,
    )
    _emit(records_csv([rec]), args.out)


def cmd_sweep(args):
    if args.beta is None:
        raise SystemExit("give --beta")
    algos = [a for a in args.algo.split(",") if a]
    overrides = {}
    base = _params(args)
    for algo in algos:
        if algo in ("smpi", "asymmetric", "cp") and base:
            overrides[algo] = dict(base)
        if algo == "naive_pi" and args.eps is not None:
            overrides[algo] = {"eps": args.eps}
    cfg = SweepConfig(
        algorithms=algos,
        betas=args.beta,
        ns=() if args.dims else (args.n or ()),
        dims=tuple(args.dims) if args.dims else None,
        k=args.k,
        instances=args.instances,
        master_seed=args.seed,
        overrides=overrides,
        trajectory=args.trajectory,
        symmetric_noise=args.symmetric_noise,
        num_spikes=args.spikes,
        success_corr=args.success_corr,
        workers=args.workers,
    )
    report = run_sweep(cfg)
    if args.out:
        write_report(report, args.out)
    else:
        sys.stdout.write(records_csv(report.records))
    for agg in report.aggregates():
        print(
            f"{agg.algo:>10} n={agg.n:>4} beta={agg.beta:<5g} mean={agg.mean_correlation:+.4f}"
            f" ci={agg.ci_half_width:.4f} success={agg.success_rate:.2f}",
            file=sys.stderr,
        )
    for f in report.failures:
        print(f"failed: {f.algo} n={f.n} beta={f.beta} seed={f.instance_seed}: {f.reason}", file=sys.stderr)


def cmd_diagnose(args):
    inst = _instance(args)
    T = inst.tensor
    n = T.dims[0]
    params = _params(args)
    m_init = params.pop("m_init", 10 * n)
    m_iter = params.get("m_iter", 10 * n)
    cfg = IterationConfig(
        m_iter=m_iter, lag=params.get("lag", min(n, m_iter - 1)), eps=params.get("eps", 1e-6)
    )
    res = smpi_recover(T, m_init, cfg, master_seed=args.seed, truth=inst.v0)
    trial = res.selected_trial if args.trial is None else args.trial
    traj = record_trial(T, trial_initializations(args.seed, n, [trial])[0], cfg)
    events = escape_analysis(T, traj, args.stagnation_tol, args.window, args.period)
    v0 = inst.v0
    noise = symmetrize(inst.noise)
    rows = [("step", "correlation", "objective")]
    rows.append((0, repr(float(traj.initial @ v0)), ""))
    for step, v in zip(traj.iterate_steps, traj.iterates):
        rows.append((int(step), repr(float(v @ v0)), repr(float(traj.objectives[step - 1]))))
    lines = []
    w = csv.writer(_Lines(lines), lineterminator="\n")
    w.writerows(rows)
    summary = dict(
        selected_trial=res.selected_trial,
        traced_trial=trial,
        correlation=float(res.estimate @ v0),
        plateau_stat=plateau_statistic(noise, v0, res.estimate),
        stop_reason=traj.stop_reason,
        iterations=traj.iterations_used,
        escapes=[
            dict(
                start=e.start,
                end=e.end,
                lambda1=e.lambda1,
                objective=e.objective,
                unstable=bool(e.unstable),
                alignment=e.alignment,
            )
            for e in events
        ],
    )
    _emit("".join(lines), args.out)
    if args.out:
        Path(args.out).with_suffix(".json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(
        f"trial {trial}: corr={summary['correlation']:+.4f} plateau={summary['plateau_stat']:+.4f}"
        f" escapes={len(events)} ({sum(e['unstable'] for e in summary['escapes'])} unstable)",
        file=sys.stderr,
    )


class _Lines:
    def __init__(self, sink):
        self.sink = sink

    def write(self, s):
        self.sink.append(s)


def cmd_cp(args):
    if args.input:
        tensor, inst = read_tensor_file(args.input)
    else:
        inst = _instance(args)
        tensor = inst.tensor
    p = args.p or (len(inst.spikes) if inst is not None else args.spikes)
    params = _params(args)
    res = cp_decompose(tensor, p, master_seed=args.seed, **params)
    corrs = [None] * len(res.components)
    if inst is not None and res.components:
        assign, matched = match_components(res.vectors, [sp.factors[0] for sp in inst.spikes])
        for l, e in enumerate(assign):
            if e >= 0:
                corrs[e] = matched[l]
    buf = [("component", "beta_hat", "alpha", "objective", "trial", "correlation")]
    for i, comp in enumerate(res.components):
        buf.append(
            (
                i,
                repr(float(comp.beta_hat)),
                repr(float(comp.alpha)),
                repr(float(comp.objective)),
                comp.trial,
                "" if corrs[i] is None else repr(float(corrs[i])),
            )
        )
    lines = []
    csv.writer(_Lines(lines), lineterminator="\n").writerows(buf)
    _emit("".join(lines), args.out)
    if res.shortfall:
        print(f"only {len(res.components)} of {p} components accepted", file=sys.stderr)


COMMANDS = dict(generate=cmd_generate, recover=cmd_recover, sweep=cmd_sweep, diagnose=cmd_diagnose, cp=cmd_cp)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        COMMANDS[args.command](args)
    except (TensorPCAError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
