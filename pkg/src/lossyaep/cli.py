"""Command-line entry point: ``lossyaep {run,summarize,rate,ballprob}``."""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction

import numpy as np

from . import ballprob, experiments, ratefn
from .model import DistortionMeasure, FiniteDistribution, read_rho_file


def _dist(text: str, symbols=None) -> FiniteDistribution:
    probs = [float(Fraction(t)) for t in text.replace(",", " ").split()]
    return FiniteDistribution(symbols or tuple(range(len(probs))), probs)


def _rho(path: str | None, k_rows: int, k_cols: int) -> DistortionMeasure:
    if path:
        return read_rho_file(path)
    if k_rows != k_cols:
        raise SystemExit("Hamming distortion needs equal alphabets; pass --rho-file")
    return DistortionMeasure.hamming(k_rows)


def cmd_run(args) -> int:
    cfg = experiments.load_config(args.config, seed=args.seed, replicas=args.replicas, out=args.out)
    report = experiments.run(cfg)
    print(report.summary())
    return 0 if report.passed else 1


def cmd_summarize(args) -> int:
    theory = json.loads(args.theory) if args.theory else None
    rows = experiments.summarize(args.csv, theory)
    print(experiments.format_summary(rows))
    return 0


def cmd_rate(args) -> int:
    P = _dist(args.p)
    Q = _dist(args.q) if args.q else FiniteDistribution.uniform(range(len(P)))
    rho = _rho(args.rho_file, len(P), len(Q))
    D = float(Fraction(args.dist))
    pt = ratefn.rate_r1(P, Q, rho, D)
    print(f"R1(P,Q,D) = {pt.r1_nats:.12g} nats = {pt.r1_bits:.12g} bits "
          f"[{pt.status.value}]")
    print(f"lambda*   = {pt.lambda_star:.12g}")
    if rho.shape[0] == len(P):
        rd = ratefn.blahut_arimoto(P, rho, D)
        q = " ".join(f"{v:.10g}" for v in rd.q_star.probs)
        print(f"R(D)      = {rd.rate_bits:.12g} bits (gap {rd.gap_bound:.2e})")
        print(f"Q*        = {q}")
    return 0


def cmd_ballprob(args) -> int:
    x = np.array([int(c) for c in args.x.replace(",", " ").replace(" ", "")], dtype=np.intp)
    Q = _dist(args.q)
    k_rows = int(x.max()) + 1 if args.rows is None else args.rows
    rho = _rho(args.rho_file, max(k_rows, len(Q)) if not args.rho_file else k_rows, len(Q))
    D = float(Fraction(args.dist))
    if rho.value_grid is not None:
        bp = ballprob.ball_prob_exact_dp(x, Q, rho, D)
        print(f"exact  = {bp.prob:.15g}  (log {bp.log_prob:.12g})")
    if args.mc or rho.value_grid is None:
        est = ballprob.ball_prob_mc(x, Q, rho, D, replicas=args.replicas or 10_000,
                                    seed=args.seed or 0)
        print(f"mc     = {est.estimate:.6g} ± {est.std_error:.2g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lossyaep", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--replicas", type=int)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("summarize", help="normality diagnostics for CSV dumps")
    s.add_argument("csv", nargs="+")
    s.add_argument("--theory", help='JSON, e.g. {"wait": {"r1": 0.1, "sigma2": 0.2}}')
    s.set_defaults(func=cmd_summarize)

    q = sub.add_parser("rate", help="R1, lambda* and R(D) for finite alphabets")
    q.add_argument("--p", required=True, help="source probabilities, e.g. '0.7 0.3'")
    q.add_argument("--q", help="codebook probabilities (default uniform)")
    q.add_argument("--rho-file", help="distortion matrix, one row per line (default Hamming)")
    q.add_argument("--dist", required=True, help="distortion level D, e.g. 1/4")
    q.set_defaults(func=cmd_rate)

    b = sub.add_parser("ballprob", help="exact or Monte Carlo ball probability")
    b.add_argument("--x", required=True, help="source block as digits, e.g. 0010")
    b.add_argument("--q", required=True)
    b.add_argument("--rho-file")
    b.add_argument("--rows", type=int, help="source alphabet size (default from --x)")
    b.add_argument("--dist", required=True)
    b.add_argument("--mc", action="store_true")
    b.add_argument("--seed", type=int)
    b.add_argument("--replicas", type=int)
    b.set_defaults(func=cmd_ballprob)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
