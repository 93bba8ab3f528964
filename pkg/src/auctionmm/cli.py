"""Command-line entry points: simulate | train | eval | compare | calibrate."""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, format_config, load_config
from .evaluation import (POLICY_NAMES, build_session, calibrate, compare_reports, evaluate,
                         format_improvements, format_report, format_asset_table, make_policy,
                         parse_report, session_mid_path)
from .market_sim import IngestionError, step_sigma
from .mdp import run_episode, write_trace
from .nfq import CheckpointError, named_nets, save_checkpoint, train, write_curves

log = logging.getLogger("auctionmm")

CHECKPOINT_NAME = "checkpoint.ammq"
CURVES_NAME = "curves.csv"


def _session(args):
    return build_session(load_config(args.config), args.seed)


def cmd_simulate(args) -> int:
    session = _session(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    policy = make_policy(args.policy, session, args.checkpoint)
    stream = session.stream(session.seed, 0)
    stream.dump_events(out / "events.jsonl")
    rng = np.random.default_rng(np.random.SeedSequence([session.seed, 8]))
    res = run_episode(policy, session.env, stream, rng)
    write_trace(res, out / "trace.csv")
    print(f"{args.policy}: return {res.undiscounted_return:.2f}, final inventory {res.final_inventory:g}")
    return 0


def cmd_train(args) -> int:
    session = _session(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(format_config(session.cfg.with_overrides(seed=session.seed)))
    bench = make_policy("as", session)
    t0 = time.time()

    def progress(e, info):
        if (e + 1) % 100 == 0:
            log.info("episode %d  eps %.3f  return %.1f  loss %.4g / %.4g  (%.0fs)", e + 1,
                     info["eps"], info["return"], info["clob_loss"], info["auction_loss"],
                     time.time() - t0)

    result = train(session.env, session.train_stream, session.train_cfg, session.seed,
                   benchmark=bench, progress=progress, diagnostic_path=out / "diagnostic.ammq")
    write_curves(result, out / CURVES_NAME)
    save_checkpoint(named_nets(result.learner), out / CHECKPOINT_NAME, session.env.grid.spec(),
                    session.env.scaling(session.cfg["S0"]).as_dict(),
                    extra={"episodes": session.train_cfg.episodes, "seed": session.seed})
    print(f"trained {session.train_cfg.episodes} episodes in {time.time() - t0:.0f}s; "
          f"wrote {out / CHECKPOINT_NAME}")
    return 0


def cmd_eval(args) -> int:
    session = _session(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.policies:
        names = [n.strip() for n in args.policies.split(",") if n.strip()]
    elif args.checkpoint:
        names = ["nfq", "initial_nfq", "as", "twap"]
    else:
        names = ["as", "twap", "null"]
    report = evaluate(session, names, args.checkpoint, args.n_eval)
    text = format_report(report)
    (out / "report.csv").write_text(text)
    (out / "improvements.csv").write_text(format_improvements(report))
    (out / "assets.csv").write_text(format_asset_table(report))
    print(text, end="")
    print(format_improvements(report), end="")
    return 0


def cmd_compare(args) -> int:
    reports = [parse_report(Path(p).read_text()) for p in args.reports]
    text = compare_reports(reports)
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def cmd_calibrate(args) -> int:
    session = _session(args)
    cal = calibrate(session)
    sig_log = step_sigma(session_mid_path(session), log=True)
    text = ("A,k,K,sigma,sigma_log\n"
            f"{cal.A!r},{cal.k!r},{cal.K!r},{cal.sigma!r},{sig_log!r}\n")
    if args.out:
        Path(args.out).write_text(text)
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="auctionmm", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="run configuration file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default=None, help="output file or directory")

    sp = sub.add_parser("simulate", help="one episode: event dump and trace")
    common(sp)
    sp.add_argument("--policy", default="twap", choices=POLICY_NAMES)
    sp.add_argument("--checkpoint", default=None)
    sp.set_defaults(func=cmd_simulate, out_required=True)

    sp = sub.add_parser("train", help="train the NFQ agent")
    common(sp)
    sp.set_defaults(func=cmd_train, out_required=True)

    sp = sub.add_parser("eval", help="evaluate policies on common episode seeds")
    common(sp)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--policies", default=None, help="comma-separated policy names")
    sp.add_argument("--n-eval", type=int, default=None)
    sp.set_defaults(func=cmd_eval, out_required=True)

    sp = sub.add_parser("compare", help="relative improvements from report files")
    common(sp, config_required=False)
    sp.add_argument("reports", nargs="+")
    sp.set_defaults(func=cmd_compare, out_required=False)

    sp = sub.add_parser("calibrate", help="benchmark constants A, k, sigma")
    common(sp)
    sp.set_defaults(func=cmd_calibrate, out_required=False)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.out_required and not args.out:
        parser.error(f"{args.command} needs --out")
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (ConfigError, IngestionError, CheckpointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
