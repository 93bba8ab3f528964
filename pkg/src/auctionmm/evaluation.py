"""Session assembly from a config, policy evaluation and comparison tables."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .benchmarks import AsParams, AsPolicy, TwapPolicy
from .config import Config
from .market_core import TickGrid
from .market_sim import (GenerativeParams, HistoricalModel, RoughHestonModel, RoughHestonParams,
                         calibrate_as, generate_stream, read_mid_file, step_sigma, stream_rng)
from .mdp import MarketEnv, NullPolicy, RandomPolicy, RewardParams, run_episode
from .nfq import (GreedyPolicy, TrainConfig, init_learner, load_checkpoint,
                  nets_by_code)


@dataclass
class Session:
    """Everything one config determines."""

    cfg: Config
    gen: GenerativeParams
    tick: TickGrid
    price_model: object
    env: MarketEnv
    train_cfg: TrainConfig
    seed: int

    def stream(self, root: int, index: int):
        return generate_stream(self.gen, self.tick, self.price_model, stream_rng(root, index))

    def train_stream(self, e: int):
        return self.stream(self.seed, e)

    def eval_root(self) -> int:
        return self.seed + self.cfg["eval_seed_offset"]

    def eval_streams(self, n: int | None = None):
        n = self.cfg["n_eval"] if n is None else n
        return [self.stream(self.eval_root(), i) for i in range(n)]


def build_session(cfg: Config, seed: int | None = None) -> Session:
    c = cfg
    seed = c["seed"] if seed is None else int(seed)
    gen = GenerativeParams(
        tau_op=c["tau_op"], tau_cl=c["tau_cl"], I0=c["I0"], lambda0=c["lambda0"], v_m=c["v_m"],
        gamma_m=c["gamma_m"], V_inf=c["V_inf"], beta_a=c["beta_a"], beta_b=c["beta_b"],
        rho=c["rho"], V=c["V"], U1=c["U1"], U2=c["U2"], M1=c["M1"], M2=c["M2"],
        p1=c["p1"], p2=c["p2"], p3=c["p3"], p4=c["p4"])
    tick = TickGrid(alpha=c["alpha"], beta=c["beta"], max_price_ticks=c["max_price_ticks"],
                    max_slope_steps=c["max_slope_steps"], max_volume=c["max_volume"],
                    max_depth=c["max_depth"], max_participants=c["max_participants"])
    if c["price_model"] == "historical":
        path = cfg.resolve_path("historical_path")
        read_mid_file(path)
        price_model = HistoricalModel(str(path), c["historical_seconds_per_unit"], c["alpha"])
    else:
        price_model = RoughHestonModel(RoughHestonParams(
            S0=c["S0"], V0=c["V0"], theta=c["theta"], lam=c["vol_reversion"], nu=c["vol_of_vol"],
            H=c["hurst"], rho_corr=c["rho_corr"]))
    reward = RewardParams(lam=c["lam"], q_pen=c["q_pen"], k_star=c["k_star"], d=c["d"], chi=c["chi"])
    env = MarketEnv(gen, tick, reward, smoothing=c["smoothing"], h0=c["h0"],
                    include_agent_order=c["include_agent_order"])
    tcfg = TrainConfig(eta=c["eta"], epochs_per_episode=c["epochs_per_episode"], batch=c["batch"],
                       discount=c["chi"], episodes=c["episodes"], eps_warmup=c["eps_warmup"],
                       eps_start=c["eps_start"], eps_end=c["eps_end"],
                       buffer_capacity=c["buffer_capacity"], min_fill=c["min_fill"],
                       reward_scale=c["reward_scale"], masked_targets=c["masked_targets"],
                       regret_rollouts=c["regret_rollouts"])
    return Session(cfg, gen, tick, price_model, env, tcfg, seed)


def session_mid_path(session: Session) -> np.ndarray:
    """Mid prices on the unit grid ``0 .. tau_op - 1`` used for sigma estimates."""
    t = np.arange(session.gen.tau_op, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence([session.seed, 5]))
    return np.asarray(session.price_model.mid_prices(t, rng), dtype=float)


def calibrate(session: Session):
    rng = np.random.default_rng(np.random.SeedSequence([session.seed, 6]))
    return calibrate_as(session.gen, session.cfg["calibration_samples"], rng,
                        mid_path=session_mid_path(session), alpha=session.tick.alpha,
                        max_depth=session.tick.max_depth)


def as_params(session: Session) -> AsParams:
    cal = calibrate(session)
    return AsParams(cal.A, cal.k, session.tick.alpha, T=session.gen.tau_op - 1, Q=session.gen.I0)


POLICY_NAMES = ("null", "random", "twap", "as", "nfq", "initial_nfq")


def make_policy(name: str, session: Session, checkpoint=None):
    z = session.cfg["heuristic_z"]
    if name == "null":
        return NullPolicy()
    if name == "random":
        return RandomPolicy()
    if name == "twap":
        return TwapPolicy(T=session.gen.tau_op - 1, z=z, offset=session.cfg["twap_offset"])
    if name == "as":
        return AsPolicy(as_params(session), z=z)
    if name == "initial_nfq":
        return GreedyPolicy(init_learner(session.env, session.train_cfg, session.seed).nets, 0.0)
    if name == "nfq":
        if checkpoint is None:
            raise ValueError("policy 'nfq' needs a checkpoint")
        nets, _ = load_checkpoint(checkpoint, {"continuous": session.env.grid.n_continuous,
                                               "auction": session.env.grid.n_auction})
        return GreedyPolicy(nets_by_code(nets), 0.0)
    raise ValueError(f"unknown policy '{name}' (choose from {', '.join(POLICY_NAMES)})")


# ---------------------------------------------------------------- reports

METRICS = ("mean_return", "std_return", "median_return", "mean_discounted_return",
           "mean_final_inventory", "mean_inventory_at_open", "mean_clob_reward",
           "mean_auction_reward", "mean_terminal_reward")


@dataclass
class PolicyReport:
    name: str
    returns: np.ndarray
    discounted: np.ndarray
    clob: np.ndarray
    auction: np.ndarray
    terminal: np.ndarray
    final_inventory: np.ndarray
    inventory_at_open: np.ndarray

    @property
    def n(self) -> int:
        return self.returns.size

    def metrics(self) -> dict:
        return {"mean_return": _mean(self.returns),
                "std_return": float(np.std(self.returns, ddof=1)) if self.n > 1 else 0.0,
                "median_return": float(np.median(self.returns)),
                "mean_discounted_return": _mean(self.discounted),
                "mean_final_inventory": _mean(self.final_inventory),
                "mean_inventory_at_open": _mean(self.inventory_at_open),
                "mean_clob_reward": _mean(self.clob),
                "mean_auction_reward": _mean(self.auction),
                "mean_terminal_reward": _mean(self.terminal)}


def _mean(x) -> float:
    # index-ordered summation keeps the reduction deterministic
    total = 0.0
    for v in np.asarray(x, dtype=float):
        total += float(v)
    return total / max(len(x), 1)


def relative_improvement(a: float, b: float) -> float:
    if b == 0:
        return math.inf if a > 0 else (-math.inf if a < 0 else 0.0)
    return (a - b) / abs(b) * 100.0


@dataclass
class EvalReport:
    policies: dict
    symbol: str = ""
    sigma_hat: float = float("nan")
    seed_root: int = 0
    n_eval: int = 0
    meta: dict = field(default_factory=dict)

    def metrics(self) -> dict:
        return {name: p.metrics() for name, p in self.policies.items()}

    def improvements(self) -> dict:
        m = self.metrics()
        return {(a, b): relative_improvement(m[a]["mean_return"], m[b]["mean_return"])
                for a in m for b in m if a != b}


def evaluate_policy(name: str, policy, session: Session, streams) -> PolicyReport:
    rng = np.random.default_rng(np.random.SeedSequence([session.eval_root(), 7]))
    cols = {k: [] for k in ("r", "d", "c", "a", "t", "f", "o")}
    for s in streams:
        res = run_episode(policy, session.env, s, rng, record=False)
        cols["r"].append(res.undiscounted_return)
        cols["d"].append(res.discounted_return)
        cols["c"].append(res.clob_reward)
        cols["a"].append(res.auction_reward)
        cols["t"].append(res.terminal_reward)
        cols["f"].append(res.final_inventory)
        cols["o"].append(res.inventory_at_open)
    arr = {k: np.asarray(v, dtype=float) for k, v in cols.items()}
    return PolicyReport(name, arr["r"], arr["d"], arr["c"], arr["a"], arr["t"], arr["f"], arr["o"])


def evaluate(session: Session, policy_names, checkpoint=None, n_eval: int | None = None) -> EvalReport:
    streams = session.eval_streams(n_eval)
    reports = {}
    for name in policy_names:
        reports[name] = evaluate_policy(name, make_policy(name, session, checkpoint), session, streams)
    sigma = step_sigma(session_mid_path(session), log=True)
    return EvalReport(reports, session.cfg["symbol"], sigma, session.eval_root(), len(streams))


def format_report(report: EvalReport) -> str:
    """Delimited metric block; ``#`` lines carry the run metadata."""
    out = io.StringIO()
    out.write(f"# symbol={report.symbol}\n# sigma_hat={report.sigma_hat!r}\n"
              f"# seed_root={report.seed_root}\n# n_eval={report.n_eval}\n")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(("policy",) + METRICS)
    for name, m in report.metrics().items():
        w.writerow((name,) + tuple(repr(float(m[k])) for k in METRICS))
    return out.getvalue()


def format_improvements(report: EvalReport) -> str:
    names = list(report.policies)
    imp = report.improvements()
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["improvement_pct"] + [f"vs_{b}" for b in names])
    for a in names:
        w.writerow([a] + ["" if a == b else f"{imp[(a, b)]:.1f}" for b in names])
    return out.getvalue()


def parse_report(text: str) -> EvalReport:
    meta, rows = {}, []
    for line in text.splitlines():
        if line.startswith("#"):
            k, _, v = line[1:].strip().partition("=")
            meta[k] = v
        elif line.strip():
            rows.append(line)
    reader = csv.DictReader(rows)
    policies = {}
    for row in reader:
        policies[row["policy"]] = {k: float(row[k]) for k in METRICS}
    rep = EvalReport({}, meta.get("symbol", ""), float(meta.get("sigma_hat", "nan")),
                     int(meta.get("seed_root", 0)), int(meta.get("n_eval", 0)))
    rep.meta = {"parsed_metrics": policies}
    return rep


def compare_reports(reports: list[EvalReport]) -> str:
    """Pairwise improvement matrix for one report, per-asset rows for several."""
    if len({(r.seed_root, r.n_eval) for r in reports}) > 1:
        warnings.warn("reports were evaluated on different episode seeds", stacklevel=2)
    metric_sets = [r.meta.get("parsed_metrics") or r.metrics() for r in reports]
    if len(reports) == 1:
        m = metric_sets[0]
        names = list(m)
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["policy", "mean_return"] + [f"vs_{b}" for b in names])
        for a in names:
            w.writerow([a, f"{m[a]['mean_return']:.1f}"] +
                       ["" if a == b else f"{relative_improvement(m[a]['mean_return'], m[b]['mean_return']):+.1f}%"
                        for b in names])
        return out.getvalue()
    return _asset_table(reports, metric_sets)


def _asset_table(reports, metric_sets) -> str:
    names = list(dict.fromkeys(n for m in metric_sets for n in m))
    learned = [n for n in names if n not in ("as", "twap")]
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    header = ["symbol", "sigma_hat"] + names
    for n in learned:
        header += [f"{n}_vs_as", f"{n}_vs_twap"]
    w.writerow(header)
    for r, m in zip(reports, metric_sets):
        row = [r.symbol, f"{r.sigma_hat:.6f}"] + [f"{m[n]['mean_return']:.1f}" if n in m else "" for n in names]
        for n in learned:
            for b in ("as", "twap"):
                ok = n in m and b in m
                row.append(f"{relative_improvement(m[n]['mean_return'], m[b]['mean_return']):+.1f}%" if ok else "")
        w.writerow(row)
    return out.getvalue()


def format_asset_table(report: EvalReport) -> str:
    """One-symbol row in the per-asset comparison layout."""
    return _asset_table([report], [report.metrics()])
