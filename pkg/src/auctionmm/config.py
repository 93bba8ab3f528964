"""Flat ``key = value`` run configuration with typed, required keys.

Lines starting with ``#`` are comments. Every key in :data:`SCHEMA` must be
present; unknown keys are rejected so typos cannot silently fall back.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt_float(s: str):
    return None if s.strip().lower() in ("none", "auto", "") else float(s)


SCHEMA: dict[str, type | object] = {
    # run
    "seed": int,
    "symbol": str,
    "price_model": str,
    "historical_path": str,
    "historical_seconds_per_unit": float,
    # market
    "tau_op": int, "tau_cl": int, "I0": int,
    "lambda0": float, "v_m": float, "gamma_m": float, "V": float,
    "V_inf": float, "beta_a": float, "beta_b": float, "rho": float,
    "U1": float, "U2": float, "M1": int, "M2": int,
    "p1": float, "p2": float, "p3": float, "p4": float,
    # grid and bounds
    "alpha": float, "beta": float, "max_slope_steps": int, "max_price_ticks": int,
    "max_volume": int, "max_depth": int, "max_participants": int,
    # rough Heston
    "S0": float, "V0": float, "theta": float, "vol_reversion": float, "vol_of_vol": float,
    "hurst": float, "rho_corr": float,
    # rewards
    "lam": float, "q_pen": float, "k_star": float, "d": float, "chi": float,
    # clearing estimator
    "smoothing": float, "h0": _opt_float, "include_agent_order": _bool,
    # learning
    "eta": float, "epochs_per_episode": int, "batch": int, "episodes": int,
    "eps_warmup": int, "eps_start": float, "eps_end": float,
    "buffer_capacity": int, "min_fill": int, "reward_scale": float,
    "masked_targets": _bool, "regret_rollouts": int,
    # evaluation and benchmarks
    "n_eval": int, "eval_seed_offset": int, "heuristic_z": float,
    "calibration_samples": int, "twap_offset": int,
}


@dataclass(frozen=True)
class Config:
    values: dict
    source: Path | None = None

    def __getitem__(self, key):
        return self.values[key]

    def with_overrides(self, **kw) -> "Config":
        v = dict(self.values)
        for k, val in kw.items():
            if k not in SCHEMA:
                raise ConfigError(f"unknown config key '{k}'")
            v[k] = val
        return Config(v, self.source)

    def resolve_path(self, key: str) -> Path:
        p = Path(self.values[key])
        if not p.is_absolute() and self.source is not None:
            p = self.source.parent / p
        return p


def parse_config(text: str, source: Path | None = None) -> Config:
    values: dict = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {line_no}: expected 'key = value', got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"line {line_no}: unknown config key '{key}'")
        if key in values:
            raise ConfigError(f"line {line_no}: duplicate config key '{key}'")
        try:
            values[key] = SCHEMA[key](val)
        except ValueError as exc:
            raise ConfigError(f"line {line_no}: bad value for '{key}': {exc}") from None
    missing = [k for k in SCHEMA if k not in values]
    if missing:
        raise ConfigError(f"missing config key '{missing[0]}'"
                          + (f" (and {len(missing) - 1} more)" if len(missing) > 1 else ""))
    if values["price_model"] not in ("rough_heston", "historical"):
        raise ConfigError(f"price_model must be 'rough_heston' or 'historical', got {values['price_model']!r}")
    return Config(values, source)


def load_config(path) -> Config:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"{path}: no such config file")
    return parse_config(path.read_text(), path.resolve())


def format_config(cfg: Config) -> str:
    return "".join(f"{k} = {cfg.values[k]}\n" for k in SCHEMA)
