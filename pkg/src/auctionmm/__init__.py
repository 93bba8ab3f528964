"""Optimal liquidation across a continuous limit order book and a closing auction."""

from .market_core import (AuctionAgentHistory, CancellationLedger, Clamp, LobLadder, Side,
                          SupplyCurve, TickGrid, executed_shares)
from .clearing import ClearingProblem, estimate_clearing, hypothetical_step
from .market_sim import GenerativeParams, MarketEventStream, RoughHestonParams, generate_stream
from .mdp import ActionGrid, MarketEnv, Phase, RewardParams, run_episode
from .nfq import QNet, TrainConfig, train

__version__ = "0.1.0"
