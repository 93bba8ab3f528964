import numpy as np
import pytest

from auctionmm.market_core import TickGrid
from auctionmm.market_sim import GenerativeParams, RoughHestonModel, generate_stream, stream_rng
from auctionmm.mdp import MarketEnv


@pytest.fixture(scope="session")
def streams():
    gp, tg, model = GenerativeParams(), TickGrid(), RoughHestonModel()
    return [generate_stream(gp, tg, model, stream_rng(123, i)) for i in range(100)]


@pytest.fixture
def env():
    return MarketEnv(GenerativeParams(), TickGrid())


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
