"""Shipped example problems, loaded from the packaged configurations.

``t2``: two symmetric agents, bid box [0, 10], no lines; the equilibrium
sits at the lower box corner. ``t2i``: the same with the box widened to
[-5, 10], moving the equilibrium to the interior point (-2, -2). ``cs5``:
the five-aggregator case with four lines (see the fixture's embedded note
about which parts of its data are derived rather than published).
"""

from .config import RunConfig, load_packaged
from .graphs import CommGraph
from .market import MarketInstance

FIXTURE_NAMES = ("t2", "t2i", "cs5")


def load_fixture(name: str) -> RunConfig:
    if name not in FIXTURE_NAMES:
        raise ValueError(f"unknown fixture {name!r}; available: {FIXTURE_NAMES}")
    return load_packaged(name)


def _pair(name: str) -> tuple:
    cfg = load_fixture(name)
    return cfg.instance(), cfg.graph()


def t2() -> tuple[MarketInstance, CommGraph]:
    return _pair("t2")


def t2i() -> tuple[MarketInstance, CommGraph]:
    return _pair("t2i")


def cs5() -> tuple[MarketInstance, CommGraph]:
    return _pair("cs5")
