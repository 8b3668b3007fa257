import json

import numpy as np
import pytest

from gridseries.grid_model import Branch, Bus, Generator, Load, NetworkSnapshot
from gridseries.synthetic import make_desk_case


def three_bus(limit_23=100.0, gen_pmax=500.0, loads=((2, 100.0), (3, 100.0)), regions=None):
    """Generator at bus 1, a strong 1-2 line and a weak 2-3 line."""
    regions = regions or {"1": "A", "2": "A", "3": "A"}
    buses = tuple(Bus(str(k), regions[str(k)], 225.0) for k in (1, 2, 3))
    branches = (
        Branch("a", "1", "2", 1.0, 0.1, 1000.0),
        Branch("b", "2", "3", 1.0, 0.1, limit_23),
    )
    gens = (Generator("g1", "1", "gas", 0.0, gen_pmax),)
    lds = tuple(Load(f"d{b}", str(b), mw) for b, mw in loads)
    return NetworkSnapshot(buses, branches, gens, lds, tuple(sorted(set(regions.values()))))


def triangle():
    """Meshed 3-bus case with two generators and two loads."""
    buses = (Bus("1", "A", 225.0), Bus("2", "A", 225.0), Bus("3", "B", 225.0))
    branches = (
        Branch("12", "1", "2", 0.01, 0.1, 200.0),
        Branch("13", "1", "3", 0.01, 0.1, 60.0),
        Branch("23", "2", "3", 0.01, 0.2, 60.0),
    )
    gens = (Generator("g1", "1", "gas", 0.0, 300.0), Generator("g2", "2", "hydro", 10.0, 80.0))
    lds = (Load("d2", "2", 90.0), Load("d3", "3", 110.0))
    return NetworkSnapshot(buses, branches, gens, lds, ("A", "B"))


DESK_KERNELS = {"load": {"sigma": 50.0}, "wind": {"sigma": 100.0}, "solar": {"sigma": 150.0}}


def desk_config(case, directory, **extra):
    cfg = {
        "snapshot": "snapshot.json",
        "history": "regional_history.csv",
        "registry": "geo_registry.csv",
        "offers": "offers.csv",
        "out": "run",
        "seed": 7,
        "km_per_ohm": case.km_per_ohm,
        "substitutes": {"nuclear": "coal"},
        "kernels": DESK_KERNELS,
    }
    cfg.update(extra)
    path = directory / "config.json"
    path.write_text(json.dumps(cfg, indent=2))
    return path


@pytest.fixture(scope="session")
def desk_case():
    return make_desk_case(0)


@pytest.fixture(scope="session")
def desk_dir(desk_case, tmp_path_factory):
    d = tmp_path_factory.mktemp("desk")
    desk_case.write(d)
    desk_config(desk_case, d)
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
