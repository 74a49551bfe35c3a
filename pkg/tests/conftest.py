import datetime as dt

import pytest

from lockdown_did.ingest import Channel
from lockdown_did.index import SpendFilter
from lockdown_did.pipeline import RunOptions, dataset_from_scenario
from lockdown_did.synth import EventSpec, ScenarioConfig, gen_scenario

PLANTED = {1: -0.1, 2: -0.05, 3: 0.02, 4: 0.05}
OFFLINE = SpendFilter(channel=Channel.OFFLINE)


def small_config(**changes) -> ScenarioConfig:
    """Default events over the full span, but fewer accounts so it generates fast."""
    base = dict(n_accounts={"treatment": 40, "control": 40})
    base.update(changes)
    return ScenarioConfig(**base)


def mc_config(seed: int, noise: float = 0.05) -> ScenarioConfig:
    """Single-event scenario used for the coverage Monte Carlo."""
    return ScenarioConfig(
        seed=seed,
        start=dt.date(2018, 12, 20),
        end=dt.date(2020, 8, 26),
        cases_start=dt.date(2020, 6, 1),
        events=[EventSpec("Alpha", dt.date(2020, 7, 30), 12, 12)],
        n_accounts={"treatment": 200, "control": 200},
        noise_scale=noise,
        planted_effects={-1: 0.0, **PLANTED},
    )


@pytest.fixture(scope="session")
def planted_scenario():
    return gen_scenario(small_config(planted_effects=PLANTED, planted_case_effects={1: 0.5, 2: 1.0, 3: 1.5, 4: 2.0}))


@pytest.fixture(scope="session")
def null_scenario():
    return gen_scenario(small_config())


@pytest.fixture(scope="session")
def planted_data(planted_scenario):
    return dataset_from_scenario(planted_scenario)


@pytest.fixture(scope="session")
def null_data(null_scenario):
    return dataset_from_scenario(null_scenario)


@pytest.fixture
def options():
    return RunOptions()


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """A synthetic dataset written to disk, for CLI tests."""
    from lockdown_did.synth import write_scenario

    out = tmp_path_factory.mktemp("synth")
    write_scenario(gen_scenario(small_config(planted_effects=PLANTED)), out)
    return out
