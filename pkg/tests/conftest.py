import numpy as np
import pytest

from cogevo.core import Item, Option


def make_item(item_id="q0", a=1.0, b=0.0, weights=None, dim=4, stem="add two fractions", tags=None):
    if weights is None:
        weights = np.zeros(dim)
        weights[0] = 1.0
    tags = tags or ["c0:sign", "c1:order", "c0:carry"]
    options = [Option("right")] + [Option(f"wrong {i}", t) for i, t in enumerate(tags)]
    return Item(item_id, stem, tuple(options), 0, a, b, np.asarray(weights, dtype=float))


@pytest.fixture
def item():
    return make_item()


@pytest.fixture(scope="session")
def small_world():
    """A small bank and cohort shared by the harness and CLI tests."""
    from cogevo.datagen import CohortSpec, gen_ground_truth, gen_item_bank

    bank = gen_item_bank(160, 8, seed=3)
    ds = gen_ground_truth(CohortSpec(n_students=6, n_opportunities=25), bank, seed=3)
    return bank, ds


ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
