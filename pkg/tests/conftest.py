import numpy as np
import pytest

from relgraph.datagen import GeneratorConfig, generate_bundle

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def acceptance():
    """Call with (number, passed, detail); the line shows in the terminal summary."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_l2_bundle():
    return generate_bundle(GeneratorConfig(kind="l2", n_items=1000, n_train=200, n_test=100,
                                           query_dim=8, item_dim=8, seed=3))


@pytest.fixture(scope="session")
def small_tree_bundle():
    return generate_bundle(GeneratorConfig(kind="tree_ensemble", n_items=600, n_train=200,
                                           n_test=30, query_dim=6, item_dim=6, n_pairwise=4,
                                           n_trees=20, depth=4, seed=5))


@pytest.fixture(scope="session")
def small_mlp_bundle():
    return generate_bundle(GeneratorConfig(kind="mlp", n_items=300, n_train=50, n_test=20,
                                           query_dim=5, item_dim=4, n_pairwise=3,
                                           hidden=(16, 8), seed=9))
