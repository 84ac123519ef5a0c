import numpy as np
import pytest

from vcpcfg.core.grammar import RuleProbs
from vcpcfg.utils import settings


def hand_rules(tt: float = 0.4, at: float = 0.3, ta: float = 0.3) -> RuleProbs:
    """One nonterminal A, one preterminal T, one word; symbols are indexed [A, T]."""
    binary = np.zeros((1, 2, 2))
    binary[0, 1, 1] = tt
    binary[0, 0, 1] = at
    binary[0, 1, 0] = ta
    return RuleProbs.from_probabilities(np.array([1.0]), binary, np.array([[1.0]]))


def random_rules(rng: np.random.Generator, num_nt: int, num_pre: int, vocab: int) -> RuleProbs:
    """Dense random tables with every rule strictly positive."""
    num_sym = num_nt + num_pre
    root = rng.dirichlet(np.ones(num_nt))
    binary = rng.dirichlet(np.ones(num_sym * num_sym), size=num_nt).reshape(num_nt, num_sym, num_sym)
    emission = rng.dirichlet(np.ones(vocab), size=num_pre)
    return RuleProbs.from_probabilities(root, binary, emission)


@pytest.fixture
def hand_grammar():
    return hand_rules()


@pytest.fixture
def make_random_rules():
    return random_rules


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_collection_modifyitems(config, items):
    if settings.RUN_SLOW_TESTS:
        return
    skip = pytest.mark.skip(reason="set VCPCFG_RUN_SLOW=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
