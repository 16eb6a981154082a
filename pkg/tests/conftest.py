import numpy as np
import pytest

from luq.net import LINEARS, LayerStack, StackConfig
from luq.synth import multimodal_pool, synth_stack, text_pool


@pytest.fixture(scope="session")
def small_stack():
    return synth_stack(2, 16, [4, 16], seed=3, vocab_size=16)


@pytest.fixture(scope="session")
def small_pools(small_stack):
    ids = text_pool(small_stack, 24, 12, seed=1)
    mm = multimodal_pool(small_stack, 24, 12, seed=2)
    return ids, mm


def identity_stack(L=2, d=16, vocab=16, positions=True):
    config = StackConfig(L, d, 4, 2 * d, vocab, positions)
    shapes = config.weight_shapes()
    layers = [{n: np.zeros(shapes[n], dtype=np.float32) for n in LINEARS} for _ in range(L)]
    rng = np.random.default_rng(0)
    embed = rng.standard_normal((vocab, d)).astype(np.float32)
    head = rng.standard_normal((vocab, d)).astype(np.float32)
    return LayerStack(config, embed, head, layers)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
