import time

import numpy as np
import pytest

from changecap import build_vocab, gen_synthetic, toy_config, train
from changecap.features import DatasetRecord

ACCEPTANCE_LINES: list[str] = []


def sample_one_reference(records, seed):
    """Copy of ``records`` where each keeps one seeded-random reference caption."""
    rng = np.random.default_rng(seed)
    out = []
    for r in records:
        cap = r.captions[rng.integers(len(r.captions))]
        out.append(DatasetRecord(r.id, r.features, [cap], r.split, r.change_type, r.quadrant))
    return out


@pytest.fixture(scope="session")
def overfit_run():
    """8 synthetic records (seed 7), one sampled reference each, toy config."""
    records = sample_one_reference(gen_synthetic(7, 8), seed=7)
    cfg = toy_config(epochs=300, eval_every=10)
    start = time.perf_counter()
    result = train(records, records, cfg)
    return records, result, time.perf_counter() - start


@pytest.fixture(scope="session")
def no_change_run():
    """4 no-change records plus 4 changed ones, trained on all five references."""
    pool = gen_synthetic(7, 64)
    still = [r for r in pool if r.change_type == "no-change"][:4]
    moved = [r for r in pool if r.change_type != "no-change"][:4]
    records = still + moved
    result = train(records, records, toy_config(epochs=300, eval_every=10))
    return records, result


@pytest.fixture
def toy_vocab():
    return build_vocab([c for r in gen_synthetic(7, 32) for c in r.captions])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

