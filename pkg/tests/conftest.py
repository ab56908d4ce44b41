import numpy as np
import pytest

from stitchnet.anchors import AnchorModel, AnchorSpec
from stitchnet.numerics import Rng

SMALL = dict(input_token_count=4, input_feature_dim=3, num_classes=3)


def tiny_family(depths=(2, 4, 6), dims=(8, 12, 16), heads=(2, 3, 4), seed=0, std=0.3):
    specs = [
        AnchorSpec.single_stage(f"a{i}", d, w, h, **SMALL)
        for i, (d, w, h) in enumerate(zip(depths, dims, heads))
    ]
    return [AnchorModel.create(s, Rng(seed).child(s.name), std=std) for s in specs]


def random_inputs(n, seed=0, tokens=4, features=3):
    return np.random.default_rng(seed).standard_normal((n, tokens, features)).astype(np.float32)


@pytest.fixture
def family():
    return tiny_family()


# acceptance criteria record one line each; the summary hook prints them together
CRITERIA: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)
