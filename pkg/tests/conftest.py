import numpy as np
import pytest

from gimspot.core import GroundTruthInstance, PointLabel, VideoSample

# criterion lines recorded by test_acceptance, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def toy_video(T=64, D=4, points=((20, 0),), seed=0, vid="toy"):
    rng = np.random.default_rng(seed)
    feats = rng.normal(0, 0.1, size=(T, D))
    pts = [PointLabel(p, c) for p, c in points]
    truth = [GroundTruthInstance(max(0, p - 3), p, min(T - 1, p + 3), c) for p, c in points]
    return VideoSample(vid, feats, pts, truth)
