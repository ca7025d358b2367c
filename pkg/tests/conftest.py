import numpy as np
import pytest

from bftcn.model import build_model
from bftcn.window import NetworkConfig


def small_model(variant="BF", L=3, n_r=1, w_max=2, nf=6, n_classes=4, n_input=5, seed=0,
                dropout_p=0.5, l_r=None):
    cfg = NetworkConfig(variant, L, L if l_r is None else l_r, n_r, w_max,
                        n_feature_maps=nf, n_classes=n_classes)
    return build_model(cfg, seed, n_input=n_input, dropout_p=dropout_p)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One line per acceptance criterion, filled in by test_acceptance.py and
# repeated at the end of the run so the verdicts sit together in the log.
ACCEPTANCE_LINES: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES, key=lambda k: (int(k.split()[0]), k)):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
