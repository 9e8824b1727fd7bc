import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

from supctl.system_bank import Controller, StateSpaceModel, build_closed_loop, make_bank  # noqa: E402

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")

REFERENCE = Path(__file__).resolve().parents[1] / "src" / "supctl" / "data" / "reference.json"


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def reference_path():
    return REFERENCE


def stable_matrix(rng, n, rho):
    A = rng.normal(size=(n, n))
    r = np.max(np.abs(np.linalg.eigvals(A)))
    return A * (rho / r) if r > 0 else A


def random_matched_bank(rng, N=2, d_x=3, d_u=1, d_y=2, d_k=0, noise=(0.0, 0.0, 0.0)):
    """Random bank whose matched loops are stable and strictly observable.

    Each controller is built first, then the plant's ``A`` is chosen so the
    matched closed-loop matrix equals a random stable target.
    """
    models, ctrls = [], []
    while len(models) < N:
        B = rng.normal(size=(d_x, d_u))
        C = rng.normal(size=(d_y, d_x))
        D = rng.normal(scale=0.3, size=(d_u, d_y))
        if d_k:
            AK = stable_matrix(rng, d_k, 0.5)
            BK = rng.normal(scale=0.3, size=(d_k, d_y))
            CK = rng.normal(scale=0.3, size=(d_u, d_k))
            ctrl = Controller.dynamic(AK, BK, CK, D)
        else:
            ctrl = Controller.static(D)
        target = stable_matrix(rng, d_x, rng.uniform(0.3, 0.7))
        A = target - B @ D @ C
        m = StateSpaceModel(C, A, B)
        cl = build_closed_loop(m, ctrl)
        if np.max(np.abs(np.linalg.eigvals(cl.A))) >= 0.95:
            continue
        models.append(m)
        ctrls.append(ctrl)
    return make_bank(models, ctrls, 0, noise)
