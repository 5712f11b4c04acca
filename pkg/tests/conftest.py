import numpy as np
import pytest

from carinf.core import AllocationSpec, TrialDataset

# lines printed at the end of the run by the acceptance module
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def random_dataset(rng, k=2, p=1, nstrata=2, floor=None, n_max=60, alloc=None, extra=None):
    """Random complete dataset where every stratum-arm cell has at least ``floor`` subjects."""
    floor = p + 2 if floor is None else floor
    base = nstrata * k * floor
    extra = rng.integers(0, max(n_max - base, 0) + 1) if extra is None else extra
    z, arm = [], []
    for s in range(nstrata):
        for t in range(1, k + 1):
            z += [(s,)] * floor
            arm += [t] * floor
    for _ in range(extra):
        z.append((int(rng.integers(nstrata)),))
        arm.append(int(rng.integers(1, k + 1)))
    n = len(z)
    x = rng.normal(size=(n, p))
    y = rng.normal(size=n) + x.sum(axis=1) * rng.normal() + np.array(arm) * 0.3
    perm = rng.permutation(n)
    return TrialDataset(
        z=tuple(z[i] for i in perm), x=x[perm], arm=np.array(arm)[perm], y=y[perm],
        alloc=alloc or AllocationSpec.equal(k),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
