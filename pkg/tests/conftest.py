import numpy as np
import pytest

from quickdetect.model import build_family, build_general_family, figure1_spec, ProblemSpec


@pytest.fixture
def fig1():
    return figure1_spec()


@pytest.fixture
def pair_spec():
    """n=2 singletons; N=2 gives a one-dimensional boundary curve."""
    return ProblemSpec(2, 1.0, 1.0, 1.0, 0.0, build_family(2, 1, [0.5, 0.5]))


@pytest.fixture
def mixed_spec():
    fam = build_general_family(3, {(1,): 0.4, (1, 2): 0.3, (1, 2, 3): 0.3})
    return ProblemSpec(3, 1.0, 1.0, 1.0, 0.0, fam)


@pytest.fixture(scope="session")
def pair_solution():
    """Converged N=2 boundary on a 21-node axis, with its kernel block."""
    from quickdetect import fredholm as F

    spec = ProblemSpec(2, 1.0, 1.0, 1.0, 0.0, build_family(2, 1, [0.5, 0.5]))
    block = F.kernel_block(spec, 5000, seed=0)
    b, report = F.picard_solve(spec, grid_nodes=21, block=block, tol=1e-3)
    return spec, b, report, block


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


FIG1_CONFIG = "n=3\nmu=1\nlambda=1\nc=1\nk=2\nprobs=uniform\n"
PAIR_CONFIG = "n=2\nmu=1\nlambda=1\nc=1\nk=1\nprobs=1/2,1/2\n"
MIXED_CONFIG = "n=3\nmu=1\nlambda=1\nc=1\nmode=general\nentries=1:0.4; 1,2:0.3; 1,2,3:0.3\n"


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
