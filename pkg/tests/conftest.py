import numpy as np
import pytest

from cavsync.numerics import Tensor, finite_diff_grad, relative_error


def grad_error(fn, *arrays, seed=0, step=1e-5, floor=1e-6):
    """Max relative error between reverse-mode and central differences.

    The output of ``fn`` is contracted with a fixed random weight so every
    output element contributes to the scalar being differentiated.
    """
    rng = np.random.default_rng(seed)
    inputs = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    probe = rng.standard_normal(fn(*inputs).shape)

    def scalar(*xs):
        return (fn(*xs) * Tensor(probe)).sum()

    scalar(*inputs).backward()
    worst = 0.0
    for k, x in enumerate(inputs):
        numeric = finite_diff_grad(lambda _x: scalar(*inputs), x, step=step)
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        worst = max(worst, float(relative_error(analytic, numeric, floor).max()))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting --------------------------------------------------------------
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
