import numpy as np
import pytest

from geopose import tensor as T


def fd_gradcheck(fn, tensors, h=1e-5, seed=0, max_entries=None):
    """Compare reverse-mode gradients of scalar-valued ``fn(*tensors)`` against
    central finite differences. Returns the max relative error.

    ``max_entries`` caps how many coordinates per tensor are probed; when set,
    the largest-magnitude gradient entries are chosen, since a central
    difference at f64 cannot resolve near-zero derivatives (the quotient would
    measure roundoff noise, not correctness). None probes every coordinate.
    """
    for t in tensors:
        t.grad = None
    out = fn(*tensors)
    T.backward(out)
    # entries whose derivative sits below the cancellation noise of the central
    # difference (eps*|f|/2h) measure roundoff, not correctness; skip them
    noise_floor = 1e4 * np.finfo(float).eps * max(1.0, abs(float(out.data))) / (2 * h)
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "tensor received no gradient"
        flat = t.data.reshape(-1)
        gflat = t.grad.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.argsort(-np.abs(gflat), kind="stable")[:max_entries]
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(fn(*tensors).data)
            flat[i] = orig - h
            fm = float(fn(*tensors).data)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            if max(abs(num), abs(gflat[i])) < noise_floor:
                continue
            denom = max(abs(num), abs(gflat[i]), 1e-8)
            worst = max(worst, abs(num - gflat[i]) / denom)
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
