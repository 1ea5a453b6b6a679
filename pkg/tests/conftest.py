import numpy as np
import pytest

ACCEPTANCE_RESULTS: list[str] = []


def numerical_grad(f, t, h=1e-5, entries=None):
    """Central differences of the scalar ``f()`` w.r.t. entries of leaf tensor ``t``."""
    flat = t.data.reshape(-1)
    idx = range(flat.size) if entries is None else entries
    out = np.zeros(len(idx) if entries is not None else flat.size)
    for n, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        up = f().item()
        flat[i] = orig - h
        down = f().item()
        flat[i] = orig
        out[n] = (up - down) / (2 * h)
    return out


def rel_error(a, b, floor=1e-10):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b))
    if scale < floor:
        return 0.0
    return float(np.linalg.norm(a - b) / scale)


def grad_rel_error(f, tensors, h=1e-5, max_entries=None, rng=None):
    """Worst relative error between backward() and central differences over ``tensors``."""
    for t in tensors:
        t.grad = None
    f().backward()
    worst = 0.0
    for t in tensors:
        analytic = np.zeros(t.shape) if t.grad is None else t.grad.copy()
        flat = analytic.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            entries = sorted((rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False))
        else:
            entries = None
        numeric = numerical_grad(f, t, h, entries)
        picked = flat if entries is None else flat[entries]
        worst = max(worst, rel_error(picked, numeric))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)
