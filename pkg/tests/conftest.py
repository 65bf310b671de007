import numpy as np


def central_difference(fn, x, h_scale=1e-5):
    """Gradient of scalar ``fn`` at ``x`` with step ``h_scale * (1 + |x|)``."""
    x = np.asarray(x, dtype=float)
    h = h_scale * (1.0 + np.abs(x))
    out = np.empty_like(x)
    for d in range(x.size):
        e = np.zeros_like(x)
        e[d] = h[d]
        out[d] = (fn(x + e) - fn(x - e)) / (2 * h[d])
    return out


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1e-10, np.abs(b))))


ACCEPTANCE_LINES = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criterion")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
