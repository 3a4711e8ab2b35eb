import numpy as np
import pytest


def naive_conv1d(x, w, stride, padding, groups):
    """Direct O(S*C_out*C_in*T*K) loop; independent of the im2col kernels."""
    S, C_in, T = x.shape
    C_out, cig, K = w.shape
    og = C_out // groups
    T_out = (T + 2 * padding - K) // stride + 1
    y = np.zeros((S, C_out, T_out))
    for s in range(S):
        for o in range(C_out):
            g = o // og
            for t in range(T_out):
                acc = 0.0
                for c in range(cig):
                    for k in range(K):
                        src = t * stride + k - padding
                        if 0 <= src < T:
                            acc += w[o, c, k] * x[s, g * cig + c, src]
                y[s, o, t] = acc
    return y


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
