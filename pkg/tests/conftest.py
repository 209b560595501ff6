from __future__ import annotations

import numpy as np
import pytest

from ftconv.model import build_model, demo_config, random_weights


def naive_conv(D, W, B=None, U=1, pad=0, G=1):
    """Loop-by-loop convolution in float64, used as an oracle."""
    D = np.asarray(D, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    N, Ch, H, _ = D.shape
    M, Cg, R, _ = W.shape
    Dp = np.zeros((N, Ch, H + 2 * pad, H + 2 * pad))
    Dp[:, :, pad:pad + H, pad:pad + H] = D
    E = (H + 2 * pad - R + U) // U
    mg = M // G
    O = np.zeros((N, M, E, E))
    for n in range(N):
        for m in range(M):
            g = m // mg
            for x in range(E):
                for y in range(E):
                    acc = 0.0
                    for k in range(Cg):
                        for i in range(R):
                            for j in range(R):
                                acc += Dp[n, g * Cg + k, U * x + i, U * y + j] * W[m, k, i, j]
                    O[n, m, x, y] = acc + (0.0 if B is None else B[m])
    return O


@pytest.fixture(scope="session")
def demo_model():
    cfg = demo_config(2, "float32")
    return build_model(cfg, random_weights(cfg, 3))


@pytest.fixture(scope="session")
def demo_model64():
    cfg = demo_config(2, "float64")
    return build_model(cfg, random_weights(cfg, 3))


# acceptance criteria report one line each; collected here and echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
