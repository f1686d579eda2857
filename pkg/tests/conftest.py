import numpy as np
import pytest

from uncseg.net import NetConfig, Parameters, init_params

ACCEPTANCE_LINES: list[str] = []


def report(number: int, ok: bool, detail: str) -> None:
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


def random_params(cfg: NetConfig, seed: int = 1) -> Parameters:
    """Initialised weights plus random biases and a non-zero uncertainty head.

    Random biases keep ReLU pre-activations away from exact zeros, where
    finite differences straddle a kink.
    """
    params = init_params(cfg)
    rng = np.random.default_rng(seed)
    for name, value in params.tensors.items():
        if name.endswith(".b"):
            value[...] = rng.uniform(0.05, 0.3, value.shape)
        elif name == "unc_head.w":
            value[...] = rng.standard_normal(value.shape) * 0.5
    return params


@pytest.fixture
def tiny_cfg() -> NetConfig:
    return NetConfig(in_channels=2, num_classes=3, depth=2, base_width=2, seed=3, dtype="float64")


@pytest.fixture
def tiny_params(tiny_cfg) -> Parameters:
    return random_params(tiny_cfg)


@pytest.fixture
def tiny_image() -> np.ndarray:
    return np.random.default_rng(11).standard_normal((1, 2, 8, 8, 8))
