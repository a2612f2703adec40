import numpy as np
import pytest

from srbflow import map_model as mm


def circle_map(eps: float = 0.0, a: int = 2) -> mm.ExpandingMap:
    """x -> a x + eps sin(2 pi x)."""
    return mm.ExpandingMap.create([[a]], [(0, (1,), 0.0, eps)] if eps else [])


def sine(dim: int = 1, amplitude: float = 1.0) -> mm.VecField:
    return mm.VecField.sine(dim, amplitude)


@pytest.fixture
def doubling():
    return circle_map()


@pytest.fixture
def eps01():
    return circle_map(0.1)


@pytest.fixture
def eps005():
    return circle_map(0.05)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def _criterion_order(line):
    label = line.split()[1].rstrip(":")
    digits = "".join(c for c in label if c.isdigit())
    return int(digits), label


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when != "call":
                continue
            for name, text in rep.user_properties:
                if name == "criterion":
                    lines.append(text)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=_criterion_order):
            terminalreporter.write_line(line)
