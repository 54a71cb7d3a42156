"""Shared fixtures: example models and cached certificates."""
import numpy as np
import pytest

from ccmnet.scenarios import build_cubic_network, build_platoon, cubic_region, platoon_region
from ccmnet.synthesis.ccm import SynthesisConfig, solve_ccm
from ccmnet.scenarios import synthesize_platoon

_CACHE = {}


def cubic_config(lam=0.1, **kw):
    kw.setdefault("grid_density", 3)
    return SynthesisConfig(lam=lam, region=cubic_region(2.0), **kw)


def cubic_certificate(structure, N=4):
    """Cached cubic-network certificate (lambda=0.1, region [-2, 2])."""
    key = ("cubic", structure, N)
    if key not in _CACHE:
        model = build_cubic_network(N, structure)
        stats = {}
        cert = solve_ccm(model, cubic_config(), stats=stats)
        _CACHE[key] = (model, cert, stats)
    return _CACHE[key]


def platoon_certificate(horizon, N=4, seed=0):
    key = ("platoon", horizon, N, seed)
    if key not in _CACHE:
        model, info = build_platoon(N, seed=seed, horizon=horizon)
        cfg = SynthesisConfig(lam=0.02, region=platoon_region(N), objective="flat_gain")
        stats = {}
        cert, hinf = synthesize_platoon(model, info, cfg, stats=stats)
        _CACHE[key] = (model, info, cert, hinf, stats)
    return _CACHE[key]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ------------------------------------------------------------- acceptance

ACCEPTANCE_LINES = []


class Criterion:
    """Collects named checks for one acceptance criterion."""

    def __init__(self, label):
        self.label = label
        self.checks = []

    def check(self, name, ok, detail=""):
        self.checks.append((name, bool(ok), detail))
        return bool(ok)

    def __enter__(self):
        return self

    def __exit__(self, kind, exc, tb):
        if exc is not None:
            self.check("completed", False, f"{kind.__name__}: {exc}")
        return False

    @property
    def passed(self):
        return bool(self.checks) and all(ok for _, ok, _ in self.checks)

    def lines(self):
        head = f"criterion {self.label}: {'PASS' if self.passed else 'FAIL'}"
        body = [f"    [{'ok' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else "")
                for name, ok, detail in self.checks]
        return [head] + body


@pytest.fixture
def criterion(capsys):
    made = []

    def make(label):
        c = Criterion(label)
        made.append(c)
        return c

    yield make
    for c in made:
        ACCEPTANCE_LINES.extend(c.lines())
        with capsys.disabled():
            print("\n" + "\n".join(c.lines()))


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
