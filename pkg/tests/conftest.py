import numpy as np
import pytest

from hklab.core import State
from hklab.models import build_model

#: One descriptor per catalog kind, with central constants where allowed.
CATALOG = [
    {"kind": "circle", "n": 1, "c": 1},
    {"kind": "circle", "n": 2, "c1": 0.5, "c": [0.3, -0.2]},
    {"kind": "torus", "weights": [[1, 0, 1], [0, 1, 1]], "c1": [0.2, -0.1], "cC": [[0.1, 0.2], [0.0, -0.3]]},
    {"kind": "hom", "n": 2, "k": 1, "c1": 0.3, "c": [0.5, 0]},
    {"kind": "end", "n": 2},
    {"kind": "adhm", "n": 1, "k": 1, "c1": 0.2, "c": 0.7},
    {"kind": "adhm", "n": 2, "k": 1},
    {"kind": "direct-sum", "summands": [{"kind": "circle", "n": 1, "c": 1}, {"kind": "circle", "n": 2}]},
    {"kind": "restriction", "parent": {"kind": "torus", "weights": [[1, 0], [0, 1]]}, "homomorphism": [[1], [2]]},
    {"kind": "restriction", "parent": {"kind": "end", "n": 2}, "homomorphism": [[1, 0], [0, 1], [0, 0], [0, 0]]},
]

CATALOG_IDS = [f"{d['kind']}-{k}" for k, d in enumerate(CATALOG)]


def homogeneous(desc):
    """Same descriptor with all central constants removed."""
    out = {k: v for k, v in desc.items() if k not in ("c", "cC", "c1")}
    if "summands" in out:
        out["summands"] = [homogeneous(s) for s in out["summands"]]
    if "parent" in out:
        out["parent"] = homogeneous(out["parent"])
    return out


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(params=CATALOG, ids=CATALOG_IDS)
def model(request):
    return build_model(request.param)


def random_state(model, rng, scale=1.0):
    return State.random(model.n, rng, scale)


_CRITERIA: list = []


def record_criterion(k, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    print(line)
    _CRITERIA.append(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)
