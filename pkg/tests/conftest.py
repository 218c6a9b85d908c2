from types import SimpleNamespace

import pytest

from hgattack.construction import build_knn
from hgattack.dataset import gen_synthetic, make_split
from hgattack.hgnn import HgnnModel, train

# the standard desk-scale fixture: 200 nodes, 4 classes, dim 8, spread 0.5, seed 7
FIXTURE = dict(num_nodes=200, num_classes=4, dim=8, cluster_spread=0.5, seed=7)
FIXTURE_SPLIT = dict(per_class_train=10, val_size=40, test_size=100, seed=0)


def fixture_pipeline(k=8):
    d = gen_synthetic(**FIXTURE)
    h = build_knn(d.features, k)
    split = make_split(d, **FIXTURE_SPLIT)
    model = train(d, h, split)
    return SimpleNamespace(d=d, h=h, split=split, model=model, x=d.features)


@pytest.fixture(scope="session")
def synth():
    return fixture_pipeline()


def toy_model(w0, w1):
    return HgnnModel(w0=w0, w1=w1)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
