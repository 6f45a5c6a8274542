import numpy as np
import pytest

from vrsketch import geometry, toy
from vrsketch.encoders import ModelConfig
from vrsketch.trainer import TrainingData


def tiny_sa_config(n_points=64, dim=16, **kw):
    base = dict(encoder_family="set_abstraction", n_points=n_points, embedding_dim=dim,
                sa_levels=[[n_points // 2, 0.3, 8, [16, 16]], [n_points // 8, 0.6, 8, [32]]],
                sa_global_widths=[32, 64], head_widths=[32])
    base.update(kw)
    return ModelConfig(**base)


def tiny_dg_config(n_points=64, dim=16, **kw):
    base = dict(encoder_family="dynamic_graph", n_points=n_points, embedding_dim=dim,
                dg_k=6, dg_widths=[8, 8, 16], dg_global_width=32, head_widths=[32])
    base.update(kw)
    return ModelConfig(**base)


def toy_pairs(count, n_points, jitter=0.05, keep_edges=0.5, offset=0):
    sketches, shapes = [], []
    for i in range(offset, offset + count):
        boxes = toy.chair_boxes(np.random.default_rng(i))
        sk = toy.boxes_to_sketch(boxes, np.random.default_rng(10_000 + i), jitter=jitter, keep_edges=keep_edges)
        sketches.append(geometry.sample_sketch_cloud(sk, n_points))
        shapes.append(geometry.sample_mesh_cloud(toy.boxes_to_mesh(boxes), n_points, np.random.default_rng(i)))
    return np.stack(sketches), np.stack(shapes)


def toy_training_data(count=12, n_points=64, n_val=4):
    sk, sh = toy_pairs(count + n_val, n_points)
    ids = [f"chair{i:03d}" for i in range(count + n_val)]
    return TrainingData(sk[:count], sh[:count], sk[count:], ids[count:], sh, ids,
                        train_ids=ids[:count], val_ids=ids[count:])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_data():
    return toy_training_data()


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
