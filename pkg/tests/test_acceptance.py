"""Acceptance criteria, one test per criterion.

Each test prints a PASS/FAIL/SKIP line (repeated in the terminal summary).
Criteria 1-6 run on synthetic data. Criteria 7-9 need the released dataset:
point ``VRSKETCH_REPRO_CONFIG`` at a YAML run config whose ``dataset`` section
names the manifest and the extra sketch sets, then run
``pytest -m slow tests/test_acceptance.py``.
"""

import math
import os
import time

import numpy as np
import pytest
import torch

import conftest
from conftest import toy_pairs
from test_encoders import _probe_setup, _rel_err
from test_geometry import _fps_oracle, _knn_oracle
from test_losses import _away_from_hinge, _contrastive_oracle, _fd_check, _triplet_oracle, _unit
from test_retrieval import _results_with_ranks, _scan_oracle
from vrsketch import augmentation as aug
from vrsketch.encoders import ModelConfig, RetrievalModel, encode
from vrsketch.geometry import farthest_point_sample, knn_indices, normalize_cloud
from vrsketch.losses import DENOMINATOR_VARIANTS, contrastive_loss, triplet_loss
from vrsketch.retrieval import GalleryIndex, accuracy_at_k, retrieve, retrieve_all
from vrsketch.trainer import TrainConfig, TrainingData, train

REPRO_ENV = "VRSKETCH_REPRO_CONFIG"


def _report(number, title, ok, detail, status=None):
    status = status or ("PASS" if ok else "FAIL")
    line = f"[{status}] criterion {number}: {title} :: {detail}"
    print(line)
    conftest.ACCEPTANCE_LINES.append(line)
    return ok


def _t(x):
    return torch.tensor(x, dtype=torch.float64)


def test_criterion_1_loss_oracles():
    rng = np.random.default_rng(100)
    worst_triplet = 0.0
    for i in range(100):
        b = 2 + i % 7
        s, z = _unit(rng, b, 8), _unit(rng, b, 8)
        got = triplet_loss(_t(s), _t(z), 0.3).item()
        want = _triplet_oracle(s.tolist(), z.tolist(), 0.3)
        worst_triplet = max(worst_triplet, abs(got - want) / max(abs(want), 1e-12))
    worst_con = 0.0
    for i in range(100):
        b = 2 + i % 7
        s, z = _unit(rng, b, 8), _unit(rng, b, 8)
        for v in DENOMINATOR_VARIANTS:
            got = contrastive_loss(_t(s), _t(z), 0.1, v).item()
            want = _contrastive_oracle(s.tolist(), z.tolist(), 0.1, v)
            worst_con = max(worst_con, abs(got - want) / want)
    single = contrastive_loss(_t([[0.6, 0.8]]), _t([[0.0, 1.0]])).item()
    eye = _t([[1, 0], [0, 1]])
    sym = contrastive_loss(eye, eye.clone(), 1.0, "full").item()
    # the quoted 1.4874 doubles the rounded per-anchor 0.7437; the exact value is 2 log(1 + 3/e)
    exact = 2 * math.log(1 + 3 / math.e)
    ok = (worst_triplet < 1e-6 and worst_con < 1e-6 and single == 0.0
          and abs(sym - exact) < 1e-12 and abs(sym - 1.4874) < 1e-4)
    _report(1, "loss oracles", ok, f"triplet rel err {worst_triplet:.1e}, contrastive rel err {worst_con:.1e}, "
                                   f"B=1 loss {single}, symmetric tau=1 loss {sym:.6f}")
    assert ok


def test_criterion_2_gradient_checks():
    errs = {}
    rng = np.random.default_rng(101)
    s, z = _away_from_hinge(rng, 4, 16)
    errs["triplet"] = _fd_check(lambda a, b: triplet_loss(a, b, 0.3), s, z)
    s, z = _t(_unit(rng, 4, 16)), _t(_unit(rng, 4, 16))
    errs["contrastive"] = _fd_check(lambda a, b: contrastive_loss(a, b, 0.1, "full"), s, z)
    for family in ("set_abstraction", "dynamic_graph"):
        model, x, v = _probe_setup(family)
        xg = x.clone().requires_grad_(True)
        (model(xg, "sketch")[0] @ v).backward()
        eps = 1e-6
        flat = x.reshape(-1)
        num = np.zeros(flat.numel())
        with torch.no_grad():
            for i in range(flat.numel()):
                p, m = flat.clone(), flat.clone()
                p[i] += eps
                m[i] -= eps
                num[i] = ((model(p.view_as(x), "sketch")[0] - model(m.view_as(x), "sketch")[0]) @ v).item() / (2 * eps)
        errs[family] = _rel_err(num, xg.grad.reshape(-1).numpy())
    ok = all(e < 1e-3 for e in errs.values())
    _report(2, "finite-difference gradients (n=32, d=16, float64)", ok,
            ", ".join(f"{k} {v:.1e}" for k, v in errs.items()))
    assert ok


def test_criterion_3_geometry():
    rng = np.random.default_rng(102)
    idem = 0.0
    for _ in range(50):
        c = rng.normal(size=(rng.integers(2, 200), 3)) * rng.uniform(0.1, 10) + rng.normal(size=3)
        once = normalize_cloud(c)
        idem = max(idem, np.abs(normalize_cloud(once) - once).max())
    fps_ok = True
    for _ in range(20):
        c = rng.integers(0, 4, size=(40, 3)).astype(float)  # lattice points, many ties
        perm = rng.permutation(40)
        a = {tuple(p) for p in c[farthest_point_sample(c, 12)]}
        b = {tuple(p) for p in c[perm][farthest_point_sample(c[perm], 12)]}
        fps_ok &= a == b and list(farthest_point_sample(c, 12)) == _fps_oracle(c, 12)
    knn_ok = True
    for n in (5, 17, 64):
        c = rng.integers(0, 5, size=(n, 3)).astype(float)
        knn_ok &= np.array_equal(knn_indices(c, min(8, n - 1)), _knn_oracle(c, min(8, n - 1)))
    enc = {}
    for family, make in (("set_abstraction", conftest.tiny_sa_config), ("dynamic_graph", conftest.tiny_dg_config)):
        torch.manual_seed(0)
        model = RetrievalModel(make())
        cloud = toy_pairs(1, 64)[0][0]
        base = encode(model, cloud, "sketch")
        enc[family] = max(np.abs(encode(model, cloud[rng.permutation(64)], "sketch") - base).max() for _ in range(5))
    ok = idem < 1e-6 and fps_ok and knn_ok and all(v < 1e-4 for v in enc.values())
    _report(3, "geometry invariants", ok,
            f"normalize idempotence {idem:.1e}, FPS permutation/oracle {'ok' if fps_ok else 'BROKEN'}, "
            f"kNN oracle {'ok' if knn_ok else 'BROKEN'}, encoder permutation drift "
            + ", ".join(f"{k} {v:.1e}" for k, v in enc.items()))
    assert ok


def test_criterion_4_retrieval():
    rng = np.random.default_rng(103)
    exact = True
    for _ in range(50):
        n, d = int(rng.integers(1, 40)), int(rng.integers(2, 16))
        emb = _unit(rng, n, d)
        ids = [f"s{int(i)}" for i in rng.permutation(n)]
        q = _unit(rng, 1, d)[0]
        res = retrieve(GalleryIndex(tuple(ids), emb, ""), q, n)
        exact &= list(res.shape_ids) == [sid for _, sid in _scan_oracle(emb, ids, q)]
    monotone = True
    for _ in range(20):
        n = int(rng.integers(2, 30))
        index = GalleryIndex(tuple(f"s{i}" for i in range(n)), _unit(rng, n, 6), "")
        q = _unit(rng, 8, 6)
        results = retrieve_all(index, q, [f"q{i}" for i in range(8)])
        gt = {f"q{i}": f"s{rng.integers(0, n)}" for i in range(8)}
        accs = [accuracy_at_k(results, gt, k) for k in range(1, n + 1)]
        monotone &= all(a <= b for a, b in zip(accs, accs[1:])) and accs[-1] == 100.0
    results, gt = _results_with_ranks([1, 4, 11])
    fixture = [round(accuracy_at_k(results, gt, k), 2) for k in (1, 5, 10)]
    ok = exact and monotone and fixture == [33.33, 66.67, 66.67]
    _report(4, "retrieval", ok, f"linear-scan match {exact}, A@k monotone {monotone}, rank fixture {fixture}")
    assert ok


def test_criterion_5_augmentation():
    rng = np.random.default_rng(104)
    drift = 0.0
    for _ in range(100):
        x = rng.normal(size=(50, 3))
        out = aug.random_axis_rotation(x, rng, "z", renormalize=False)
        pd = lambda c: np.linalg.norm(c[:, None] - c[None], axis=-1)  # noqa: E731
        drift = max(drift, np.abs(pd(out) - pd(x)).max())
    cube = np.array([[x, y, z] for x in (-0.5, 0.5) for y in (-0.5, 0.5) for z in (-0.5, 0.5)])
    extents = np.array([np.ptp(aug.random_anisotropic_scale(cube, np.random.default_rng(s), renormalize=False), 0)
                        for s in range(1000)])
    composed = aug.compose_training_set(list(range(281)), list(range(10_000, 11_000)), 1.5)
    ok = drift < 1e-6 and extents.min() >= 0.9 and extents.max() <= 1.1 and len(composed) == 281 + 421
    _report(5, "augmentation", ok, f"rotation distance drift {drift:.1e}, scale factors in "
                                   f"[{extents.min():.4f}, {extents.max():.4f}], 281 human at ratio 1.5 -> "
                                   f"{len(composed) - 281} synthetic")
    assert ok


def test_criterion_6_overfit_smoke():
    # 256-point clouds and a narrower set-abstraction encoder keep this under a
    # minute; toy sketches are jittered and drop edges so untrained A@1 is low.
    n = 256
    sk, sh = toy_pairs(20, n, jitter=0.1, keep_edges=0.4)
    ids = [f"chair{i:02d}" for i in range(20)]
    data = TrainingData(sk, sh, sk, ids, sh, ids)
    cfg = ModelConfig(n_points=n, embedding_dim=128, head_widths=[256], sa_global_widths=[128, 256, 512],
                      sa_levels=[[n // 2, 0.2, 16, [32, 32, 64]], [n // 8, 0.4, 32, [64, 64, 128]]])
    start = time.perf_counter()
    run = train(cfg, TrainConfig(epochs=50, seeds=[0], validation_every=50), data)[0]
    elapsed = time.perf_counter() - start
    first, last = run.validations[0], run.validations[-1]
    ok = last["epoch"] == 50 and last["A@1"] >= 50.0 and elapsed < 15 * 60
    _report(6, "overfit smoke (20 pairs, 50 epochs, triplet, Siamese, set-abstraction)", ok,
            f"A@1 {first['A@1']:.1f} -> {last['A@1']:.1f} (chance 5.0), {elapsed:.0f}s")
    assert ok


# ------------------------------------------------------------ dataset tier

def _repro_config_path():
    path = os.environ.get(REPRO_ENV)
    return path if path and os.path.exists(path) else None


def _skip(number, title):
    _report(number, title, False, f"needs the released dataset; set {REPRO_ENV}", status="SKIP")
    pytest.skip(f"set {REPRO_ENV} to a run config naming the released dataset")


def _best_test(preset, out_root, overrides=()):
    from vrsketch.config import load_config
    from vrsketch.pipeline import best_of_runs, dataset_snapshot, evaluate, make_cache, run_experiment
    cfg = load_config(_repro_config_path(), preset, list(overrides))
    out = out_root / preset
    run_experiment(cfg, out)
    best = best_of_runs(out)
    return evaluate(best["checkpoint"], dataset_snapshot(cfg), make_cache(cfg)).metrics


@pytest.mark.slow
def test_criterion_7_exp01_reproduction(tmp_path_factory):
    title = "exp01 reproduces 26.2/43.1/54.5 within 5 points"
    if _repro_config_path() is None:
        _skip(7, title)
    got = _best_test("exp01", tmp_path_factory.mktemp("repro"))
    target = {"A@1": 26.2, "A@5": 43.1, "A@10": 54.5}
    ok = all(abs(got[k] - v) <= 5.0 for k, v in target.items())
    _report(7, title, ok, ", ".join(f"{k} {got[k]:.1f} (target {v})" for k, v in target.items()))
    assert ok


@pytest.mark.slow
def test_criterion_8_preset_ordering(tmp_path_factory):
    title = "Siamese > heterogeneous, human > synthetic-only, distortion >= baseline"
    if _repro_config_path() is None:
        _skip(8, title)
    root = tmp_path_factory.mktemp("order")
    a1 = {p: _best_test(p, root)["A@1"] for p in ("exp01", "exp02", "exp09", "exp10", "exp11", "exp14")}
    ok = (a1["exp01"] > a1["exp02"] and all(a1["exp01"] > a1[p] for p in ("exp09", "exp10", "exp11"))
          and a1["exp14"] >= a1["exp01"])
    _report(8, title, ok, ", ".join(f"{k} A@1 {v:.1f}" for k, v in a1.items()))
    assert ok


@pytest.mark.slow
def test_criterion_9_size_sweep_trend(tmp_path_factory):
    title = "size sweep: A@1(0.6) > A@1(0.2) and the 0.8->1.0 gain < the 0.2->0.6 gain"
    if _repro_config_path() is None:
        _skip(9, title)
    from vrsketch.config import load_config
    from vrsketch.pipeline import size_sweep, summarize_sweep
    cfg = load_config(_repro_config_path(), "exp01")
    mean = summarize_sweep(size_sweep(cfg, [0.2, 0.4, 0.6, 0.8, 1.0], tmp_path_factory.mktemp("sweep")))
    a1 = {f: v["A@1"] for f, v in mean.items()}
    ok = a1[0.6] > a1[0.2] and (a1[1.0] - a1[0.8]) < (a1[0.6] - a1[0.2])
    _report(9, title, ok, ", ".join(f"{f:.1f}: {v:.1f}" for f, v in a1.items()))
    assert ok
