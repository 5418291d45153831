"""Acceptance criteria 1-10, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line; the lines are also
collected into a summary section at the end of the pytest run.
"""

import math
import shutil
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, DEMO_TIMING
from zoolab.averaging import (
    epoch_average,
    is_converged,
    linear_sum_assignment,
    load_trajectory,
    permute_model,
    random_perms,
    rebasin_merge,
    weight_matching_align,
)
from zoolab.cli import run_cli
from zoolab.data import make_dataset
from zoolab.grid import load_zoo_config
from zoolab.lineage import kmeans, min_arborescence, mother_matrix, purity, run_experiment
from zoolab.losses import loss_cross_entropy, loss_infonce
from zoolab.metrics import cluster_distances, evaluate, moments
from zoolab.nn import ArchSpec, HeadSpec, init_model, logits
from zoolab.store import scan_layout, write_layout
from zoolab.tensor import flatten_weights

pytestmark = pytest.mark.slow


def verdict(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def central_diff(f, x, h=1e-3):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        up = f()
        x[idx] = old - h
        down = f()
        x[idx] = old
        g[idx] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12))


def test_1_gradient_correctness():
    start = time.perf_counter()
    rng = np.random.default_rng(1)
    errs = []
    for _ in range(10):
        b, c = rng.integers(2, 8), rng.integers(2, 8)
        z = rng.standard_normal((b, c)) * 2
        y = rng.integers(0, c, size=b)
        errs.append(rel_err(loss_cross_entropy(z, y)[1], central_diff(lambda: loss_cross_entropy(z, y)[0], z)))
    for _ in range(10):
        b, d = rng.integers(2, 8), rng.integers(2, 8)
        a, p = rng.standard_normal((b, d)), rng.standard_normal((b, d))
        ga, gp = loss_infonce(a, p, 0.5)[1]
        fa = central_diff(lambda: loss_infonce(a, p, 0.5)[0], a)
        fp = central_diff(lambda: loss_infonce(a, p, 0.5)[0], p)
        errs.append(rel_err(np.concatenate([ga, gp]), np.concatenate([fa, fp])))
    elapsed = time.perf_counter() - start
    verdict(1, max(errs) < 1e-4 and elapsed < 5, f"max rel err {max(errs):.2e}, {elapsed:.2f}s")


def test_2_lineage_epoch_experiment(demo_zoo):
    start = time.perf_counter()
    res = run_experiment(demo_zoo, "epochs", n_children=6)
    elapsed = time.perf_counter() - start + DEMO_TIMING.get("generate", 0.0)
    r = res.report
    shape_ok = res.experiment.truth.n == 6 * 7 and res.experiment.k == 6
    ok = shape_ok and r.f1 >= 0.8 and r.accuracy >= 0.95 and elapsed < 120
    verdict(2, ok, f"F1 {r.f1:.4f} (need >= 0.8), accuracy {r.accuracy:.4f} (need >= 0.95), {elapsed:.1f}s")


def test_3_lineage_degradation_direction(demo_zoo):
    epochs = run_experiment(demo_zoo, "epochs", n_children=6)
    optim = run_experiment(demo_zoo, "optimizer", n_children=6)
    same_size = epochs.experiment.truth.n == optim.experiment.truth.n
    ok = same_size and optim.report.f1 < epochs.report.f1
    verdict(3, ok, f"F1 optimizer {optim.report.f1:.4f} < F1 epochs {epochs.report.f1:.4f}")


def test_4_cluster_structure(demo_zoo):
    cs = cluster_distances(demo_zoo)["all"]
    ok_entries = [e for e in demo_zoo.entries if e.status == "ok"]
    vecs = [flatten_weights(demo_zoo.load(e), "backbone_only") for e in ok_entries]
    truth = [e.parent_id or e.id for e in ok_entries]
    labels = kmeans(vecs, len(demo_zoo.pretrained), seed=0).labels
    p = purity(labels, truth)
    ratio = cs.between_mean / cs.within_mean
    verdict(4, ratio > 3 and p == 1.0, f"between/within {ratio:.2f} (need > 3), purity {p:.3f}")


def test_5_mother_arithmetic():
    start = time.perf_counter()
    rng = np.random.default_rng(5)
    identity_ok = True
    for _ in range(100):
        n = int(rng.integers(2, 10))
        pts = rng.standard_normal((n, 4))
        d = np.sqrt(((pts[:, None] - pts[None]) ** 2).sum(-1))
        kurt = rng.standard_normal(n)
        lam = float(rng.uniform(0, 2))
        mm = mother_matrix(d, kurt, lam)
        dbar = d[~np.eye(n, dtype=bool)].sum() / (n * n - n)
        expect = d + lam * dbar * (kurt[:, None] > kurt[None, :])
        np.fill_diagonal(expect, math.inf)
        identity_ok &= bool(np.array_equal(mm.cost, expect))

    from test_lineage import brute_force

    arb_ok = True
    for trial in range(200):
        n = int(rng.integers(1, 6))
        cost_m = rng.integers(1, 6, (n, n)).astype(float) if trial % 2 else rng.uniform(0, 10, (n, n))
        np.fill_diagonal(cost_m, math.inf)
        got = min_arborescence(cost_m).total_cost
        want = brute_force(cost_m)[0] if n > 1 else 0.0
        arb_ok &= abs(got - want) <= 1e-9
    elapsed = time.perf_counter() - start
    verdict(5, identity_ok and arb_ok and elapsed < 30, f"identity {identity_ok}, arborescence {arb_ok}, {elapsed:.2f}s")


def test_6_rebasin_oracle():
    rng = np.random.default_rng(6)
    recovered = bitwise = merged_ok = function_ok = 0
    worst = 0.0
    for s in range(10):
        arch = ArchSpec(head=HeadSpec("mlp", 10, 16))
        m = init_model(arch, s)
        # biases are zero at init; perturb them so they carry information
        m = m.replace(
            tensors=tuple(
                t.__class__(t.name, t.data + 0.1 * rng.standard_normal(t.shape)) if t.name.endswith("bias") else t
                for t in m.tensors
            )
        )
        p = random_perms(m, rng)
        shuffled = permute_model(m, p)
        found = weight_matching_align(m, shuffled)
        recovered += found == p.inverse()
        bitwise += permute_model(shuffled, found) == m
        merged = rebasin_merge([m, shuffled])
        gap = max(float(np.max(np.abs(a.data - b.data))) for a, b in zip(merged.tensors, m.tensors))
        worst = max(worst, gap)
        merged_ok += gap <= 1e-6
        x = rng.standard_normal((100, arch.input_dim))
        function_ok += np.max(np.abs(logits(shuffled, x) - logits(m, x))) <= 1e-5
    ok = recovered == bitwise == merged_ok == function_ok == 10
    verdict(6, ok, f"recovered {recovered}/10, bitwise {bitwise}/10, merge max gap {worst:.1e}, function {function_ok}/10")


def test_7_lap_correctness():
    import itertools

    rng = np.random.default_rng(7)
    bad = 0
    for trial in range(200):
        n = int(rng.integers(1, 8))
        cost = rng.integers(0, 9, (n, n)).astype(float) if trial % 2 else rng.standard_normal((n, n))
        rows, cols = linear_sum_assignment(cost)
        got = cost[rows, cols].sum()
        best = min(cost[np.arange(n), list(p)].sum() for p in itertools.permutations(range(n)))
        bad += abs(got - best) > 1e-9
    verdict(7, bad == 0, f"{200 - bad}/200 optimal")


def test_8_epoch_averaging(demo_zoo):
    runs = [e for e in demo_zoo.finetuned if is_converged(e, 5)]
    datasets = {}
    hits = 0
    for e in runs:
        if e.factors.dataset not in datasets:
            datasets[e.factors.dataset] = make_dataset(e.factors.dataset)
        ds = datasets[e.factors.dataset]
        traj = load_trajectory(demo_zoo, e)
        window = [evaluate(c, ds)["accuracy"] for c in traj.checkpoints[-5:]]
        avg = evaluate(epoch_average(traj, 5), ds)["accuracy"]
        hits += avg >= max(window) - 0.01
    frac = hits / len(runs) if runs else 0.0
    verdict(8, len(runs) >= 10 and frac >= 0.8, f"{hits}/{len(runs)} converged runs within 1 point ({frac:.0%})")


def test_9_statistics():
    skew, kurt = moments([-1.0, 1.0] * 500)
    exact = skew == 0.0 and kurt == -2.0
    s, k = moments(np.random.default_rng(9).standard_normal(1_000_000))
    ok = exact and abs(s) < 0.02 and abs(k) < 0.02
    verdict(9, ok, f"two-point ({skew}, {kurt}), normal skew {s:.4f} kurt {k:.4f}")


PIPELINE = [
    ["analyze"],
    ["lineage"],
    ["average", "--mode", "epochs"],
    ["average", "--mode", "sweep"],
    ["average", "--mode", "soup", "--vary", "lr"],
    ["average", "--mode", "rebasin"],
    ["report"],
]


def _run_pipeline(zoo):
    for step in PIPELINE:
        assert run_cli([step[0], "--zoo", str(zoo), *step[1:]]) == 0, step


def _snapshot(root):
    return {
        p.relative_to(root): p.read_bytes()
        for p in root.rglob("*")
        if p.is_file() and p.suffix in {".csv", ".json", ".bin"}
    }


def test_10_determinism_and_persistence(demo_zoo, tmp_path):
    a = tmp_path / "a"
    shutil.copytree(demo_zoo.root_dir, a)
    _run_pipeline(a)
    b = tmp_path / "b"
    seed = load_zoo_config("demo")["x_global_seed"]
    assert run_cli(["generate", "--config", "demo", "--out", str(b), "--seed", str(seed)]) == 0
    _run_pipeline(b)
    snap_a, snap_b = _snapshot(a), _snapshot(b)
    n_csv = sum(p.suffix == ".csv" for p in snap_a)
    same = snap_a == snap_b

    before = scan_layout(a)
    texts = {p: (a / p).read_bytes() for p in snap_a if p.name in ("config.json", "result.json")}
    write_layout(before)
    after = scan_layout(a)
    round_trip = (
        after.pretrained == before.pretrained
        and after.finetuned == before.finetuned
        and all((a / p).read_bytes() == t for p, t in texts.items())
    )
    verdict(10, same and round_trip and n_csv >= 10, f"{len(snap_a)} files identical: {same}, {n_csv} CSVs, layout round trip: {round_trip}")
