import copy
import itertools

import numpy as np
import pytest

from zoolab.averaging import (
    PermutationSet,
    epoch_average,
    epoch_average_sweep,
    identity_perms,
    interpolate,
    interpolation_curve,
    is_converged,
    linear_sum_assignment,
    load_trajectory,
    make_soups,
    permute_model,
    random_perms,
    rebasin_merge,
    soup_groups,
    uniform_average,
    weight_matching_align,
)
from zoolab.averaging.hungarian import assignment_cost
from zoolab.data import DatasetSpec, make_dataset
from zoolab.errors import ArchMismatch, WindowTooLarge
from zoolab.metrics import evaluate
from zoolab.nn import ArchSpec, HeadSpec, init_model, logits
from zoolab.tensor import ModelCheckpoint, flatten_weights, l2_distance
from zoolab.zoo import generate_zoo


class TestHungarian:
    def test_against_brute_force(self, rng):
        for trial in range(200):
            n = int(rng.integers(1, 8))
            m = n + int(rng.integers(0, 2)) if trial % 3 == 0 else n
            cost = rng.integers(0, 6, (n, m)).astype(float) if trial % 2 else rng.standard_normal((n, m))
            for maximize in (False, True):
                rows, cols = linear_sum_assignment(cost, maximize=maximize)
                assert rows.tolist() == list(range(n))
                assert len(set(cols.tolist())) == n
                sign = -1 if maximize else 1
                best = min(sign * cost[np.arange(n), list(p)].sum() for p in itertools.permutations(range(m), n))
                assert sign * assignment_cost(cost, rows, cols) == pytest.approx(best, abs=1e-9)

    def test_tall_matrix(self):
        rows, cols = linear_sum_assignment(np.array([[1.0], [0.0], [2.0]]))
        assert rows.tolist() == [1] and cols.tolist() == [0]

    def test_identity_cost(self):
        rows, cols = linear_sum_assignment(np.eye(5), maximize=True)
        assert cols.tolist() == list(range(5))


def mlp(seed, head="mlp"):
    arch = ArchSpec(input_dim=6, hidden_dims=(7, 5), head=HeadSpec(head, 3, 4))
    ckpt = init_model(arch, seed)
    rng = np.random.default_rng(seed + 100)
    # non-zero biases so bias matching is exercised
    return ckpt.replace(
        tensors=tuple(
            t.__class__(t.name, t.data + 0.1 * rng.standard_normal(t.shape)) if t.name.endswith("bias") else t
            for t in ckpt.tensors
        )
    )


class TestUniformAverage:
    def test_copies_are_bitwise_identical(self, small_model):
        avg = uniform_average([small_model] * 4)
        for a, b in zip(avg.tensors, small_model.tensors):
            assert a.data.tobytes() == b.data.tobytes()

    def test_opposites_cancel(self, small_model):
        neg = small_model.replace(tensors=tuple(t.__class__(t.name, -t.data) for t in small_model.tensors))
        avg = uniform_average([small_model, neg])
        assert all(np.all(t.data == 0) for t in avg.tensors)

    def test_matches_elementwise_loop(self, rng):
        models = [mlp(s) for s in range(5)]
        avg = uniform_average(models)
        for i, t in enumerate(avg.tensors):
            flat = np.empty(t.data.size, np.float32)
            for j in range(t.data.size):
                vals = [float(m.tensors[i].data.flat[j]) for m in models]
                flat[j] = np.float32(sum(vals) / len(vals))
            got = t.data.ravel()
            ulp = np.spacing(np.abs(flat).astype(np.float32))
            assert np.all(np.abs(got - flat) <= ulp)

    def test_permutation_invariant_bits(self, rng):
        models = [mlp(s) for s in range(6)]
        ref = uniform_average(models)
        for _ in range(10):
            perm = rng.permutation(6)
            assert uniform_average([models[i] for i in perm]) == ref

    def test_arch_mismatch(self):
        with pytest.raises(ArchMismatch):
            uniform_average([mlp(0), mlp(1, head="linear")])
        with pytest.raises(ValueError):
            uniform_average([])


class TestEpochAverage:
    def test_window_one_is_last_checkpoint(self, tiny_zoo):
        traj = load_trajectory(tiny_zoo, tiny_zoo.finetuned[0])
        assert epoch_average(traj, 1) == traj.final.replace(stage=traj.final.stage)

    def test_window_too_large(self, tiny_zoo):
        traj = load_trajectory(tiny_zoo, tiny_zoo.finetuned[0])
        epochs = len(traj.checkpoints) - 1
        epoch_average(traj, epochs)
        with pytest.raises(WindowTooLarge):
            epoch_average(traj, epochs + 1)

    def test_average_of_last_window(self, tiny_zoo):
        traj = load_trajectory(tiny_zoo, tiny_zoo.finetuned[1])
        assert epoch_average(traj, 3) == uniform_average(traj.checkpoints[-3:])

    def test_sweep(self, tiny_zoo):
        entry = tiny_zoo.finetuned[2]
        traj = load_trajectory(tiny_zoo, entry)
        ds = make_dataset(entry.factors.dataset)
        epochs = len(traj.checkpoints) - 1
        rows = epoch_average_sweep(traj, 2, ds)
        assert len(rows) == epochs - 1
        assert [r["epoch"] for r in rows] == list(range(2, epochs + 1))
        for r in rows:
            assert r["min_individual"] <= r["mean_individual"] <= r["max_individual"]
        ones = epoch_average_sweep(traj, 1, ds)
        assert [r["averaged"] for r in ones] == [m["test_acc"] for m in entry.results]

    def test_converged(self, tiny_zoo):
        e = tiny_zoo.finetuned[0]
        accs = [r["test_acc"] for r in e.results]
        assert is_converged(e, 3, tol=1.0)
        assert is_converged(e, 3, tol=0.0) == (accs[-1] == accs[-3])
        assert not is_converged(e, len(accs) + 1, tol=1.0)


class TestPermutations:
    def test_function_preserved(self, rng):
        x = rng.standard_normal((20, 6))
        for s in range(10):
            m = mlp(s)
            p = random_perms(m, rng)
            assert np.allclose(logits(permute_model(m, p), x), logits(m, x), atol=1e-5)

    def test_inverse_undoes(self, rng):
        m = mlp(0)
        p = random_perms(m, rng)
        assert permute_model(permute_model(m, p), p.inverse()) == m
        assert permute_model(m, identity_perms(m)) == m

    def test_invalid_permutation(self):
        with pytest.raises(ValueError):
            PermutationSet(("a",), (np.array([0, 0, 1]),))

    def test_align_to_self_is_identity(self):
        for s in range(5):
            m = mlp(s)
            assert weight_matching_align(m, m).is_identity()

    def test_recovers_hidden_permutation(self, rng):
        x = rng.standard_normal((30, 6))
        for s in range(10):
            m = mlp(s)
            p = random_perms(m, rng)
            shuffled = permute_model(m, p)
            found = weight_matching_align(m, shuffled)
            assert found == p.inverse()
            assert permute_model(shuffled, found) == m
            merged = rebasin_merge([m, shuffled])
            assert np.allclose(flatten_weights(merged).values, flatten_weights(m).values, atol=1e-6)
            assert np.allclose(logits(merged, x), logits(m, x), atol=1e-5)

    def test_alignment_never_increases_distance(self):
        for s in range(20):
            a, b = mlp(2 * s), mlp(2 * s + 1)
            aligned = permute_model(b, weight_matching_align(a, b))
            before = l2_distance(flatten_weights(a), flatten_weights(b))
            after = l2_distance(flatten_weights(a), flatten_weights(aligned))
            assert after <= before + 1e-6

    def test_interpolation_endpoints(self):
        a, b = mlp(0), mlp(1)
        assert interpolate(a, b, 0.0) == a
        assert interpolate(a, b, 1.0) == b
        ds = make_dataset(DatasetSpec(input_dim=6, n_classes=3, n_train=30, n_test=30))
        curve = interpolation_curve(a, b, ds, align=False)
        assert [r["alpha"] for r in curve] == [0.0, 0.25, 0.5, 0.75, 1.0]
        assert curve[0]["accuracy"] == evaluate(a, ds)["accuracy"]
        assert curve[-1]["accuracy"] == evaluate(b, ds)["accuracy"]


@pytest.fixture(scope="module")
def soup_zoo(tmp_path_factory):
    from conftest import TINY_CONFIG

    cfg = copy.deepcopy(TINY_CONFIG)
    cfg["pretraining"]["Task"] = ["supervised"]
    cfg["pretraining"]["x_seeds"] = {"supervised": [1]}
    cfg["finetuning"]["Architecture"]["Classification Head"] = ["linear", "mlp"]
    cfg["finetuning"]["x_head_seeds"] = [0, 1]
    cfg["finetuning"]["Learning Rates"] = [0.003]
    cfg["finetuning"]["Optimiser"] = ["adamw"]
    return generate_zoo(cfg, tmp_path_factory.mktemp("soup_zoo"), workers=1)


class TestSoups:
    def test_head_seed_soups_have_two_members(self, soup_zoo):
        groups = soup_groups(soup_zoo, "head_seed")
        assert len(groups) == 2
        for spec, members in groups:
            assert len(members) == 2
            assert len({m.factors.fine.head.kind for m in members}) == 1
            assert {m.factors.fine.head_seed for m in members} == {0, 1}

    def test_uniform_soup(self, soup_zoo):
        soups = make_soups(soup_zoo, "head_seed")
        for s in soups:
            members = [soup_zoo.load(i) for i in s.member_ids]
            assert s.merged == uniform_average(members)
            assert 0 <= s.merged_acc <= 1
            assert "pretrained=" in s.group_id

    def test_head_arch_soup_keeps_best_head(self, soup_zoo):
        soups = make_soups(soup_zoo, "head_arch")
        assert len(soups) == 2
        for s in soups:
            best = s.member_ids[int(np.argmax(s.member_accs))]
            best_ckpt = soup_zoo.load(best)
            heads = [t for t in s.merged.tensors if t.name.startswith("head.")]
            assert heads == [t for t in best_ckpt.tensors if t.name.startswith("head.")]
            members = [soup_zoo.load(i) for i in s.member_ids]
            bb = s.merged["backbone.0.weight"]
            assert np.array_equal(bb, uniform_average([
                ModelCheckpoint(tuple(t for t in m.tensors if t.name.startswith("backbone.")))
                for m in members
            ])["backbone.0.weight"])

    def test_unknown_key(self, soup_zoo):
        with pytest.raises(ValueError):
            soup_groups(soup_zoo, "batch")
