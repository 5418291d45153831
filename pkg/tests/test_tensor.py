import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from zoolab.errors import CorruptHeader, DimensionMismatch, SelectorEmpty, ShapeSizeMismatch, TruncatedBlob
from zoolab.nn import ArchSpec, HeadSpec, init_model
from zoolab.tensor import (
    ModelCheckpoint,
    NamedTensor,
    WeightVector,
    checkpoint_dir,
    flatten_weights,
    l2_distance,
    load_checkpoint,
    rng_for,
    save_checkpoint,
)


def two_tensor_ckpt():
    return ModelCheckpoint.from_arrays(
        [("backbone.0.weight", np.array([[1, 2], [3, 4]])), ("head.0.bias", np.array([5, 6]))]
    )


def random_ckpt(rng, n_tensors=3):
    arrays = []
    for i in range(n_tensors):
        shape = tuple(rng.integers(1, 5, size=rng.integers(1, 4)))
        arrays.append((f"backbone.{i}.weight", rng.standard_normal(shape)))
    return ModelCheckpoint.from_arrays(
        arrays, epoch=int(rng.integers(0, 100)), stage="finetuning", arch_id=f"arch{rng.integers(9)}"
    )


class TestNamedTensor:
    def test_stored_as_readonly_float32(self):
        t = NamedTensor("w", np.arange(6.0).reshape(2, 3))
        assert t.data.dtype == np.float32
        assert t.shape == (2, 3)
        with pytest.raises(ValueError):
            t.data[0, 0] = 1.0

    def test_copies_its_input(self):
        src = np.zeros(3, dtype=np.float32)
        t = NamedTensor("w", src)
        src[0] = 7.0
        assert t.data[0] == 0.0

    def test_rejects_empty_shape(self):
        with pytest.raises(ShapeSizeMismatch):
            NamedTensor("w", np.zeros((0, 3)))

    def test_duplicate_names_rejected(self):
        with pytest.raises(ValueError):
            ModelCheckpoint.from_arrays([("a", np.ones(2)), ("a", np.ones(2))])


class TestFlatten:
    def test_all_is_row_major_concat(self):
        v = flatten_weights(two_tensor_ckpt(), "all")
        assert v.values.tolist() == [1, 2, 3, 4, 5, 6]
        assert v.selector_id == "all"

    def test_head_only(self):
        assert flatten_weights(two_tensor_ckpt(), "head_only").values.tolist() == [5, 6]

    def test_backbone_only_ignores_head_size(self):
        a = init_model(ArchSpec(head=HeadSpec("linear", 10)), 0)
        b = init_model(ArchSpec(head=HeadSpec("mlp", 3, 16)), 0)
        assert len(flatten_weights(a, "all")) != len(flatten_weights(b, "all"))
        assert len(flatten_weights(a, "backbone_only")) == len(flatten_weights(b, "backbone_only"))

    def test_empty_selection(self):
        ckpt = ModelCheckpoint.from_arrays([("backbone.0.weight", np.ones(2))])
        with pytest.raises(SelectorEmpty):
            flatten_weights(ckpt, "head_only")

    def test_injective_per_selector(self, rng):
        a = random_ckpt(rng)
        arrays = a.arrays()
        name = a.names[1]
        changed = arrays[name].copy()
        changed.flat[0] += 1.0
        b = ModelCheckpoint.from_arrays([(n, changed if n == name else arrays[n]) for n in a.names])
        assert not np.array_equal(flatten_weights(a).values, flatten_weights(b).values)
        assert np.array_equal(flatten_weights(a).values, flatten_weights(a).values)


class TestDistance:
    def test_three_four_five(self):
        a = WeightVector(np.array([0.0, 0.0], np.float32), "all")
        b = WeightVector(np.array([3.0, 4.0], np.float32), "all")
        assert l2_distance(a, b) == 5.0
        assert l2_distance(b, b) == 0.0

    def test_against_naive_sum(self, rng):
        for _ in range(100):
            n = int(rng.integers(1, 300))
            x = rng.standard_normal(n).astype(np.float32)
            y = rng.standard_normal(n).astype(np.float32)
            naive = 0.0
            for xi, yi in zip(x.tolist(), y.tolist()):
                naive += (xi - yi) ** 2
            got = l2_distance(WeightVector(x, "all"), WeightVector(y, "all"))
            assert abs(got - naive**0.5) <= 1e-6 * naive**0.5

    def test_mismatch(self):
        a = WeightVector(np.zeros(2, np.float32), "all")
        with pytest.raises(DimensionMismatch):
            l2_distance(a, WeightVector(np.zeros(3, np.float32), "all"))
        with pytest.raises(DimensionMismatch):
            l2_distance(a, WeightVector(np.zeros(2, np.float32), "backbone_only"))

    @settings(max_examples=60, deadline=None)
    @given(hnp.arrays(np.float32, (3, 8), elements=st.floats(-1e3, 1e3, width=32)))
    def test_metric_properties(self, pts):
        a, b, c = (WeightVector(p, "all") for p in pts)
        ab, bc, ac = l2_distance(a, b), l2_distance(b, c), l2_distance(a, c)
        assert ab == l2_distance(b, a)
        assert ac <= (ab + bc) * (1 + 1e-5) + 1e-12
        assert (ab == 0) == np.array_equal(pts[0], pts[1])


class TestSerialization:
    def test_round_trip_three_tensors(self, tmp_path, rng):
        ckpt = random_ckpt(rng, 3)
        save_checkpoint(ckpt, tmp_path / "w.bin")
        assert load_checkpoint(tmp_path / "w.bin") == ckpt

    def test_randomized_round_trips(self, tmp_path, rng):
        for i in range(50):
            ckpt = random_ckpt(rng, int(rng.integers(1, 6)))
            path = tmp_path / f"{i}.bin"
            save_checkpoint(ckpt, path)
            back = load_checkpoint(path)
            assert back == ckpt
            assert all(a.data.tobytes() == b.data.tobytes() for a, b in zip(back.tensors, ckpt.tensors))

    def test_special_values_survive(self, tmp_path):
        vals = np.array([0.0, -0.0, 1e-45, np.finfo(np.float32).max, -1.5], np.float32)
        ckpt = ModelCheckpoint.from_arrays([("w", vals)])
        save_checkpoint(ckpt, tmp_path / "w.bin")
        assert load_checkpoint(tmp_path / "w.bin")["w"].tobytes() == vals.tobytes()

    def test_truncated_blob(self, tmp_path):
        ckpt = ModelCheckpoint.from_arrays([("w", np.arange(8.0))])
        path = tmp_path / "w.bin"
        save_checkpoint(ckpt, path)
        path.write_bytes(path.read_bytes()[:-4])  # 7 of 8 floats left
        with pytest.raises(TruncatedBlob):
            load_checkpoint(path)

    def _rewrite_header(self, path, edit):
        raw = path.read_bytes()
        (hlen,) = struct.unpack_from("<Q", raw, 8)
        header = json.loads(raw[16 : 16 + hlen])
        edit(header)
        new = json.dumps(header).encode()
        path.write_bytes(raw[:8] + struct.pack("<Q", len(new)) + new + raw[16 + hlen :])

    def test_shape_size_mismatch(self, tmp_path):
        path = tmp_path / "w.bin"
        save_checkpoint(ModelCheckpoint.from_arrays([("w", np.arange(8.0))]), path)
        self._rewrite_header(path, lambda h: h["tensors"][0].update(shape=[3, 3]))
        with pytest.raises(ShapeSizeMismatch):
            load_checkpoint(path)

    def test_corrupt_header(self, tmp_path):
        path = tmp_path / "w.bin"
        save_checkpoint(ModelCheckpoint.from_arrays([("w", np.arange(8.0))]), path)
        raw = bytearray(path.read_bytes())
        raw[17] = ord("!")
        path.write_bytes(bytes(raw))
        with pytest.raises(CorruptHeader):
            load_checkpoint(path)
        path.write_bytes(b"NOTMAGIC" + bytes(raw[8:]))
        with pytest.raises(CorruptHeader):
            load_checkpoint(path)

    def test_errors_are_distinct(self):
        assert len({CorruptHeader, TruncatedBlob, ShapeSizeMismatch}) == 3
        assert not issubclass(TruncatedBlob, CorruptHeader)

    def test_checkpoint_dir_naming(self, tmp_path):
        assert checkpoint_dir(tmp_path, 42).name == "checkpoint_000042"


class TestRng:
    def test_named_streams_are_independent(self):
        a = rng_for(0, "x").random(4)
        assert np.array_equal(a, rng_for(0, "x").random(4))
        assert not np.array_equal(a, rng_for(0, "y").random(4))
        assert not np.array_equal(a, rng_for(1, "x").random(4))

    def test_path_segments_matter(self):
        assert not np.array_equal(rng_for(0, "a", "b").random(3), rng_for(0, "b", "a").random(3))
