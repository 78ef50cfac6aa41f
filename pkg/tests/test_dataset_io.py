import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from spkocc.dataset import DatasetConfig, build_in_memory, load_split, write_dataset
from spkocc.dataset_io import (
    HEADER,
    CorruptHeaderError,
    SizeMismatchError,
    SplitManifest,
    TruncatedPayloadError,
    VersionMismatchError,
    SpatialTransform,
    apply_transform,
    augment,
    decode_sample,
    encode_sample,
    make_split,
    payload_size,
    random_transform,
    read_sample,
    write_sample,
)
from spkocc.scenes import Sample, SceneConfigError, quantize_gt, random_scene
from spkocc.spikes import SpikeStream, firing_rate_image


def random_sample(rng, t, h, w, gt=True):
    stream = SpikeStream((rng.random((t, h, w)) < 0.3).astype(np.uint8))
    truth = quantize_gt(rng.random((h, w))) if gt else None
    return Sample(stream=stream, ground_truth=truth)


def naive_pack(stream):
    # byte-by-byte reference for the bit layout: row-major pixels, LSB first per byte
    t, h, w = stream.shape
    nbytes = (h * w + 7) // 8
    out = bytearray()
    for step in range(t):
        flat = stream[step].reshape(-1)
        for b in range(nbytes):
            byte = 0
            for k in range(8):
                i = 8 * b + k
                if i < h * w and flat[i]:
                    byte |= 1 << k
            out.append(byte)
    return bytes(out)


class TestContainer:
    def test_payload_size_example(self):
        assert payload_size(4, 4, 10) == 20

    def test_header_fields(self):
        s = random_sample(np.random.default_rng(0), 10, 4, 4)
        buf = encode_sample(s)
        magic, version, h, w, t, flag = HEADER.unpack_from(buf)
        assert (magic, version, h, w, t, flag) == (b"SOCC", 1, 4, 4, 10, 1)
        assert len(buf) == HEADER.size + 20 + 2 * 16

    def test_bit_layout_matches_reference(self):
        s = random_sample(np.random.default_rng(1), 7, 3, 5, gt=False)
        buf = encode_sample(s)
        assert buf[HEADER.size:] == naive_pack(s.stream.data)

    def test_ground_truth_bytes(self):
        rng = np.random.default_rng(2)
        s = random_sample(rng, 3, 2, 3)
        buf = encode_sample(s)
        tail = buf[HEADER.size + payload_size(2, 3, 3):]
        q = struct.unpack("<6H", tail)
        assert list(q) == [int(round(v * 65535)) for v in s.ground_truth.reshape(-1).astype(np.float64)]

    @given(st.integers(1, 30), st.integers(1, 9), st.integers(1, 9), st.booleans(), st.integers(0, 2**32 - 1))
    @settings(max_examples=60)
    def test_roundtrip(self, t, h, w, with_gt, seed):
        s = random_sample(np.random.default_rng(seed), t, h, w, gt=with_gt)
        buf = encode_sample(s)
        assert len(buf) == HEADER.size + payload_size(h, w, t) + (2 * h * w if with_gt else 0)
        back = decode_sample(buf)
        assert back == s

    def test_bad_magic(self):
        buf = bytearray(encode_sample(random_sample(np.random.default_rng(3), 10, 4, 4)))
        buf[:4] = b"XXXX"
        with pytest.raises(CorruptHeaderError):
            decode_sample(bytes(buf))

    def test_short_header(self):
        with pytest.raises(CorruptHeaderError):
            decode_sample(b"SOCC\x01")

    def test_truncated(self):
        buf = encode_sample(random_sample(np.random.default_rng(4), 10, 4, 4))
        with pytest.raises(TruncatedPayloadError):
            decode_sample(buf[:-1])

    def test_trailing_bytes(self):
        buf = encode_sample(random_sample(np.random.default_rng(5), 10, 4, 4))
        with pytest.raises(SizeMismatchError):
            decode_sample(buf + b"\x00")

    def test_version(self):
        buf = bytearray(encode_sample(random_sample(np.random.default_rng(6), 2, 2, 2)))
        struct.pack_into("<H", buf, 4, 2)
        with pytest.raises(VersionMismatchError):
            decode_sample(bytes(buf))

    def test_rejects_non_binary(self):
        s = random_sample(np.random.default_rng(7), 2, 2, 2)
        s.stream.data[0, 0, 0] = 3
        with pytest.raises(ValueError):
            encode_sample(s)

    def test_file_roundtrip_with_provenance(self, tmp_path):
        from spkocc.scenes import generate_sample
        scene = random_scene(1, "fence", 16, 16, 40)
        sample = generate_sample(scene)
        path = tmp_path / "a.socc"
        write_sample(sample, path)
        back = read_sample(path)
        assert back == sample
        assert back.scene == scene
        assert json.loads(path.with_suffix(".json").read_text())["meta"]["pattern"] == "fence"


class TestManifest:
    def test_counts_and_disjoint(self):
        m = make_split(128, 108, seed=0)
        assert len(m.train) == 108 and len(m.test) == 20
        assert not set(m.train) & set(m.test)
        assert len(set(m.train) | set(m.test)) == 128

    def test_deterministic(self):
        assert make_split(128, 108, seed=3) == make_split(128, 108, seed=3)
        assert make_split(128, 108, seed=3) != make_split(128, 108, seed=4)

    def test_smallest(self):
        m = make_split(2, 1, seed=0)
        assert len(m.train) == 1 and len(m.test) == 1

    @pytest.mark.parametrize("n,k", [(5, 0), (5, 5), (1, 1)])
    def test_bad_counts(self, n, k):
        with pytest.raises(ValueError):
            make_split(n, k)

    def test_text_roundtrip(self, tmp_path):
        m = make_split(10, 7, seed=9)
        m.save(tmp_path / "manifest.txt")
        assert SplitManifest.load(tmp_path / "manifest.txt") == m
        text = (tmp_path / "manifest.txt").read_text()
        assert text.splitlines()[:2] == ["# seed: 9", "train:"]

    def test_id_before_heading(self):
        with pytest.raises(ValueError):
            SplitManifest.loads("sample_0000\ntrain:\n")


class TestAugment:
    def make(self, seed=0, t=20, h=12, w=12):
        return random_sample(np.random.default_rng(seed), t, h, w)

    def test_identity(self):
        s = self.make()
        assert apply_transform(s, SpatialTransform.identity(12, 12)) == s

    def test_flip_involution(self):
        s = self.make(1)
        flip = SpatialTransform(0, 0, 12, 12, True, 0)
        assert apply_transform(apply_transform(s, flip), flip) == s

    def test_four_rotations(self):
        s = self.make(2)
        rot = SpatialTransform(0, 0, 12, 12, False, 1)
        out = s
        for _ in range(4):
            out = apply_transform(out, rot)
        assert out == s

    def test_rotation_shape(self):
        s = self.make(3, h=6, w=10)
        out = apply_transform(s, SpatialTransform(0, 0, 6, 10, False, 1))
        assert out.stream.data.shape == (20, 10, 6)
        assert out.ground_truth.shape == (10, 6)

    def test_crop_values(self):
        s = self.make(4)
        out = apply_transform(s, SpatialTransform(2, 3, 5, 4, False, 0))
        assert np.array_equal(out.stream.data, s.stream.data[:, 2:7, 3:7])
        assert np.array_equal(out.ground_truth, s.ground_truth[2:7, 3:7])

    def test_crop_too_large(self):
        with pytest.raises(ValueError):
            random_transform(64, 64, np.random.default_rng(0), crop=128)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=40)
    def test_commutes_with_rate(self, seed):
        rng = np.random.default_rng(seed)
        s = self.make(seed % 1000, h=9, w=11)
        t = random_transform(9, 11, rng, crop=(5, 7))
        aug = apply_transform(s, t)
        assert np.array_equal(firing_rate_image(aug.stream, 0, 20), t(firing_rate_image(s.stream, 0, 20)))

    def test_augment_is_seeded(self):
        s = self.make(5, h=16, w=16)
        a = augment(s, np.random.default_rng(8), crop=8)
        b = augment(s, np.random.default_rng(8), crop=8)
        assert a == b and a.stream.data.shape == (20, 8, 8)


class TestDatasetDir:
    def config(self):
        return DatasetConfig(count=5, num_train=3, height=16, width=16, duration=40, w_aux=5, bins=3, seed=1)

    def test_write_and_load(self, tmp_path):
        cfg = self.config()
        manifest = write_dataset(cfg, tmp_path)
        train = load_split(tmp_path, "train")
        test = load_split(tmp_path, "test")
        assert [r.sample_id for r in train.records] == manifest.train
        assert len(test) == 2
        mem_train, mem_test = build_in_memory(cfg)
        for a, b in zip(train.records, mem_train.records):
            assert np.array_equal(a.counts, b.counts)
            assert np.array_equal(a.ground_truth, b.ground_truth)

    def test_config_errors_name_field(self):
        with pytest.raises(SceneConfigError) as err:
            DatasetConfig(count=4, num_train=4)
        assert err.value.field == "num_train"
        with pytest.raises(SceneConfigError) as err:
            DatasetConfig.from_dict({"colour": 1})
        assert err.value.field == "colour"
