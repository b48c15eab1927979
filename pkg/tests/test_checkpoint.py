"""Checkpoint serialization: bitwise weight round-trips and the format
errors a reader must catch."""

import struct

import numpy as np
import pytest

from ttfsnet import (
    NeuronModelConfig,
    Variant,
    build_network,
    forward_batch,
    load_checkpoint,
    save_checkpoint,
)
from ttfsnet.checkpoint import MAGIC, VERSION, CheckpointError

from conftest import VARIANTS, model_for


class TestRoundTrip:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_dense_network_bitwise(self, tmp_path, variant):
        model = model_for(variant, tau=2.5, vth=1.25)
        spec = build_network("12-8-4", (12,), model, seed=3)
        p = tmp_path / "net.ckpt"
        save_checkpoint(p, spec)
        loaded = load_checkpoint(p)
        assert loaded.model == spec.model
        assert loaded.input_shape == spec.input_shape
        for a, b in zip(spec.weight_arrays(), loaded.weight_arrays()):
            np.testing.assert_array_equal(a, b)

    def test_conv_pool_network_bitwise(self, tmp_path):
        model = model_for(Variant.ALPHA_SYNAPSE, tau=1.5)
        spec = build_network("Conv(3,4)-Pool-Conv(3,6)-10-5", (13, 13, 2),
                             model, padding=1, seed=9)
        p = tmp_path / "cnn.ckpt"
        save_checkpoint(p, spec)
        loaded = load_checkpoint(p)
        for a, b in zip(spec.weight_arrays(), loaded.weight_arrays()):
            np.testing.assert_array_equal(a, b)
        assert loaded.layers[0].padding == 1

    def test_loaded_network_forwards_identically(self, tmp_path):
        model = model_for(Variant.CURRENT_SYNAPSE)
        spec = build_network("10-6-3", (10,), model, seed=4)
        p = tmp_path / "net.ckpt"
        save_checkpoint(p, spec)
        loaded = load_checkpoint(p)
        rng = np.random.default_rng(0)
        times = rng.uniform(0, 4, size=(5, 10))
        a = forward_batch(spec, times, 16.0).output_times
        b = forward_batch(loaded, times, 16.0).output_times
        np.testing.assert_array_equal(a, b)


class TestFormatErrors:
    def _valid_bytes(self, tmp_path):
        spec = build_network("4-3-2", (4,), model_for(Variant.NON_LEAKY),
                             seed=0)
        p = tmp_path / "ok.ckpt"
        save_checkpoint(p, spec)
        return p.read_bytes()

    def test_too_short(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"TTFS")
        with pytest.raises(CheckpointError, match="too short"):
            load_checkpoint(p)

    def test_bad_magic(self, tmp_path):
        raw = self._valid_bytes(tmp_path)
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"NOTMAGIC" + raw[8:])
        with pytest.raises(CheckpointError, match="bad magic"):
            load_checkpoint(p)

    def test_unsupported_version(self, tmp_path):
        raw = self._valid_bytes(tmp_path)
        p = tmp_path / "bad.ckpt"
        p.write_bytes(MAGIC + struct.pack("<I", VERSION + 1) + raw[12:])
        with pytest.raises(CheckpointError, match="unsupported checkpoint "
                                                  "version 2"):
            load_checkpoint(p)

    def test_truncated_descriptor(self, tmp_path):
        raw = self._valid_bytes(tmp_path)
        desc_len = struct.unpack_from("<I", raw, 12)[0]
        p = tmp_path / "bad.ckpt"
        p.write_bytes(raw[: 16 + desc_len - 3])
        with pytest.raises(CheckpointError, match="descriptor truncated"):
            load_checkpoint(p)

    def test_payload_size_mismatch(self, tmp_path):
        raw = self._valid_bytes(tmp_path)
        p = tmp_path / "bad.ckpt"
        p.write_bytes(raw[:-8])
        with pytest.raises(CheckpointError, match="payload"):
            load_checkpoint(p)

    def test_descriptor_without_equals_sign(self, tmp_path):
        desc = b"arch=4-3-2\ninput_shape\n"
        p = tmp_path / "bad.ckpt"
        p.write_bytes(MAGIC + struct.pack("<I", VERSION)
                      + struct.pack("<I", len(desc)) + desc)
        with pytest.raises(CheckpointError, match="bad descriptor line"):
            load_checkpoint(p)

    def test_descriptor_missing_field(self, tmp_path):
        desc = b"arch=4-3-2\n"
        p = tmp_path / "bad.ckpt"
        p.write_bytes(MAGIC + struct.pack("<I", VERSION)
                      + struct.pack("<I", len(desc)) + desc)
        with pytest.raises(CheckpointError, match="missing field"):
            load_checkpoint(p)
