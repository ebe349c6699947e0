"""Raw tensor file format and checkpoint round trips."""

import numpy as np
import pytest

from camoprop import tensorio
from camoprop.tensor import Tensor
from camoprop.tensorio import TensorFileError

from conftest import make_rng


class TestTensorFile:
    def test_round_trip(self, tmp_path):
        arr = make_rng(0).normal(size=(3, 4, 5))
        path = tmp_path / "x.cpmt"
        tensorio.write_tensor(path, arr)
        back = tensorio.read_tensor(path)
        assert back.shape == (3, 4, 5)
        assert np.array_equal(back, arr)

    def test_scalar_round_trip(self, tmp_path):
        path = tmp_path / "s.cpmt"
        tensorio.write_tensor(path, np.asarray(3.25))
        back = tensorio.read_tensor(path)
        assert back.shape == () and back == 3.25

    def test_layout_is_documented_format(self, tmp_path):
        path = tmp_path / "y.cpmt"
        tensorio.write_tensor(path, np.arange(6.0).reshape(2, 3))
        blob = path.read_bytes()
        assert blob.startswith(b"CPMT1\n2 2 3\n")
        payload = blob[len(b"CPMT1\n2 2 3\n"):]
        assert np.array_equal(np.frombuffer(payload, dtype="<f8"),
                              np.arange(6.0))

    def test_missing_magic(self, tmp_path):
        path = tmp_path / "bad.cpmt"
        path.write_bytes(b"NOPE\n1 3\n" + b"\x00" * 24)
        with pytest.raises(TensorFileError, match="magic"):
            tensorio.read_tensor(path)

    def test_truncated_payload_reports_counts(self, tmp_path):
        path = tmp_path / "short.cpmt"
        path.write_bytes(b"CPMT1\n1 4\n" + b"\x00" * 16)
        with pytest.raises(TensorFileError, match="16 bytes.*expected 32"):
            tensorio.read_tensor(path)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "hdr.cpmt"
        path.write_bytes(b"CPMT1\n2 3\n" + b"\x00" * 24)
        with pytest.raises(TensorFileError):
            tensorio.read_tensor(path)


class TestCheckpoint:
    def test_round_trip_with_frozen_flags(self, tmp_path):
        rng = make_rng(1)
        params = {
            "enc.w": Tensor(rng.normal(size=(4, 4)), requires_grad=False),
            "prop.w": Tensor(rng.normal(size=(2, 3)), requires_grad=True),
        }
        tensorio.save_checkpoint(tmp_path / "ck", params)
        back = tensorio.load_checkpoint(tmp_path / "ck")
        assert set(back) == set(params)
        for name in params:
            assert np.array_equal(back[name].data, params[name].data)
            assert back[name].requires_grad == params[name].requires_grad

    def test_manifest_lists_name_shape_frozen(self, tmp_path):
        params = {"a.b": Tensor(np.zeros((2, 5)), requires_grad=False)}
        tensorio.save_checkpoint(tmp_path / "ck", params)
        manifest = (tmp_path / "ck" / "manifest.tsv").read_text()
        assert manifest == "a.b\t2 5\t1\n"

    def test_load_into_rejects_mismatched_keys(self, tmp_path):
        tensorio.save_checkpoint(tmp_path / "ck",
                                 {"x": Tensor(np.zeros(3))})
        with pytest.raises(TensorFileError, match="mismatch"):
            tensorio.load_checkpoint_into(tmp_path / "ck",
                                          {"y": Tensor(np.zeros(3))})

    def test_load_into_replaces_values_in_place(self, tmp_path):
        src = {"x": Tensor(np.full(3, 7.0), requires_grad=False)}
        tensorio.save_checkpoint(tmp_path / "ck", src)
        dst = {"x": Tensor(np.zeros(3), requires_grad=True)}
        tensorio.load_checkpoint_into(tmp_path / "ck", dst)
        assert np.array_equal(dst["x"].data, np.full(3, 7.0))
        assert dst["x"].requires_grad is False
