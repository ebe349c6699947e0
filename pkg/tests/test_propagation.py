"""Fusion/affinity propagation: attention laws, equivariances, parameter
budget, and gradient coverage."""

import numpy as np
import pytest

from camoprop import tensor as T
from camoprop import tensorio
from camoprop.memory import FrameRecord, MemoryBank
from camoprop.propagation import (MemoryAffinity, PropagationConfig,
                                  PropagationModule, TemporalFusion,
                                  count_parameters, scaled_dot_attention)
from camoprop.tensor import ShapeError, Tape, Tensor

from conftest import make_rng

CFG = PropagationConfig()  # embed 64, attn 64, affinity 128, grid 4


def make_inputs(rng, cfg=CFG, t=2):
    d, g = cfg.embed_dim, cfg.grid
    cur = Tensor(rng.normal(size=(d, g, g)))
    mem_img = Tensor(rng.normal(size=(t, d, g, g)))
    mem_mask = Tensor(rng.normal(size=(t, d, g, g)))
    return cur, mem_img, mem_mask


class TestAttention:
    def test_rows_sum_to_one(self):
        rng = make_rng(0)
        for _ in range(50):
            q = Tensor(rng.normal(size=(5, 8)))
            k = Tensor(rng.normal(size=(11, 8)))
            v = Tensor(rng.normal(size=(11, 8)))
            _, w = scaled_dot_attention(q, k, v, return_weights=True)
            np.testing.assert_allclose(w.data.sum(axis=1), 1.0, atol=1e-9)

    def test_saturation_reads_dominant_value_row(self):
        # one key with a +20 post-scale logit margin dominates the readout
        rng = make_rng(1)
        d, n = 16, 32
        q = np.zeros((5, d))
        q[:, 0] = 1.0
        k = np.zeros((n, d))
        j_star = 13
        k[j_star, 0] = 20.0 * np.sqrt(d)
        v = rng.uniform(-1.0, 1.0, size=(n, d))
        out = scaled_dot_attention(Tensor(q), Tensor(k), Tensor(v))
        dev = np.abs(out.data - v[j_star][None, :]).max()
        assert dev <= 1e-6, dev


class TestFusion:
    def test_output_shape(self):
        fusion = TemporalFusion(CFG, make_rng(2))
        cur, mi, mm = make_inputs(make_rng(3))
        out = fusion(cur, mi, mm)
        assert out.shape == (64, 4, 4)

    def test_uniform_attention_reads_token_mean(self):
        # identical memory image tokens -> uniform weights -> the pre-MLP
        # readout equals the mean projected value row at every query;
        # PE is off so the keys stay exactly identical per position
        cfg = PropagationConfig(embed_dim=6, attn_dim=5, grid=2, train_pe=False)
        fusion = TemporalFusion(cfg, make_rng(4))
        rng = make_rng(5)
        cur = Tensor(rng.normal(size=(6, 2, 2)))
        one_token = rng.normal(size=6)
        mem_img = Tensor(np.tile(one_token[None, :, None, None], (1, 1, 2, 2)))
        mem_mask = Tensor(rng.normal(size=(1, 6, 2, 2)))
        _, internals = fusion(cur, mem_img, mem_mask, return_internals=True)
        np.testing.assert_allclose(internals["weights"].data, 0.25, atol=1e-12)
        expected = internals["v"].data.mean(axis=0)
        np.testing.assert_allclose(internals["readout"].data,
                                   np.tile(expected, (4, 1)), atol=1e-9)

    def test_memory_order_invariance_without_pe(self):
        # attention is a set operation over memory tokens once PE is off
        cfg = PropagationConfig(train_pe=False)
        fusion = TemporalFusion(cfg, make_rng(6))
        rng = make_rng(7)
        cur, mi, mm = make_inputs(rng)
        fwd = fusion(cur, mi, mm).data
        rev_i = Tensor(mi.data[::-1].copy())
        rev_m = Tensor(mm.data[::-1].copy())
        swapped = fusion(cur, rev_i, rev_m).data
        np.testing.assert_allclose(fwd, swapped, atol=1e-12)

    def test_empty_memory_rejected(self):
        fusion = TemporalFusion(CFG, make_rng(8))
        cur, _, _ = make_inputs(make_rng(9))
        with pytest.raises(ShapeError):
            fusion(cur, Tensor(np.zeros((0, 64, 4, 4))),
                   Tensor(np.zeros((0, 64, 4, 4))))


class TestAffinity:
    def test_output_shape_and_row_sums(self):
        affinity = MemoryAffinity(CFG, make_rng(10))
        rng = make_rng(11)
        cur, mi, mm = make_inputs(rng)
        fused = Tensor(rng.normal(size=cur.shape))
        dense, internals = affinity(cur, fused, mi, mm, return_internals=True)
        assert dense.shape == (64, 4, 4)
        np.testing.assert_allclose(internals["weights"].data.sum(axis=1),
                                   1.0, atol=1e-9)

    def test_affinity_head_dims(self):
        affinity = MemoryAffinity(CFG, make_rng(12))
        assert affinity.lin_qk.w.shape == (128, 128)  # 2*embed -> affinity dim
        assert affinity.lin_mv.w.shape == (128, 128)

    def test_fused_shape_mismatch_rejected(self):
        affinity = MemoryAffinity(CFG, make_rng(13))
        rng = make_rng(14)
        cur, mi, mm = make_inputs(rng)
        with pytest.raises(ShapeError):
            affinity(cur, Tensor(rng.normal(size=(32, 4, 4))), mi, mm)


class TestComposition:
    def test_pm_shape_and_determinism(self):
        prop = PropagationModule(CFG, seed=3)
        rng = make_rng(15)
        cur, mi, mm = make_inputs(rng)
        bank = MemoryBank(2)
        bank.push(FrameRecord(0, Tensor(mi.data[0]), Tensor(mm.data[0])))
        bank.push(FrameRecord(1, Tensor(mi.data[1]), Tensor(mm.data[1])))
        a = prop(cur, bank).data
        b = prop(cur, bank).data
        assert a.shape == (64, 4, 4)
        assert np.array_equal(a, b)

    def test_empty_bank_rejected(self):
        prop = PropagationModule(CFG, seed=3)
        cur, _, _ = make_inputs(make_rng(16))
        from camoprop.memory import MemoryError_
        with pytest.raises(MemoryError_):
            prop(cur, MemoryBank(2))

    def test_permutation_equivariance_with_pe_zeroed(self):
        cfg = PropagationConfig(train_pe=False)
        prop = PropagationModule(cfg, seed=4)
        rng = make_rng(17)
        cur, mi, mm = make_inputs(rng)
        g = cfg.grid
        perm = rng.permutation(g * g)

        def permute_grid(data):
            flat = data.reshape(data.shape[:-2] + (g * g,))
            return flat[..., perm].reshape(data.shape)

        base = prop.forward_parts(cur, mi, mm)[1].data
        out_p = prop.forward_parts(Tensor(permute_grid(cur.data)),
                                   Tensor(permute_grid(mi.data)),
                                   Tensor(permute_grid(mm.data)))[1].data
        np.testing.assert_allclose(out_p, permute_grid(base), atol=1e-10)

    def test_cold_start_zero_mask_memory(self):
        prop = PropagationModule(CFG, seed=5)
        rng = make_rng(18)
        d, g = CFG.embed_dim, CFG.grid
        cur = Tensor(rng.normal(size=(d, g, g)))
        mem_img = Tensor(rng.normal(size=(1, d, g, g)))
        mem_mask = Tensor(np.zeros((1, d, g, g)), requires_grad=True)
        with Tape() as tape:
            dense = prop.forward_parts(cur, mem_img, mem_mask)[1]
            assert np.all(np.isfinite(dense.data))
            tape.backward(T.tsum(dense))
        assert mem_mask.grad is not None
        assert np.linalg.norm(mem_mask.grad) > 0.0

    def test_gradient_reaches_every_parameter(self):
        prop = PropagationModule(CFG, seed=6)
        rng = make_rng(19)
        cur, mi, mm = make_inputs(rng)
        with Tape() as tape:
            dense = prop.forward_parts(cur, mi, mm)[1]
            w = Tensor(rng.normal(size=dense.shape))
            tape.backward(T.tsum(T.mul(dense, w)))
        for name, t in prop.named_params().items():
            assert t.grad is not None and np.linalg.norm(t.grad) > 0.0, name


class TestParameterBudget:
    def test_default_config_under_one_million(self):
        prop = PropagationModule(CFG, seed=0)
        assert count_parameters(prop.named_params()) < 1_000_000

    def test_foundation_scale_under_one_million(self):
        # the full-scale embedding width (256) with 128-d affinity heads
        cfg = PropagationConfig(embed_dim=256, affinity_dim=128)
        prop = PropagationModule(cfg, seed=0)
        n = count_parameters(prop.named_params())
        assert n < 1_000_000, n

    def test_count_monotone_in_attn_dim(self):
        n1 = count_parameters(
            PropagationModule(PropagationConfig(attn_dim=64), seed=0).named_params())
        n2 = count_parameters(
            PropagationModule(PropagationConfig(attn_dim=128), seed=0).named_params())
        assert n2 > n1

    def test_count_matches_manifest_recount(self, tmp_path):
        prop = PropagationModule(CFG, seed=1)
        params = prop.named_params()
        tensorio.save_checkpoint(tmp_path / "ck", params)
        recount = 0
        for _, shape, _ in tensorio.read_manifest(tmp_path / "ck"):
            recount += int(np.prod(shape)) if shape else 1
        assert recount == count_parameters(params)
