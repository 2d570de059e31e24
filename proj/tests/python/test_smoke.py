import math

import numpy as np
import pytest
import scipy.fft

import spectral_lm as sl


def test_dct_matrix_matches_scipy():
    for k in (8, 31, 128):
        d = sl.dct_matrix(k)
        ref = scipy.fft.dct(np.eye(k), norm="ortho", axis=0)
        assert d.dtype == np.float32
        assert np.abs(d - ref).max() < 1e-5
        assert np.abs(d @ d.T - np.eye(k)).max() < 1e-4


def test_idct2_sparse_matches_numpy():
    m, n, k = 12, 20, 30
    basis = sl.SeparableBasis.random(m, n, 1, 2)
    sel = sl.SelectionSet.random(m, n, k, 3)
    c = np.random.default_rng(0).standard_normal(k).astype(np.float32)
    grid = np.zeros((m, n))
    for (i, j), v in zip(sel.indices, c):
        grid[i, j] = v
    want = basis.q_row.T.astype(np.float64) @ grid @ basis.q_col.astype(np.float64)
    assert np.abs(sl.idct2_sparse(c, sel, basis) - want).max() < 1e-5
    assert len(sel) == k


def test_fused_apply_and_traffic():
    m, n, k, bt = 128, 512, 6554, 64
    basis = sl.SeparableBasis.dct(m, n)
    sel = sl.SelectionSet.zigzag(m, n, k)
    rng = np.random.default_rng(1)
    c = rng.standard_normal(k).astype(np.float32)
    x = rng.standard_normal((bt, n)).astype(np.float32)
    y, traffic = sl.fused_apply(c, sel, basis, x)
    w = sl.idct2_sparse(c, sel, basis).astype(np.float64)
    want = x.astype(np.float64) @ w.T
    assert np.abs(y - want).max() / np.abs(want).max() < 1e-5
    assert traffic["bytes_read"] + traffic["bytes_written"] == 190056
    _, naive = sl.naive_apply(c, sel, basis, x)
    assert naive["scratch_peak"] == 4 * m * n
    yb, blocked = sl.fused_apply_blocked(c, sel, basis, x, 32 * 1024)
    assert blocked["scratch_peak"] <= 32 * 1024
    assert np.abs(yb - y).max() / np.abs(y).max() < 1e-6


def test_shape_errors_are_value_errors():
    basis = sl.SeparableBasis.dct(8, 12)
    sel = sl.SelectionSet.zigzag(8, 12, 10)
    with pytest.raises(ValueError):
        sl.fused_apply(np.zeros(9, np.float32), sel, basis, np.zeros((4, 12), np.float32))


def test_rank_diagnostics():
    w = np.random.default_rng(2).standard_normal((64, 32)).astype(np.float32)
    s = np.linalg.svd(w.astype(np.float64), compute_uv=False)
    assert sl.stable_rank(w) == pytest.approx((s**2).sum() / s[0] ** 2, rel=1e-4)
    assert sl.numerical_rank(np.outer(np.arange(1, 5), np.arange(1, 4)).astype(np.float32)) == 1
    assert sl.generic_subspace_rank_probe(16, 16, 13, 100, 12) == 16
    assert sl.lora_rank_probe(16, 16, 3, 100, 12) <= 3


def test_parameter_counts():
    assert sl.param_counts("standard")[0] == 786432
    assert sl.param_counts("lora")[0] == 393216
    assert sl.param_counts("dct_zigzag", 2.0)[0] == 393216
    assert sl.param_counts("rand_random", 10.0)[0] == 78644
    assert sl.param_counts("dct_random", 20.0)[0] == 39324
    assert len({sl.param_counts(v)[1] for v in ("standard", "lora", "dct_zigzag")}) == 1


def test_model_forward_loss_and_checkpoint(tmp_path):
    model = sl.Model("dct_random", ratio=10.0, vocab_size=65, seed=3, n_layers=2, context=32)
    tokens = np.random.default_rng(4).integers(0, 65, size=(2, 16), dtype=np.int32)
    logits = model.forward(tokens)
    assert logits.shape == (2, 16, 65)
    assert model.loss(tokens, tokens) == pytest.approx(math.log(65), rel=0.02)
    w = model.weight(0, "qkv")
    assert w.shape == (384, 128)
    path = tmp_path / "m.ckpt"
    model.save(path)
    back = sl.Model.load(path)
    assert np.array_equal(back.forward(tokens), logits)
    with pytest.raises(TypeError):
        sl.Model("standard", bogus=1)


def test_grid_enumeration():
    cells = sl.grid_cells()
    assert len(cells) == 14
    assert "dct_zigzag_r2" in cells and "lora_r48" in cells
