"""Causal attention: strict causality, segment projections, and oracles."""

import numpy as np
import pytest

from lsattn import (
    LSConfig,
    Rng,
    Tensor,
    causal_aggregate_head,
    causal_full_attention_oracle,
    causal_segment_projection,
    causal_window_span,
    full_attention_head,
    init_head_params,
)


def np_softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm_reference(a, eps=1e-5):
    mu = a.mean(-1, keepdims=True)
    var = ((a - mu) ** 2).mean(-1, keepdims=True)
    return (a - mu) / np.sqrt(var + eps)


def causal_cfg(n=8, d=4, w=2, r=1, l=4, dual=False):
    return LSConfig(
        seq_len=n, model_dim=d, heads=1, window=w, rank=r, seg_len=l,
        mode="causal", dual_ln=dual,
    )


def make_head(cfg, seed=0, x_seed=100):
    p = init_head_params(Rng(seed), cfg, trainable=False)
    x = Tensor(Rng(x_seed).normal((cfg.seq_len, cfg.model_dim)))
    return p, x


def causal_oracle(x, p, cfg):
    """Per-query evaluation straight from the definitions."""
    n, w, r, l, dk = cfg.seq_len, cfg.window, cfg.rank, cfg.seg_len, cfg.head_dim
    k, v, q = x @ p.wk.data, x @ p.wv.data, x @ p.wq.data
    if cfg.dual_ln:
        k_loc, v_loc = layer_norm_reference(k), layer_norm_reference(v)
    else:
        k_loc, v_loc = k, v
    kbars, vbars = [], []
    if r > 0:
        for s in range(n // l):
            xs = x[s * l:(s + 1) * l]
            logits = xs @ p.wp.data
            ps = np.zeros_like(logits)
            for c in range(r):
                ps[:, c] = np_softmax(logits[:, c])
            kb, vb = ps.T @ k[s * l:(s + 1) * l], ps.T @ v[s * l:(s + 1) * l]
            if cfg.dual_ln:
                kb, vb = layer_norm_reference(kb), layer_norm_reference(vb)
            kbars.append(kb)
            vbars.append(vb)
    out = np.zeros_like(q)
    for t in range(n):
        span = causal_window_span(t, cfg)
        keys = span.key_indices[span.attendable]
        klist, vlist = k_loc[keys], v_loc[keys]
        past = t // l if r > 0 else 0
        if past > 0:
            klist = np.concatenate([klist] + kbars[:past])
            vlist = np.concatenate([vlist] + vbars[:past])
        weights = np_softmax(q[t] @ klist.T / np.sqrt(dk))
        out[t] = weights @ vlist
    return out


class TestSegmentProjection:
    def test_segment_columns_are_distributions(self):
        cfg = causal_cfg(n=12, w=2, r=2, l=4)
        p, x = make_head(cfg, seed=1)
        proj = causal_segment_projection(x, p, cfg)
        assert proj.num_segments == 3
        for ps in proj.p_segments:
            assert np.abs(ps.data.sum(axis=0) - 1.0).max() <= 1e-12
            assert (ps.data >= 0.0).all()

    def test_segment_locality_is_bitwise(self):
        cfg = causal_cfg(n=12, w=2, r=2, l=4)
        p, x = make_head(cfg, seed=2)
        base = causal_segment_projection(x, p, cfg)
        x.data[0] += 3.0  # outside segment 1
        x.data[9] -= 2.0  # outside segment 1
        bumped = causal_segment_projection(x, p, cfg)
        assert np.array_equal(base.p_segments[1].data, bumped.p_segments[1].data)
        assert np.array_equal(base.kbar_segments[1].data, bumped.kbar_segments[1].data)
        assert np.array_equal(base.vbar_segments[1].data, bumped.vbar_segments[1].data)

    def test_one_pass_equals_segment_at_a_time(self):
        cfg = causal_cfg(n=12, w=2, r=2, l=4)
        p, x = make_head(cfg, seed=3)
        whole = causal_segment_projection(x, p, cfg)
        for s in range(3):
            cfg_one = causal_cfg(n=4, w=2, r=2, l=4)
            piece = causal_segment_projection(
                Tensor(x.data[s * 4:(s + 1) * 4]), p, cfg_one
            )
            assert np.array_equal(whole.p_segments[s].data, piece.p_segments[0].data)
            assert np.array_equal(whole.kbar_segments[s].data, piece.kbar_segments[0].data)
            assert np.array_equal(whole.vbar_segments[s].data, piece.vbar_segments[0].data)


class TestCausalAggregate:
    def test_future_perturbations_never_leak(self):
        cfg = causal_cfg(n=8)
        p, x = make_head(cfg, seed=4)
        base = causal_aggregate_head(x, p, cfg).data.copy()
        for t in range(1, cfg.seq_len):
            bumped_x = Tensor(x.data.copy())
            bumped_x.data[t:] += 7.5
            bumped = causal_aggregate_head(bumped_x, p, cfg).data
            assert np.array_equal(base[:t], bumped[:t])

    def test_single_segment_means_window_only(self):
        cfg = causal_cfg(n=8, w=4, r=1, l=8)
        p, x = make_head(cfg, seed=5)
        out = causal_aggregate_head(x, p, cfg)
        window_only = causal_oracle(x.data, p, causal_cfg(n=8, w=4, r=0, l=8))
        assert np.abs(out.data - window_only).max() < 1e-12

    def test_early_queries_have_no_global_branch(self):
        cfg = causal_cfg(n=8, w=2, r=1, l=4)
        p, x = make_head(cfg, seed=6)
        _, info = causal_aggregate_head(x, p, cfg, return_weights=True)
        # Group 0 lacks global slots; group 1 sees exactly one past segment.
        assert info.pieces[0].weights.shape[-1] == 2 * cfg.window
        assert info.pieces[1].weights.shape[-1] == 2 * cfg.window + cfg.rank

    def test_home_segment_is_excluded_from_global_branch(self):
        # The last token of projection segment 1 still sees only segment 0.
        cfg = causal_cfg(n=8, w=2, r=1, l=4)
        assert causal_window_span(7, cfg).past_segments == 1
        assert causal_window_span(5, cfg).past_segments == 1

    @pytest.mark.parametrize("n,w,r,l,dual", [
        (8, 2, 1, 4, False),
        (8, 2, 1, 4, True),
        (16, 4, 2, 4, True),
        (12, 2, 1, 2, False),
        (9, 4, 3, 4, True),
    ])
    def test_matches_stepwise_oracle(self, n, w, r, l, dual):
        cfg = causal_cfg(n=n, w=w, r=r, l=l, dual=dual)
        p, x = make_head(cfg, seed=7 + n + w + r + l)
        out = causal_aggregate_head(x, p, cfg)
        ref = causal_oracle(x.data, p, cfg)
        assert np.abs(out.data - ref).max() < 1e-12

    def test_row_stochasticity(self):
        cfg = causal_cfg(n=12, w=2, r=2, l=4, dual=True)
        p, x = make_head(cfg, seed=8)
        _, info = causal_aggregate_head(x, p, cfg, return_weights=True)
        assert np.abs(info.row_sums() - 1.0).max() <= 1e-12
        for piece in info.pieces:
            if piece.attendable is not None:
                assert (piece.weights[~np.broadcast_to(piece.attendable, piece.weights.shape)] == 0.0).all()

    def test_leading_batch_axis_matches_per_sequence(self):
        cfg = causal_cfg(n=12, w=2, r=2, l=4, dual=True)
        p, _ = make_head(cfg, seed=12)
        batch = Tensor(Rng(13).normal((3, 12, cfg.model_dim)))
        stacked = causal_aggregate_head(batch, p, cfg)
        for b in range(3):
            single = causal_aggregate_head(Tensor(batch.data[b]), p, cfg)
            assert np.abs(stacked.data[b] - single.data).max() < 1e-12


class TestCausalFullOracle:
    def test_single_token(self):
        cfg = causal_cfg(n=1, w=2, r=1, l=1)
        p, x = make_head(cfg, seed=9)
        out = causal_full_attention_oracle(x, p)
        assert np.array_equal(out.data, x.data @ p.wv.data)

    def test_rows_match_prefix_recomputation(self):
        cfg = causal_cfg(n=5, d=4)
        p, x = make_head(cfg, seed=10)
        out = causal_full_attention_oracle(x, p)
        for t in range(5):
            prefix = full_attention_head(Tensor(x.data[: t + 1]), p)
            assert np.abs(out.data[t] - prefix.data[t]).max() < 1e-12

    def test_strict_causality(self):
        cfg = causal_cfg(n=6, d=4)
        p, x = make_head(cfg, seed=11)
        base = causal_full_attention_oracle(x, p).data.copy()
        x.data[4:] *= -3.0
        bumped = causal_full_attention_oracle(x, p).data
        assert np.array_equal(base[:4], bumped[:4])
