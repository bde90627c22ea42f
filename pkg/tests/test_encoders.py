import numpy as np
import pytest

from seqcoder import encoders as enc
from seqcoder import tensor as T
from seqcoder.errors import ConfigError, DimensionError
from seqcoder.tensor import Tape, Tensor

from helpers import finite_diff, max_rel_err

rng = np.random.default_rng(11)


def _lstm_params(d, vocab=10, seed=3):
    return enc.init_lstm_params(vocab, d, np.random.default_rng(seed))


def _zeroed(params):
    for p in params.values():
        p.data[:] = 0.0
    return params


class TestLstmStep:
    def test_zero_params_halve_cell(self):
        d = 4
        params = _zeroed(_lstm_params(d))
        x = Tensor(rng.normal(size=(1, d)))
        c_prev = Tensor(rng.normal(size=(1, d)))
        h_prev = Tensor(rng.normal(size=(1, d)))
        h, c = enc.lstm_step(params, x, h_prev, c_prev)
        assert max_rel_err(c.data, 0.5 * c_prev.data) < 1e-12
        assert max_rel_err(h.data, 0.5 * np.tanh(0.5 * c_prev.data)) < 1e-12

    def test_zero_state_zero_params_gives_zero(self):
        d = 3
        params = _zeroed(_lstm_params(d))
        h, c = enc.lstm_step(params, Tensor(np.ones((1, d))), Tensor(np.zeros((1, d))), Tensor(np.zeros((1, d))))
        assert np.abs(h.data).max() == 0.0

    def test_shape_mismatch(self):
        params = _lstm_params(4)
        with pytest.raises(DimensionError):
            enc.lstm_step(params, Tensor(np.zeros((1, 3))), Tensor(np.zeros((1, 4))), Tensor(np.zeros((1, 4))))

    def test_gradient_vs_finite_differences(self):
        d = 3
        params = _lstm_params(d)
        x0 = rng.normal(size=(1, d))
        names = [n for n in params if n != "emb"]
        arrays = [params[n].data.copy() for n in names]

        def np_loss(*arrs):
            vals = dict(zip(names, arrs))
            sig = lambda v: 1 / (1 + np.exp(-v))
            gate = lambda g: x0 @ vals[f"W_{g}"] + vals[f"b_{g}"]
            f, i, o = sig(gate("f")), sig(gate("i")), sig(gate("o"))
            ct = np.tanh(gate("c"))
            c = i * ct
            return (o * np.tanh(c)).sum()

        for n, a in zip(names, arrays):
            params[n].data = a.copy()
            params[n].zero_grad()
        with Tape() as tape:
            h, _ = enc.lstm_step(params, Tensor(x0), Tensor(np.zeros((1, d))), Tensor(np.zeros((1, d))))
            tape.backward(T.sum_all(h))
        numeric = finite_diff(np_loss, [a.copy() for a in arrays])
        for n, g_num in zip(names, numeric):
            g = params[n].grad if params[n].grad is not None else np.zeros_like(g_num)
            assert max_rel_err(g, g_num) < 1e-4, n


class TestLstmForward:
    def test_single_step_composition(self):
        d = 4
        params = _lstm_params(d, vocab=6)
        h_all = None
        with Tape():
            h_all = enc.lstm_forward(params, [2])
            x = T.embedding_lookup(params["emb"], [2])
            h1, _ = enc.lstm_step(params, x, Tensor(np.zeros((1, d))), Tensor(np.zeros((1, d))))
        assert np.array_equal(h_all.data, h1.data)

    def test_prefix_property(self):
        params = _lstm_params(4, vocab=8)
        base = [1, 2, 3, 4, 5]
        h1 = enc.lstm_forward(params, base).data
        h2 = enc.lstm_forward(params, [1, 2, 3, 7, 6]).data
        assert np.array_equal(h1[:3], h2[:3])

    def test_matches_reference_loop(self):
        d = 4
        params = _lstm_params(d, vocab=8, seed=5)
        ids = [1, 4, 2, 7, 3]
        h_fast = enc.lstm_forward(params, ids).data

        sig = lambda v: 1 / (1 + np.exp(-v))
        p = {n: t.data for n, t in params.items()}
        h = np.zeros((1, d))
        c = np.zeros((1, d))
        rows = []
        for t in ids:
            x = p["emb"][[t]]
            f = sig(x @ p["W_f"] + h @ p["V_f"] + p["b_f"])
            i = sig(x @ p["W_i"] + h @ p["V_i"] + p["b_i"])
            o = sig(x @ p["W_o"] + h @ p["V_o"] + p["b_o"])
            ct = np.tanh(x @ p["W_c"] + h @ p["V_c"] + p["b_c"])
            c = f * c + i * ct
            h = o * np.tanh(c)
            rows.append(h[0])
        assert max_rel_err(h_fast, np.array(rows)) < 1e-12


class TestPositionalEncoding:
    def test_position_zero(self):
        pe = enc.positional_encoding(4, 8)
        assert (pe[0, 0::2] == 0.0).all()
        assert (pe[0, 1::2] == 1.0).all()

    def test_first_dimension_at_t1(self):
        for d in (4, 8, 64):
            assert enc.positional_encoding(2, d)[1, 0] == pytest.approx(np.sin(1.0))

    def test_cached_identity(self):
        assert enc.positional_encoding(5, 6) is enc.positional_encoding(5, 6)

    def test_odd_d_rejected(self):
        with pytest.raises(ConfigError):
            enc.positional_encoding(4, 7)


def _tf_setup(d=8, n=2, dff=16, L=2, vocab=12, seed=9, **kw):
    cfg = enc.TransformerConfig(d=d, n_heads=n, ffn_dim=dff, n_layers=L, dropout=0.0, **kw)
    params = enc.init_transformer_params(vocab, cfg, np.random.default_rng(seed))
    return cfg, params


class TestMultiHeadAttention:
    def test_single_position_weight_is_one(self):
        cfg, params = _tf_setup()
        h = Tensor(rng.normal(size=(1, cfg.d)))
        mask = enc.causal_mask(1)
        out = enc.multi_head_attention(params, 0, h, mask, cfg)
        # attention over one position is the identity mix: output equals the
        # per-head W_h projection of that position's V projection
        expected = []
        for i in range(cfg.n_heads):
            hp = f"l0.h{i}."
            v = h.data @ params[hp + "W_v"].data + params[hp + "b_v"].data
            expected.append(v @ params[hp + "W_h"].data + params[hp + "b_h"].data)
        assert max_rel_err(out.data, np.concatenate(expected, axis=1)) < 1e-12

    def test_zero_queries_give_uniform_prefix_average(self):
        cfg, params = _tf_setup(L=1)
        for i in range(cfg.n_heads):
            params[f"l0.h{i}.W_q"].data[:] = 0.0
            params[f"l0.h{i}.b_q"].data[:] = 0.0
        t_len = 5
        h = Tensor(rng.normal(size=(t_len, cfg.d)))
        out = enc.multi_head_attention(params, 0, h, enc.causal_mask(t_len), cfg)
        expected = []
        for i in range(cfg.n_heads):
            hp = f"l0.h{i}."
            v = h.data @ params[hp + "W_v"].data + params[hp + "b_v"].data
            prefix_mean = np.cumsum(v, axis=0) / np.arange(1, t_len + 1)[:, None]
            expected.append(prefix_mean @ params[hp + "W_h"].data + params[hp + "b_h"].data)
        assert max_rel_err(out.data, np.concatenate(expected, axis=1)) < 1e-12

    def test_causality_perturbation(self):
        cfg, params = _tf_setup(L=1)
        t_len = 6
        base = rng.normal(size=(t_len, cfg.d))
        out1 = enc.multi_head_attention(params, 0, Tensor(base), enc.causal_mask(t_len), cfg).data
        pert = base.copy()
        pert[4] += rng.normal(size=cfg.d)
        out2 = enc.multi_head_attention(params, 0, Tensor(pert), enc.causal_mask(t_len), cfg).data
        assert np.array_equal(out1[:4], out2[:4])

    def test_attention_rows_sum_to_one(self):
        cfg, params = _tf_setup()
        t_len = 7
        h = Tensor(rng.normal(size=(t_len, cfg.d)))
        q = T.add(T.matmul(h, params["l0.h0.W_q"]), params["l0.h0.b_q"])
        k = T.add(T.matmul(h, params["l0.h0.W_k"]), params["l0.h0.b_k"])
        scores = T.scale(T.matmul(q, T.transpose(k)), 1.0 / np.sqrt(cfg.d // cfg.n_heads))
        w = T.softmax_rows(scores, enc.causal_mask(t_len))
        assert np.abs(w.data.sum(axis=1) - 1.0).max() < 1e-9


class TestTransformerBlock:
    def test_zero_ffn_reduces_to_norm_of_residual_plus_bias(self):
        cfg, params = _tf_setup(L=1)
        params["l0.W_o1"].data[:] = 0.0
        params["l0.W_o2"].data[:] = 0.0
        b2 = rng.normal(size=cfg.d)
        params["l0.b_o2"].data[:] = b2
        t_len = 4
        h = Tensor(rng.normal(size=(t_len, cfg.d)))
        out = enc.transformer_block(params, 0, h, enc.causal_mask(t_len), cfg)
        with Tape():
            attn = enc.multi_head_attention(params, 0, h, enc.causal_mask(t_len), cfg)
            mid = T.layer_norm(T.add(h, attn), params["l0.ln1_g"], params["l0.ln1_b"])
            expected = T.layer_norm(T.add(mid, Tensor(np.tile(b2, (t_len, 1)))),
                                    params["l0.ln2_g"], params["l0.ln2_b"])
        assert max_rel_err(out.data, expected.data) < 1e-12

    def test_output_shape_independent_of_ffn_dim(self):
        for dff in (8, 16, 64):
            cfg, params = _tf_setup(dff=dff, L=1)
            h = Tensor(rng.normal(size=(5, cfg.d)))
            out = enc.transformer_block(params, 0, h, enc.causal_mask(5), cfg)
            assert out.shape == (5, cfg.d)

    def test_full_block_gradient(self):
        cfg, params = _tf_setup(d=8, n=2, dff=16, L=1)
        t_len = 3
        x0 = rng.normal(size=(t_len, cfg.d))
        # plain sum of a layer-normed output is constant in x, so weight it
        w = rng.normal(size=(t_len, cfg.d))
        mask = enc.causal_mask(t_len)
        x_in = Tensor(x0.copy(), requires_grad=True)
        with Tape() as tape:
            out = enc.transformer_block(params, 0, x_in, mask, cfg)
            tape.backward(T.sum_all(T.mul(out, Tensor(w))))

        def np_loss(a):
            with Tape():
                out = enc.transformer_block(params, 0, Tensor(a), mask, cfg)
                return float((out.data * w).sum())

        numeric = finite_diff(np_loss, [x0.copy()])[0]
        assert max_rel_err(x_in.grad, numeric) < 1e-4


class TestTransformerForward:
    def test_zero_layers_is_embedding_plus_pe(self):
        cfg, params = _tf_setup(L=0)
        ids = [1, 3, 5]
        out = enc.transformer_forward(params, ids, cfg)
        expected = params["emb"].data[ids] + enc.positional_encoding(3, cfg.d)
        assert max_rel_err(out.data, expected) < 1e-12

    def test_end_to_end_causality(self):
        cfg, params = _tf_setup(L=2, vocab=16)
        base = [1, 2, 3, 4, 5, 6]
        h1 = enc.transformer_forward(params, base, cfg).data
        h2 = enc.transformer_forward(params, [1, 2, 3, 4, 9, 10], cfg).data
        assert np.array_equal(h1[:4], h2[:4])

    def test_paper_default_dims(self):
        cfg = enc.TransformerConfig()
        assert (cfg.n_layers, cfg.n_heads, cfg.d, cfg.ffn_dim) == (6, 8, 768, 2048)

    def test_eq_literal_mode_runs(self):
        cfg, params = _tf_setup(L=1, eq_literal=True)
        out = enc.transformer_forward(params, [1, 2, 3], cfg)
        assert out.shape == (3, cfg.d)

    def test_literal_scale_changes_output(self):
        cfg_a, params = _tf_setup(L=1)
        cfg_b = enc.TransformerConfig(d=cfg_a.d, n_heads=cfg_a.n_heads,
                                      ffn_dim=cfg_a.ffn_dim, n_layers=1,
                                      dropout=0.0, literal_scale=True)
        ids = [1, 2, 3, 4]
        out_a = enc.transformer_forward(params, ids, cfg_a).data
        out_b = enc.transformer_forward(params, ids, cfg_b).data
        assert not np.array_equal(out_a, out_b)


class TestParamCount:
    def test_transformer_closed_form(self):
        cfg, params = _tf_setup(d=8, n=2, dff=16, L=2, vocab=12)
        total = sum(p.data.size for p in params.values())
        assert total == enc.transformer_param_count(12, cfg)

    def test_lstm_closed_form(self):
        params = _lstm_params(6, vocab=15)
        total = sum(p.data.size for p in params.values())
        assert total == enc.lstm_param_count(15, 6)
