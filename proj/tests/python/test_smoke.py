import math

import pytest

import simtlab as st


def tiny_config(src_vocab, tgt_vocab):
    c = st.ModelConfig()
    c.d_model, c.n_heads, c.d_ffn, c.max_len = 8, 2, 16, 40
    c.src_vocab, c.tgt_vocab = src_vocab, tgt_vocab
    return c


@pytest.fixture(scope="module")
def data():
    spec = st.SyntheticTaskSpec()
    spec.size = 80
    return st.synthetic_data(spec, valid_size=10)


def test_policy_and_latency():
    assert st.g_trace(3, 5, 6) == [3, 4, 5, 5, 5, 5]
    assert st.waitk_lag(2, 3, 10) == 4
    assert st.average_lagging(st.g_trace(2, 6, 4), 6, 4) == 1.25
    for k in range(1, 10):
        assert st.average_lagging(st.g_trace(k, 20, 20), 20, 20) == k


def test_bleu():
    assert st.sentence_bleu([4, 5, 6, 7], [4, 5, 6, 7]) == pytest.approx(1.0)
    assert st.sentence_bleu([4, 5, 6, 7], []) == 0.0
    assert 0.0 < st.corpus_bleu([([4, 5, 6, 7, 8, 9], [4, 5, 6, 7, 8, 10])]) < 1.0
    with pytest.raises(ValueError):
        st.sentence_bleu([], [4])


def test_expected_cost():
    assert st.expected_cost([-1.0, -1.0], [0.0, 1.0]) == pytest.approx(0.5)
    assert st.spearman([0, 0.2, 0.4], [3.0, 2.0, 1.0]) == pytest.approx(-1.0)


def test_train_decode_and_checkpoint(data, tmp_path):
    cfg = tiny_config(len(data["src_vocab"]), len(data["tgt_vocab"]))
    model = st.init_model(cfg, 1)
    before = st.corpus_ce(model, data["valid"], 1)
    log = st.train_ce(model, data["train"], 1, epochs=2, lr=1e-2, valid=data["valid"])
    assert len(log) == 2
    assert log[-1]["val_ce"] < before

    src = data["valid"][0][0]
    h = st.greedy_decode(model, src, 1)
    total, steps = st.sequence_log_prob(model, src, h.tokens, h.g_trace)
    assert total == pytest.approx(h.total_log_prob, abs=1e-9)
    assert len(steps) == len(h.tokens)
    beams = st.decode(model, src, 1, method="beam", n=3)
    assert 1 <= len(beams) <= 3
    assert st.prefix_constrained_decode(model, src, [], 1).tokens == h.tokens

    path = str(tmp_path / "m.ckpt")
    model.save(path)
    back = st.load_checkpoint(path)
    assert back.to_bytes() == model.to_bytes()
    assert back.to_bytes()[:9] == b"SIMTCKPT1"
    with pytest.raises(OSError):
        st.Model.from_bytes(b"nonsense")

    tuned = model.copy()
    mlog = st.finetune_mrt(tuned, data["train"][:16], 1, gamma=0.5, n=2, epochs=1)
    assert mlog[0]["candidates_generated"] > 0
    assert tuned.to_bytes() != model.to_bytes()

    ev = st.evaluate(model, data["valid"], 1)
    assert 0.0 <= ev["bleu"] <= 100.0
    assert math.isfinite(ev["al"])
