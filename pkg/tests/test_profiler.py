import pytest
import torch

from promptclass.aggregator import VARIANTS, PromptClassifier
from promptclass.encoder import BASE_CONFIG, EncoderConfig
from promptclass.profiler import (
    STAGES, count_macs, count_params, format_cost_table, reduction, time_breakdown,
)
from promptclass.prompt import get_template
from promptclass.tokenizer import train_vocab

HAND = EncoderConfig(vocab_size=10, d_model=4, n_layers=1, n_heads=1, d_ffn=8, max_len=8)


def test_hand_counted_tiny_full():
    # per-tensor ledger, two classes
    ledger = {
        "query": 16 + 4, "key": 16 + 4, "value": 16 + 4, "output": 16 + 4,
        "attn_norm": 4 + 4,
        "ffn_in": 4 * 8 + 8, "ffn_out": 8 * 4 + 4,
        "ffn_norm": 4 + 4,
        "context_vector": 4,
        "classifier": 2 * 4 + 2,
    }
    assert sum(ledger.values()) == 186
    assert count_params(HAND, "full", n_classes=2).params_total == 186


def _module_count(model):
    return sum(p.numel() for n, p in model.named_parameters()
               if not n.startswith(("encoder.token_embedding", "encoder.position_embedding",
                                    "encoder.mlm_head")))


@pytest.mark.parametrize("variant", VARIANTS)
@pytest.mark.parametrize("projection", [False, True])
def test_counts_match_modules(variant, projection):
    cfg = EncoderConfig(vocab_size=30, d_model=8, n_layers=3, n_heads=2, d_ffn=24, max_len=10)
    model = PromptClassifier(cfg, 5, variant, attn_projection=projection)
    report = count_params(cfg, variant, n_classes=5, attn_projection=projection)
    assert report.params_total == _module_count(model)


def test_bilstm_always_larger():
    for d, layers in ((4, 1), (8, 2), (64, 4), (768, 12)):
        cfg = EncoderConfig(vocab_size=10, d_model=d, n_layers=layers, n_heads=1, d_ffn=4 * d)
        assert count_params(cfg, "full").params_total < count_params(cfg, "with_bilstm").params_total


def test_base_scale_numbers():
    full = count_macs(BASE_CONFIG, "full", 256)
    lstm = count_macs(BASE_CONFIG, "with_bilstm", 256)
    assert full.params_millions == pytest.approx(85.07, rel=0.02)
    assert full.macs_giga == pytest.approx(21.76, rel=0.02)
    assert lstm.params_millions == pytest.approx(109.87, rel=0.03)
    assert lstm.macs_giga == pytest.approx(22.05, rel=0.03)
    red = reduction(lstm, full)
    assert abs(red["params_pct"] - 22.57) <= 2
    assert abs(red["macs_pct"] - 1.32) <= 0.7


def test_reduction_recomputed_from_ledger():
    full = count_macs(BASE_CONFIG, "full", 256)
    lstm = count_macs(BASE_CONFIG, "with_bilstm", 256)
    red = reduction(lstm, full)
    p_ref, p_this = sum(lstm.params.values()), sum(full.params.values())
    m_ref, m_this = sum(lstm.macs.values()), sum(full.macs.values())
    assert abs(red["params_pct"] - 100 * (1 - p_this / p_ref)) <= 1e-9
    assert abs(red["macs_pct"] - 100 * (1 - m_this / m_ref)) <= 1e-9


def test_seq_len_zero():
    assert count_macs(BASE_CONFIG, "with_bilstm", 0).macs_total == 0
    assert count_macs(HAND, "full", 0).macs_total == 0


def test_encoder_macs_linear_in_seq_len():
    one = count_macs(BASE_CONFIG, "full", 1).macs
    for n in (7, 128, 256):
        cur = count_macs(BASE_CONFIG, "full", n).macs
        assert cur["encoder.attention"] == n * one["encoder.attention"]
        assert cur["encoder.ffn"] == n * one["encoder.ffn"]


def test_cost_table_columns():
    full = count_macs(BASE_CONFIG, "full", 256)
    lstm = count_macs(BASE_CONFIG, "with_bilstm", 256)
    text = format_cost_table([lstm, full], lstm)
    assert text.splitlines()[0].startswith("Model")
    assert "Parameters(M)" in text and "Comp Costs(GFLOPs)" in text


@pytest.fixture(scope="module")
def timing_setup():
    corpus = ["Just [MASK] ! int a = b ;", "return x ;"]
    vocab = train_vocab(corpus, 40)
    cfg = EncoderConfig(vocab_size=vocab.size, d_model=16, n_layers=3, n_heads=2, d_ffn=32,
                        max_len=16, dropout_rate=0.0)
    return vocab, cfg


def test_time_breakdown_bilstm(timing_setup):
    vocab, cfg = timing_setup
    torch.manual_seed(0)
    model = PromptClassifier(cfg, 2, "with_bilstm")
    rep = time_breakdown(model, vocab, get_template("Just [MASK] ! {x}"), "int a = b ;",
                         groups=10, repeats=30)
    assert rep.shares["recurrent"] > 0
    assert rep.share_cv["recurrent"] < 0.2
    assert sum(rep.shares.values()) == pytest.approx(1.0, abs=1e-12)
    assert set(rep.shares) == set(STAGES)


def test_time_breakdown_full_has_no_recurrent(timing_setup):
    vocab, cfg = timing_setup
    model = PromptClassifier(cfg, 2, "full")
    rep = time_breakdown(model, vocab, get_template("Just [MASK] ! {x}"), "int a ;",
                         groups=2, repeats=5)
    assert rep.shares["recurrent"] == 0.0
    assert "recurrent" in rep.table()


def test_time_breakdown_rejects_zero(timing_setup):
    vocab, cfg = timing_setup
    with pytest.raises(ValueError):
        time_breakdown(PromptClassifier(cfg, 2), vocab, None, "x", groups=0)
