import numpy as np
import pytest
import torch

from promptclass.encoder import Encoder, EncoderConfig, HiddenStack, embed, encode, mlm_logits
from promptclass.errors import NumericError
from reference import encoder_states, layer_norm


def _model(cfg, seed=0, dtype=torch.float32):
    torch.manual_seed(seed)
    return Encoder(cfg).to(dtype).eval()


def test_config_invariants():
    with pytest.raises(ValueError):
        EncoderConfig(d_model=10, n_heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(max_len=1)
    with pytest.raises(ValueError):
        EncoderConfig(n_layers=0)
    with pytest.raises(ValueError):
        EncoderConfig(dropout_rate=1.0)


def test_embed_zero_tables(tiny_config):
    m = _model(tiny_config)
    with torch.no_grad():
        m.token_embedding.weight.zero_()
        m.position_embedding.weight.zero_()
    assert torch.equal(embed(m, [1, 2, 3]), torch.zeros(3, 8))


def test_embed_one_hot_lookup(tiny_config):
    m = _model(tiny_config)
    with torch.no_grad():
        m.token_embedding.weight.zero_()
        m.token_embedding.weight[:8] = torch.eye(8)
        m.position_embedding.weight.zero_()
    out = embed(m, [3, 0, 7])
    assert torch.equal(out, torch.eye(8)[[3, 0, 7]])


def test_embed_matches_recomputation(tiny_config):
    m = _model(tiny_config, seed=3)
    ids = [5, 9, 0, 39]
    expected = m.token_embedding.weight[ids] + m.position_embedding.weight[:4]
    assert torch.equal(embed(m, ids), expected)


def test_embed_errors(tiny_config):
    m = _model(tiny_config)
    with pytest.raises(ValueError):
        embed(m, [40])
    with pytest.raises(ValueError):
        embed(m, [1] * 13)


def test_zero_weight_block_is_layer_norm():
    cfg = EncoderConfig(vocab_size=10, d_model=4, n_layers=1, n_heads=1, d_ffn=8, max_len=5,
                        dropout_rate=0.0)
    m = _model(cfg, dtype=torch.float64)
    layer = m.layers[0]
    with torch.no_grad():
        for lin in (layer.query, layer.key, layer.value, layer.output, layer.ffn_in, layer.ffn_out):
            lin.weight.zero_()
            lin.bias.zero_()
    stack = encode(m, [1, 2, 3], 3)
    x0 = stack.states[0].detach().numpy()
    # both residual branches add zero; post-LN then normalises twice
    once = layer_norm(x0, np.ones(4), np.zeros(4))
    twice = layer_norm(once, np.ones(4), np.zeros(4))
    np.testing.assert_allclose(stack.states[1].detach().numpy(), twice, atol=1e-12)


def test_states_match_reference_oracle():
    cfg = EncoderConfig(vocab_size=11, d_model=4, n_layers=2, n_heads=1, d_ffn=8, max_len=3,
                        dropout_rate=0.0)
    m = _model(cfg, seed=7, dtype=torch.float64)
    with torch.no_grad():
        for p in m.parameters():
            p.add_(0.3 * torch.randn_like(p))
    ids = [1, 6, 10]
    got = encode(m, ids, 3).states.detach().numpy()
    np.testing.assert_allclose(got, encoder_states(m.state_dict(), ids, 3, 2, 1), atol=1e-6)


def test_reference_with_padding_and_heads(tiny_config):
    m = _model(tiny_config, seed=2, dtype=torch.float64)
    ids = [1, 7, 3, 22, 0, 0]
    got = encode(m, ids, 4).states.detach().numpy()
    ref = encoder_states(m.state_dict(), ids, 4, 2, 2)
    np.testing.assert_allclose(got, ref, atol=1e-6)


def test_shape_and_layer_zero(tiny_config):
    m = _model(tiny_config)
    ids = [1, 2, 3, 4, 0, 0]
    stack = encode(m, ids, 4)
    assert isinstance(stack, HiddenStack)
    assert stack.states.shape == (3, 6, 8)
    assert torch.equal(stack.states[0], embed(m, ids))


def test_valid_length_one_ignores_pads(tiny_config):
    m = _model(tiny_config)
    a = encode(m, [5, 0, 0, 0], 1).states
    b = encode(m, [5, 17, 30, 2], 1).states
    assert torch.equal(a[:, 0], b[:, 0])


def test_padding_invariance_exact(tiny_config):
    m = _model(tiny_config, seed=4)
    g = torch.Generator().manual_seed(0)
    for _ in range(10):
        ids = torch.randint(0, 40, (10,), generator=g)
        valid = int(torch.randint(1, 10, (1,), generator=g))
        other = ids.clone()
        other[valid:] = torch.randint(0, 40, (10 - valid,), generator=g)
        a = encode(m, ids, valid).states[:, :valid]
        b = encode(m, other, valid).states[:, :valid]
        assert torch.equal(a, b)


def test_eval_determinism(tiny_config):
    m = _model(tiny_config)
    ids = [1, 2, 3, 4, 5]
    assert torch.equal(encode(m, ids, 5).states, encode(m, ids, 5).states)


def test_dropout_active_only_in_training():
    cfg = EncoderConfig(vocab_size=40, d_model=8, n_layers=2, n_heads=2, d_ffn=16, max_len=12,
                        dropout_rate=0.5)
    m = _model(cfg)
    ids = torch.tensor([[1, 2, 3, 4]])
    valid = torch.tensor([4])
    m.train()
    torch.manual_seed(0)
    a = m(ids, valid)
    b = m(ids, valid)
    assert not torch.equal(a, b)


def test_overflow_raises_with_layer_index(tiny_config):
    m = _model(tiny_config)
    with torch.no_grad():
        m.layers[1].ffn_in.weight.fill_(float("inf"))
    with pytest.raises(NumericError, match="numeric overflow in encoder layer 2"):
        encode(m, [1, 2, 3], 3)


def test_valid_length_exceeding_n(tiny_config):
    with pytest.raises(ValueError):
        encode(_model(tiny_config), [1, 2], 3)


def test_mlm_logits_zero_head(tiny_config):
    m = _model(tiny_config)
    with torch.no_grad():
        m.mlm_head.weight.zero_()
    out = mlm_logits(m, encode(m, [1, 2, 3], 3))
    assert torch.equal(out, torch.zeros(3, 40))


def test_mlm_logits_one_hot_head_copies_hidden(tiny_config):
    m = _model(tiny_config)
    with torch.no_grad():
        m.mlm_head.weight.zero_()
        m.mlm_head.weight[:8] = torch.eye(8)
    stack = encode(m, [1, 2, 3], 3)
    out = mlm_logits(m, stack)
    assert torch.equal(out[:, :8], stack.states[-1])


def test_mlm_logits_matches_matmul(tiny_config):
    m = _model(tiny_config, seed=5, dtype=torch.float64)
    stack = encode(m, [4, 8, 15, 16], 4)
    expected = stack.states[-1].detach().numpy() @ m.mlm_head.weight.detach().numpy().T
    np.testing.assert_allclose(mlm_logits(m, stack).detach().numpy(), expected, atol=1e-6)


def test_mlm_logits_shape_mismatch(tiny_config):
    m = _model(tiny_config)
    with pytest.raises(ValueError):
        mlm_logits(m, torch.zeros(3, 5))
