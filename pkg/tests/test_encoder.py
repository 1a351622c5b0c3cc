import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import central_difference, tiny_corpus, tiny_model
from lsw import numkernel as nk
from lsw.encoder import PAD, UNKNOWN, Encoder, Vocab, build_vocab, encode_section, tokenize
from lsw.errors import CorpusError


def test_tokenize_examples():
    assert tokenize("Deep Learning, today!") == ["deep", "learning", "today"]
    assert tokenize("") == []
    assert tokenize("  ...  ") == []
    assert tokenize("(x)  «Ünïcode»") == ["x", "ünïcode"]


@given(st.text())
def test_tokenize_idempotent_on_joined_output(text):
    toks = tokenize(text)
    assert tokenize(" ".join(toks)) == toks


def test_build_vocab_min_count():
    assert build_vocab(["a a b"], min_count=1).tokens == (UNKNOWN, PAD, "a", "b")
    assert build_vocab(["a a b"], min_count=2).tokens == (UNKNOWN, PAD, "a")


def test_build_vocab_order_independent():
    one = build_vocab(["x y z", "y z", "z q"], min_count=1)
    two = build_vocab(["z q", "y z", "x y z"], min_count=1)
    assert one == two
    # frequency descending, then lexicographic
    assert one.tokens[2:] == ("z", "y", "q", "x")


def test_build_vocab_errors():
    with pytest.raises(CorpusError):
        build_vocab([])
    with pytest.raises(ValueError):
        build_vocab(["a"], min_count=0)


def test_vocab_reserved_ids_and_lookup():
    v = build_vocab(["a b"], min_count=1)
    assert v.index[UNKNOWN] == 0 and v.index[PAD] == 1
    assert v.lookup(["a", "never-seen"]).tolist() == [v.index["a"], 0]
    assert all(v.index[t] == i for i, t in enumerate(v.tokens))


def test_vocab_serialization_round_trip(tmp_path):
    v = build_vocab(["alpha beta beta gamma"], min_count=1)
    path = tmp_path / "vocab.txt"
    v.save(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "lsw-vocab 1" and lines[1] == "min_count 1"
    assert lines[2:] == list(v.tokens)
    back = Vocab.load(path)
    assert back == v and back.min_count == 1


def test_vocab_bad_header():
    with pytest.raises(ValueError):
        Vocab.loads("hello\n<unk>\n<pad>\n")


@pytest.fixture
def encoder():
    return Encoder(build_vocab(["a b c d e f"], min_count=1), d=6, seed=3)


def test_embedding_init_range(encoder):
    assert np.abs(encoder.embedding.weight).max() <= 0.05


def test_empty_section_is_relu_of_bias(encoder):
    encoder.projection.bias[:] = np.array([0.5, -0.2, 0.0, 1.0, -3.0, 0.1])
    np.testing.assert_array_equal(encode_section([], encoder).values, np.maximum(encoder.projection.bias, 0))


def test_single_token_section(encoder):
    e = encoder.embedding.weight[encoder.vocab.index["c"]]
    p = encoder.projection
    expected = np.maximum(nk.dense_forward(p, e).value, 0)
    np.testing.assert_array_equal(encode_section(["c"], encoder).values, expected)


def test_out_of_vocab_uses_unknown(encoder):
    np.testing.assert_array_equal(encode_section(["zzz"], encoder).values, encode_section([UNKNOWN], encoder).values)


def test_permutation_invariance(encoder):
    rng = np.random.default_rng(0)
    toks = list("abcdeeff")
    base = encode_section(toks, encoder).values
    for _ in range(10):
        np.testing.assert_allclose(encode_section(list(rng.permutation(toks)), encoder).values, base, atol=1e-15)


def test_shared_encoder_across_sections(encoder):
    a = encode_section(["a", "b"], encoder, "title")
    b = encode_section(["a", "b"], encoder, "abstract")
    np.testing.assert_array_equal(a.values, b.values)
    assert a.values.shape == (encoder.d,)


def test_frozen_flag_propagates(encoder):
    encoder.frozen = True
    assert encoder.embedding.frozen and encoder.projection.frozen
    encoder.frozen = False
    assert not encoder.embedding.frozen


def test_freeze_keeps_encoder_bit_identical_during_training():
    model = tiny_model("baseline3", seed=1)
    docs, _, labels = tiny_corpus(seed=1)
    before = {k: v.copy() for k, v in model.arrays().items() if k.startswith("encoder")}
    adam = nk.AdamState(lr=0.1)
    for _ in range(5):
        nk.zero_grad(model.trainable_groups())
        tr = model.forward(docs, labels.encode_many(docs))
        nk.backward(tr.loss)
        nk.adam_step(model.trainable_groups(), adam)
    for k, v in before.items():
        assert np.array_equal(model.arrays()[k], v)


def test_unfrozen_embedding_row_gets_nonzero_gradient():
    model = tiny_model("lsw", seed=2)
    rng = np.random.default_rng(0)
    for arr in model.arrays().values():
        arr[...] = rng.uniform(-1, 1, arr.shape)
    docs, _, labels = tiny_corpus(n_docs=1, seed=4)
    targets = labels.encode_many(docs)
    token = docs[0].sections["abstract"].split()[0]
    row = model.vocab.index[token]
    nk.backward(model.forward(docs, targets).loss)
    analytic = model.encoder.embedding.grad_weight[row]
    emb = model.encoder.embedding.weight
    numeric = central_difference(lambda: float(model.forward(docs, targets).loss.value), emb[row : row + 1])[0]
    assert np.abs(numeric).max() > 0
    np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-10)
