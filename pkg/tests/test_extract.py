import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dni.core import SymbolDataset, block_iterator
from dni.extract import ExtractionError, Extractor, ModelSpec, extract, rnn_weights, write_model_behaviors
from dni.hypothesis import HypothesisEvaluator, HypothesisSpec
from dni.measures import pearson

ALPHA = ["~", "(", ")", "1", "2", "+"]


def _dataset(n=50, seed=0):
    rng = np.random.default_rng(seed)
    lines = ["".join(rng.choice(ALPHA[1:], size=rng.integers(3, 12))) for _ in range(n)]
    return SymbolDataset.from_lines(lines, 12, alphabet=ALPHA)


def _paren_eval():
    return HypothesisEvaluator([HypothesisSpec("paren", "keyword", {"keyword": ["(", ")"]})])


def _specialized(w, sigma, S=(1, 3, 5, 7), seed=4):
    ev = _paren_eval()
    spec = ModelSpec("m", "specialized", 16, seed=seed, S=S, w=w, target_hyp="paren", sigma=sigma)
    return Extractor(spec, ALPHA, hypotheses=ev), ev


def test_rnn_deterministic():
    ds = _dataset()
    blk = next(block_iterator(ds, 50, seed=0))
    a = extract(ModelSpec("r", "synthetic-rnn", 16, seed=3), blk, range(16), ALPHA)
    b = extract(ModelSpec("r", "synthetic-rnn", 16, seed=3), blk, range(16), ALPHA)
    assert a.values.tobytes() == b.values.tobytes()
    c = extract(ModelSpec("r", "synthetic-rnn", 16, seed=4), blk, range(16), ALPHA)
    assert not np.array_equal(a.values, c.values)


def test_unknown_unit_rejected():
    ex = Extractor(ModelSpec("r", "synthetic-rnn", 16), ALPHA)
    with pytest.raises(ExtractionError):
        ex.extract(np.zeros((1, 3), dtype=int), [99])


def test_all_pad_record_is_zero():
    ex = Extractor(ModelSpec("r", "synthetic-rnn", 8, seed=1), ALPHA)
    assert not ex.extract(np.zeros((2, 5), dtype=int), range(8)).any()


def test_single_symbol_matches_weight_column():
    ex = Extractor(ModelSpec("r", "synthetic-rnn", 8, seed=2), ALPHA)
    W_x, _ = rnn_weights(8, len(ALPHA), 2, 0)
    out = ex.extract(np.array([[3, 0]]), range(8))
    assert np.allclose(out[0], np.tanh(W_x[:, 3]), atol=1e-7)


def test_rnn_weights_bounds():
    W_x, W_h = rnn_weights(16, 6, 0, 0)
    a = 1 / np.sqrt(22)
    assert np.abs(W_x).max() <= a and np.abs(W_h).max() <= a
    assert not W_x[:, 0].any()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.integers(1, 20))
def test_activations_bounded(seed, n_units):
    ds = _dataset(8, seed)
    ex = Extractor(ModelSpec("r", "synthetic-rnn", n_units, seed=seed), ALPHA)
    out = ex.extract(ds.records, range(n_units))
    assert out.shape == (8 * 12, n_units)
    assert (np.abs(out) < 1).all()


def test_unit_subset_matches_full_columns():
    ds = _dataset()
    ex = Extractor(ModelSpec("r", "synthetic-rnn", 16, seed=3), ALPHA)
    full = ex.extract(ds.records, range(16))
    assert np.array_equal(ex.extract(ds.records, [5, 2]), full[:, [5, 2]])


def test_specialized_w1_sigma0_equals_hypothesis():
    ds = _dataset()
    ex, ev = _specialized(1.0, 0.0)
    out = ex.extract(ds.records, [1, 3])
    h = np.concatenate([ev.evaluate_record("paren", ds.record_text(i)) for i in range(ds.n_d)])
    assert np.array_equal(out[:, 0], h.astype(np.float32))
    assert np.array_equal(out[:, 1], h.astype(np.float32))


def test_specialized_w0_equals_base():
    ds = _dataset()
    ex, _ = _specialized(0.0, 0.0)
    base = Extractor(ModelSpec("m", "synthetic-rnn", 16, seed=4), ALPHA)
    assert np.array_equal(ex.extract(ds.records, range(16)), base.extract(ds.records, range(16)))


def test_specialized_units_correlate_more():
    ds = _dataset(1000, 9)
    ex, ev = _specialized(0.5, 0.05)
    out = ex.extract(ds.records, range(16)).astype(np.float64)
    h = np.concatenate([ev.evaluate_record("paren", ds.record_text(i)) for i in range(ds.n_d)])
    r = np.array([abs(pearson(out[:, u], h)[0]) for u in range(16)])
    spec_units = [1, 3, 5, 7]
    rest = [u for u in range(16) if u not in spec_units]
    assert r[spec_units].min() > r[rest].max()


def test_specialized_noise_is_a_function_of_record_content():
    ds = _dataset(30)
    ex, _ = _specialized(0.5, 0.05)
    full = ex.extract(ds.records, range(16))
    part = ex.extract(ds.records[5:9], range(16))
    assert np.array_equal(full[5 * 12:9 * 12], part)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 500))
def test_pearson_monotone_in_w_without_noise(seed):
    ds = _dataset(60, seed)
    ev = _paren_eval()
    h = np.concatenate([ev.evaluate_record("paren", ds.record_text(i)) for i in range(ds.n_d)])
    rs = []
    for w in (0.0, 0.2, 0.4, 0.6, 0.8, 1.0):
        ex, _ = _specialized(w, 0.0, seed=seed)
        rs.append(pearson(ex.extract(ds.records, [3])[:, 0].astype(np.float64), h)[0])
    assert all(b >= a - 1e-6 for a, b in zip(rs, rs[1:]))


def test_model_spec_validation():
    with pytest.raises(ExtractionError):
        ModelSpec("m", "specialized", 4, S=(5,), target_hyp="h")
    with pytest.raises(ExtractionError):
        ModelSpec("m", "specialized", 4, w=1.5, target_hyp="h")
    with pytest.raises(ExtractionError):
        ModelSpec("m", "file", 4)
    with pytest.raises(ExtractionError):
        ModelSpec("m", "specialized", 4, sigma=-1, target_hyp="h")


def test_file_extractor_round_trip(tmp_path):
    ds = _dataset(40)
    src = Extractor(ModelSpec("r", "synthetic-rnn", 6, seed=1), ALPHA)
    write_model_behaviors(src, ds, tmp_path / "u.dnib", n_b=16)
    fx = Extractor(ModelSpec("f", "file", 6, path=str(tmp_path / "u.dnib")), ALPHA)
    for blk in block_iterator(ds, 7, seed=3):
        stored = fx.extract_block(blk, [0, 4, 5])
        direct = src.extract(blk.symbols, [0, 4, 5])
        assert stored.values.tobytes() == direct.tobytes()


def test_file_extractor_out_of_range(tmp_path):
    ds = _dataset(10)
    src = Extractor(ModelSpec("r", "synthetic-rnn", 2, seed=1), ALPHA)
    write_model_behaviors(src, ds, tmp_path / "u.dnib")
    fx = Extractor(ModelSpec("f", "file", 2, path=str(tmp_path / "u.dnib")), ALPHA)
    with pytest.raises(ExtractionError):
        fx.extract(ds.records[:1], [0], indices=np.array([10]))


def test_extractor_tracks_requested_units():
    ex = Extractor(ModelSpec("r", "synthetic-rnn", 16), ALPHA)
    ex.extract(np.zeros((1, 3), dtype=int), [2, 9])
    assert ex.extracted_units == {2, 9} and ex.n_calls == 1
