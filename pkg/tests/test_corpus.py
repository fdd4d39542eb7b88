import collections
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from primelab import corpus, oracle, subtok
from primelab.corpus import TokenCounts
from primelab.errors import CorruptFile, EmptyCounts, TokenOutOfRange


def _h(p):
    return -(p * math.log2(p) + (1 - p) * math.log2(1 - p))


@pytest.fixture(scope="module")
def zipf_counts():
    return corpus.count_tokens(corpus.zipf_ids(50257, 1_000_000, seed=7), 50257)


def test_count_examples():
    c = corpus.count_tokens([0, 0, 0, 1], 2)
    assert c.counts.tolist() == [3, 1] and c.total == 4
    c = corpus.count_tokens([], 5)
    assert c.counts.tolist() == [0] * 5 and c.total == 0


def test_count_out_of_range_position():
    with pytest.raises(TokenOutOfRange) as exc:
        corpus.count_tokens([0, 1, 2, 7, 1], 3)
    assert "position 3" in str(exc.value)
    # past the first chunk the reported position is global
    with pytest.raises(TokenOutOfRange) as exc:
        corpus.count_tokens([0] * 10 + [-1], 3, chunk=4)
    assert "position 10" in str(exc.value)


def test_zipf_million_matches_reference_recount(zipf_counts):
    ids = corpus.zipf_ids(50257, 1_000_000, seed=7)
    ref = np.zeros(50257, dtype=np.int64)
    for k, v in collections.Counter(ids.tolist()).items():
        ref[k] = v
    assert zipf_counts.total == 1_000_000
    assert zipf_counts.counts.tobytes() == ref.tobytes()


@given(st.lists(st.integers(0, 19), max_size=300), st.integers(1, 6))
def test_sharded_counting_and_conservation(ids, k):
    single = corpus.count_tokens(ids, 20)
    assert single.total == len(ids)
    shards = [ids[i::k] for i in range(k)]
    assert corpus.count_shards(shards, 20) == single
    assert corpus.count_tokens(ids, 20, chunk=7) == single


def test_token_cdf_examples(zipf_counts):
    assert corpus.token_cdf(TokenCounts.from_counts([3, 1])).tolist() == [0.75, 1.0]
    assert corpus.cdf_deviation(TokenCounts.from_counts([5] * 16)) == pytest.approx(0.0, abs=1e-15)
    cdf = corpus.token_cdf(zipf_counts)
    assert np.all(np.diff(cdf) >= 0) and abs(cdf[-1] - 1.0) <= 1e-12
    assert corpus.cdf_deviation(zipf_counts) > 0.1
    with pytest.raises(EmptyCounts):
        corpus.token_cdf(TokenCounts.from_counts([0, 0]))


def test_subtoken_entropy_examples():
    c = TokenCounts.from_counts([4, 3, 2, 1])
    r = corpus.subtoken_entropies(c, subtok.build(4, 2))
    assert r["per_position"] == pytest.approx([_h(0.7), _h(0.6)], abs=1e-12)
    assert r["per_position"] == pytest.approx([0.8813, 0.9710], abs=5e-5)
    assert r["average"] == pytest.approx(0.9261, abs=5e-5)
    best = oracle.best_assignment_bruteforce(c.probs(), 2)["perm"]
    r = corpus.subtoken_entropies(c, subtok.with_perm(4, 2, best))
    assert r["average"] == pytest.approx((1.0 + _h(0.6)) / 2, abs=1e-12)
    assert r["average"] == pytest.approx(0.9855, abs=5e-5)
    u = TokenCounts.from_counts(np.ones(64, dtype=np.int64))
    for seed in (0, 1):
        r = corpus.subtoken_entropies(u, subtok.build(64, 6, "random", seed=seed))
        assert np.all(r["per_position"] == 1.0)
    with pytest.raises(EmptyCounts):
        corpus.subtoken_entropies(TokenCounts.from_counts([0] * 4), subtok.build(4, 2))


@given(st.lists(st.integers(0, 50), min_size=2, max_size=40), st.data())
def test_entropy_range_and_invariance(counts, data):
    c = TokenCounts.from_counts(counts)
    if c.total == 0:
        return
    V = c.V
    ell = data.draw(st.integers(1, subtok.ceil_log2(V)))
    st_ = subtok.build(V, ell, "random", seed=data.draw(st.integers(0, 100)))
    r = corpus.subtoken_entropies(c, st_)
    cap = math.log2(st_.base)
    assert np.all(r["per_position"] >= 0) and np.all(r["per_position"] <= cap + 1e-12)
    assert r["average"] <= r["per_position"].max() + 1e-12
    # token entropy is unchanged when relabelled by any permutation
    p = c.probs()
    assert oracle.entropy_bits(p[st_.perm]) == pytest.approx(oracle.entropy_bits(p), abs=1e-12)


def test_entropy_report_uniform():
    rows = corpus.entropy_report(TokenCounts.from_counts(np.full(64, 3)), 3, seeds=[0, 1])
    assert [r["strategy"] for r in rows] == ["identity", "random", "random", "greedy", "maximum"]
    for r in rows:
        assert r["average_bits"] == pytest.approx(2.0, abs=1e-12)


def test_entropy_report_zipf_gpt2_vocab(zipf_counts):
    rows = corpus.entropy_report(zipf_counts, 16, seeds=[0, 1, 2])
    ident, randoms, greedy = rows[0], rows[1:4], rows[4]
    assert rows[-1]["average_bits"] == 1.0
    assert ident["average_bits"] < min(r["average_bits"] for r in randoms)
    assert greedy["average_bits"] >= ident["average_bits"]
    for r in randoms:
        assert r["average_bits"] >= 0.97


@pytest.mark.parametrize("V,ell,exponent", [(64, 3, 1.0), (100, 2, 1.0), (256, 4, 1.2), (1000, 5, 0.8)])
def test_greedy_not_below_identity_on_zipf(V, ell, exponent):
    w = corpus.zipf_probs(V, exponent)
    c = TokenCounts.from_counts(np.round(w * 1e9).astype(np.int64))
    rows = corpus.entropy_report(c, ell)
    assert rows[2]["average_bits"] >= rows[0]["average_bits"] - 1e-12


def test_frequency_tsv_roundtrip(tmp_path):
    c = TokenCounts.from_counts([0, 5, 0, 2, 9])
    path = tmp_path / "freq.tsv"
    corpus.write_frequency_tsv(path, c)
    assert path.read_text() == "1\t5\n3\t2\n4\t9\n"
    assert corpus.read_frequency_tsv(path, V=5) == c
    assert corpus.read_frequency_tsv(path, V=8).counts.tolist() == [0, 5, 0, 2, 9, 0, 0, 0]


@pytest.mark.parametrize(
    "text", ["1\t5\n1\t2\n", "3\t5\n1\t2\n", "1 5\n", "1\t-2\n", "x\t1\n", "1\t2\t3\n"]
)
def test_frequency_tsv_rejects(tmp_path, text):
    path = tmp_path / "bad.tsv"
    path.write_text(text)
    with pytest.raises(CorruptFile):
        corpus.read_frequency_tsv(path)


def test_frequency_tsv_out_of_range(tmp_path):
    path = tmp_path / "f.tsv"
    path.write_text("0\t1\n9\t1\n")
    with pytest.raises(TokenOutOfRange):
        corpus.read_frequency_tsv(path, V=4)


def test_id_stream_io(tmp_path):
    path = tmp_path / "ids.txt"
    corpus.write_id_stream(path, [3, 0, 2])
    assert path.read_text() == "3\n0\n2\n"
    assert list(corpus.read_id_stream(path)) == [3, 0, 2]
    path.write_text("1\n\n2\nabc\n")
    with pytest.raises(CorruptFile):
        list(corpus.read_id_stream(path))


def test_report_formats():
    rows = corpus.entropy_report(TokenCounts.from_counts([4, 3, 2, 1]), 2)
    text = corpus.report_rows_csv(rows)
    lines = text.strip().split("\n")
    assert lines[0] == "strategy,seed,position,bits"
    assert len(lines) == 1 + 4 * 3
    assert lines[1].startswith("identity,,0,")
    import json

    assert json.loads(corpus.report_json(rows))[-1]["strategy"] == "maximum"
