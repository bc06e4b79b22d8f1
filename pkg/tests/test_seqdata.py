import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dmphyclus.errors import AlignmentShapeError, ParseError, ValidationError
from dmphyclus.likelihood import log_likelihood
from dmphyclus.seqdata import (IUPAC, Alignment, bootstrap_columns, compress_patterns, decompress,
                               format_fasta, indicator, parse_fasta, read_fasta, write_fasta)
from dmphyclus.simulate import random_topology


def test_single_base_indicator():
    a = parse_fasta(">x\nA\n")
    np.testing.assert_array_equal(a.indicators[0, 0], [1, 0, 0, 0])


def test_a_or_t_sets_exactly_two_flags():
    # W is the IUPAC code for "A or T"
    np.testing.assert_array_equal(indicator("W"), [1, 0, 0, 1])
    a = parse_fasta(">x\nW\n")
    assert a.indicators[0, 0].tolist() == [1.0, 0.0, 0.0, 1.0]


@pytest.mark.parametrize("code,states", [("R", "AG"), ("Y", "CT"), ("N", "ACGT"),
                                         ("-", "ACGT"), ("?", "ACGT"), ("B", "CGT"),
                                         ("u", "T")])
def test_iupac_sets(code, states):
    vec = indicator(code)
    assert [s for s, f in zip("ACGT", vec) if f] == list(states)


def test_every_code_has_one_to_four_flags():
    for ch, m in IUPAC.items():
        assert 1 <= indicator(ch).sum() <= 4


def test_parse_is_deterministic():
    text = ">a desc\nACGT\n>b\nAC-T\n>c\nNNRY\n"
    assert parse_fasta(text) == parse_fasta(text)
    assert parse_fasta(text).labels == ("a", "b", "c")


def test_multiline_records_and_comments():
    a = parse_fasta(";comment\n>a\nAC\nGT\n\n>b\nACG\nT\n")
    assert a.n_sites == 4 and a.sequence("a") == "ACGT"


def test_unequal_lengths():
    with pytest.raises(AlignmentShapeError, match="a=3"):
        parse_fasta(">a\nACG\n>b\nAC\n")


def test_bad_character_names_record_and_column():
    with pytest.raises(ParseError, match=r"'b'.*column 3"):
        parse_fasta(">a\nACGT\n>b\nACZT\n")


@pytest.mark.parametrize("text", ["", "ACGT\n", ">\nACGT\n", ">a\nAC\n>a\nAG\n"])
def test_malformed(text):
    with pytest.raises(ParseError):
        parse_fasta(text)


def test_round_trip(tmp_path):
    a = parse_fasta(">s1\nACGTRYKMSWBDHVN\n>s2\nTTTTTTTTTTTTTTT\n")
    path = tmp_path / "x.fasta"
    write_fasta(a, path)
    assert read_fasta(path) == a
    assert parse_fasta(format_fasta(a, width=4)) == a


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 5), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_round_trip_property(n, s, seed):
    rng = np.random.default_rng(seed)
    a = Alignment([f"t{i}" for i in range(n)], rng.integers(1, 16, (n, s)))
    # gaps and N share mask 15, so compare masks rather than characters
    assert parse_fasta(format_fasta(a)) == a


def test_compress_identical_columns():
    a = compress_patterns(parse_fasta(">a\nAAAA\n>b\nCCCC\n"))
    assert a.n_patterns == 1 and a.weights.tolist() == [4]


def test_compress_distinct_columns():
    a = parse_fasta(">a\nACGT\n>b\nACGT\n")
    assert a.n_patterns == 4 and a.weights.tolist() == [1, 1, 1, 1]


def test_decompress_reproduces_raw():
    rng = np.random.default_rng(3)
    a = Alignment(["a", "b", "c"], rng.integers(1, 16, (3, 40)))
    np.testing.assert_array_equal(decompress(a), a.codes)
    assert a.weights.sum() == 40 and a.weights.min() >= 1


def test_weighted_likelihood_equals_raw_columns():
    rng = np.random.default_rng(11)
    t = random_topology(4, seed=5)
    codes = rng.choice([1, 2, 4, 8], size=(4, 10))
    codes[:, 5:] = codes[:, :5]          # force repeated patterns
    a = Alignment(t.labels, codes)
    assert a.n_patterns < 10
    mats = rng.dirichlet(np.ones(4), size=(t.n_nodes, 2, 4))
    pi = np.array([0.1, 0.2, 0.3, 0.4])
    weighted = log_likelihood(a, t, mats, pi)
    raw = sum(log_likelihood(Alignment(t.labels, codes[:, [s]]), t, mats, pi) for s in range(10))
    assert weighted == pytest.approx(raw, rel=1e-14)


def test_bootstrap_single_column_is_identity():
    a = parse_fasta(">a\nA\n>b\nG\n")
    assert bootstrap_columns(a, 0) == a


def test_bootstrap_deterministic_and_shape():
    rng = np.random.default_rng(0)
    a = Alignment(["a", "b"], rng.integers(1, 16, (2, 50)))
    b1, b2 = bootstrap_columns(a, 42), bootstrap_columns(a, 42)
    assert b1 == b2 and b1.labels == a.labels and b1.n_sites == 50
    assert bootstrap_columns(a, 43) != b1


def test_bootstrap_column_counts_binomial():
    # column s is tagged by a unique pattern across 5 rows of base-4 digits
    S = 1000
    digits = (np.arange(S)[None, :] // 4 ** np.arange(5)[:, None]) % 4
    a = Alignment([f"r{i}" for i in range(5)], (1 << digits).astype(np.uint8))
    counts = []
    for rep in range(200):
        b = bootstrap_columns(a, rep)
        counts.append(np.sum(np.all(b.codes == a.codes[:, [17]], axis=0)))
    counts = np.array(counts)
    se = np.sqrt((1 - 1 / S) / len(counts))
    assert abs(counts.mean() - 1.0) < 3 * se


def test_bootstrap_empty():
    with pytest.raises(ValidationError):
        bootstrap_columns(Alignment(["a"], np.zeros((1, 0), dtype=np.uint8)), 0)


def test_subset_and_errors():
    a = parse_fasta(">a\nAC\n>b\nGT\n")
    assert a.subset(["b", "a"]).labels == ("b", "a")
    with pytest.raises(ValidationError, match="zz"):
        a.subset(["zz"])
    with pytest.raises(ValidationError):
        Alignment(["a", "a"], np.ones((2, 1)))
    with pytest.raises(AlignmentShapeError):
        Alignment(["a"], np.ones((2, 1)))
