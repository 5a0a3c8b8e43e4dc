import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from quickdetect import model
from quickdetect.model import (
    ConfigError, DuplicateSubset, EmptyFamily, InvalidK, InvalidProbabilities, InvalidSubset,
    build_family, build_general_family, overlap, parse_config,
)

from conftest import FIG1_CONFIG, MIXED_CONFIG, PAIR_CONFIG


def test_figure1_family():
    fam = build_family(3, 2, [1 / 3] * 3)
    assert fam.subsets == ((1, 2), (1, 3), (2, 3))
    assert fam.N == 3
    np.testing.assert_array_equal(fam.incidence, [[1, 1, 0], [1, 0, 1], [0, 1, 1]])


def test_singletons():
    fam = build_family(2, 1, [0.5, 0.5])
    assert fam.subsets == ((1,), (2,))


def test_ten_choose_five():
    assert build_family(10, 5, [1 / 252] * 252).N == 252


@pytest.mark.parametrize("k", [0, 3, 4])
def test_bad_k(k):
    with pytest.raises(InvalidK):
        build_family(3, k, [1 / 3] * 3)


def test_probability_errors():
    with pytest.raises(InvalidProbabilities):
        build_family(3, 2, [0.5, 0.5])
    with pytest.raises(InvalidProbabilities):
        build_family(3, 2, [0.3, 0.3, 0.3])
    with pytest.raises(InvalidProbabilities):
        build_family(3, 2, [1.2, -0.1, -0.1])


def test_zero_probability_trimmed():
    fam = build_family(3, 2, [0.5, 0.0, 0.5])
    assert fam.subsets == ((1, 2), (2, 3))


def test_general_trimming_and_order():
    fam = build_general_family(3, {(1, 2): 0.5, (1, 3): 0.0, (2, 3): 0.25, (1,): 0.25})
    assert fam.subsets == ((1,), (1, 2), (2, 3))
    assert fam.probs == (0.25, 0.5, 0.25)


def test_general_single_entry():
    assert build_general_family(3, {(1, 2): 1.0}).N == 1


def test_general_errors():
    with pytest.raises(InvalidProbabilities):
        build_general_family(3, {(1, 2): 0.5, (2, 3): 0.4})
    with pytest.raises(DuplicateSubset):
        build_general_family(3, [((1, 2), 0.5), ((1, 2), 0.5)])
    with pytest.raises(EmptyFamily):
        build_general_family(3, {(1, 2): 0.0})
    with pytest.raises(InvalidSubset):
        build_general_family(3, {(1, 4): 1.0})
    with pytest.raises(InvalidSubset):
        build_general_family(3, {(2, 1): 1.0})


def test_general_allows_full_set():
    assert build_general_family(3, {(1, 2, 3): 1.0}).subsets == ((1, 2, 3),)


def test_overlap():
    fam = build_family(3, 2, [1 / 3] * 3)
    assert overlap(fam, 1, 2) == 1
    assert overlap(fam, 1, 1) == 2
    fam4 = build_family(4, 2, [1 / 6] * 6)
    assert fam4.subsets[0] == (1, 2) and fam4.subsets[5] == (3, 4)
    assert overlap(fam4, 1, 6) == 0
    with pytest.raises(IndexError):
        overlap(fam, 0, 1)
    with pytest.raises(IndexError):
        overlap(fam, 1, 4)


@pytest.mark.parametrize("n", range(2, 9))
def test_coordinate_multiplicity(n):
    for k in range(1, n):
        N = math.comb(n, k)
        fam = build_family(n, k, [1 / N] * N)
        np.testing.assert_array_equal(fam.incidence.sum(axis=0), math.comb(n - 1, k - 1))


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6).flatmap(lambda n: st.tuples(st.just(n), st.integers(1, n - 1))),
       st.integers(0, 2**31 - 1))
def test_rebuild_idempotent_and_overlap_psd(nk, seed):
    n, k = nk
    N = math.comb(n, k)
    w = np.random.default_rng(seed).random(N)
    w[w < 0.2] = 0.0
    if not w.any():
        w[0] = 1.0
    fam = build_family(n, k, list(w / w.sum()))
    again = build_general_family(n, fam.entries())
    assert again.subsets == fam.subsets
    np.testing.assert_allclose(again.probs, fam.probs, rtol=0, atol=1e-15)
    ov = fam.overlap_matrix()
    np.testing.assert_array_equal(ov, ov.T)
    assert np.linalg.eigvalsh(ov.astype(float)).min() > -1e-9
    np.testing.assert_array_equal(np.diag(ov), k)


def test_spec_quantities(fig1, mixed_spec):
    np.testing.assert_allclose(fig1.kappa, 1.0)
    np.testing.assert_allclose(fig1.growth, 0.0)
    np.testing.assert_allclose(mixed_spec.growth, [0.5, 0.0, -0.5])
    assert fig1.with_pi0(0.25).phi0 == pytest.approx(1 / 3)
    with pytest.raises(model.ModelError):
        fig1.with_pi0(1.0)


def test_parse_configs():
    spec = parse_config(FIG1_CONFIG)
    assert spec.family.subsets == ((1, 2), (1, 3), (2, 3))
    assert parse_config(PAIR_CONFIG).p.tolist() == [0.5, 0.5]
    mixed = parse_config(MIXED_CONFIG)
    assert mixed.family.subsets == ((1,), (1, 2), (1, 2, 3))
    assert spec.digest() == model.figure1_spec().digest()


@pytest.mark.parametrize("text", [
    FIG1_CONFIG + "colour=red\n",
    FIG1_CONFIG + "n=4\n",
    "n=3\nmu=1\nlambda=1\nk=2\n",
    "n=3\nmu=1\nlambda=1\nc=1\n",
    "n=3\nmu=1\nlambda=1\nc=1\nk=2\nentries=1:1\n",
    "n=3\nmu=1\nlambda=1\nc=1\nmode=weird\n",
    "n=3\nmu=1\nlambda=1\nc=1\nk=2\nprobs=0.5,0.5\n",
    "n=3 mu=1\n",
])
def test_parse_rejects(text):
    with pytest.raises(model.ModelError):
        parse_config(text)


def test_comments_and_blank_lines():
    spec = parse_config("# fig 1\n\n" + FIG1_CONFIG.replace("c=1", "c=1  # cost"))
    assert spec.c == 1.0


def test_config_error_is_value_error():
    assert issubclass(ConfigError, ValueError)
