import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lengthsep import hyperbolic as hyp
from lengthsep import surface_group as sg
from lengthsep.errors import NotHyperbolic

letters = st.integers(min_value=1, max_value=4).flatmap(
    lambda k: st.sampled_from([k, -k])
)
words = st.lists(letters, min_size=1, max_size=8).map(tuple)


@pytest.fixture(scope="module")
def surface():
    return sg.BolzaSurface()


@pytest.fixture(scope="module")
def spectrum(surface):
    return sg.enumerate_classes(surface.generators, 6.2, surface=surface)


def test_defining_relation():
    g1, g2, g3, g4 = sg.bolza_group()
    M = (g1 @ g2 @ g1.inverse() @ g2.inverse() @ g3 @ g4 @ g3.inverse() @ g4.inverse()).mat
    assert min(np.abs(M - np.eye(2)).max(), np.abs(M + np.eye(2)).max()) < 1e-10


def test_generators_are_hyperbolic():
    for g in sg.bolza_group():
        assert g.trace_abs > 2.0
        assert np.isclose(sg.class_length(g), 2 * np.arccosh(g.trace_abs / 2))


def test_generator_length_is_systole():
    g = sg.bolza_group()[0]
    assert np.isclose(sg.class_length(g), sg.SYSTOLE, atol=1e-12)
    assert np.isclose(sg.SYSTOLE, 2 * np.arccosh(1 + np.sqrt(2)), atol=1e-14)


def test_class_length_rejects_non_hyperbolic():
    with pytest.raises(NotHyperbolic):
        sg.class_length(sg.MoebiusElement(np.eye(2)))


def test_length_is_conjugation_invariant(surface):
    g = sg.bolza_group()
    c = g[0] @ g[2]
    conj = c.conjugate_by(g[1])
    assert abs(sg.class_length(c) - sg.class_length(conj)) < 1e-12
    # longer conjugators accumulate float roundoff in the product
    w = g[1] @ g[3].inverse() @ g[0]
    assert abs(sg.class_length(c) - sg.class_length(c.conjugate_by(w))) < 1e-9


def test_axis_fixed_points(surface):
    for g in sg.bolza_group():
        z_att, z_rep = sg.axis_of(g)
        assert abs(abs(z_att) - 1) < 1e-9 and abs(abs(z_rep) - 1) < 1e-9
        # ideal endpoints are fixed by the action on null directions
        for z in (z_att, z_rep):
            n = np.array([z.real, z.imag, 1.0])
            img = g.apply(n)
            img = img / img[2]
            assert np.allclose(img[:2], n[:2], atol=1e-9)


def test_axis_translation_distance(surface):
    g = sg.bolza_group()[0]
    P, V = sg.axis_basis(g)
    ell = sg.class_length(g)
    assert np.isclose(hyp.dist(P, g.apply(P)), ell, atol=1e-9)
    # points on the axis are translated by exactly the class length
    X = P * np.cosh(0.37) + V * np.sinh(0.37)
    assert np.isclose(hyp.dist(X, g.apply(X)), ell, atol=1e-9)


def test_axis_so21_matches_group_action():
    g = sg.bolza_group()[1]
    L = sg.axis_so21(g)
    assert np.allclose(L, g.so21(), atol=1e-8)


def test_identity_has_no_axis():
    with pytest.raises(NotHyperbolic):
        sg.axis_of(sg.MoebiusElement(np.eye(2)))


# --- words and conjugacy ---------------------------------------------------------

def test_free_and_cyclic_reduce():
    assert sg.free_reduce((1, -1, 2)) == (2,)
    assert sg.cyclic_reduce((3, 1, -3)) == (1,)
    assert sg.cyclic_reduce((1, 2, -1)) == (2,)


def test_relator_is_trivial():
    assert sg.canonical_class_word(sg.RELATOR) == ()
    assert sg.dehn_reduce(sg.RELATOR) == ()


def test_canonical_is_conjugation_invariant():
    w = (1, 2, 3)
    for conj in [(2,), (1, -3), (4, 4, 1), (-2, 3, -1)]:
        conjugated = sg.free_reduce(conj + w + sg.inverse_word(conj))
        assert sg.canonical_class_word(conjugated) == sg.canonical_class_word(w)


def test_canonical_is_inversion_invariant():
    for w in [(3,), (1, 2), (1, 1, -2, -1, -3, 2), (1, 2, 3, 4)]:
        assert sg.canonical_class_word(w) == sg.canonical_class_word(sg.inverse_word(w))


def test_canonical_merges_relator_related_words():
    # these are conjugate only through relator splices (same trace, same axis)
    w1 = (1, 1, -2, -1, -3, 2)
    w2 = (1, 3, 4, -3, -3, -4)
    assert sg.canonical_class_word(w1) == sg.canonical_class_word(w2)


@settings(max_examples=80, deadline=None)
@given(words, words)
def test_canonical_conjugacy_property(w, conj):
    conjugated = sg.free_reduce(conj + w + sg.inverse_word(conj))
    assert sg.canonical_class_word(conjugated) == sg.canonical_class_word(w)


@settings(max_examples=60, deadline=None)
@given(words)
def test_canonical_matches_matrix_trace(w):
    cw = sg.canonical_class_word(w)
    m1 = sg.word_matrix(w)
    m2 = sg.word_matrix(cw)
    if m1.trace_abs > 2 + 1e-9:
        assert abs(m1.trace_abs - m2.trace_abs) < 1e-6


def test_word_period():
    assert sg.word_period((1, 2, 1, 2)) == ((1, 2), 2)
    assert sg.word_period((1, 2, 3)) == ((1, 2, 3), 1)


# --- enumeration ------------------------------------------------------------------

def test_low_spectrum_multiplicities(spectrum):
    from collections import Counter

    cnt = Counter(round(c.base_length, 6) for c in spectrum.classes)
    assert cnt[round(sg.SYSTOLE, 6)] == 12
    assert cnt[4.896905] == 12
    assert cnt[5.828071] == 24
    assert cnt[6.114284] == 12  # squares of the systolic classes


def test_enumeration_below_systole_is_empty(surface):
    spec = sg.enumerate_classes(surface.generators, 0.5 * sg.SYSTOLE, surface=surface)
    assert spec.classes == []
    assert sg.counting_ratio(spec) == 0.0


def test_enumeration_at_systole_contains_systolic_classes(surface):
    spec = sg.enumerate_classes(surface.generators, sg.SYSTOLE + 1e-6, surface=surface)
    assert len(spec.classes) == 12
    assert all(abs(c.base_length - sg.SYSTOLE) < 1e-9 for c in spec.classes)
    # brute-force oracle: length <= 2 words over the generators reach the systole
    gens = surface.generators
    brute = set()
    for a in range(-4, 5):
        for b in range(-4, 5):
            w = sg.free_reduce(tuple(x for x in (a, b) if x))
            if not w:
                continue
            m = sg.word_matrix(w, gens)
            if m.trace_abs > 2 + 1e-9 and sg.class_length(m) <= sg.SYSTOLE + 1e-6:
                brute.add(sg.canonical_class_word(w))
    found = {c.word for c in spec.classes}
    assert brute <= found


def test_enumeration_is_inverse_closed(spectrum):
    words = {c.word for c in spectrum.classes}
    inverted = {sg.canonical_class_word(sg.inverse_word(w)) for w in words}
    assert words == inverted


def test_enumeration_monotone(surface, spectrum):
    small = sg.enumerate_classes(surface.generators, 5.0, surface=surface)
    assert {c.word for c in small.classes} <= {c.word for c in spectrum.classes}


def test_base_length_matches_trace(spectrum):
    for c in spectrum.classes:
        assert np.isclose(c.base_length, 2 * np.arccosh(c.trace_abs / 2), atol=1e-12)
        m = sg.word_matrix(c.word)
        assert abs(m.trace_abs - c.trace_abs) < 1e-9


def test_iterates_are_marked(spectrum):
    iters = [c for c in spectrum.classes if not c.primitive]
    assert iters, "working set contains the squared systoles"
    for c in iters:
        root = [r for r in spectrum.classes if r.word == c.root_word]
        assert root and np.isclose(c.base_length, c.power * root[0].base_length, atol=1e-9)


def test_node_budget(surface):
    from lengthsep.errors import NodeBudgetExceeded

    with pytest.raises(NodeBudgetExceeded):
        sg.enumerate_classes(surface.generators, 6.2, node_budget=100, surface=surface)


def test_spectrum_csv_roundtrip(tmp_path, spectrum):
    path = tmp_path / "spec.csv"
    sg.spectrum_to_csv(spectrum, str(path))
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "canonical_word,trace_abs,base_length,primitive"
    assert len(lines) == len(spectrum.classes) + 1
    first = lines[1].split(",")
    assert sg.parse_word(first[0]) == spectrum.classes[0].word
    assert float(first[2]) == spectrum.classes[0].base_length


def test_counting_ratio_formula(spectrum):
    n = len(spectrum.classes)
    expect = n * 2 * 6.2 * np.exp(-6.2)
    assert np.isclose(spectrum.counting_ratio, expect, rtol=1e-12)


def test_reduce_points_reaches_domain(surface):
    rng = np.random.default_rng(3)
    z = 0.97 * (rng.uniform(-1, 1, 20) + 1j * rng.uniform(-1, 1, 20)) / np.sqrt(2)
    X = hyp.disk_to_hyperboloid(z)
    R = surface.reduce_points(X)
    # reduced points are no farther from the origin than any side-pairing image
    for g in surface.pairings:
        img = np.einsum("ij,nj->ni", g.so21(), R)
        assert (R[:, 2] <= img[:, 2] + 1e-9).all()
    # and within the circumradius of the fundamental domain
    assert (np.arccosh(R[:, 2]) <= sg.R_CIRC + 1e-6).all()


def test_reduce_with_matrices_consistent(surface):
    rng = np.random.default_rng(4)
    z = 0.9 * (rng.uniform(-1, 1, 8) + 1j * rng.uniform(-1, 1, 8)) / np.sqrt(2)
    X = hyp.disk_to_hyperboloid(z)
    R, M = surface.reduce_points_with_matrices(X)
    assert np.allclose(np.einsum("nij,nj->ni", M, X), R, atol=1e-9)
