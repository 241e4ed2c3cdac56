from itertools import product

import pytest
from hypothesis import given, strategies as st

from eqtrans.groups import (
    CyclicShiftGroup,
    GroupElement,
    GroupError,
    ProductGroupElement,
    TokenAction,
    act_aligned,
    act_on_sentence,
    act_on_token,
    act_product_on_sentence,
    compose,
    inverse,
    orbit,
    product_elements,
)

VERBS = ("walk", "look", "run", "jump")
ACTS = ("WALK", "LOOK", "RUN", "JUMP")
G4 = CyclicShiftGroup(4)
IN, OUT = TokenAction(G4, VERBS), TokenAction(G4, ACTS)


@pytest.mark.parametrize("p", range(1, 9))
def test_group_axioms_exhaustive(p):
    G = CyclicShiftGroup(p)
    elems = G.elements()
    e = G.identity
    assert len(elems) == p and e.shift == 0
    for a, b in product(elems, repeat=2):
        assert compose(a, b) in elems
        assert compose(a, b).shift == (a.shift + b.shift) % p
    for a, b, c in product(elems, repeat=3):
        assert compose(compose(a, b), c) == compose(a, compose(b, c))
    for a in elems:
        assert compose(a, e) == a == compose(e, a)
        assert compose(a, inverse(a)) == e == compose(inverse(a), a)
        assert inverse(a).shift == (p - a.shift) % p


def test_bad_orders_and_shifts():
    with pytest.raises(GroupError):
        CyclicShiftGroup(0)
    with pytest.raises(GroupError):
        GroupElement(4, G4)
    assert G4.element(5) == G4.element(1)
    with pytest.raises(GroupError):
        compose(G4.element(1), CyclicShiftGroup(3).element(1))


def test_token_action_basics():
    g = G4.element(1)
    assert act_on_token(g, IN, "walk") == "look"
    assert act_on_token(g, IN, "jump") == "walk"
    assert act_on_token(g, IN, "twice") == "twice"
    assert act_on_sentence(G4.element(2), IN, ["jump", "twice"]) == ("look", "twice")
    with pytest.raises(GroupError):
        TokenAction(G4, ("a", "b", "a", "c"))
    with pytest.raises(GroupError):
        TokenAction(G4, ("a", "b"))


def test_permutation_matches_action():
    universe = list(VERBS) + ["left", "twice"]
    for g in G4:
        perm = IN.permutation(g, universe)
        assert [universe[i] for i in perm] == [act_on_token(g, IN, t) for t in universe]
        assert sorted(perm) == list(range(len(universe)))


sentences = st.lists(st.sampled_from(VERBS + ("twice", "and", "left")), min_size=1, max_size=8)
shifts = st.integers(0, 3)


@given(sentences, shifts, shifts)
def test_action_composition_law(x, a, b):
    ga, gb = G4.element(a), G4.element(b)
    assert act_on_sentence(ga, IN, act_on_sentence(gb, IN, x)) == act_on_sentence(ga @ gb, IN, x)
    assert act_on_sentence(G4.identity, IN, x) == tuple(x)
    assert act_on_sentence(~ga, IN, act_on_sentence(ga, IN, x)) == tuple(x)


@given(sentences, st.data())
def test_product_action_composition_law(x, data):
    n = len(x)
    g = ProductGroupElement(tuple(G4.element(s) for s in data.draw(st.lists(shifts, min_size=n, max_size=n))))
    h = ProductGroupElement(tuple(G4.element(s) for s in data.draw(st.lists(shifts, min_size=n, max_size=n))))
    gh = ProductGroupElement(tuple(a @ b for a, b in zip(g.components, h.components)))
    assert act_product_on_sentence(g, IN, act_product_on_sentence(h, IN, x)) == act_product_on_sentence(gh, IN, x)
    assert act_product_on_sentence(ProductGroupElement.constant(G4.element(2), n), IN, x) == act_on_sentence(
        G4.element(2), IN, x
    )


def test_act_aligned():
    g = ProductGroupElement((G4.element(1), G4.identity, G4.element(3)))
    y = ("WALK", "WALK", "JUMP")
    assert act_aligned(g, OUT, y, (0, 1, 2)) == ("LOOK", "WALK", "RUN")
    with pytest.raises(GroupError):
        act_aligned(g, OUT, y, (0, 3, 1))
    with pytest.raises(GroupError):
        act_aligned(g, OUT, y, (0, 1))


def test_two_verb_orbit_has_four_pairs():
    x = ("walk", "right", "thrice", "after", "jump")
    y = ("JUMP", "RTURN", "WALK", "RTURN", "WALK", "RTURN", "WALK")
    orb = orbit((x, y), IN, OUT)
    assert len(orb) == 4
    assert (x, y) in orb
    # same-verb pair also has 4 images; a verb-free pair is fixed
    assert len(orbit((("jump", "and", "jump"), ("JUMP", "JUMP")), IN, OUT)) == 4
    assert orbit((("turn", "left"), ("LTURN",)), IN, OUT) == {(("turn", "left"), ("LTURN",))}


def test_product_orbit_distinct_images():
    # G^N images of a two-verb sentence: only the two verb positions matter, 4 * 4 = 16
    x = ("walk", "right", "thrice", "after", "jump")
    images = {act_product_on_sentence(g, IN, x) for g in product_elements(G4, len(x))}
    assert len(images) == 16
    assert sum(1 for _ in product_elements(CyclicShiftGroup(2), 3)) == 8
