import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from weak2mask.composer import ClassMask, compose, merge_instances


def brute_compose(masks, shape, policy, unmasked):
    """Per-pixel restatement of the conflict rules."""
    merged = {}
    for m in masks:
        if m.class_id in merged:
            mask, score = merged[m.class_id]
            merged[m.class_id] = (mask | m.mask, max(score, m.score))
        else:
            merged[m.class_id] = (m.mask.copy(), m.score)
    h, w = shape
    out = np.zeros(shape, np.uint8)
    conflicts = 0
    for y in range(h):
        for x in range(w):
            claim = [c for c, (mask, _) in merged.items() if mask[y, x]]
            if not claim:
                out[y, x] = 255 if unmasked == "ignore" else 0
            elif len(claim) == 1:
                out[y, x] = claim[0]
            else:
                conflicts += 1
                if policy == "ignore":
                    out[y, x] = 255
                elif policy == "score":
                    out[y, x] = min(claim, key=lambda c: (-merged[c][1], c))
                else:
                    out[y, x] = min(claim, key=lambda c: (merged[c][0].sum(), c))
    return out, conflicts


def fixture_masks():
    a = np.zeros((6, 6), bool)
    a[0:4, 0:4] = True
    b = np.zeros((6, 6), bool)
    b[2:6, 2:6] = True
    c = np.zeros((6, 6), bool)
    c[3, 0:6] = True
    return [ClassMask(2, a, 0.6), ClassMask(7, b, 0.9), ClassMask(4, c, 0.6)]


@pytest.mark.parametrize("policy", ["score", "smallest", "ignore"])
@pytest.mark.parametrize("unmasked", ["background", "ignore"])
def test_fixture_matches_brute_force(policy, unmasked):
    masks = fixture_masks()
    out = compose(masks, policy=policy, unmasked=unmasked)
    expected, conflicts = brute_compose(masks, (6, 6), policy, unmasked)
    assert np.array_equal(out.label, expected)
    assert out.conflicts == conflicts


def test_fixture_known_values():
    out = compose(fixture_masks(), policy="score")
    assert out.label[2, 2] == 7          # a and b overlap; b scores higher
    assert out.label[3, 1] == 2          # a and c tie on score; smaller id wins
    assert out.label[0, 5] == 0
    smallest = compose(fixture_masks(), policy="smallest")
    assert smallest.label[3, 3] == 4     # c is the smallest mask
    assert compose(fixture_masks(), policy="ignore").label[2, 2] == 255


def test_coverage_and_provenance():
    out = compose(fixture_masks(), provenance={"strategy": "points"})
    fg = (out.label != 0) & (out.label != 255)
    assert out.coverage == pytest.approx(fg.mean())
    assert out.provenance == {"strategy": "points"}


def test_empty_input():
    out = compose([], (3, 5))
    assert out.label.shape == (3, 5) and not out.label.any()
    assert out.conflicts == 0 and out.coverage == 0.0
    assert (compose([], (2, 2), unmasked="ignore").label == 255).all()
    with pytest.raises(ValueError):
        compose([])


def test_shape_mismatch_and_bad_policy():
    with pytest.raises(ValueError):
        compose([ClassMask(1, np.ones((2, 2), bool)), ClassMask(2, np.ones((3, 2), bool))])
    with pytest.raises(ValueError):
        compose(fixture_masks(), policy="largest")


def test_merge_instances_same_class():
    a = np.zeros((3, 3), bool)
    a[0] = True
    b = np.zeros((3, 3), bool)
    b[2] = True
    merged = merge_instances([ClassMask(5, a, 0.3, "x"), ClassMask(5, b, 0.8, "y")])
    assert len(merged) == 1
    assert merged[0].score == 0.8 and merged[0].mask.sum() == 6 and merged[0].source == "x,y"
    assert a.sum() == 3  # inputs untouched


def test_permutation_invariance_on_fixture():
    masks = fixture_masks()
    labels = [compose(p).label for p in itertools.permutations(masks)]
    assert all(np.array_equal(labels[0], l) for l in labels)


mask_sets = st.integers(1, 6).flatmap(lambda n: st.tuples(
    st.lists(st.integers(1, 20), min_size=n, max_size=n),
    st.lists(st.sampled_from([0.1, 0.5, 0.9]), min_size=n, max_size=n),
    st.lists(st.lists(st.booleans(), min_size=35, max_size=35), min_size=n, max_size=n),
))


@settings(max_examples=100, deadline=None)
@given(mask_sets, st.sampled_from(["score", "smallest", "ignore"]), st.randoms())
def test_compose_properties(data, policy, rnd):
    ids, scores, bits = data
    masks = [ClassMask(c, np.array(b).reshape(5, 7), s) for c, s, b in zip(ids, scores, bits)]
    out = compose(masks, policy=policy)
    expected, conflicts = brute_compose(masks, (5, 7), policy, "background")
    assert np.array_equal(out.label, expected)
    shuffled = masks[:]
    rnd.shuffle(shuffled)
    assert np.array_equal(compose(shuffled, policy=policy).label, out.label)
    union = np.any([m.mask for m in masks], axis=0)
    assert ((out.label != 0) <= union).all()
    if conflicts == 0:
        # without overlaps, every policy yields the same map
        others = [compose(masks, policy=p).label for p in ("score", "smallest", "ignore")]
        assert all(np.array_equal(o, out.label) for o in others)
