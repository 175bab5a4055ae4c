import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cluttergen import oracles
from cluttergen.mrg import (BIDIRECTIONAL, CHILD, MRG, NONE, PARENT, MrgConfig, extract_mrg, graspable_set,
                            order_check, order_valid, parents_of)
from cluttergen.scene import builtin_library, generate_scene

A, B, C = 0, 1, 2
STACK3 = MRG({A: {B}, B: {C}, C: set()})


def corpus_record(name):
    return oracles.record_from_boxes(oracles.box_corpus()[name], name)


def test_single_object_has_no_relations():
    rec, lib = corpus_record("single")
    m = extract_mrg(rec, lib)
    assert m.parents == {0: frozenset()} and m.matrix() == []


def test_box_on_box_labels():
    rec, lib = corpus_record("centered_pair")
    m = extract_mrg(rec, lib)
    assert m.parents == {0: frozenset({1}), 1: frozenset()}
    assert m.rel(1, 0) == PARENT and m.rel(0, 1) == CHILD


def test_leaning_pair_is_bidirectional():
    rec, lib = oracles.leaning_pair_record()
    m = extract_mrg(rec, lib)
    assert m.rel(0, 1) == BIDIRECTIONAL and m.rel(1, 0) == BIDIRECTIONAL
    assert m.bidirectional_pairs() == [(0, 1)]


def test_extraction_leaves_record_untouched():
    rec, lib = corpus_record("box_on_bridge")
    before = rec.to_json()
    extract_mrg(rec, lib)
    assert rec.to_json() == before


def test_pruning_matches_exhaustive_trials(small_scene, library):
    assert extract_mrg(small_scene, library, prune=True) == extract_mrg(small_scene, library, prune=False)


def test_graspable_sets():
    assert graspable_set(STACK3) == {A}
    assert graspable_set(MRG({i: set() for i in range(4)})) == {0, 1, 2, 3}
    assert graspable_set(MRG({0: {1}, 1: {0}})) == set()


def test_order_checks():
    assert order_valid(STACK3, [A, B, C])
    ok, reason = order_check(STACK3, [C, B, A])
    assert not ok and reason
    assert order_valid(MRG({7: set()}), [7])
    assert not order_valid(MRG({0: {1}, 1: {0}}), [0, 1])
    with pytest.raises(ValueError):
        order_check(STACK3, [A, B])


def test_closure_and_cycles():
    assert STACK3.descendants_closure()[A] == {B, C}
    assert STACK3.is_acyclic_modulo_bidirectional()
    assert MRG({0: {1}, 1: {0}}).is_acyclic_modulo_bidirectional()
    assert not MRG({0: {1}, 1: {2}, 2: {0}}).is_acyclic_modulo_bidirectional()


def test_invalid_graphs_rejected():
    with pytest.raises(ValueError):
        MRG({0: {0}})
    with pytest.raises(ValueError):
        MRG({0: {5}})
    with pytest.raises(ValueError):
        MrgConfig(epsilon_translation=0)
    with pytest.raises(ValueError):
        STACK3.rel(A, A)


def test_serialization_roundtrip():
    assert MRG.from_dict(STACK3.to_dict()) == STACK3
    assert STACK3.counts() == {NONE: 2, PARENT: 2, CHILD: 2, BIDIRECTIONAL: 0}


def check_matrix_invariants(m: MRG):
    for i, j, lab in m.matrix():
        back = m.rel(j, i)
        assert (lab, back) in {(NONE, NONE), (PARENT, CHILD), (CHILD, PARENT), (BIDIRECTIONAL, BIDIRECTIONAL)}
        assert (lab in (PARENT, BIDIRECTIONAL)) == (i in m.parents[j])


parent_maps = st.integers(1, 6).flatmap(
    lambda n: st.fixed_dictionaries({i: st.sets(st.sampled_from([k for k in range(n) if k != i] or [0]))
                                     for i in range(n)}))


@given(parent_maps)
def test_matrix_invariants_on_arbitrary_parent_lists(parents):
    parents = {i: {p for p in ps if p != i} for i, ps in parents.items()}
    check_matrix_invariants(MRG(parents))


@settings(max_examples=6)
@given(st.integers(0, 100_000), st.integers(2, 7))
def test_matrix_invariants_on_generated_scenes(seed, count):
    lib = builtin_library()
    rec = generate_scene(lib, count, seed)
    m = extract_mrg(rec, lib)
    check_matrix_invariants(m)
    assert m.is_acyclic_modulo_bidirectional()


@settings(max_examples=10)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=6, unique=True),
       st.floats(0.04, 0.09))
def test_isolated_objects_have_no_relations(cells, size):
    boxes = [oracles.AxisBox(k, (-0.18 + 0.12 * cx, -0.18 + 0.12 * cy, size / 2), (size, size, size))
             for k, (cx, cy) in enumerate(cells)]
    rec, lib = oracles.record_from_boxes(boxes)
    m = extract_mrg(rec, lib)
    assert all(lab == NONE for _, _, lab in m.matrix())


def test_parents_of_single_target():
    rec, lib = corpus_record("bridge")
    assert parents_of(rec, lib, 0) == {1, 2}
