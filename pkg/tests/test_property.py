import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinrepair.model import FormatError
from pinrepair.property import (
    Box,
    CannotPartition,
    LabelSpec,
    LinearAssertion,
    OutputConstraint,
    Property,
    UnsupportedForm,
    bisect,
    check_compatible,
    desugar,
    label_spec,
    parse_property,
    robustness_property,
    satisfaction_margin,
    satisfied,
    satisfied_batch,
    serialize_property,
)


def test_bisect_splits_widest_dimension():
    a, b = bisect(Box([0.0, 0.0], [1.0, 4.0]))
    assert a == Box([0.0, 0.0], [1.0, 2.0])
    assert b == Box([0.0, 2.0], [1.0, 4.0])


def test_bisect_tie_takes_lowest_index():
    a, b = bisect(Box([0.0, 0.0], [1.0, 1.0]))
    assert a.upper.tolist() == [0.5, 1.0]
    assert b.lower.tolist() == [0.5, 0.0]


def test_bisect_point_box():
    with pytest.raises(CannotPartition):
        bisect(Box([1.0, 2.0], [1.0, 2.0]))


def test_bisect_degenerate_dimension_skipped():
    a, _ = bisect(Box([0.0, 3.0], [1.0, 3.0]))
    assert a.upper.tolist() == [0.5, 3.0]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(0, 1e3)), min_size=1, max_size=5))
def test_bisect_covers_parent(spec):
    lo = np.array([a for a, _ in spec])
    hi = lo + np.array([w for _, w in spec])
    box = Box(lo, hi)
    if not (box.widths > 0).any():
        return
    a, b = bisect(box)
    d = int(np.argmax(box.widths))
    assert a.upper[d] == b.lower[d]
    assert np.array_equal(a.lower, box.lower) and np.array_equal(b.upper, box.upper)
    assert box.contains_box(a) and box.contains_box(b)
    assert not a.interiors_overlap(b)
    # every other coordinate untouched
    keep = np.arange(box.dim) != d
    assert np.array_equal(a.upper[keep], box.upper[keep])
    assert np.array_equal(b.lower[keep], box.lower[keep])


def test_box_rejects_inverted_bounds():
    with pytest.raises(ValueError):
        Box([1.0], [0.0])


def test_box_membership_is_closed():
    b = Box([0.0, 0.0], [1.0, 1.0])
    assert b.contains([1.0, 0.0])
    assert not b.contains([1.0 + 1e-12, 0.0])
    assert b.contains_batch(np.array([[0.5, 0.5], [2.0, 0.0]])).tolist() == [True, False]


def test_shared_face_is_not_interior_overlap():
    assert not Box([0, 0], [1, 1]).interiors_overlap(Box([1, 0], [2, 1]))
    assert Box([0, 0], [1, 1]).interiors_overlap(Box([0.5, 0.5], [2, 2]))


# ---------------------------------------------------------------- label forms

def test_desugar_not_argmax_is_disjunction():
    omega = desugar("not_argmax", 1, 3)
    ds = omega.disjuncts
    assert len(ds) == 2 and all(len(c) == 1 for c in ds)
    assert ds[0][0].coeffs == (1.0, -1.0, 0.0)
    assert ds[1][0].coeffs == (0.0, -1.0, 1.0)
    assert all(c[0].rel == "ge" for c in ds)


def test_desugar_argmax_is_strict_conjunction():
    (conj,) = desugar("argmax", 0, 3).disjuncts
    assert [a.coeffs for a in conj] == [(1.0, -1.0, 0.0), (1.0, 0.0, -1.0)]
    assert all(a.rel == "gt" for a in conj)


@pytest.mark.parametrize("kind", ["argmax", "not_argmax", "argmin", "not_argmin"])
def test_desugar_matches_direct_label_check(kind):
    rng = np.random.default_rng(0)
    omega = OutputConstraint(sugar=(kind, 2))
    for _ in range(300):
        y = rng.integers(-2, 3, size=4).astype(float)  # ties happen often
        top, bottom = y[2] > np.delete(y, 2).max(), y[2] < np.delete(y, 2).min()
        expect = {"argmax": top, "not_argmax": not top, "argmin": bottom, "not_argmin": not bottom}[kind]
        assert satisfied(omega, y) == expect
        assert satisfied_batch(omega, y[None, :])[0] == expect


def test_desugar_rejects_bad_label():
    with pytest.raises(ValueError):
        desugar("argmax", 3, 3)
    with pytest.raises(ValueError):
        OutputConstraint(sugar=("argmedian", 0))


def test_label_spec_signs():
    assert label_spec(OutputConstraint(sugar=("not_argmax", 2))) == LabelSpec((2,), (1,))
    assert label_spec(OutputConstraint(sugar=("argmin", 0))) == LabelSpec((0,), (1,))
    assert label_spec(OutputConstraint(sugar=("argmax", 1))) == LabelSpec((1,), (-1,))
    assert label_spec(OutputConstraint(sugar=("not_argmin", 1))) == LabelSpec((1,), (-1,))


def test_label_spec_rejects_general_form():
    omega = OutputConstraint(((LinearAssertion((1.0, -1.0)),),))
    with pytest.raises(UnsupportedForm):
        label_spec(omega)


def test_strict_vs_nonstrict_at_zero():
    ge = OutputConstraint(((LinearAssertion((1.0, -1.0), 0.0, "ge"),),))
    gt = OutputConstraint(((LinearAssertion((1.0, -1.0), 0.0, "gt"),),))
    assert satisfied(ge, [1.0, 1.0])
    assert not satisfied(gt, [1.0, 1.0])


def test_satisfaction_margin():
    omega = OutputConstraint(sugar=("argmax", 0))
    m, g = satisfaction_margin(omega, [3.0, 1.0, 2.5])
    assert m == 0.5
    assert g.tolist() == [1.0, 0.0, -1.0]


def test_check_compatible():
    prop = Property(Box([0, 0], [1, 1]), OutputConstraint(sugar=("argmax", 4)))
    with pytest.raises(ValueError):
        check_compatible(prop, 2, 3)
    check_compatible(prop, 2, 5)
    with pytest.raises(ValueError):
        check_compatible(prop, 3, 5)


def test_robustness_property_clips():
    p = robustness_property([0.05, 0.5], 1, 0.1)
    assert p.input.lower.tolist() == [0.0, 0.4]
    assert p.input.upper[0] == pytest.approx(0.15)
    assert p.output.sugar == ("argmax", 1)


# ---------------------------------------------------------------- JSON

def test_clear_of_conflict_property_parses(data_dir):
    p = parse_property(data_dir / "clear_of_conflict_property.json")
    assert p.name == "not-clear-of-conflict"
    assert p.input.lower.tolist() == [55947.691, -3.141593, -3.141593, 1145.0, 0.0]
    assert p.input.upper.tolist() == [60760.0, 3.141593, 3.141593, 1200.0, 60.0]
    assert p.output.sugar == ("not_argmax", 0)
    assert len(p.output.expand(5)) == 4


def test_golden_serialization(data_dir):
    text = (data_dir / "linear_property.json").read_text()
    p = parse_property(text)
    assert serialize_property(p) == text
    assert p.output.disjuncts[0][0].rel == "gt"


def test_sugar_round_trip():
    p = Property(Box([0, 1], [2, 3]), OutputConstraint(sugar=("not_argmin", 3)), "x")
    q = parse_property(serialize_property(p))
    assert q.output == p.output and q.input == p.input and q.name == "x"
    assert serialize_property(q) == serialize_property(p)


def test_lower_above_upper_names_index():
    with pytest.raises(FormatError) as exc:
        parse_property('{"input": {"lower": [0, 2], "upper": [1, 1]}, "output": {"argmax": 0}}')
    assert "input[1]" in str(exc.value)


@pytest.mark.parametrize("doc, where", [
    ('{"input": {"lower": [0], "upper": [1]}, "output": {"argmax": -1}}', "output.argmax"),
    ('{"input": {"lower": [0], "upper": [1]}, "output": {"best": 0}}', "output"),
    ('{"input": {"lower": [0], "upper": [1, 2]}, "output": {"argmax": 0}}', "input"),
    ('{"input": {"lower": [0], "upper": [1]}, "output": {"any_of": [{"all_of": '
     '[{"coeffs": [1, 0]}, {"coeffs": [1]}]}]}}', "output.any_of[0].all_of[1].coeffs"),
    ('{"input": {"lower": [0], "upper": [1]}, "output": {"any_of": [{"all_of": '
     '[{"coeffs": [1, 0], "rel": "lt"}]}]}}', "output.any_of[0].all_of[0].rel"),
    ('{"input": {"lower": [0], "upper": [1]}}', "property"),
])
def test_format_errors_name_location(doc, where):
    with pytest.raises(FormatError) as exc:
        parse_property(doc)
    assert where in str(exc.value)
