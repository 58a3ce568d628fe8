import json

import numpy as np
import pytest

from coordloop.formulation import (
    Edit,
    FormulationIR,
    IRFormatError,
    PatchRejected,
    apply_patch,
    audit_decision_variables,
    canonicalize,
    find_cost_data_antipatterns,
    find_missing_cost_parameters,
    patch_from_json,
    patch_to_json,
    structurally_equal,
    validate,
)
from coordloop.formulation import build as b
from coordloop.formulation.ir import parse_index
from coordloop.qpsolver import compile_base
from coordloop.scenarios import shipped_candidates

from conftest import toy_vendor


@pytest.mark.parametrize("expr,expected", [("t", ("t", 0)), ("t-1", ("t", -1)), ("t + 2", ("t", 2))])
def test_parse_index(expr, expected):
    assert parse_index(expr) == expected


def test_parse_index_rejects_garbage():
    with pytest.raises(IRFormatError):
        parse_index("t*2")


def test_shipped_references_validate_and_round_trip(shipped):
    for s in shipped.values():
        ir = s.reference
        assert validate(ir).ok, validate(ir).errors
        again = FormulationIR.from_json(ir.to_json())
        assert again == ir
        assert again.to_json() == ir.to_json()


def test_toy_compiles_to_expected_qp(toy):
    qp = compile_base(toy)
    assert qp.n == 2
    assert np.allclose(qp.q, [1.0, 2.0])
    assert np.allclose(qp.P, 0.0)
    assert qp.public_idx.tolist() == [0, 1]


def test_validate_reports_undeclared_parameter(toy):
    bad = toy.with_(objective=(b.linear("cost", "i,j,t", "po", "i,j,t", b.par("nope", "t")),))
    assert "resolution" in validate(bad).codes()


def test_validate_reports_wrong_parameter_length():
    bad = toy_vendor().with_(parameters=(b.param("c", "t", [1.0, 2.0, 3.0], "unit_cost"), b.param("cap", "", [5.0], "capacity")))
    assert "shape" in validate(bad).codes()


def test_validate_requires_exactly_one_public_variable(toy):
    two = toy.with_(variables=(*toy.variables, b.var("po2", "i,j,t", public=True)))
    none = toy.with_(variables=(b.var("po", "i,j,t"),))
    assert "public" in validate(two).codes()
    assert "public" in validate(none).codes()


def test_validate_rejects_concave_square(toy):
    bad = toy.with_(objective=(*toy.objective, b.square("neg", "i,j,t", "po", "i,j,t", 1.0, sign=-1.0)))
    assert not validate(bad).ok


def test_from_dict_wraps_missing_keys():
    with pytest.raises(IRFormatError):
        FormulationIR.from_dict({"sets": [{"size": 2}]})
    with pytest.raises(IRFormatError):
        FormulationIR.from_json("{not json")


def test_canonical_order_does_not_matter(toy):
    shuffled = toy.with_(parameters=tuple(reversed(toy.parameters)))
    assert shuffled != toy
    assert structurally_equal(shuffled, toy)
    assert canonicalize(shuffled) == canonicalize(toy)


def test_patch_replace_remove_add(toy):
    cheap = b.linear("cost", "i,j,t", "po", "i,j,t", 0.5)
    out = apply_patch(toy, [Edit("replace", "objective", "cost", cheap)])
    assert np.allclose(compile_base(out).q, [0.5, 0.5])
    gone = apply_patch(toy, [Edit("remove", "constraints", "capacity")])
    assert gone.constraints == ()
    back = apply_patch(gone, [Edit("add", "constraints", "capacity", toy.constraint("capacity"))])
    assert structurally_equal(back, toy)


def test_patch_limits_and_json_round_trip(toy):
    e = Edit("remove", "constraints", "capacity")
    with pytest.raises(PatchRejected):
        apply_patch(toy, [e, e, e])
    with pytest.raises(PatchRejected):
        apply_patch(toy, [Edit("remove", "objective", "absent")])
    with pytest.raises(PatchRejected):
        patch_from_json([{"op": "explode", "section": "objective", "name": "x"}])
    edits = (Edit("replace", "objective", "cost", toy.term("cost")), e)
    assert patch_from_json(json.loads(json.dumps(patch_to_json(edits)))) == edits


def test_static_analyses_clean_on_references(shipped):
    for s in shipped.values():
        assert find_cost_data_antipatterns(s.reference, s.fields) == []
        assert find_missing_cost_parameters(s.reference, s.fields) == []
        assert audit_decision_variables(s.reference, s).empty


def test_surcharge_candidate_is_a_hard_cost_data_flag(shipped):
    c = next(c for c in shipped_candidates() if c.scenario == "example3")
    flags = find_cost_data_antipatterns(c.formulation, shipped["example3"].fields)
    assert [f.severity for f in flags] == ["hard"]


def test_spurious_production_is_only_informational_to_the_audit(shipped):
    c = next(c for c in shipped_candidates() if c.scenario == "example2")
    audit = audit_decision_variables(c.formulation, shipped["example2"])
    assert audit.unexpected_variables == ("prod",)
    assert not audit.structural_gap
