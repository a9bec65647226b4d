import time

import pytest

from fputkdv.diffpoly import lie_bracket, parse
from fputkdv.fields import kdv_field
from fputkdv.tables import TABLE1, TABLE2, TABLE3, verify_tables


def test_row_counts():
    assert (len(TABLE1), len(TABLE2), len(TABLE3)) == (4, 28, 13)


def test_every_row_reproduced():
    rows = verify_tables()
    bad = [(r.table, r.row, r.computed) for r in rows if not r.passed]
    assert not bad


def test_a_wrong_entry_is_caught():
    x, y, expected = TABLE1[0]
    assert lie_bracket(parse(x), parse(y)) != parse(expected) + parse("u_x")


@pytest.mark.parametrize("i,j", [(1, 3), (1, 5), (1, 7), (3, 5), (3, 7), (5, 7)])
def test_hierarchy_commutes(i, j):
    assert not lie_bracket(kdv_field(i), kdv_field(j))


def test_hierarchy_is_not_trivially_commutative():
    # a perturbed K5 no longer commutes with K3
    assert lie_bracket(kdv_field(3), kdv_field(5) + parse("u^2*u_x"))
