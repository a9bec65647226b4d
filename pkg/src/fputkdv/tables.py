"""Lie-bracket tables of the normalisation steps, transcribed as expression text.

Each row is ``(X, Y, expected)`` and asserts ``[X, Y] == expected`` after both
sides are put in canonical form.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List

from .diffpoly import lie_bracket, parse, to_text

K3 = "u_3x + 6*u*u_x"

G2_BASIS = [
    "u_2x",
    "u^2 - av(u^2)",
    "u_x*pr(u) + av(u^2) - av(u)^2",
    "av(u)*(u - av(u))",
]

F5_SLOTS = [
    "u_5x",
    "u_x*u_2x",
    "u*u_3x",
    "u^2*u_x",
    "av(u^2)*u_x",
    "av(u)^2*u_x",
    "av(u)*(u_3x + 6*u*u_x)",
]

G4_BASIS = [
    "u_4x",
    "u_x^2 - av(u_x^2)",
    "u*u_2x + av(u_x^2)",
    "u^3 - av(u^3)",
    "u_x*pr(u^2) + av(u^3) - av(u)*av(u^2)",
    "(u_3x + 6*u*u_x)*pr(u) + 3*av(u^3) - av(u_x^2) - 3*av(u^2)*av(u)",
    "av(u)*u_2x",
    "av(u)*(u^2 - av(u^2))",
    "av(u)*(u_x*pr(u) + av(u^2) - av(u)^2)",
    "av(u)^2*(u - av(u))",
    "av(u^2)*(u - av(u))",
    "av(u_x^2)",
    "av(u^3)",
]

TABLE1 = [
    (G2_BASIS[0], K3, "12*u_x*u_2x"),
    (G2_BASIS[1], K3, "-6*u_x*u_2x - 6*u^2*u_x + 6*av(u^2)*u_x"),
    (G2_BASIS[2], K3,
     "-3*u_x*u_2x - 3*u*u_3x - 3*u^2*u_x - 9*av(u^2)*u_x + 6*av(u)^2*u_x"
     " + 6*av(u)*u*u_x + 3*av(u)*u_3x"),
    (G2_BASIS[3], K3, "-6*av(u)*u*u_x + 6*av(u)^2*u_x"),
]

_TABLE2_RESULTS = [
    # X = u_2x
    ["0",
     "2*u_2x*u_3x",
     "2*u_x*u_4x",
     "2*u_x^3 + 4*u*u_x*u_2x",
     "2*av(u_x^2)*u_x",
     "0",
     "12*av(u)*u_x*u_2x"],
    # X = u^2 - <u^2>
    ["-20*u_2x*u_3x - 10*u_x*u_4x",
     "-2*u_x^3 - 2*u*u_x*u_2x + av(u_x^3)",
     "-6*u*u_x*u_2x - u^2*u_3x - 2*av(u_x^3) + av(u^2)*u_3x",
     "-2*u^3*u_x + 2*av(u^2)*u*u_x",
     "-2*av(u^3)*u_x + 2*av(u)*av(u^2)*u_x",
     "0",
     "-6*av(u)*u_x*u_2x - 6*av(u)*u^2*u_x + 6*av(u)*av(u^2)*u_x"],
    # X = u_x (u - <u>)_{-x} + <u^2> - <u>^2
    ["-15*u_2x*u_3x - 10*u_x*u_4x - 5*u*u_5x + 5*av(u)*u_5x",
     "-1/2*u_x^3 - 3*u*u_x*u_2x - 1/2*av(u_x^2)*u_x - av(u_x^3) + 3*av(u)*u_x*u_2x",
     "-1/2*u_x^3 - 3*u*u_x*u_2x - 3*u^2*u_3x + 3/2*av(u_x^2)*u_x + 2*av(u_x^3)"
     " - av(u^2)*u_3x + av(u)^2*u_3x + 3*av(u)*u*u_3x",
     "-2/3*u^3*u_x - 1/3*av(u^3)*u_x - 2*av(u^2)*u*u_x + 2*av(u)^2*u*u_x + av(u)*u^2*u_x",
     "av(u^3)*u_x - 3*av(u)*av(u^2)*u_x + 2*av(u)^3*u_x",
     "0",
     "-3*av(u)*u_x*u_2x - 3*av(u)*u*u_3x - 3*av(u)*u^2*u_x + 3*av(u)^2*u_3x"
     " + 6*av(u)^2*u*u_x + 6*av(u)^3*u_x - 9*av(u)*av(u^2)*u_x"],
    # X = <u> (u - <u>)
    ["0",
     "-av(u)*u_x*u_2x",
     "av(u)^2*u_3x - av(u)*u*u_3x",
     "2*av(u)^2*u*u_x - 2*av(u)*u^2*u_x",
     "2*av(u)^3*u_x - 2*av(u)*av(u^2)*u_x",
     "0",
     "6*av(u)^3*u_x - 6*av(u)^2*u*u_x"],
]

TABLE2 = [
    (x, y, res)
    for x, row in zip(G2_BASIS, _TABLE2_RESULTS)
    for y, res in zip(F5_SLOTS, row)
]

TABLE3 = [
    (G4_BASIS[0], K3, "60*u_2x*u_3x + 24*u_x*u_4x"),
    (G4_BASIS[1], K3, "-6*u_2x*u_3x + 6*u_x^3 - 6*av(u_x^3) + 6*av(u_x^2)*u_x"),
    (G4_BASIS[2], K3,
     "-3*u_2x*u_3x - 3*u_x*u_4x + 12*u*u_x*u_2x + 6*av(u_x^3) - 6*av(u_x^2)*u_x"),
    (G4_BASIS[3], K3,
     "-6*u_x^3 - 18*u*u_x*u_2x - 6*u^3*u_x - 3*av(u_x^3) + 6*av(u^3)*u_x"),
    (G4_BASIS[4], K3,
     "-3*u_x^3 - 6*u*u_x*u_2x - 3*u^2*u_3x - 2*u^3*u_x + 3*av(u^2)*u_3x"
     " + 3*av(u_x^2)*u_x + 6*av(u^2)*u*u_x - 10*av(u^3)*u_x + 3*av(u_x^3)"
     " + 6*av(u)*av(u^2)*u_x"),
    (G4_BASIS[5], K3,
     "-3*u_x*u_4x - 3*u*u_5x - 18*u_x^3 - 72*u*u_x*u_2x - 21*u^2*u_3x - 18*u^3*u_x"
     " - 3*av(u^2)*u_3x + 6*av(u_x^2)*u_x + 3*av(u_x^3) - 18*av(u^3)*u_x"
     " - 18*av(u^2)*u*u_x + 18*av(u)*av(u^2)*u_x"
     " + 3*av(u)*(u_5x + 18*u_x*u_2x + 8*u*u_3x + 12*u^2*u_x)"),
    (G4_BASIS[6], K3, "12*av(u)*u_x*u_2x"),
    (G4_BASIS[7], K3,
     "-6*av(u)*u_x*u_2x - 6*av(u)*u^2*u_x + 6*av(u)*av(u^2)*u_x"),
    (G4_BASIS[8], K3,
     "-3*av(u)*u_x*u_2x - 3*av(u)*u*u_3x - 3*av(u)*u^2*u_x - 9*av(u)*av(u^2)*u_x"
     " + 6*av(u)^3*u_x + 6*av(u)^2*u*u_x + 3*av(u)^2*u_3x"),
    (G4_BASIS[9], K3, "-6*av(u)^2*u*u_x + 6*av(u)^3*u_x"),
    (G4_BASIS[10], K3, "6*av(u^2)*av(u)*u_x - 6*av(u^2)*u*u_x"),
    (G4_BASIS[11], K3, "-6*av(u_x^2)*u_x + 6*av(u_x^3)"),
    (G4_BASIS[12], K3, "-6*av(u^3)*u_x + 3*av(u_x^3)"),
]

TABLES = {"table1": TABLE1, "table2": TABLE2, "table3": TABLE3}


@dataclass
class RowCheck:
    table: str
    row: int
    x: str
    y: str
    expected: str
    computed: str

    @property
    def passed(self) -> bool:
        return parse(self.expected) == parse(self.computed)


def verify_tables() -> List[RowCheck]:
    """Recompute every bracket row of the three tables."""
    out = []
    for name, rows in TABLES.items():
        for i, (x, y, expected) in enumerate(rows, start=1):
            got = lie_bracket(parse(x), parse(y))
            out.append(RowCheck(name, i, x, y, expected, to_text(got)))
    return out
