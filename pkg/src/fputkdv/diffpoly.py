"""Exact differential polynomials on the circle.

A :class:`DiffPoly` is a finite sum of monomials with :class:`fractions.Fraction`
coefficients.  A monomial is a product of

* derivative factors ``u_kx`` (and ``v_kx`` for the two-argument fields),
* average symbols ``av(m)`` -- the integral over the circle of a monomial ``m``,
* zero-average primitives ``pr(m)`` -- the unique primitive of ``m - av(m)``
  that itself has zero average,
* formal scalar parameters (``alpha``, ``A1``, ``lam4`` ...) with integer,
  possibly negative, exponents.

Averages and primitives are keyed by a single *irreducible* monomial: one that
cannot be lowered by integration by parts (see :func:`ibp_reduce`).  Because
both constructions are linear, this keeps every value in a unique normal form,
so equality of two DiffPolys is equality of their term dictionaries.

Monomial order (used for printing and for ``DiffPoly.terms``): ascending total
degree (derivative plus primitive factors), then the derivative orders sorted
descending and compared lexicographically with larger tuples first, then the
average, primitive and parameter signatures.
"""
from __future__ import annotations

import functools
import re
from fractions import Fraction
from typing import Dict, Iterable, Mapping, Tuple, Union

__all__ = [
    "DiffPoly",
    "HSeries",
    "ParseError",
    "PrimitiveError",
    "antiderivative",
    "average",
    "canonicalize",
    "dx",
    "gateaux",
    "hseries_compose",
    "ibp_reduce",
    "lie_bracket",
    "parse",
    "primitive",
    "to_text",
]

# A derivative factor is (order, var); sorting on it puts u before v at equal order.
Factor = Tuple[int, str]
Derivs = Tuple[Factor, ...]
Key = Tuple[Derivs, Tuple[Derivs, ...], Tuple[Derivs, ...], Tuple[Tuple[str, int], ...]]
Scalar = Union[int, Fraction]

_EMPTY: Key = ((), (), (), ())


class ParseError(ValueError):
    """Raised for malformed expression text; ``pos`` is the 0-based offset."""

    def __init__(self, message: str, pos: int):
        super().__init__(f"{message} at position {pos}")
        self.pos = pos


class PrimitiveError(ValueError):
    """A result would need a primitive nested inside a primitive or an average."""


# ---------------------------------------------------------------------------
# monomial-key helpers


def _merge(a: tuple, b: tuple) -> tuple:
    if not a:
        return b
    if not b:
        return a
    return tuple(sorted(a + b))


def _merge_params(a, b):
    if not a:
        return b
    if not b:
        return a
    exps = dict(a)
    for name, e in b:
        exps[name] = exps.get(name, 0) + e
    return tuple(sorted((n, e) for n, e in exps.items() if e != 0))


def _mul_keys(k1: Key, k2: Key) -> Key:
    return (
        _merge(k1[0], k2[0]),
        _merge(k1[1], k2[1]),
        _merge(k1[2], k2[2]),
        _merge_params(k1[3], k2[3]),
    )


def _remove_one(t: tuple, item) -> tuple:
    i = t.index(item)
    return t[:i] + t[i + 1:]


def _degree(key: Key) -> int:
    return len(key[0]) + len(key[2])


def _sort_key(key: Key):
    orders = tuple(sorted((-o for o, _ in key[0])))
    return (_degree(key), orders, key[0], key[1], key[2], key[3])


class DiffPoly:
    """Immutable sum of monomials with exact rational coefficients.

    Build values with :func:`parse` or the arithmetic operators; the
    constructor expects an already-normalised ``{key: Fraction}`` mapping.
    """

    __slots__ = ("_terms", "_hash")

    def __init__(self, terms: Mapping[Key, Fraction] | None = None):
        self._terms: Dict[Key, Fraction] = {
            k: Fraction(c) for k, c in (terms or {}).items() if c != 0
        }
        self._hash = None

    # -- construction -----------------------------------------------------
    @classmethod
    def constant(cls, c: Scalar) -> "DiffPoly":
        return cls({_EMPTY: Fraction(c)})

    @classmethod
    def param(cls, name: str, power: int = 1) -> "DiffPoly":
        return cls({((), (), (), ((name, power),)): Fraction(1)})

    @classmethod
    def var(cls, order: int = 0, name: str = "u") -> "DiffPoly":
        if order < 0:
            raise ValueError("negative derivative order")
        return cls({(((order, name),), (), (), ()): Fraction(1)})

    # -- protocol ---------------------------------------------------------
    @property
    def terms(self):
        """``(key, coeff)`` pairs in canonical monomial order."""
        return sorted(self._terms.items(), key=lambda kv: _sort_key(kv[0]))

    def items(self):
        return self._terms.items()

    def __len__(self):
        return len(self._terms)

    def __bool__(self):
        return bool(self._terms)

    def __eq__(self, other):
        if isinstance(other, (int, Fraction)):
            other = DiffPoly.constant(other)
        if not isinstance(other, DiffPoly):
            return NotImplemented
        return self._terms == other._terms

    def __hash__(self):
        if self._hash is None:
            self._hash = hash(frozenset(self._terms.items()))
        return self._hash

    def __repr__(self):
        return f"DiffPoly({to_text(self)!r})"

    def __str__(self):
        return to_text(self)

    # -- arithmetic -------------------------------------------------------
    @staticmethod
    def _coerce(x) -> "DiffPoly":
        if isinstance(x, DiffPoly):
            return x
        if isinstance(x, (int, Fraction)):
            return DiffPoly.constant(x)
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        out = dict(self._terms)
        for k, c in other._terms.items():
            out[k] = out.get(k, 0) + c
        return DiffPoly(out)

    __radd__ = __add__

    def __neg__(self):
        return DiffPoly({k: -c for k, c in self._terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, Fraction)):
            return DiffPoly({k: c * other for k, c in self._terms.items()})
        if not isinstance(other, DiffPoly):
            return NotImplemented
        out: Dict[Key, Fraction] = {}
        for k1, c1 in self._terms.items():
            for k2, c2 in other._terms.items():
                k = _mul_keys(k1, k2)
                out[k] = out.get(k, 0) + c1 * c2
        return DiffPoly(out)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, (int, Fraction)):
            return self * (Fraction(1) / Fraction(other))
        if isinstance(other, DiffPoly):
            # only single-term constants (a coefficient times parameter powers) invert
            if len(other._terms) == 1:
                (key, c), = other._terms.items()
                if not key[0] and not key[1] and not key[2]:
                    inv = ((), (), (), tuple((n, -e) for n, e in key[3]))
                    return self * DiffPoly({inv: 1 / c})
            raise ZeroDivisionError(f"cannot divide by {other}")
        return NotImplemented

    def __pow__(self, n: int):
        if not isinstance(n, int):
            return NotImplemented
        if n < 0:
            return DiffPoly.constant(1) / self ** (-n)
        out = DiffPoly.constant(1)
        for _ in range(n):
            out = out * self
        return out

    # -- inspection -------------------------------------------------------
    def is_constant(self) -> bool:
        """True when no term depends on U (parameters are allowed)."""
        return all(not k[0] and not k[1] and not k[2] for k in self._terms)

    def is_average_only(self) -> bool:
        """True when every term is a product of averages and parameters."""
        return all(not k[0] and not k[2] for k in self._terms)

    def has_primitives(self) -> bool:
        return any(k[2] for k in self._terms)

    def has_averages(self) -> bool:
        return any(k[1] for k in self._terms)

    def variables(self) -> set:
        return {name for k in self._terms for _, name in k[0]}

    def parameters(self) -> set:
        return {name for k in self._terms for name, _ in k[3]}

    def max_order(self) -> int:
        return max((o for k in self._terms for o, _ in k[0]), default=-1)

    def rational(self) -> Fraction:
        """The value of a parameter-free constant."""
        if not self._terms:
            return Fraction(0)
        if set(self._terms) != {_EMPTY}:
            raise ValueError(f"{self} is not a rational constant")
        return self._terms[_EMPTY]

    def substitute(self, values: Mapping[str, Scalar | "DiffPoly"]) -> "DiffPoly":
        """Replace formal parameters by rationals or constant DiffPolys."""
        out = DiffPoly()
        for key, c in self._terms.items():
            keep = []
            factor = DiffPoly.constant(c)
            for name, e in key[3]:
                if name in values:
                    val = values[name]
                    val = DiffPoly._coerce(val) if not isinstance(val, DiffPoly) else val
                    factor = factor * val ** e
                else:
                    keep.append((name, e))
            out = out + factor * DiffPoly({(key[0], key[1], key[2], tuple(keep)): 1})
        return out

    def split_parameters(self) -> Dict[Key, "DiffPoly"]:
        """Group terms by U-signature; values are the parameter coefficients."""
        groups: Dict[Key, Dict[Key, Fraction]] = {}
        for key, c in self._terms.items():
            sig = (key[0], key[1], key[2], ())
            groups.setdefault(sig, {})[((), (), (), key[3])] = c
        return {sig: DiffPoly(g) for sig, g in groups.items()}


def _mono(key: Key, c: Scalar = 1) -> DiffPoly:
    return DiffPoly({key: Fraction(c)})


def _from_derivs(d: Derivs, c: Scalar = 1) -> DiffPoly:
    return DiffPoly({(d, (), (), ()): Fraction(c)})


# ---------------------------------------------------------------------------
# differentiation


def _dx_key(key: Key) -> Dict[Key, Fraction]:
    derivs, avgs, prims, params = key
    out: Dict[Key, Fraction] = {}
    for f in set(derivs):
        mult = derivs.count(f)
        rest = _remove_one(derivs, f)
        nk = (_merge(rest, ((f[0] + 1, f[1]),)), avgs, prims, params)
        out[nk] = out.get(nk, 0) + mult
    for p in set(prims):
        mult = prims.count(p)
        rest = _remove_one(prims, p)
        # d/dx pr(m) = m - av(m)
        k1 = (_merge(derivs, p), avgs, rest, params)
        out[k1] = out.get(k1, 0) + mult
        k2 = (derivs, _merge(avgs, (p,)), rest, params)
        out[k2] = out.get(k2, 0) - mult
    return out


def dx(p: DiffPoly, times: int = 1) -> DiffPoly:
    """Total x-derivative (Leibniz rule; averages are constants)."""
    for _ in range(times):
        out: Dict[Key, Fraction] = {}
        for key, c in p.items():
            for k, m in _dx_key(key).items():
                out[k] = out.get(k, 0) + c * m
        p = DiffPoly(out)
    return p


# ---------------------------------------------------------------------------
# integration by parts


@functools.lru_cache(maxsize=None)
def ibp_reduce(derivs: Derivs):
    """Split a product of derivative factors as ``D(S) + R``.

    Returns ``(S, R)`` as tuples of ``(derivs, Fraction)`` pairs.  ``R`` is a
    combination of irreducible monomials: the empty product (a constant), pure
    powers ``u^n``, or products whose highest derivative occurs at least twice.
    The reduction applied is::

        Q * u_{(k-1)x}^j * u_{kx} = D(Q u_{(k-1)x}^{j+1})/(j+1) - D(Q) u_{(k-1)x}^{j+1}/(j+1)

    with every factor of ``Q`` of order below ``k - 1``; it strictly lowers the
    highest order, so the recursion terminates.
    """
    if any(name != "u" for _, name in derivs):
        raise NotImplementedError("integration by parts is implemented for u only")
    if not derivs:
        return (), (((), Fraction(1)),)
    k = max(o for o, _ in derivs)
    if k == 0 or derivs.count((k, "u")) >= 2:
        return (), ((derivs, Fraction(1)),)
    rest = _remove_one(derivs, (k, "u"))
    j = rest.count((k - 1, "u"))
    q = tuple(f for f in rest if f[0] < k - 1)
    lifted = ((k - 1, "u"),) * (j + 1)
    scale = Fraction(1, j + 1)
    S: Dict[Derivs, Fraction] = {_merge(q, lifted): scale}
    R: Dict[Derivs, Fraction] = {}
    if q:
        for dkey, c in _dx_key((q, (), (), ())).items():
            s2, r2 = ibp_reduce(_merge(dkey[0], lifted))
            for d, c2 in s2:
                S[d] = S.get(d, 0) - scale * c * c2
            for d, c2 in r2:
                R[d] = R.get(d, 0) - scale * c * c2
    return (
        tuple((d, c) for d, c in S.items() if c != 0),
        tuple((d, c) for d, c in R.items() if c != 0),
    )


def _average_symbol(d: Derivs) -> DiffPoly:
    if not d:
        return DiffPoly.constant(1)
    return _mono(((), (d,), (), ()))


def _avg_derivs(d: Derivs) -> DiffPoly:
    """Average of a bare product of derivative factors."""
    out = DiffPoly()
    for r, c in ibp_reduce(d)[1]:
        out = out + _average_symbol(r) * c
    return out


def average(p: DiffPoly) -> DiffPoly:
    """``<p>``: the integral over the circle, in canonical form."""
    out = DiffPoly()
    for (derivs, avgs, prims, params), c in p.items():
        const = _mono(((), avgs, (), params), c)
        if not prims:
            out = out + const * _avg_derivs(derivs)
        elif len(prims) == 1:
            n0 = prims[0]
            S, R = ibp_reduce(derivs)
            # <Q pr(n0)> = -<S (n0 - <n0>)> + <R pr(n0)>
            acc = DiffPoly()
            for s, cs in S:
                acc = acc - cs * (_avg_derivs(_merge(s, n0)) - _avg_derivs(s) * _average_symbol(n0))
            for r, cr in R:
                if r and r != n0:
                    raise PrimitiveError(
                        f"average of {to_text(_from_derivs(r))}*pr({to_text(_from_derivs(n0))}) "
                        "has no primitive-free form"
                    )
            out = out + const * acc
        else:
            raise PrimitiveError("average of a product of primitives")
    return out


def canonicalize(p: DiffPoly) -> DiffPoly:
    """Return the canonical form of ``p``.

    Values are kept canonical on construction, so this only re-normalises
    average and primitive keys that were built by hand.
    """
    out = DiffPoly()
    for (derivs, avgs, prims, params), c in p.items():
        term = _mono((derivs, (), (), params), c)
        for a in avgs:
            term = term * _avg_derivs(a)
        for n in prims:
            term = term * primitive(_from_derivs(n))
        out = out + term
    return out


def _pr_symbol(d: Derivs) -> DiffPoly:
    return _mono(((), (), (d,), ()))


def antiderivative(p: DiffPoly) -> DiffPoly:
    """The unique zero-average ``q`` with ``dx(q) == p``.

    Exact integration is attempted first; whatever is left over is carried by
    primitive factors ``pr(m)`` of irreducible monomials.  Raises
    :class:`ValueError` when ``<p> != 0``.
    """
    if average(p):
        raise ValueError(f"antiderivative needs a zero-average integrand; <p> = {average(p)}")
    out = DiffPoly()
    for (derivs, avgs, prims, params), c in p.items():
        const = _mono(((), avgs, (), params), c)
        S, R = ibp_reduce(derivs)
        if not prims:
            for s, cs in S:
                out = out + const * _from_derivs(s, cs)
            for r, cr in R:
                if r:
                    out = out + const * _pr_symbol(r) * cr
        elif len(prims) == 1:
            n0 = prims[0]
            if any(True for _ in R):
                raise PrimitiveError("integrand needs a primitive of a primitive")
            # Q pr(n0) = D(S pr(n0)) - S (n0 - <n0>)
            pn = _pr_symbol(n0)
            rest = DiffPoly()
            for s, cs in S:
                out = out + const * _from_derivs(s, cs) * pn
                rest = rest + _from_derivs(s, cs) * (_from_derivs(n0) - _average_symbol(n0))
            rest = rest - average(rest)
            out = out - const * antiderivative(rest)
        else:
            raise PrimitiveError("integrand has several primitive factors")
    return out - average(out)


def primitive(p: DiffPoly) -> DiffPoly:
    """``pr(p)``: the zero-average primitive of ``p - <p>``."""
    return antiderivative(p - average(p))


# ---------------------------------------------------------------------------
# Gateaux derivative and Lie bracket


def gateaux(f: DiffPoly, g: DiffPoly, var: str = "u") -> DiffPoly:
    """Directional derivative ``f'(U) g`` of ``f`` with respect to ``var``."""
    dcache: Dict[int, DiffPoly] = {}

    def dg(k):
        if k not in dcache:
            dcache[k] = g if k == 0 else dx(dg(k - 1))
        return dcache[k]

    out = DiffPoly()
    for key, c in f.items():
        derivs, avgs, prims, params = key
        for fac in set(derivs):
            if fac[1] != var:
                continue
            mult = derivs.count(fac)
            rest = (_remove_one(derivs, fac), avgs, prims, params)
            out = out + _mono(rest, c * mult) * dg(fac[0])
        if var != "u":
            continue
        for a in set(avgs):
            mult = avgs.count(a)
            rest = (derivs, _remove_one(avgs, a), prims, params)
            out = out + _mono(rest, c * mult) * average(gateaux(_from_derivs(a), g))
        for n in set(prims):
            mult = prims.count(n)
            rest = (derivs, avgs, _remove_one(prims, n), params)
            out = out + _mono(rest, c * mult) * primitive(gateaux(_from_derivs(n), g))
    return out


def lie_bracket(f: DiffPoly, g: DiffPoly) -> DiffPoly:
    """``[f, g] = f'(U) g - g'(U) f``."""
    return gateaux(f, g) - gateaux(g, f)


# ---------------------------------------------------------------------------
# truncated h-series


class HSeries:
    """Even power series in ``h`` with DiffPoly coefficients, truncated at ``h**order``."""

    __slots__ = ("coeffs", "order")

    def __init__(self, coeffs: Mapping[int, DiffPoly | Scalar] | None = None, order: int = 8):
        self.order = order
        self.coeffs: Dict[int, DiffPoly] = {}
        for e, c in (coeffs or {}).items():
            if e % 2 or e < 0:
                raise ValueError(f"exponent {e} is not a non-negative even integer")
            c = DiffPoly._coerce(c)
            if e < order and c:
                self.coeffs[e] = c

    def __getitem__(self, e: int) -> DiffPoly:
        return self.coeffs.get(e, DiffPoly())

    def __eq__(self, other):
        if not isinstance(other, HSeries):
            return NotImplemented
        return self.coeffs == other.coeffs

    def __repr__(self):
        body = ", ".join(f"h^{e}: {to_text(c)}" for e, c in sorted(self.coeffs.items()))
        return f"HSeries({{{body}}}, order={self.order})"

    def _lift(self, other) -> "HSeries":
        if isinstance(other, HSeries):
            return other
        return HSeries({0: other}, self.order)

    def __add__(self, other):
        other = self._lift(other)
        order = min(self.order, other.order)
        keys = set(self.coeffs) | set(other.coeffs)
        return HSeries({e: self[e] + other[e] for e in keys}, order)

    __radd__ = __add__

    def __neg__(self):
        return HSeries({e: -c for e, c in self.coeffs.items()}, self.order)

    def __sub__(self, other):
        return self + (-self._lift(other))

    def __mul__(self, other):
        other = self._lift(other)
        order = min(self.order, other.order)
        out: Dict[int, DiffPoly] = {}
        for e1, c1 in self.coeffs.items():
            for e2, c2 in other.coeffs.items():
                if e1 + e2 < order:
                    out[e1 + e2] = out.get(e1 + e2, DiffPoly()) + c1 * c2
        return HSeries(out, order)

    __rmul__ = __mul__

    def map(self, fn) -> "HSeries":
        return HSeries({e: fn(c) for e, c in self.coeffs.items()}, self.order)

    def truncate(self, order: int) -> "HSeries":
        return HSeries(self.coeffs, min(order, self.order))


def hseries_compose(F: HSeries, c: HSeries, var: str = "v") -> HSeries:
    """Substitute the series ``c`` for the second argument ``var`` of ``F``.

    ``F`` is polynomial in ``var`` and its derivatives, so substitution of
    ``dx^k(c)`` for every ``var_kx`` factor is the full Taylor expansion; terms
    of order ``h**8`` and beyond are dropped.
    """
    if c[0]:
        raise ValueError("substituted series must have no order-0 part")
    order = min(F.order, c.order)
    dcache: Dict[int, HSeries] = {0: c}

    def dc(k):
        if k not in dcache:
            dcache[k] = dc(k - 1).map(dx)
        return dcache[k]

    out = HSeries({}, order)
    for e, poly in F.coeffs.items():
        for (derivs, avgs, prims, params), coef in poly.items():
            keep = tuple(f for f in derivs if f[1] != var)
            term = HSeries({e: _mono((keep, avgs, prims, params), coef)}, order)
            for o, name in derivs:
                if name == var:
                    term = term * dc(o)
            out = out + term
    return out


# ---------------------------------------------------------------------------
# text format

_TOKEN = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<var>[uv](?:_(?P<ord>-?\d*)x)?)(?![A-Za-z0-9_])
  | (?P<num>\d+(?:/\d*)?)
  | (?P<name>[A-Za-z][A-Za-z0-9]*)
  | (?P<op>[-+*^(),])
    """,
    re.VERBOSE,
)


def _tokenize(text: str):
    pos = 0
    toks = []
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", pos)
        kind = m.lastgroup if m.lastgroup != "ord" else "var"
        if m.group("var") is not None:
            kind = "var"
        if kind != "ws":
            toks.append((kind, m.group(0), pos, m))
        pos = m.end()
    toks.append(("end", "", len(text), None))
    return toks


class _Parser:
    def __init__(self, text):
        self.toks = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i]

    def take(self, value=None):
        tok = self.toks[self.i]
        if value is not None and tok[1] != value:
            raise ParseError(f"expected {value!r}, found {tok[1] or 'end of input'!r}", tok[2])
        self.i += 1
        return tok

    def expr(self):
        sign = 1
        if self.peek()[1] in "+-" and self.peek()[0] == "op":
            sign = -1 if self.take()[1] == "-" else 1
        out = self.product() * sign
        while self.peek()[0] == "op" and self.peek()[1] in "+-":
            op = self.take()[1]
            rhs = self.product()
            out = out + rhs if op == "+" else out - rhs
        return out

    def product(self):
        out = self.power()
        while self.peek()[1] == "*":
            self.take()
            out = out * self.power()
        return out

    def power(self):
        start = self.peek()[2]
        base, is_param = self.atom()
        if self.peek()[1] == "^":
            self.take()
            neg = False
            if self.peek()[1] == "-":
                self.take()
                neg = True
            tok = self.take()
            if tok[0] != "num" or "/" in tok[1]:
                raise ParseError("exponent must be an integer", tok[2])
            n = int(tok[1])
            if neg:
                if not is_param:
                    raise ParseError("negative exponent on a non-parameter", start)
                n = -n
            base = base ** n
        return base

    def atom(self):
        kind, text, pos, m = self.take()
        if kind == "num":
            if "/" in text:
                p, q = text.split("/")
                if not q:
                    raise ParseError("malformed rational", pos)
                if int(q) == 0:
                    raise ParseError("zero denominator", pos)
                return DiffPoly.constant(Fraction(int(p), int(q))), False
            return DiffPoly.constant(int(text)), False
        if kind == "var":
            ordtxt = m.group("ord")
            name = text[0]
            if ordtxt is None:
                return DiffPoly.var(0, name), False
            if ordtxt.startswith("-"):
                raise ParseError("negative derivative order", pos)
            return DiffPoly.var(int(ordtxt) if ordtxt else 1, name), False
        if kind == "name":
            if text in ("av", "pr"):
                self.take("(")
                inner = self.expr()
                self.take(")")
                return (average(inner) if text == "av" else primitive(inner)), False
            return DiffPoly.param(text), True
        if text == "(":
            inner = self.expr()
            self.take(")")
            return inner, False
        raise ParseError(f"unexpected {text or 'end of input'!r}", pos)


def parse(text: str) -> DiffPoly:
    """Parse expression text into a canonical DiffPoly.

    >>> to_text(parse("6*u*u_x + u_3x"))
    'u_3x + 6*u*u_x'
    """
    p = _Parser(text)
    out = p.expr()
    tok = p.peek()
    if tok[0] != "end":
        raise ParseError(f"unexpected {tok[1]!r}", tok[2])
    return out


def _factor_text(d: Factor) -> str:
    o, name = d
    if o == 0:
        return name
    if o == 1:
        return f"{name}_x"
    return f"{name}_{o}x"


def _derivs_text(d: Derivs) -> str:
    parts = []
    for f in sorted(set(d)):
        n = d.count(f)
        parts.append(_factor_text(f) + (f"^{n}" if n > 1 else ""))
    return "*".join(parts)


def _key_text(key: Key) -> str:
    derivs, avgs, prims, params = key
    parts = [f"{n}^{e}" if e != 1 else n for n, e in params]
    for a in sorted(set(avgs), key=lambda d: _sort_key((d, (), (), ()))):
        n = avgs.count(a)
        parts.append(f"av({_derivs_text(a)})" + (f"^{n}" if n > 1 else ""))
    if derivs:
        parts.append(_derivs_text(derivs))
    for q in sorted(set(prims), key=lambda d: _sort_key((d, (), (), ()))):
        n = prims.count(q)
        parts.append(f"pr({_derivs_text(q)})" + (f"^{n}" if n > 1 else ""))
    return "*".join(parts)


def to_text(p: DiffPoly) -> str:
    """Deterministic canonical text; ``parse(to_text(p)) == p``."""
    if not p:
        return "0"
    out = []
    for i, (key, c) in enumerate(p.terms):
        body = _key_text(key)
        mag = abs(c)
        if not body:
            s = str(mag)
        elif mag == 1:
            s = body
        else:
            s = f"{mag}*{body}"
        if i == 0:
            out.append(("-" if c < 0 else "") + s)
        else:
            out.append((" - " if c < 0 else " + ") + s)
    return "".join(out)


def as_poly(x: Union[str, Scalar, DiffPoly]) -> DiffPoly:
    """Coerce text, numbers or DiffPolys to a DiffPoly."""
    if isinstance(x, str):
        return parse(x)
    return DiffPoly._coerce(x)


def linear_combination(coeffs: Iterable, polys: Iterable[DiffPoly]) -> DiffPoly:
    out = DiffPoly()
    for c, p in zip(coeffs, polys):
        out = out + c * p
    return out
