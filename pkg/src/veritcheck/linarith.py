"""Exact linear arithmetic: atoms, Fourier-Motzkin elimination with
integer tightening, and replayable unsatisfiability certificates.

Everything is computed over Fraction; no floating point.  An UNSAT
answer carries a derivation certificate (nonnegative combinations plus
explicit tightening steps) that verify_certificate replays exactly; a
SAT answer carries a rational witness.  Both are re-checked before
fm_decide returns, so an unsound answer cannot escape.

Tightening divides an all-integer inequality by the gcd of its
coefficients and rounds the constant toward the feasible side, which is
what lets the elimination refute integer systems whose rational
relaxation alone would need different coefficient combinations.  A
tightened atom is stronger than the original over the rationals, so
witnesses found through tightened atoms still satisfy the input system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import NonlinearError
from .terms import INT, REAL, App, Binder, Const, Var

LE = "<="
LT = "<"
EQ = "="
NE = "!="

_MAX_ACTIVE = 50000
_MAX_BRANCHES = 256


@dataclass(eq=True)
class LinearAtom:
    """A canonical (in)equality: sum of coeff*var `relation` constant."""

    coeffs: dict
    constant: Fraction
    relation: str
    int_vars: frozenset = frozenset()

    def __post_init__(self):
        self.coeffs = {k: Fraction(v) for k, v in self.coeffs.items()
                       if v != 0}
        self.constant = Fraction(self.constant)
        self.int_vars = frozenset(self.int_vars) & set(self.coeffs)

    @property
    def is_ground(self):
        return not self.coeffs

    @property
    def ground_true(self):
        if self.coeffs:
            raise ValueError("atom is not ground")
        if self.relation == LE:
            return self.constant >= 0
        if self.relation == LT:
            return self.constant > 0
        return self.constant == 0

    @property
    def all_int(self):
        return set(self.coeffs) <= self.int_vars

    def negated(self):
        if self.relation == LE:
            return LinearAtom({k: -v for k, v in self.coeffs.items()},
                              -self.constant, LT, self.int_vars)
        if self.relation == LT:
            return LinearAtom({k: -v for k, v in self.coeffs.items()},
                              -self.constant, LE, self.int_vars)
        raise ValueError(f"cannot negate relation {self.relation}")

    def __repr__(self):
        lhs = " + ".join(f"{v}*{k}" for k, v in sorted(
            self.coeffs.items(), key=lambda kv: str(kv[0]))) or "0"
        return f"({lhs} {self.relation} {self.constant})"


def combine(parts) -> LinearAtom:
    """Nonnegative linear combination of <= / < atoms."""
    coeffs = {}
    constant = Fraction(0)
    strict = False
    int_vars = set()
    for atom, mult in parts:
        if mult < 0:
            raise ValueError("negative multiplier in combination")
        if mult == 0:
            continue
        if atom.relation == EQ:
            raise ValueError("combine expects inequalities only")
        for key, value in atom.coeffs.items():
            coeffs[key] = coeffs.get(key, Fraction(0)) + mult * value
        constant += mult * atom.constant
        strict = strict or atom.relation == LT
        int_vars |= atom.int_vars
    return LinearAtom(coeffs, constant, LT if strict else LE, int_vars)


def integer_tighten(atom: LinearAtom) -> LinearAtom:
    """Divide by the coefficient gcd and round toward feasibility.

    Only sound when every variable of the atom is integer-sorted; atoms
    with any real variable are returned unchanged.  Strict inequalities
    become non-strict (x < k implies x <= ceil(k)-1 over the integers);
    an equality whose constant is not divisible becomes ground-false.
    """
    if not atom.coeffs or not atom.all_int:
        return atom
    scale = math.lcm(*(value.denominator for value in atom.coeffs.values()))
    coeffs = {k: v * scale for k, v in atom.coeffs.items()}
    constant = atom.constant * scale
    g = math.gcd(*(abs(int(v)) for v in coeffs.values()))
    coeffs = {k: Fraction(int(v) // g) for k, v in coeffs.items()}
    constant = constant / g
    if atom.relation == EQ:
        if constant.denominator != 1:
            return LinearAtom({}, Fraction(-1), LE, frozenset())
        return LinearAtom(coeffs, constant, EQ, atom.int_vars)
    if atom.relation == LT:
        constant = Fraction(math.ceil(constant) - 1)
    else:
        constant = Fraction(math.floor(constant))
    return LinearAtom(coeffs, constant, LE, atom.int_vars)


# ----------------------------------------------------------------------
# certificates

@dataclass(frozen=True)
class CertStep:
    """One derivation step: a combination of earlier atoms (references
    below the input count point into the input system) or a tightening
    of a single earlier atom."""

    sources: tuple  # ((ref, multiplier), ...)
    tightened: bool
    result: LinearAtom


@dataclass(frozen=True)
class FarkasCertificate:
    steps: tuple

    def input_multipliers(self, n_inputs):
        """Flatten to one multiplier per input atom.

        Only possible when no tightening step intervenes (rounding is
        not a linear operation); returns None otherwise.
        """
        if any(step.tightened for step in self.steps):
            return None
        vectors = []
        for step in self.steps:
            vec = [Fraction(0)] * n_inputs
            for ref, mult in step.sources:
                if ref < n_inputs:
                    vec[ref] += mult
                else:
                    prior = vectors[ref - n_inputs]
                    for i, v in enumerate(prior):
                        vec[i] += mult * v
            vectors.append(vec)
        return vectors[-1] if vectors else None


def verify_certificate(system, cert: FarkasCertificate) -> bool:
    """Replay the derivation exactly; True iff every step reproduces its
    claimed atom with nonnegative multipliers and the final atom is a
    ground contradiction."""
    n = len(system)
    derived = []

    def lookup(ref):
        if 0 <= ref < n:
            return system[ref]
        if n <= ref < n + len(derived):
            return derived[ref - n]
        raise ValueError("certificate references a future step")

    try:
        for step in cert.steps:
            if step.tightened:
                if len(step.sources) != 1 or step.sources[0][1] != 1:
                    return False
                atom = integer_tighten(lookup(step.sources[0][0]))
            else:
                atom = combine((lookup(ref), mult)
                               for ref, mult in step.sources)
            if atom != step.result:
                return False
            derived.append(atom)
    except ValueError:
        return False
    if not derived:
        return False
    final = derived[-1]
    return final.is_ground and not final.ground_true


# ----------------------------------------------------------------------
# the elimination

@dataclass
class FmResult:
    status: str  # "sat" or "unsat"
    witness: dict | None = None
    certificate: FarkasCertificate | None = None

    @property
    def is_unsat(self):
        return self.status == "unsat"


class _Trace:
    """Derivation DAG built during elimination."""

    def __init__(self, system):
        self.n_inputs = len(system)
        self.nodes = []  # (kind, payload, atom)
        for i, atom in enumerate(system):
            self.nodes.append(("input", i, atom))

    def add_combine(self, parts, atom):
        ref = len(self.nodes)
        self.nodes.append(("combine", tuple(parts), atom))
        return ref

    def add_tighten(self, source_ref, atom):
        ref = len(self.nodes)
        self.nodes.append(("tighten", source_ref, atom))
        return ref

    def atom(self, ref):
        return self.nodes[ref][2]

    def certificate(self, root_ref) -> FarkasCertificate:
        """Serialise the sub-DAG below root_ref into replayable steps."""
        order = []
        seen = set()

        def visit(ref):
            if ref in seen:
                return
            seen.add(ref)
            kind, payload, _ = self.nodes[ref]
            if kind == "combine":
                for src, _ in payload:
                    visit(src)
            elif kind == "tighten":
                visit(payload)
            if kind != "input":
                order.append(ref)

        visit(root_ref)
        if not order:
            # a ground-false input: emit a trivial 1x combination
            order = [root_ref]
            kind, payload, atom = self.nodes[root_ref]
            step = CertStep(((payload, Fraction(1)),), False, atom)
            return FarkasCertificate((step,))
        renumber = {}
        for i in range(self.n_inputs):
            renumber[i] = i
        steps = []
        for ref in order:
            kind, payload, atom = self.nodes[ref]
            if kind == "tighten":
                sources = ((renumber[payload], Fraction(1)),)
                steps.append(CertStep(sources, True, atom))
            else:
                sources = tuple((renumber[src], mult)
                                for src, mult in payload)
                steps.append(CertStep(sources, False, atom))
            renumber[ref] = self.n_inputs + len(steps) - 1
        return FarkasCertificate(tuple(steps))


def fm_decide(system, tighten: bool = False) -> FmResult:
    """Decide a system of <= / < atoms by variable elimination.

    Complete over the rationals; with tighten=True, derived all-integer
    atoms are gcd-tightened, which refutes many integer-infeasible
    systems the rational relaxation satisfies.  UNSAT answers carry a
    certificate and SAT answers a witness; both are verified here
    before returning.
    """
    system = list(system)
    for atom in system:
        if atom.relation not in (LE, LT):
            raise ValueError("fm_decide expects <= / < atoms; split "
                             "equalities and disequalities first")
    trace = _Trace(system)
    active = []  # refs

    def admit(ref):
        """Tighten, test groundness; returns a contradiction ref or
        None after possibly adding the atom to the active set."""
        atom = trace.atom(ref)
        if tighten and atom.coeffs and atom.all_int:
            tightened = integer_tighten(atom)
            if tightened != atom:
                ref = trace.add_tighten(ref, tightened)
                atom = tightened
        if atom.is_ground:
            if atom.ground_true:
                return None
            return ref
        active.append(ref)
        return None

    def unsat(ref):
        cert = trace.certificate(ref)
        if not verify_certificate(system, cert):
            raise RuntimeError("internal error: emitted certificate does "
                               "not verify")
        return FmResult("unsat", certificate=cert)

    for i in range(len(system)):
        bad = admit(i)
        if bad is not None:
            return unsat(bad)

    eliminations = []  # (var, lower atoms, upper atoms) for the witness
    while True:
        variables = {}
        for ref in active:
            for key, value in trace.atom(ref).coeffs.items():
                lowers, uppers = variables.setdefault(key, ([], []))
                (uppers if value > 0 else lowers).append(ref)
        if not variables:
            break
        var, (lowers, uppers) = min(
            variables.items(),
            key=lambda kv: (len(kv[1][0]) * len(kv[1][1]), str(kv[0])))
        involved = set(lowers) | set(uppers)
        active = [ref for ref in active if ref not in involved]
        eliminations.append((var,
                             [trace.atom(r) for r in lowers],
                             [trace.atom(r) for r in uppers]))
        for lref in lowers:
            latom = trace.atom(lref)
            beta = -latom.coeffs[var]
            for uref in uppers:
                uatom = trace.atom(uref)
                alpha = uatom.coeffs[var]
                parts = ((lref, alpha), (uref, beta))
                atom = combine(((latom, alpha), (uatom, beta)))
                ref = trace.add_combine(parts, atom)
                bad = admit(ref)
                if bad is not None:
                    return unsat(bad)
                if len(active) > _MAX_ACTIVE:
                    raise NonlinearError("elimination blow-up")

    witness = _back_substitute(eliminations)
    for atom in system:
        if not _satisfies(atom, witness):
            raise RuntimeError("internal error: witness fails the system")
    return FmResult("sat", witness=witness)


def _evaluate(atom, witness):
    total = Fraction(0)
    for key, value in atom.coeffs.items():
        total += value * witness[key]
    return total


def _satisfies(atom, witness):
    total = _evaluate(atom, witness)
    if atom.relation == LE:
        return total <= atom.constant
    if atom.relation == LT:
        return total < atom.constant
    if atom.relation == EQ:
        return total == atom.constant
    return total != atom.constant


def _back_substitute(eliminations) -> dict:
    witness = {}
    for var, lowers, uppers in reversed(eliminations):
        lo, lo_strict = None, False
        hi, hi_strict = None, False
        for atom in lowers:
            c = atom.coeffs[var]  # c < 0
            rest = sum((v * witness[k] for k, v in atom.coeffs.items()
                        if k != var), Fraction(0))
            bound = (atom.constant - rest) / c  # inequality flips: lower
            strict = atom.relation == LT
            if lo is None or bound > lo or (bound == lo and strict):
                lo, lo_strict = bound, strict
        for atom in uppers:
            c = atom.coeffs[var]  # c > 0
            rest = sum((v * witness[k] for k, v in atom.coeffs.items()
                        if k != var), Fraction(0))
            bound = (atom.constant - rest) / c
            strict = atom.relation == LT
            if hi is None or bound < hi or (bound == hi and strict):
                hi, hi_strict = bound, strict
        if lo is None and hi is None:
            witness[var] = Fraction(0)
        elif lo is None:
            witness[var] = hi - 1
        elif hi is None:
            witness[var] = lo + 1
        elif lo == hi:
            # both bounds non-strict, else elimination would have found
            # the ground contradiction
            witness[var] = lo
        else:
            witness[var] = (lo + hi) / 2
    return witness


# ----------------------------------------------------------------------
# from terms to atoms

_REL_HEADS = {"<", "<=", ">", ">=", "="}


def atom_of_term(store, term) -> LinearAtom:
    """Canonicalise an arithmetic (in)equality literal.

    Leading negations flip the relation; everything moves to the left
    of the relation.  Non-arithmetic maximal subterms act as opaque
    variables keyed by their normal-form id, so implicitly reoriented
    equalities share atoms.  The returned relation may be != (from a
    negated equality); split those before calling fm_decide.
    """
    core, parity = store.polarity(term)
    node = store.as_app(core)
    if node is None or node.head not in _REL_HEADS or len(node.args) != 2:
        raise NonlinearError("not a binary arithmetic relation")
    if node.head == "=" and store.sort(node.args[0]) not in (INT, REAL):
        raise NonlinearError("equality between non-arithmetic terms")
    left = _linear_form(store, node.args[0])
    right = _linear_form(store, node.args[1])
    coeffs = dict(left[0])
    for key, value in right[0].items():
        coeffs[key] = coeffs.get(key, Fraction(0)) - value
    constant = right[1] - left[1]
    int_vars = frozenset(k for k in coeffs if _key_is_int(store, k))
    relation = {"<": LT, "<=": LE, ">": LT, ">=": LE, "=": EQ}[node.head]
    if node.head in (">", ">="):
        coeffs = {k: -v for k, v in coeffs.items()}
        constant = -constant
    atom = LinearAtom(coeffs, constant, relation, int_vars)
    if parity % 2 == 0:
        return atom
    if atom.relation == EQ:
        return LinearAtom(atom.coeffs, atom.constant, NE, atom.int_vars)
    return atom.negated()


def _key_is_int(store, key):
    return store.sort(key) is INT


def _linear_form(store, term):
    """(coeffs, constant) of an arithmetic term; opaque subterms become
    variables keyed by their normal form."""
    node = store.node(term)
    if isinstance(node, Const) and node.sort in (INT, REAL):
        return {}, Fraction(node.value)
    if isinstance(node, App) and node.head == "+":
        coeffs, constant = {}, Fraction(0)
        for arg in node.args:
            c, k = _linear_form(store, arg)
            for key, value in c.items():
                coeffs[key] = coeffs.get(key, Fraction(0)) + value
            constant += k
        return coeffs, constant
    if isinstance(node, App) and node.head == "-":
        if len(node.args) == 1:
            c, k = _linear_form(store, node.args[0])
            return {key: -value for key, value in c.items()}, -k
        coeffs, constant = _linear_form(store, node.args[0])
        coeffs = dict(coeffs)
        for arg in node.args[1:]:
            c, k = _linear_form(store, arg)
            for key, value in c.items():
                coeffs[key] = coeffs.get(key, Fraction(0)) - value
            constant -= k
        return coeffs, constant
    if isinstance(node, App) and node.head == "*":
        forms = [_linear_form(store, arg) for arg in node.args]
        scalars = [k for c, k in forms if not c]
        linears = [(c, k) for c, k in forms if c]
        if len(linears) > 1:
            raise NonlinearError("product of non-constant terms")
        factor = Fraction(1)
        for s in scalars:
            factor *= s
        if not linears:
            return {}, factor
        coeffs, constant = linears[0]
        return ({key: value * factor for key, value in coeffs.items()},
                constant * factor)
    if isinstance(node, App) and node.head == "/":
        num = _linear_form(store, node.args[0])
        den = _linear_form(store, node.args[1])
        if den[0]:
            raise NonlinearError("division by a non-constant")
        if den[1] == 0:
            raise NonlinearError("division by zero")
        return ({key: value / den[1] for key, value in num[0].items()},
                num[1] / den[1])
    if store.sort(term) in (INT, REAL):
        key = store.normal(term)
        return {key: Fraction(1)}, Fraction(0)
    raise NonlinearError("non-arithmetic subterm in a linear atom")


def split_system(atoms) -> list:
    """Expand = into two inequalities and != into case splits.

    Returns the list of pure <= / < systems whose disjunction is
    equisatisfiable with the conjunction of the input atoms.
    """
    base = []
    disequalities = []
    for atom in atoms:
        if atom.relation == EQ:
            base.append(LinearAtom(atom.coeffs, atom.constant, LE,
                                   atom.int_vars))
            base.append(LinearAtom({k: -v for k, v in atom.coeffs.items()},
                                   -atom.constant, LE, atom.int_vars))
        elif atom.relation == NE:
            disequalities.append(atom)
        else:
            base.append(atom)
    systems = [base]
    for atom in disequalities:
        lt = LinearAtom(atom.coeffs, atom.constant, LT, atom.int_vars)
        gt = LinearAtom({k: -v for k, v in atom.coeffs.items()},
                        -atom.constant, LT, atom.int_vars)
        systems = [sys + [branch] for sys in systems for branch in (lt, gt)]
        if len(systems) > _MAX_BRANCHES:
            raise NonlinearError("too many disequality case splits")
    return systems


def system_all_int(atoms) -> bool:
    return all(atom.all_int for atom in atoms if atom.coeffs)
