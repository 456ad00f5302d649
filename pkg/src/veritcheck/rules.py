"""Per-rule validation of proof steps.

Each step is checked against its rule's semantics modulo exactly the
implicit transformations the solver may apply silently: dropped
duplicate literals, extra or missing double negations, and reoriented
equalities.  Template rules are matched structurally first; when that
fails, a clause that is a propositional tautology over its Boolean
skeleton is still accepted (sound, and tolerant of schema variants).
Resolution is validated as propositional entailment of the literal
abstraction, decided by an internal backtracking procedure.
"""

from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field

from . import linarith
from .errors import NonlinearError, VeritCheckError
from .graph import ProofDag, context_at, sigma_of
from .parser import Anchor, Assume, BindingArg, DefineFun, Mapped, Step
from .report import (CheckReport, Diagnostic, StepResult, codes, invalid,
                     unchecked, valid)
from .terms import BOOL, INT, REAL, App, Binder, Const, Substitution, Var

# rule name -> checker family; every rule of the reference catalogue has
# an entry (the and_neq spelling of the catalogue is registered next to
# the expected and_neg)
RULE_KINDS = {
    "true": "template", "false": "template",
    "and_pos": "template", "and_neg": "template", "and_neq": "template",
    "or_pos": "template", "or_neg": "template",
    "implies_pos": "template", "implies_neg1": "template",
    "implies_neg2": "template",
    "equiv_pos1": "template", "equiv_pos2": "template",
    "equiv_neg1": "template", "equiv_neg2": "template",
    "ite_pos1": "template", "ite_pos2": "template",
    "ite_neg1": "template", "ite_neg2": "template",
    "ite1": "template", "ite2": "template",
    "not_ite1": "template", "not_ite2": "template",
    "xor_pos1": "template", "xor_pos2": "template",
    "xor_neg1": "template", "xor_neg2": "template",
    "eq_reflexive": "template",
    "ite_intro": "ite_intro",
    "distinct_elim": "distinct_elim",
    "or": "unary", "not_or": "unary",
    "implies": "unary", "not_implies1": "unary", "not_implies2": "unary",
    "equiv1": "unary", "equiv2": "unary",
    "not_equiv1": "unary", "not_equiv2": "unary",
    "xor1": "unary", "xor2": "unary",
    "not_xor1": "unary", "not_xor2": "unary",
    "resolution": "resolution", "th_resolution": "resolution",
    "forall_inst": "forall_inst",
    "refl": "ctx_equality", "cong": "ctx_equality", "trans": "ctx_equality",
    "eq_transitive": "ctx_equality", "eq_congruent": "ctx_equality",
    "eq_congruent_pred": "ctx_equality", "let": "ctx_equality",
    "bind": "bind",
    "sko_ex": "sko", "sko_forall": "sko",
    "subproof": "subproof",
    "connective_equiv": "bool_simplify", "tmp_ac_simp": "bool_simplify",
    "tmp_bfun_elim": "bool_simplify",
    "qnt_simplify": "qnt", "qnt_join": "qnt", "qnt_rm_unused": "qnt",
    "la_generic": "la", "lia_generic": "la", "la_totality": "la",
    "la_disequality": "la", "la_rw_eq": "la", "la_tautology": "la",
    "nla_generic": "trusted", "tmp_skolemize": "trusted",
}

# rules allowed while the context is non-empty
CONTEXT_RULES = {
    "refl", "cong", "trans", "bind", "sko_ex", "sko_forall",
    "eq_transitive", "eq_congruent", "eq_congruent_pred", "eq_reflexive",
    "let", "qnt_simplify", "qnt_join", "qnt_rm_unused",
}

ARG_USING_RULES = {"forall_inst"}


@dataclass
class CheckOptions:
    allow_unchecked: bool = False
    strict: bool = False
    skip_rules: frozenset = frozenset()
    atom_bound: int = 16


# ----------------------------------------------------------------------
# propositional entailment over the literal abstraction

class _Abstraction:
    """Maps literals to signed atoms; complementary literals share one
    atom with opposite signs.  The constants get axiom units."""

    def __init__(self, store):
        self.store = store
        self.atoms = {}

    def literal(self, term) -> int:
        core, parity = self.store.polarity(term)
        atom = self.atoms.setdefault(core, len(self.atoms) + 1)
        return atom if parity % 2 == 0 else -atom

    def clause(self, literals):
        return [self.literal(t) for t in literals]

    def axioms(self):
        units = []
        true_atom = self.atoms.get(self.store.true())
        if true_atom is not None:
            units.append([true_atom])
        false_atom = self.atoms.get(self.store.false())
        if false_atom is not None:
            units.append([-false_atom])
        return units


def _sat(clauses) -> bool:
    """Backtracking satisfiability for small clause sets."""
    clauses = [frozenset(c) for c in clauses]
    while True:
        if any(not c for c in clauses):
            return False
        if not clauses:
            return True
        unit = next((c for c in clauses if len(c) == 1), None)
        if unit is None:
            break
        lit = next(iter(unit))
        clauses = [c - {-lit} for c in clauses if lit not in c]
    lit = next(iter(clauses[0]))
    for choice in (lit, -lit):
        reduced = [c - {-choice} for c in clauses if choice not in c]
        if _sat(reduced):
            return True
    return False


def prop_entails(store, premises, conclusion) -> bool:
    """True iff the premises propositionally entail the conclusion over
    the literal abstraction (premises and negated conclusion UNSAT)."""
    abstraction = _Abstraction(store)
    clauses = [abstraction.clause(c) for c in premises]
    clauses += [[-lit] for lit in abstraction.clause(conclusion)]
    clauses += abstraction.axioms()
    return not _sat(clauses)


# ----------------------------------------------------------------------

class RuleEngine:
    def __init__(self, dag: ProofDag, options: CheckOptions | None = None):
        self.dag = dag
        self.store = dag.store
        self.options = options or CheckOptions()
        self.diagnostics = []
        self._sigma_cache = {}

    # ------------------------------------------------------------------
    # driver

    def check(self) -> CheckReport:
        report = CheckReport()
        for pos, cmd in self.dag.steps():
            start = time.perf_counter()
            if isinstance(cmd, Assume):
                result = valid()
                rule = "assume"
            else:
                rule = cmd.rule
                result = self.check_step(pos)
            elapsed = time.perf_counter() - start
            report.add(cmd.index, rule,
                       StepResult(result.verdict, result.reason, elapsed))
        report.diagnostics.extend(self.diagnostics)
        return report

    def check_step(self, pos) -> StepResult:
        cmd = self.dag.commands[pos]
        rule = cmd.rule
        if rule in self.options.skip_rules:
            return unchecked(f"rule {rule} skipped by option")
        kind = RULE_KINDS.get(rule)
        if kind is None:
            return unchecked(f"unknown rule {rule}")
        if self.options.strict:
            self._strict_warnings(pos, cmd)
        if kind == "trusted":
            return unchecked(f"rule {rule} is experimental and not checked")
        try:
            handler = getattr(self, f"_check_{kind}")
            ok, reason = handler(rule, pos, cmd)
        except NonlinearError as exc:
            return unchecked(f"step {cmd.index}: {exc.message}")
        except VeritCheckError as exc:
            return invalid(f"step {cmd.index} ({rule}): {exc.message}")
        except Exception as exc:  # total dispatch: a malformed step is
            return invalid(      # invalid, never a crash
                f"step {cmd.index} ({rule}): rule application failed "
                f"({exc})")
        if ok:
            return valid()
        return invalid(f"step {cmd.index} does not match rule {rule}"
                       + (f": {reason}" if reason else ""))

    def _strict_warnings(self, pos, cmd):
        if cmd.args and cmd.rule not in ARG_USING_RULES:
            self.diagnostics.append(Diagnostic(
                "warning", codes.UNUSED_ARGS,
                f"rule {cmd.rule} ignores its :args", step=cmd.index,
                rule=cmd.rule))
        if context_at(self.dag, pos) and cmd.rule not in CONTEXT_RULES \
                and self.dag.closes.get(pos) is None:
            self.diagnostics.append(Diagnostic(
                "warning", codes.CONTEXT_RULE,
                f"rule {cmd.rule} applied under a non-empty context",
                step=cmd.index, rule=cmd.rule))

    # ------------------------------------------------------------------
    # shared helpers

    def _sigma(self, pos) -> Substitution:
        rid = self.dag.region_of[pos]
        got = self._sigma_cache.get(rid)
        if got is None:
            got = sigma_of(self.store, context_at(self.dag, pos))
            self._sigma_cache[rid] = got
        return got

    def _premise_clauses(self, pos):
        clauses = []
        for ppos in self.dag.premises.get(pos, ()):
            pcmd = self.dag.commands[ppos]
            if isinstance(pcmd, Assume):
                clauses.append((pcmd.term,))
            else:
                clauses.append(pcmd.clause)
        return clauses

    def _premise_equalities(self, pos):
        pairs = []
        for clause in self._premise_clauses(pos):
            if len(clause) != 1:
                continue
            node = self.store.as_app(self.store.normal(clause[0]), "=")
            if node is not None and len(node.args) == 2:
                pairs.append(node.args)
        return pairs

    def _views(self, literals):
        return [self.store.polarity(t) for t in literals]

    def _dedup(self, views):
        seen = set()
        out = []
        for view in views:
            if view not in seen:
                seen.add(view)
                out.append(view)
        return out

    def _match_views(self, actual, expected) -> bool:
        store = self.store
        actual = self._dedup(actual)
        if actual == [(store.true(), 0)]:
            # a tautological clause may be collapsed to (cl true)
            return True
        return actual == self._dedup(expected)

    def _clause_equality(self, clause):
        if len(clause) != 1:
            return None
        node = self.store.as_app(self.store.normal(clause[0]), "=")
        if node is None or len(node.args) != 2:
            return None
        return node.args

    def _single_equality(self, cmd):
        return self._clause_equality(cmd.clause)

    def _equality_conclusion(self, pos, cmd):
        """(lhs, rhs, sigma) for rules concluding an equality judgment."""
        pair = self._single_equality(cmd)
        if pair is None:
            raise VeritCheckError("conclusion is not a single equality")
        return pair[0], pair[1], self._sigma(pos)

    def _judged_equal(self, lhs, rhs, sigma) -> bool:
        """lhs sigma = rhs modulo the implicit transformations, trying
        both printed orientations of the conclusion."""
        store = self.store
        if store.equivalent(store.apply_subst(lhs, sigma), rhs):
            return True
        return store.equivalent(store.apply_subst(rhs, sigma), lhs)

    # ------------------------------------------------------------------
    # template rules

    def _check_template(self, rule, pos, cmd):
        views = self._views(cmd.clause)
        if self._template_match(rule, views, cmd.clause):
            return True, ""
        if self._taut_by_valuation(cmd.clause):
            return True, ""
        return False, "clause does not instantiate the rule schema"

    def _template_match(self, rule, views, clause) -> bool:
        store = self.store
        deduped = self._dedup(views)
        if deduped == [(store.true(), 0)]:
            return True
        if rule == "true":
            return deduped == [(store.true(), 0)]
        if rule == "false":
            return deduped == [(store.false(), 1)]
        if rule == "eq_reflexive":
            if len(deduped) != 1 or deduped[0][1] % 2 != 0:
                return False
            node = store.as_app(deduped[0][0], "=")
            return node is not None and len(node.args) == 2 and \
                store.equivalent(node.args[0], node.args[1])
        if not deduped:
            return False
        pivot_core, pivot_parity = views[0]
        pivot = store.as_app(pivot_core)
        if pivot is None:
            return False
        v = store.polarity
        flip = store.flip

        def match(*expected):
            return self._match_views(views, list(expected))

        if rule in ("and_pos", "and_neg", "and_neq"):
            if pivot.head != "and":
                return False
            if rule == "and_pos":
                if pivot_parity % 2 != 1 or len(deduped) != 2:
                    return False
                return any(deduped[1] == v(arg) for arg in pivot.args)
            if pivot_parity % 2 != 0:
                return False
            return match(views[0], *(flip(v(a)) for a in pivot.args))
        if rule == "or_pos":
            return pivot.head == "or" and pivot_parity % 2 == 1 and \
                match(views[0], *(v(a) for a in pivot.args))
        if rule == "or_neg":
            if pivot.head != "or" or pivot_parity % 2 != 0 \
                    or len(deduped) != 2:
                return False
            return any(deduped[1] == flip(v(arg)) for arg in pivot.args)
        if rule.startswith("implies"):
            if pivot.head != "=>" or len(pivot.args) != 2:
                return False
            a, b = (v(x) for x in pivot.args)
            if rule == "implies_pos":
                return pivot_parity % 2 == 1 and match(views[0], flip(a), b)
            if rule == "implies_neg1":
                return pivot_parity % 2 == 0 and match(views[0], a)
            return pivot_parity % 2 == 0 and match(views[0], flip(b))
        if rule.startswith("equiv"):
            if pivot.head != "=" or len(pivot.args) != 2 \
                    or store.sort(pivot.args[0]) != BOOL:
                return False
            a, b = (v(x) for x in pivot.args)
            want_parity = 1 if rule.startswith("equiv_pos") else 0
            if pivot_parity % 2 != want_parity:
                return False
            shapes = {
                "equiv_pos1": [(a, flip(b)), (b, flip(a))],
                "equiv_pos2": [(flip(a), b), (flip(b), a)],
                "equiv_neg1": [(flip(a), flip(b)), (flip(b), flip(a))],
                "equiv_neg2": [(a, b), (b, a)],
            }[rule]
            return any(match(views[0], x, y) for x, y in shapes)
        if rule.startswith(("ite", "not_ite")):
            if pivot.head != "ite" or len(pivot.args) != 3 \
                    or store.sort(pivot.args[1]) != BOOL:
                return False
            c, t1, t2 = (v(x) for x in pivot.args)
            want_parity, shape = {
                "ite_pos1": (1, (c, t2)),
                "ite_pos2": (1, (flip(c), t1)),
                "ite_neg1": (0, (c, flip(t2))),
                "ite_neg2": (0, (flip(c), flip(t1))),
                "ite1": (0, (c, t2)),
                "ite2": (0, (flip(c), t2)),
                "not_ite1": (0, (c, flip(t2))),
                "not_ite2": (0, (flip(c), flip(t1))),
            }[rule]
            return pivot_parity % 2 == want_parity and \
                match(views[0], *shape)
        if rule.startswith("xor"):
            if pivot.head != "xor" or len(pivot.args) != 2:
                return False
            a, b = (v(x) for x in pivot.args)
            want_parity, shape = {
                "xor_pos1": (1, (a, b)),
                "xor_pos2": (1, (flip(a), flip(b))),
                "xor_neg1": (0, (a, flip(b))),
                "xor_neg2": (0, (flip(a), b)),
            }[rule]
            return pivot_parity % 2 == want_parity and \
                match(views[0], *shape)
        return False

    # ------------------------------------------------------------------
    # Boolean skeleton evaluation (template fallback, simplifications)

    def _bool_atoms(self, term, atoms):
        """Collect abstraction atoms; returns False when the term tree
        exceeds the atom bound."""
        store = self.store
        node = store.node(term)
        if isinstance(node, Const) and node.sort == BOOL:
            return True
        if isinstance(node, App):
            if node.head in ("and", "or", "not", "=>", "xor"):
                return all(self._bool_atoms(a, atoms) for a in node.args)
            if node.head == "=" and len(node.args) == 2 \
                    and store.sort(node.args[0]) == BOOL:
                return all(self._bool_atoms(a, atoms) for a in node.args)
            if node.head == "ite" and node.sort == BOOL:
                return all(self._bool_atoms(a, atoms) for a in node.args)
        atoms.setdefault(self._atom_key(term), len(atoms))
        return len(atoms) <= self.options.atom_bound

    def _atom_key(self, term):
        """Atoms are identified modulo the implicit transformations and,
        for arithmetic literals, modulo linear canonicalisation."""
        store = self.store
        normal = store.normal(term)
        try:
            atom = linarith.atom_of_term(store, normal)
            coeffs = tuple(sorted(atom.coeffs.items()))
            return ("lin", coeffs, atom.constant, atom.relation)
        except NonlinearError:
            return ("term", normal)

    def _bool_eval(self, term, atoms, assignment) -> bool:
        store = self.store
        node = store.node(term)
        if isinstance(node, Const) and node.sort == BOOL:
            return bool(node.value)
        if isinstance(node, App):
            head = node.head
            if head == "not":
                return not self._bool_eval(node.args[0], atoms, assignment)
            if head == "and":
                return all(self._bool_eval(a, atoms, assignment)
                           for a in node.args)
            if head == "or":
                return any(self._bool_eval(a, atoms, assignment)
                           for a in node.args)
            if head == "=>":
                left = self._bool_eval(node.args[0], atoms, assignment)
                return (not left) or self._bool_eval(node.args[1], atoms,
                                                     assignment)
            if head == "xor":
                return self._bool_eval(node.args[0], atoms, assignment) != \
                    self._bool_eval(node.args[1], atoms, assignment)
            if head == "=" and len(node.args) == 2 \
                    and store.sort(node.args[0]) == BOOL:
                return self._bool_eval(node.args[0], atoms, assignment) == \
                    self._bool_eval(node.args[1], atoms, assignment)
            if head == "ite" and node.sort == BOOL:
                if self._bool_eval(node.args[0], atoms, assignment):
                    return self._bool_eval(node.args[1], atoms, assignment)
                return self._bool_eval(node.args[2], atoms, assignment)
        return assignment[atoms[self._atom_key(term)]]

    def _taut_by_valuation(self, literals) -> bool:
        atoms = {}
        for lit in literals:
            if not self._bool_atoms(lit, atoms):
                return False
        for bits in itertools.product((False, True), repeat=len(atoms)):
            if not any(self._bool_eval(lit, atoms, bits)
                       for lit in literals):
                return False
        return True

    def _equiv_by_valuation(self, a, b):
        """True/False by exhaustive valuation, None if out of budget."""
        atoms = {}
        if not self._bool_atoms(a, atoms) or not self._bool_atoms(b, atoms):
            return None
        for bits in itertools.product((False, True), repeat=len(atoms)):
            if self._bool_eval(a, atoms, bits) != \
                    self._bool_eval(b, atoms, bits):
                return False
        return True

    # ------------------------------------------------------------------
    # one-premise deductions

    def _check_unary(self, rule, pos, cmd):
        store = self.store
        clauses = self._premise_clauses(pos)
        if len(clauses) != 1 or len(clauses[0]) != 1:
            return False, "rule needs exactly one single-literal premise"
        premise = clauses[0][0]
        core, parity = store.polarity(premise)
        node = store.as_app(core)
        if node is None:
            return False, "premise is not a connective"
        views = self._views(cmd.clause)
        v = store.polarity
        flip = store.flip

        def expect(*expected):
            return self._match_views(views, list(expected)), ""

        if rule == "or":
            if node.head != "or" or parity % 2 != 0:
                return False, "premise is not a positive disjunction"
            return expect(*(v(a) for a in node.args))
        if rule == "not_or":
            if node.head != "or" or parity % 2 != 1:
                return False, "premise is not a negated disjunction"
            deduped = self._dedup(views)
            if len(deduped) != 1:
                return False, "conclusion must be a single literal"
            ok = any(deduped[0] == flip(v(a)) for a in node.args)
            return ok, ""
        if rule in ("implies", "not_implies1", "not_implies2"):
            if node.head != "=>" or len(node.args) != 2:
                return False, "premise is not an implication"
            a, b = (v(x) for x in node.args)
            if rule == "implies":
                return (parity % 2 == 0) and expect(flip(a), b)[0], ""
            if rule == "not_implies1":
                return (parity % 2 == 1) and expect(a)[0], ""
            return (parity % 2 == 1) and expect(flip(b))[0], ""
        if rule in ("equiv1", "equiv2", "not_equiv1", "not_equiv2"):
            if node.head != "=" or len(node.args) != 2 \
                    or store.sort(node.args[0]) != BOOL:
                return False, "premise is not a Bool equality"
            a, b = (v(x) for x in node.args)
            shapes = {
                "equiv1": (0, [(flip(a), b), (flip(b), a)]),
                "equiv2": (0, [(a, flip(b)), (b, flip(a))]),
                "not_equiv1": (1, [(a, b), (b, a)]),
                "not_equiv2": (1, [(flip(a), flip(b)),
                                   (flip(b), flip(a))]),
            }
            want_parity, alternatives = shapes[rule]
            if parity % 2 != want_parity:
                return False, "premise has the wrong polarity"
            ok = any(self._match_views(views, list(alt))
                     for alt in alternatives)
            return ok, ""
        if rule in ("xor1", "xor2", "not_xor1", "not_xor2"):
            if node.head != "xor" or len(node.args) != 2:
                return False, "premise is not an xor"
            a, b = (v(x) for x in node.args)
            want_parity, shape = {
                "xor1": (0, (a, b)),
                "xor2": (0, (flip(a), flip(b))),
                "not_xor1": (1, (a, flip(b))),
                "not_xor2": (1, (flip(a), b)),
            }[rule]
            if parity % 2 != want_parity:
                return False, "premise has the wrong polarity"
            return expect(*shape)
        return False, f"no unary handler for {rule}"

    # ------------------------------------------------------------------
    # resolution

    def _check_resolution(self, rule, pos, cmd):
        premises = self._premise_clauses(pos)
        if not premises:
            return False, "resolution needs premises"
        if self._resolution_fast_path(premises, cmd.clause):
            return True, ""
        if prop_entails(self.store, premises, cmd.clause):
            return True, ""
        return False, "conclusion is not propositionally entailed"

    def _resolution_fast_path(self, premises, conclusion) -> bool:
        """Greedy chain of binary resolutions; accepts when the derived
        clause subsumes the conclusion.  Purely an accelerator: failure
        falls back to entailment."""
        abstraction = _Abstraction(self.store)
        clauses = [abstraction.clause(c) for c in premises]
        goal = set(abstraction.clause(conclusion))
        current = set(clauses[0])
        for nxt in clauses[1:]:
            nxt = set(nxt)
            pivots = [lit for lit in current if -lit in nxt]
            if len(pivots) != 1:
                return False
            pivot = pivots[0]
            current = (current - {pivot}) | (nxt - {-pivot})
        return current <= goal

    # ------------------------------------------------------------------
    # quantifier instantiation

    def _check_forall_inst(self, rule, pos, cmd):
        store = self.store
        if len(cmd.clause) == 1:
            node = store.as_app(store.normal(cmd.clause[0]), "or")
            if node is None or len(node.args) != 2:
                return False, "conclusion is not a two-part disjunction"
            neg_part, inst_part = node.args
        elif len(cmd.clause) == 2:
            neg_part, inst_part = cmd.clause
        else:
            return False, "conclusion has the wrong shape"
        core, parity = store.polarity(neg_part)
        if parity % 2 != 1:
            return False, "first disjunct must negate the quantifier"
        binds, matrix = self._prenex_universals(core)
        if not binds:
            return False, "first disjunct is not a universal formula"
        assignments = {}
        for arg in cmd.args:
            if isinstance(arg, BindingArg):
                assignments[arg.name] = arg.term
        if not assignments:
            return False, "instantiation arguments are missing"
        by_name = dict(binds)
        for name, term in assignments.items():
            if name not in by_name:
                return False, f"argument {name} does not match a bound " \
                              f"variable"
            if not store.is_closed(term):
                return False, f"instance for {name} is not variable-free"
            if store.sort(term) != by_name[name]:
                return False, f"instance for {name} has the wrong sort"
        remaining = []
        instantiated = matrix
        for name, sort in binds:
            if name in assignments:
                instantiated = store.subst_var(instantiated, name, sort,
                                               assignments[name])
            else:
                remaining.append((name, sort))
        if remaining:
            instantiated = store.forall(remaining, instantiated)
        if store.equivalent(instantiated, inst_part):
            return True, ""
        return False, "instantiated matrix does not match the second " \
                      "disjunct"

    def _prenex_universals(self, term):
        """Pull universal quantifiers (and negated existentials) to the
        front through =>, and, or and not.  Name collisions abort the
        pull conservatively."""
        store = self.store

        def pull(t, universal):
            node = store.node(t)
            if isinstance(node, Binder):
                if universal and node.kind == "forall" or \
                        not universal and node.kind == "exists":
                    inner_binds, matrix = pull(node.body, universal)
                    return list(node.binds) + inner_binds, matrix
                return [], t
            if isinstance(node, App):
                if node.head == "not":
                    binds, matrix = pull(node.args[0], not universal)
                    if binds:
                        return binds, store.neg(matrix)
                    return [], t
                if node.head in ("and", "or"):
                    collected = []
                    matrices = []
                    for arg in node.args:
                        binds, matrix = pull(arg, universal)
                        collected.append(binds)
                        matrices.append(matrix)
                    return self._merge_pulled(node.head, collected,
                                              matrices, t)
                if node.head == "=>" and len(node.args) == 2:
                    left_binds, left = pull(node.args[0], not universal)
                    right_binds, right = pull(node.args[1], universal)
                    merged = self._merge_pulled(
                        "=>", [left_binds, right_binds], [left, right],
                        t)
                    return merged
            return [], t

        return pull(term, True)

    def _merge_pulled(self, head, collected, matrices, original):
        store = self.store
        names = [n for binds in collected for n, _ in binds]
        if len(set(names)) != len(names):
            return [], original
        pulled = [n for n, _ in
                  (b for binds in collected for b in binds)]
        for i, matrix in enumerate(matrices):
            free = {n for n, _ in store.free_vars(matrix)}
            foreign = [n for j, binds in enumerate(collected) if j != i
                       for n, _ in binds]
            if free & set(foreign):
                return [], original
        del pulled
        if not names:
            return [], original
        binds = [b for group in collected for b in group]
        return binds, store.app(head, matrices)

    # ------------------------------------------------------------------
    # equality rules under context

    def _check_ctx_equality(self, rule, pos, cmd):
        if rule == "eq_transitive":
            return self._eq_transitive(cmd)
        if rule in ("eq_congruent", "eq_congruent_pred"):
            return self._eq_congruent(rule, cmd)
        lhs, rhs, sigma = self._equality_conclusion(pos, cmd)
        if rule in ("refl", "let"):
            if self._judged_equal(lhs, rhs, sigma):
                return True, ""
            if rule == "let" and self._let_with_premises(pos, lhs, rhs,
                                                         sigma):
                return True, ""
            return False, "sides differ after applying the context"
        if rule == "cong":
            return self._cong(pos, lhs, rhs, sigma)
        if rule == "trans":
            return self._trans(pos, lhs, rhs, sigma)
        raise VeritCheckError(f"no context-equality handler for {rule}")

    def _let_with_premises(self, pos, lhs, rhs, sigma):
        store = self.store
        rewritten = store.apply_subst(lhs, sigma)
        for x, y in self._premise_equalities(pos):
            if store.equivalent(rewritten, x) and store.equivalent(rhs, y):
                return True
        return False

    def _cong(self, pos, lhs, rhs, sigma):
        store = self.store
        pairs = self._premise_equalities(pos)

        def arg_justified(a, b):
            if store.equivalent(store.apply_subst(a, sigma), b):
                return True
            for x, y in pairs:
                if (store.equivalent(a, x) and store.equivalent(b, y)) or \
                        (store.equivalent(a, y) and store.equivalent(b, x)):
                    return True
            return False

        for left, right in ((lhs, rhs), (rhs, lhs)):
            ln, rn = store.as_app(left), store.as_app(right)
            if ln is None or rn is None or ln.head != rn.head \
                    or len(ln.args) != len(rn.args):
                continue
            if all(arg_justified(a, b)
                   for a, b in zip(ln.args, rn.args)):
                return True, ""
        return False, "argument equalities are not justified"

    def _trans(self, pos, lhs, rhs, sigma):
        store = self.store
        parent = {}

        def find(x):
            while parent.get(x, x) != x:
                parent[x] = parent.get(parent[x], parent[x])
                x = parent[x]
            return x

        def union(x, y):
            parent.setdefault(x, x)
            parent.setdefault(y, y)
            parent[find(x)] = find(y)

        for x, y in self._premise_equalities(pos):
            union(store.normal(x), store.normal(y))
            union(store.normal(store.apply_subst(x, sigma)),
                  store.normal(y))
        a, b = store.normal(lhs), store.normal(rhs)
        if find(a) == find(b):
            return True, ""
        if find(store.normal(store.apply_subst(lhs, sigma))) == find(b):
            return True, ""
        return False, "premises do not chain the two sides"

    def _eq_transitive(self, cmd):
        store = self.store
        views = self._views(cmd.clause)
        positives = [(core, i) for i, (core, parity) in enumerate(views)
                     if parity % 2 == 0]
        if len(positives) != 1:
            return False, "clause needs exactly one positive equality"
        goal = store.as_app(positives[0][0], "=")
        if goal is None or len(goal.args) != 2:
            return False, "positive literal is not an equality"
        parent = {}

        def find(x):
            while parent.get(x, x) != x:
                parent[x] = parent.get(parent[x], parent[x])
                x = parent[x]
            return x

        for i, (core, parity) in enumerate(views):
            if parity % 2 == 0:
                continue
            node = store.as_app(core, "=")
            if node is None or len(node.args) != 2:
                return False, "negative literal is not an equality"
            x, y = node.args
            parent.setdefault(x, x)
            parent.setdefault(y, y)
            parent[find(x)] = find(y)
        if find(goal.args[0]) == find(goal.args[1]):
            return True, ""
        return False, "negated equalities do not chain the goal"

    def _eq_congruent(self, rule, cmd):
        store = self.store
        views = self._views(cmd.clause)
        edges = []
        apps = []
        for core, parity in views:
            node = store.as_app(core, "=")
            if parity % 2 == 1 and node is not None \
                    and len(node.args) == 2 \
                    and store.sort(node.args[0]) != BOOL:
                edges.append(node.args)
            else:
                apps.append((core, parity))
        if rule == "eq_congruent":
            if len(apps) != 1 or apps[0][1] % 2 != 0:
                return False, "clause needs one positive congruence goal"
            goal = store.as_app(apps[0][0], "=")
            if goal is None or len(goal.args) != 2:
                return False, "goal is not an equality"
            left, right = goal.args
        else:
            negs = [c for c, p in apps if p % 2 == 1]
            poss = [c for c, p in apps if p % 2 == 0]
            if len(negs) != 1 or len(poss) != 1:
                return False, "clause needs one negated and one positive " \
                              "application"
            left, right = negs[0], poss[0]
        if self._congruence_closure_equal(edges, left, right):
            return True, ""
        return False, "equalities do not justify the congruence"

    def _congruence_closure_equal(self, edges, left, right) -> bool:
        store = self.store
        universe = set()
        stack = [left, right]
        for x, y in edges:
            stack += [x, y]
        while stack:
            t = stack.pop()
            if t in universe:
                continue
            universe.add(t)
            node = store.node(t)
            if isinstance(node, App):
                stack.extend(node.args)
        parent = {t: t for t in universe}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        def union(x, y):
            parent[find(x)] = find(y)

        for x, y in edges:
            union(x, y)
        apps = [(t, store.node(t)) for t in universe
                if isinstance(store.node(t), App)]
        changed = True
        while changed:
            changed = False
            for (t1, n1), (t2, n2) in itertools.combinations(apps, 2):
                if n1.head != n2.head or len(n1.args) != len(n2.args):
                    continue
                if find(t1) == find(t2):
                    continue
                if all(find(a) == find(b)
                       for a, b in zip(n1.args, n2.args)):
                    union(t1, t2)
                    changed = True
        return find(left) == find(right)

    # ------------------------------------------------------------------
    # binder rules

    def _closed_region(self, pos, want_kind):
        rid = self.dag.closes.get(pos)
        if rid is None:
            raise VeritCheckError("step does not close a subproof region")
        region = self.dag.regions[rid]
        if region.kind != want_kind:
            raise VeritCheckError(
                f"step closes a {region.kind} region, needs {want_kind}")
        return region

    def _inner_judgment(self, region):
        """The region's last inner step, as an implicit premise."""
        inner_pos = self.dag.last_inner_step(region.id)
        if inner_pos is None:
            raise VeritCheckError("subproof region is empty")
        cmd = self.dag.commands[inner_pos]
        if isinstance(cmd, Assume):
            return (cmd.term,)
        return cmd.clause

    def _check_bind(self, rule, pos, cmd):
        store = self.store
        region = self._closed_region(pos, "anchor")
        mappings = [e for e in region.entries if isinstance(e, Mapped)]
        if not mappings or len(mappings) != len(region.entries):
            return False, "bind needs a context of variable renamings"
        pair = self._single_equality(cmd)
        if pair is None:
            return False, "conclusion is not an equality"
        inner = self._inner_judgment(region)
        inner_pair = self._clause_equality(inner)
        if inner_pair is None:
            return False, "inner judgment is not an equality"
        phi, psi = inner_pair
        for left, right in (pair, pair[::-1]):
            lb = store.as_binder(left)
            rb = store.as_binder(right)
            if lb is None or rb is None or lb.kind != rb.kind \
                    or lb.kind not in ("forall", "exists"):
                continue
            if len(lb.binds) != len(mappings) or \
                    len(rb.binds) != len(mappings):
                continue
            names_ok = all(
                m.name == bx[0] and
                isinstance(store.node(m.term), Var) and
                store.node(m.term).name == by[0]
                for m, bx, by in zip(mappings, lb.binds, rb.binds))
            if not names_ok:
                continue
            fresh_ok = all(
                (store.node(m.term).name, store.node(m.term).sort)
                not in store.free_vars(left) for m in mappings)
            if not fresh_ok:
                return False, "renamed variables are not fresh"
            if store.equivalent(phi, lb.body) and \
                    store.equivalent(psi, rb.body):
                return True, ""
        return False, "conclusion does not bind the renamed bodies"

    def _split_binder(self, binder_node):
        """First bound variable and the remaining body."""
        store = self.store
        (name, sort), *rest = binder_node.binds
        if rest:
            body = store.binder(binder_node.kind, rest, binder_node.body)
        else:
            body = binder_node.body
        return (name, sort), body

    def _check_sko(self, rule, pos, cmd):
        store = self.store
        region = self._closed_region(pos, "anchor")
        mappings = [e for e in region.entries if isinstance(e, Mapped)]
        if len(mappings) != 1 or len(region.entries) != 1:
            return False, "skolemization needs exactly one context mapping"
        mapping = mappings[0]
        eps = store.as_binder(mapping.term, "choice")
        if eps is None:
            return False, "context does not map to a choice term"
        want_kind = "exists" if rule == "sko_ex" else "forall"
        pair = self._single_equality(cmd)
        if pair is None:
            return False, "conclusion is not an equality"
        inner_pair = self._clause_equality(self._inner_judgment(region))
        if inner_pair is None:
            return False, "inner judgment is not an equality"
        phi_inner, psi_inner = inner_pair
        saw_binder = False
        for left, right in (pair, pair[::-1]):
            lb = store.as_binder(left, want_kind)
            if lb is None:
                continue
            saw_binder = True
            (name, sort), phi = self._split_binder(lb)
            wanted_body = phi if rule == "sko_ex" else store.neg(phi)
            wanted = store.choice(((name, sort),), wanted_body)
            if not store.equivalent(mapping.term, wanted):
                return False, "choice term does not match the " \
                              "skolemized body"
            if store.equivalent(phi_inner, phi) and \
                    store.equivalent(psi_inner, right):
                return True, ""
        if not saw_binder:
            return False, f"no side of the conclusion is a {want_kind}"
        return False, "inner judgment does not connect the two sides"

    def _check_subproof(self, rule, pos, cmd):
        store = self.store
        region = self._closed_region(pos, "assume")
        opener = self.dag.commands[region.opener]
        inner = self._inner_judgment(region)
        expected = [store.flip(store.polarity(opener.term))]
        if not (len(inner) == 1 and inner[0] == opener.term):
            expected += [store.polarity(t) for t in inner]
        if self._match_views(self._views(cmd.clause), expected):
            return True, ""
        # an inner empty clause is absorbed: conclusion is just the
        # negated assumption
        if not inner and self._match_views(
                self._views(cmd.clause),
                [store.flip(store.polarity(opener.term))]):
            return True, ""
        return False, "conclusion does not discharge the assumption"

    # ------------------------------------------------------------------
    # Boolean / quantifier simplifications

    def _check_bool_simplify(self, rule, pos, cmd):
        lhs, rhs, sigma = self._equality_conclusion(pos, cmd)
        lhs = self.store.apply_subst(lhs, sigma)
        got = self._equiv_by_valuation(lhs, rhs)
        if got is None:
            raise NonlinearError(
                f"rule {rule}: Boolean abstraction exceeds "
                f"{self.options.atom_bound} atoms")
        return got, "" if got else "sides are not equivalent under the " \
                                   "Boolean abstraction"

    def _check_qnt(self, rule, pos, cmd):
        store = self.store
        lhs, rhs, sigma = self._equality_conclusion(pos, cmd)
        lhs = store.apply_subst(lhs, sigma)
        if rule == "qnt_rm_unused":
            a, b = self._drop_unused(lhs), self._drop_unused(rhs)
        elif rule == "qnt_join":
            a, b = self._join_binders(lhs), self._join_binders(rhs)
        else:
            a = self._drop_unused(self._join_binders(lhs))
            b = self._drop_unused(self._join_binders(rhs))
        if store.equivalent(a, b):
            return True, ""
        got = self._equiv_by_valuation(a, b)
        if got:
            return True, ""
        return False, "sides differ after quantifier normalisation"

    def _drop_unused(self, term):
        store = self.store
        node = store.node(term)
        if isinstance(node, App):
            args = tuple(self._drop_unused(a) for a in node.args)
            return store.app(node.head, args, node.sort) \
                if args != node.args else term
        if isinstance(node, Binder) and node.kind in ("forall", "exists"):
            body = self._drop_unused(node.body)
            free = store.free_vars(body)
            kept = tuple(b for b in node.binds if b in free)
            if not kept:
                return body
            return store.binder(node.kind, kept, body)
        return term

    def _join_binders(self, term):
        store = self.store
        node = store.node(term)
        if isinstance(node, App):
            args = tuple(self._join_binders(a) for a in node.args)
            return store.app(node.head, args, node.sort) \
                if args != node.args else term
        if isinstance(node, Binder) and node.kind in ("forall", "exists"):
            body = self._join_binders(node.body)
            binds = list(node.binds)
            inner = store.as_binder(body, node.kind)
            while inner is not None:
                binds.extend(inner.binds)
                body = inner.body
                inner = store.as_binder(body, node.kind)
            # a repeated name is shadowed by its later binding
            seen = set()
            deduped = []
            for name, sort in reversed(binds):
                if name not in seen:
                    seen.add(name)
                    deduped.append((name, sort))
            deduped.reverse()
            return store.binder(node.kind, deduped, body)
        return term

    # ------------------------------------------------------------------
    # ite_intro and distinct_elim

    def _check_ite_intro(self, rule, pos, cmd):
        store = self.store
        pair = self._single_equality(cmd)
        if pair is None:
            return False, "conclusion is not an equality"
        for t, u in (pair, pair[::-1]):
            if store.equivalent(t, u):
                return True, ""
            conj = store.as_app(u, "and")
            if conj is None or not conj.args:
                continue
            if not store.equivalent(t, conj.args[0]):
                continue
            if all(self._ite_constraint(c) for c in conj.args[1:]):
                return True, ""
        return False, "right side is not the ite-constrained form of " \
                      "the left"

    def _ite_constraint(self, term) -> bool:
        store = self.store
        node = store.as_app(store.normal(term), "ite")
        if node is None or len(node.args) != 3:
            return False
        cond, then_eq, else_eq = node.args
        te = store.as_app(then_eq, "=")
        ee = store.as_app(else_eq, "=")
        if te is None or ee is None:
            return False
        for x, a in (te.args, te.args[::-1]):
            for y, b in (ee.args, ee.args[::-1]):
                if not store.equivalent(x, y):
                    continue
                ite_term = store.app("ite", (cond, a, b))
                if store.equivalent(x, ite_term):
                    return True
        return False

    def _check_distinct_elim(self, rule, pos, cmd):
        store = self.store
        pair = self._single_equality(cmd)
        if pair is None:
            return False, "conclusion is not an equality"
        for d, other in (pair, pair[::-1]):
            node = store.as_app(d, "distinct")
            if node is None:
                continue
            expansion = self._distinct_expansion(node)
            if store.equivalent(other, expansion):
                return True, ""
        return False, "no side expands the distinct term"

    def _distinct_expansion(self, node):
        store = self.store
        args = node.args
        if store.sort(args[0]) == BOOL and len(args) > 2:
            return store.false()
        parts = [store.neg(store.eq(a, b))
                 for a, b in itertools.combinations(args, 2)]
        if len(parts) == 1:
            return parts[0]
        return store.app("and", parts)

    # ------------------------------------------------------------------
    # linear arithmetic rules

    def _check_la(self, rule, pos, cmd):
        if self._linear_clause_valid(cmd.clause):
            return True, ""
        return False, "negated clause is satisfiable over the " \
                      "linear relaxation (possibly-incomplete over Int)"

    def _linear_clause_valid(self, literals) -> bool:
        store = self.store
        branches = [[]]
        for lit in literals:
            negated = self._nnf_branches(store.neg(lit))
            branches = [b1 + b2 for b1 in branches for b2 in negated]
            if len(branches) > linarith._MAX_BRANCHES:
                raise NonlinearError("too many Boolean branches in the "
                                     "arithmetic clause")
        for branch in branches:
            atoms = [linarith.atom_of_term(store, t) for t in branch]
            tighten = linarith.system_all_int(atoms)
            for system in linarith.split_system(atoms):
                if not linarith.fm_decide(system, tighten).is_unsat:
                    return False
        return True

    def _nnf_branches(self, term):
        """DNF branches (lists of literal terms) of a Boolean term."""
        store = self.store

        def go(t, positive):
            core, parity = store.polarity(t)
            if parity % 2 == 1:
                positive = not positive
            t = core
            if store.is_true(t):
                return [[]] if positive else []
            if store.is_false(t):
                return [] if positive else [[]]
            node = store.as_app(t)
            if node is not None and node.head in ("and", "or"):
                conj = (node.head == "and") == positive
                parts = [go(a, positive) for a in node.args]
                if conj:
                    out = [[]]
                    for p in parts:
                        out = [b1 + b2 for b1 in out for b2 in p]
                        if len(out) > linarith._MAX_BRANCHES:
                            raise NonlinearError("too many Boolean "
                                                 "branches")
                    return out
                return [b for p in parts for b in p]
            if node is not None and node.head == "=>" \
                    and len(node.args) == 2:
                a, b = node.args
                rewritten = store.app("or", (store.neg(a), b))
                return go(rewritten, positive)
            if node is not None and node.head in ("=", "xor") \
                    and len(node.args) == 2 \
                    and store.sort(node.args[0]) == BOOL:
                a, b = node.args
                same = (node.head == "=") == positive
                first = [x + y for x in go(a, True) for y in go(b, same)]
                second = [x + y for x in go(a, False)
                          for y in go(b, not same)]
                return first + second
            if node is not None and node.head == "ite" \
                    and store.sort(t) == BOOL:
                c, tt, ee = node.args
                first = [x + y for x in go(c, True) for y in go(tt,
                                                                positive)]
                second = [x + y for x in go(c, False) for y in go(ee,
                                                                  positive)]
                return first + second
            return [[t if positive else store.neg(t)]]

        return go(term, True)


def check_proof(dag: ProofDag, options: CheckOptions | None = None) \
        -> CheckReport:
    """Check every step of the DAG; one StepResult per assume/step."""
    return RuleEngine(dag, options).check()
