"""Hash-consed store for many-sorted first-order terms.

Every structurally distinct term is interned exactly once, so term-id
equality is structural equality and shared subterms cost nothing.  All
numeric constants are exact (int / Fraction); floats never appear.

The store also implements the silent rewrites a proof is allowed to
apply between steps -- double-negation removal, reorientation of
equalities, removal of duplicate literals and collapse of tautological
clauses -- as an idempotent normalisation, plus capture-avoiding
substitution and alpha comparison.  Term ids are plain ints and may be
shared freely between threads; mutation happens only inside intern().
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .errors import SortError

TermId = int


@dataclass(frozen=True)
class Sort:
    """A sort, identified by name.  Equal names mean equal sorts."""

    name: str

    def __repr__(self):
        return f"Sort({self.name})"


BOOL = Sort("Bool")
INT = Sort("Int")
REAL = Sort("Real")

NUMERIC = (INT, REAL)


@dataclass(frozen=True)
class Var:
    name: str
    sort: Sort


@dataclass(frozen=True)
class Const:
    value: object  # bool, int or Fraction
    sort: Sort


@dataclass(frozen=True)
class App:
    head: str
    args: tuple[TermId, ...]
    sort: Sort


@dataclass(frozen=True)
class Binder:
    kind: str  # "forall", "exists" or "choice"
    binds: tuple[tuple[str, Sort], ...]
    body: TermId
    sort: Sort


class Tautology:
    """Marker returned by clause_normalize for clauses containing
    complementary literals."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self):
        return "Tautology"


TAUTOLOGY = Tautology()


@dataclass(frozen=True)
class Substitution:
    """An ordered list of single-variable replacements.

    Application is sequential: the first mapping is applied to the term
    first, the last mapping last, each one capture-avoiding.  This is
    the composition order needed for contexts: the mapping added to a
    context last is applied last, so e.g. [y -> z, x -> y] sends
    P(x, y) to P(y, z).
    """

    mappings: tuple[tuple[tuple[str, Sort], TermId], ...] = ()

    def then(self, name, sort, term):
        return Substitution(self.mappings + (((name, sort), term),))

    def __bool__(self):
        return bool(self.mappings)


# Heads with fixed interpretation; everything else is uninterpreted and
# rank-checked against the store signature.
BOOL_CONNECTIVES = {"not", "and", "or", "=>", "xor"}
RELATIONS = {"<", "<=", ">", ">="}
ARITH_OPS = {"+", "-", "*", "/"}
INT_OPS = {"div", "mod", "abs"}


class TermStore:
    """Interner and toolbox for one proof's terms.

    A store is single-writer: interning mutates internal tables, query
    helpers are read-only.  Distinct proofs should use distinct stores.
    """

    def __init__(self):
        self._nodes = []
        self._ids = {}
        self._sig = {}  # uninterpreted head -> (arg sorts, result sort)
        self._used_names = set()
        self._fresh_counter = 0
        self._fv_memo = {}
        self._normal_memo = {}
        self._true = self._intern(Const(True, BOOL))
        self._false = self._intern(Const(False, BOOL))

    # ------------------------------------------------------------------
    # interning

    def _intern(self, node) -> TermId:
        tid = self._ids.get(node)
        if tid is None:
            tid = len(self._nodes)
            self._nodes.append(node)
            self._ids[node] = tid
        return tid

    def node(self, tid: TermId):
        return self._nodes[tid]

    def sort(self, tid: TermId) -> Sort:
        return self._nodes[tid].sort

    def __len__(self):
        return len(self._nodes)

    # ------------------------------------------------------------------
    # builders

    def true(self) -> TermId:
        return self._true

    def false(self) -> TermId:
        return self._false

    def var(self, name: str, sort: Sort) -> TermId:
        self._used_names.add(name)
        return self._intern(Var(name, sort))

    def int_const(self, value: int) -> TermId:
        return self._intern(Const(int(value), INT))

    def real_const(self, value) -> TermId:
        return self._intern(Const(Fraction(value), REAL))

    def bool_const(self, value: bool) -> TermId:
        return self._true if value else self._false

    def declare_fun(self, name: str, arg_sorts, result: Sort):
        """Register (or re-check) the rank of an uninterpreted symbol."""
        rank = (tuple(arg_sorts), result)
        known = self._sig.get(name)
        if known is not None and known != rank:
            raise SortError(f"symbol {name} used at conflicting ranks "
                            f"{known} vs {rank}")
        self._sig[name] = rank
        self._used_names.add(name)

    def rank_of(self, name: str):
        return self._sig.get(name)

    def app(self, head: str, args, sort: Sort | None = None) -> TermId:
        """Intern an application, checking (or inferring) its rank.

        Constant folding happens here so the rest of the code never sees
        negative numerals or literal rational divisions: (- c) and
        (/ c d) over constants become signed / rational constants.
        """
        args = tuple(args)
        folded = self._fold(head, args)
        if folded is not None:
            return folded
        result = self._app_sort(head, args, sort)
        self._used_names.add(head)
        return self._intern(App(head, args, result))

    def _fold(self, head, args):
        if head == "-" and len(args) == 1:
            node = self.node(args[0])
            if isinstance(node, Const) and node.sort in NUMERIC:
                if node.sort is INT:
                    return self.int_const(-node.value)
                return self.real_const(-node.value)
        if head == "/" and len(args) == 2:
            a, b = self.node(args[0]), self.node(args[1])
            if isinstance(a, Const) and isinstance(b, Const) \
                    and a.sort in NUMERIC and b.sort in NUMERIC:
                if b.value == 0:
                    raise SortError("division of constants by zero")
                return self.real_const(Fraction(a.value) / Fraction(b.value))
        if head == "=>" and len(args) > 2:
            # right-associative fold keeps rule schemas binary
            rhs = self.app("=>", args[-2:])
            for lhs in reversed(args[:-2]):
                rhs = self.app("=>", (lhs, rhs))
            return rhs
        return None

    def _app_sort(self, head, args, declared):
        sorts = [self.sort(a) for a in args]
        if head in BOOL_CONNECTIVES:
            arity_ok = (len(args) == 1 if head == "not" else len(args) >= 1)
            if not arity_ok or any(s != BOOL for s in sorts):
                raise SortError(f"bad operands for {head}")
            if head == "xor" and len(args) != 2:
                raise SortError("xor takes exactly two operands")
            return BOOL
        if head in ("=", "distinct"):
            if len(args) < 2 or any(s != sorts[0] for s in sorts):
                raise SortError(f"{head} needs >= 2 operands of one sort")
            return BOOL
        if head == "ite":
            if len(args) != 3 or sorts[0] != BOOL or sorts[1] != sorts[2]:
                raise SortError("ite needs (Bool, T, T) operands")
            return sorts[1]
        if head in RELATIONS:
            if len(args) < 2 or any(s not in NUMERIC for s in sorts):
                raise SortError(f"bad operands for {head}")
            return BOOL
        if head in ARITH_OPS:
            if not args or any(s not in NUMERIC for s in sorts):
                raise SortError(f"bad operands for {head}")
            if head == "/":
                return REAL
            return REAL if REAL in sorts else INT
        if head in INT_OPS:
            if any(s is not INT for s in sorts):
                raise SortError(f"{head} is an Int operation")
            return INT
        # uninterpreted: check against the signature, or learn the rank
        # from this first fully-sorted application
        known = self._sig.get(head)
        if known is not None:
            want_args, want_res = known
            if tuple(sorts) != want_args:
                raise SortError(f"symbol {head} applied at sorts "
                                f"{tuple(s.name for s in sorts)}, declared "
                                f"{tuple(s.name for s in want_args)}")
            if declared is not None and declared != want_res:
                raise SortError(f"symbol {head} has result {want_res.name}, "
                                f"not {declared.name}")
            return want_res
        if declared is None:
            raise SortError(f"cannot infer the result sort of {head}")
        self._sig[head] = (tuple(sorts), declared)
        return declared

    def binder(self, kind: str, binds, body: TermId) -> TermId:
        binds = tuple((n, s) for n, s in binds)
        if kind not in ("forall", "exists", "choice"):
            raise SortError(f"unknown binder {kind}")
        if not binds:
            raise SortError(f"{kind} binds no variable")
        if self.sort(body) != BOOL:
            raise SortError(f"{kind} body must be Bool")
        if kind == "choice":
            if len(binds) != 1:
                raise SortError("choice binds exactly one variable")
            result = binds[0][1]
        else:
            result = BOOL
        for name, _ in binds:
            self._used_names.add(name)
        return self._intern(Binder(kind, binds, body, result))

    def forall(self, binds, body):
        return self.binder("forall", binds, body)

    def exists(self, binds, body):
        return self.binder("exists", binds, body)

    def choice(self, binds, body):
        return self.binder("choice", binds, body)

    def neg(self, t: TermId) -> TermId:
        return self.app("not", (t,))

    def eq(self, a: TermId, b: TermId) -> TermId:
        return self.app("=", (a, b))

    def fresh_name(self, base: str) -> str:
        while True:
            self._fresh_counter += 1
            name = f"{base}!{self._fresh_counter}"
            if name not in self._used_names:
                self._used_names.add(name)
                return name

    def is_used_name(self, name: str) -> bool:
        return name in self._used_names

    # ------------------------------------------------------------------
    # free variables

    def free_vars(self, tid: TermId) -> frozenset:
        memo = self._fv_memo
        got = memo.get(tid)
        if got is not None:
            return got
        node = self.node(tid)
        if isinstance(node, Var):
            fv = frozenset(((node.name, node.sort),))
        elif isinstance(node, Const):
            fv = frozenset()
        elif isinstance(node, App):
            fv = frozenset().union(*(self.free_vars(a) for a in node.args)) \
                if node.args else frozenset()
        else:
            bound = {n for n, _ in node.binds}
            fv = frozenset(v for v in self.free_vars(node.body)
                           if v[0] not in bound)
        memo[tid] = fv
        return fv

    def is_closed(self, tid: TermId) -> bool:
        return not self.free_vars(tid)

    # ------------------------------------------------------------------
    # substitution

    def apply_subst(self, tid: TermId, subst: Substitution) -> TermId:
        """Apply the mappings one after the other (see Substitution)."""
        for (name, sort), replacement in subst.mappings:
            if self.sort(replacement) != sort:
                raise SortError(f"substitution for {name} replaces sort "
                                f"{sort.name} by "
                                f"{self.sort(replacement).name}")
            tid = self._subst_one(tid, name, sort, replacement, {})
        return tid

    def subst_var(self, tid, name, sort, replacement) -> TermId:
        return self._subst_one(tid, name, sort, replacement, {})

    def _subst_one(self, tid, name, sort, replacement, memo):
        if (name, sort) not in self.free_vars(tid):
            return tid
        got = memo.get(tid)
        if got is not None:
            return got
        node = self.node(tid)
        if isinstance(node, Var):
            out = replacement  # free_vars guarantees the match
        elif isinstance(node, App):
            out = self.app(node.head,
                           tuple(self._subst_one(a, name, sort, replacement,
                                                 memo)
                                 for a in node.args),
                           node.sort)
        else:
            out = self._subst_under_binder(node, name, sort, replacement,
                                           memo)
        memo[tid] = out
        return out

    def _subst_under_binder(self, node, name, sort, replacement, memo):
        if any(b == name for b, _ in node.binds):
            # shadowed: free_vars said the var occurs free, but that can
            # only be through another binding position, so nothing to do
            return self._intern(node)
        repl_names = {n for n, _ in self.free_vars(replacement)}
        binds = list(node.binds)
        body = node.body
        for i, (bname, bsort) in enumerate(binds):
            if bname in repl_names:
                fresh = self.fresh_name(bname)
                body = self._subst_one(body, bname, bsort,
                                       self.var(fresh, bsort), {})
                binds[i] = (fresh, bsort)
        body = self._subst_one(body, name, sort, replacement, memo if
                               binds == list(node.binds) else {})
        return self.binder(node.kind, binds, body)

    # ------------------------------------------------------------------
    # implicit transformations

    def strip_double_negation(self, tid: TermId):
        """Count and remove the leading negations of a Bool term."""
        count = 0
        node = self.node(tid)
        while isinstance(node, App) and node.head == "not":
            count += 1
            tid = node.args[0]
            node = self.node(tid)
        return tid, count

    def normal(self, tid: TermId) -> TermId:
        """Normal form modulo the implicit transformations.

        Double negations vanish at every depth; every binary equality is
        oriented with the smaller operand id first.  Two terms are equal
        modulo the implicit transformations iff their normal forms are
        the same id, which makes the relation a congruence.
        """
        memo = self._normal_memo
        got = memo.get(tid)
        if got is not None:
            return got
        node = self.node(tid)
        if isinstance(node, (Var, Const)):
            out = tid
        elif isinstance(node, App):
            args = tuple(self.normal(a) for a in node.args)
            if node.head == "not":
                inner = self.node(args[0])
                if isinstance(inner, App) and inner.head == "not":
                    out = inner.args[0]
                else:
                    out = self.app("not", args, node.sort)
            elif node.head == "=" and len(args) == 2 and args[0] > args[1]:
                out = self.app("=", (args[1], args[0]), node.sort)
            else:
                out = self.app(node.head, args, node.sort) \
                    if args != node.args else tid
        else:
            body = self.normal(node.body)
            out = self.binder(node.kind, node.binds, body) \
                if body != node.body else tid
        memo[tid] = out
        return out

    def equal_mod_implicit(self, a: TermId, b: TermId) -> bool:
        return self.normal(a) == self.normal(b)

    def polarity(self, tid: TermId):
        """(core, parity) of the normalised term: parity is 0 or 1."""
        return self.strip_double_negation(self.normal(tid))

    def complementary(self, a: TermId, b: TermId) -> bool:
        ca, pa = self.polarity(a)
        cb, pb = self.polarity(b)
        return ca == cb and (pa - pb) % 2 == 1

    def flip(self, view):
        core, parity = view
        return core, (parity + 1) % 2

    def clause_normalize(self, literals):
        """Drop duplicate literals (keeping the first occurrence) and
        detect complementary pairs.  Returns a literal tuple, or
        TAUTOLOGY when two literals are complementary."""
        seen = {}
        kept = []
        for lit in literals:
            core, parity = self.polarity(lit)
            prior = seen.get(core)
            if prior is not None and (parity % 2) != prior:
                return TAUTOLOGY
            if prior is None:
                seen[core] = parity % 2
                kept.append(lit)
            # duplicate (same core, same parity): dropped
        return tuple(kept)

    # ------------------------------------------------------------------
    # alpha comparison

    def alpha_equiv(self, a: TermId, b: TermId) -> bool:
        """Equality up to consistent renaming of bound variables."""
        return self._alpha(a, b, {}, {}, 0, modulo=False)

    def equivalent(self, a: TermId, b: TermId) -> bool:
        """Alpha equivalence of normal forms, with equality symmetry.

        This is the comparison rule checkers use: it tolerates exactly
        the implicit transformations plus bound-variable renaming.
        """
        return self._alpha(self.normal(a), self.normal(b), {}, {}, 0,
                           modulo=True)

    def _alpha(self, a, b, env_a, env_b, depth, modulo):
        if a == b and not env_a and not env_b:
            return True
        na, nb = self.node(a), self.node(b)
        if type(na) is not type(nb):
            return False
        if isinstance(na, Var):
            slot_a = env_a.get((na.name, na.sort))
            slot_b = env_b.get((nb.name, nb.sort))
            if slot_a is None and slot_b is None:
                return na == nb
            return slot_a == slot_b and slot_a is not None
        if isinstance(na, Const):
            return na == nb
        if isinstance(na, App):
            if na.head != nb.head or len(na.args) != len(nb.args):
                return False
            if modulo and na.head == "=" and len(na.args) == 2:
                x1, y1 = na.args
                x2, y2 = nb.args
                if self._alpha(x1, x2, env_a, env_b, depth, modulo) and \
                        self._alpha(y1, y2, env_a, env_b, depth, modulo):
                    return True
                return self._alpha(x1, y2, env_a, env_b, depth, modulo) and \
                    self._alpha(y1, x2, env_a, env_b, depth, modulo)
            return all(self._alpha(x, y, env_a, env_b, depth, modulo)
                       for x, y in zip(na.args, nb.args))
        if na.kind != nb.kind or len(na.binds) != len(nb.binds):
            return False
        if any(sa != sb for (_, sa), (_, sb) in zip(na.binds, nb.binds)):
            return False
        env_a, env_b = dict(env_a), dict(env_b)
        for (name_a, sort_a), (name_b, sort_b) in zip(na.binds, nb.binds):
            env_a[(name_a, sort_a)] = depth
            env_b[(name_b, sort_b)] = depth
            depth += 1
        return self._alpha(na.body, nb.body, env_a, env_b, depth, modulo)

    # ------------------------------------------------------------------
    # misc views used by the rule engine

    def as_app(self, tid: TermId, head: str | None = None):
        node = self.node(tid)
        if isinstance(node, App) and (head is None or node.head == head):
            return node
        return None

    def as_binder(self, tid: TermId, kind: str | None = None):
        node = self.node(tid)
        if isinstance(node, Binder) and (kind is None or node.kind == kind):
            return node
        return None

    def is_true(self, tid: TermId) -> bool:
        return tid == self._true

    def is_false(self, tid: TermId) -> bool:
        return tid == self._false

    def tree_size(self, tid: TermId) -> int:
        """Number of nodes of the unfolded term tree (not the DAG)."""
        node = self.node(tid)
        if isinstance(node, (Var, Const)):
            return 1
        if isinstance(node, App):
            return 1 + sum(self.tree_size(a) for a in node.args)
        return 1 + self.tree_size(node.body)

    def reachable(self, roots) -> set:
        """All term ids reachable from the given roots."""
        seen = set()
        stack = list(roots)
        while stack:
            tid = stack.pop()
            if tid in seen:
                continue
            seen.add(tid)
            node = self.node(tid)
            if isinstance(node, App):
                stack.extend(node.args)
            elif isinstance(node, Binder):
                stack.append(node.body)
        return seen
