"""Sort inference: raw s-expression commands to interned, well-sorted
terms.

The proof text rarely comes with its problem file, so sorts are
reconstructed: binder annotations declare their variables, unknown
function symbols get their rank from the first fully-sorted application
(and are re-checked at every later use), and the variables a context
anchor introduces are typed from the paired term or, failing that, from
the binders of the subproof's conclusion.  Commands are elaborated to a
fixpoint so that a symbol declared by a later command can type an
earlier one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ParseError, SortError, StructureError
from .parser import (Anchor, Assume, BindingArg, DefineFun, Fixed, Mapped,
                     RawAnchor, RawAssume, RawDefineFun, RawStep, Step,
                     SymbolArg, TermArg)
from .terms import (ARITH_OPS, BOOL, INT, INT_OPS, NUMERIC, REAL, RELATIONS,
                    Sort, TermStore)


@dataclass
class Declarations:
    """Signature harvested from an optional SMT-LIB problem file."""

    sorts: set = field(default_factory=set)
    funs: dict = field(default_factory=dict)  # name -> (arg sorts, result)
    defines: list = field(default_factory=list)  # RawDefineFun


def parse_problem(commands) -> Declarations:
    """Extract declarations from parsed problem-file s-expressions."""
    decls = Declarations()
    for cmd in commands:
        if not isinstance(cmd, list) or not cmd:
            raise ParseError("malformed problem command")
        head = cmd[0]
        if head == "declare-sort":
            if len(cmd) != 3 or cmd[2] != 0:
                raise SortError("only arity-0 declare-sort is supported")
            decls.sorts.add(cmd[1])
        elif head == "declare-fun":
            if len(cmd) != 4 or not isinstance(cmd[2], list):
                raise ParseError("malformed declare-fun")
            decls.funs[cmd[1]] = (cmd[2], cmd[3])
        elif head == "declare-const":
            if len(cmd) != 3:
                raise ParseError("malformed declare-const")
            decls.funs[cmd[1]] = ([], cmd[2])
        elif head == "define-fun":
            if len(cmd) != 5 or not isinstance(cmd[2], list):
                raise ParseError("malformed define-fun")
            params = [(p[0], p[1]) for p in cmd[2]]
            decls.defines.append(RawDefineFun(cmd[1], params, cmd[3], cmd[4]))
        elif head in ("set-logic", "set-info", "set-option", "assert",
                      "check-sat", "exit", "get-proof", "get-model"):
            continue
        else:
            raise ParseError(f"unsupported problem command {head!r}")
    return decls


class _Pending(Exception):
    """Internal: elaboration of this command must be retried later."""

    def __init__(self, cause):
        self.cause = cause
        super().__init__(str(cause))


class Elaborator:
    def __init__(self, store: TermStore, declarations: Declarations | None):
        self.store = store
        self.sorts = {"Bool": BOOL, "Int": INT, "Real": REAL}
        if declarations:
            for name in declarations.sorts:
                self.sorts[name] = Sort(name)
            for name, (arg_sexprs, res_sexpr) in declarations.funs.items():
                store.declare_fun(name,
                                  [self.resolve_sort(s) for s in arg_sexprs],
                                  self.resolve_sort(res_sexpr))

    # ------------------------------------------------------------------

    def resolve_sort(self, sexpr) -> Sort:
        if isinstance(sexpr, str):
            got = self.sorts.get(sexpr)
            if got is None:
                # proofs circulate without their problem file; first use
                # of a sort name declares it
                got = Sort(sexpr)
                self.sorts[sexpr] = got
            return got
        raise SortError(f"unsupported sort expression {sexpr!r}")

    def is_sort_name(self, sexpr) -> bool:
        return isinstance(sexpr, str) and sexpr in self.sorts

    # ------------------------------------------------------------------
    # term elaboration

    def term(self, sexpr, env, expected: Sort | None = None):
        store = self.store
        if isinstance(sexpr, bool):
            return store.bool_const(sexpr)
        if isinstance(sexpr, int):
            if expected is REAL:
                return store.real_const(sexpr)
            return store.int_const(sexpr)
        if isinstance(sexpr, Fraction):
            return store.real_const(sexpr)
        if isinstance(sexpr, str):
            return self._symbol(sexpr, env, expected)
        if isinstance(sexpr, list) and sexpr:
            head = sexpr[0]
            if isinstance(head, str):
                if head in ("forall", "exists", "choice"):
                    return self._binder(head, sexpr, env)
                if head == "let":
                    return self._let(sexpr, env, expected)
                if head in ("!", "as", "_"):
                    raise ParseError(f"unsupported construct ({head} ...)")
                return self._application(head, sexpr[1:], env, expected)
        raise ParseError(f"malformed term {sexpr!r}")

    def _symbol(self, name, env, expected):
        store = self.store
        if name in env:
            return store.var(name, env[name])
        if name == "true":
            return store.true()
        if name == "false":
            return store.false()
        rank = store.rank_of(name)
        if rank is not None:
            if rank[0]:
                raise SortError(f"function {name} used without arguments")
            return store.app(name, (), rank[1])
        if expected is not None:
            store.declare_fun(name, (), expected)
            return store.app(name, (), expected)
        raise SortError(f"cannot infer the sort of {name}")

    def _binder(self, kind, sexpr, env):
        if len(sexpr) != 3 or not isinstance(sexpr[1], list) or not sexpr[1]:
            raise ParseError(f"malformed {kind} binder")
        binds = []
        inner = dict(env)
        for b in sexpr[1]:
            if not (isinstance(b, list) and len(b) == 2
                    and isinstance(b[0], str)):
                raise ParseError(f"malformed sorted variable in {kind}")
            sort = self.resolve_sort(b[1])
            binds.append((b[0], sort))
            inner[b[0]] = sort
        body = self.term(sexpr[2], inner, BOOL)
        return self.store.binder(kind, binds, body)

    def _let(self, sexpr, env, expected):
        # let is eliminated here: bindings are evaluated in the outer
        # scope and substituted simultaneously into the body
        if len(sexpr) != 3 or not isinstance(sexpr[1], list) or not sexpr[1]:
            raise ParseError("malformed let")
        store = self.store
        bindings = []
        inner = dict(env)
        for b in sexpr[1]:
            if not (isinstance(b, list) and len(b) == 2
                    and isinstance(b[0], str)):
                raise ParseError("malformed let binding")
            value = self.term(b[1], env)
            bindings.append((b[0], store.sort(value), value))
            inner[b[0]] = store.sort(value)
        body = self.term(sexpr[2], inner, expected)
        fresh = [(store.fresh_name(n), s) for n, s, _ in bindings]
        for (name, sort, _), (fname, fsort) in zip(bindings, fresh):
            body = store.subst_var(body, name, sort, store.var(fname, fsort))
        for (_, sort, value), (fname, fsort) in zip(bindings, fresh):
            body = store.subst_var(body, fname, fsort, value)
        return body

    def _application(self, head, raw_args, env, expected):
        store = self.store
        rank = store.rank_of(head)
        per_arg = None
        if head == "not":
            per_arg = [BOOL] * len(raw_args)
        elif head in ("and", "or", "=>", "xor"):
            per_arg = [BOOL] * len(raw_args)
        elif head in INT_OPS:
            per_arg = [INT] * len(raw_args)
        elif rank is not None and len(rank[0]) == len(raw_args):
            per_arg = list(rank[0])
        if per_arg is not None:
            args = [self.term(a, env, s) for a, s in zip(raw_args, per_arg)]
            return store.app(head, args, rank[1] if rank else None)

        # unknown expectations: elaborate what we can, learn a sibling
        # sort, then retry the failures once
        args, failures = [], []
        for i, a in enumerate(raw_args):
            try:
                args.append(self.term(a, env))
            except (SortError, ParseError) as exc:
                args.append(None)
                failures.append((i, exc))
        if failures:
            sibling = None
            if head in ("=", "distinct"):
                sibling = next((store.sort(a) for a in args
                                if a is not None), None)
            elif head == "ite":
                known = [store.sort(a) for i, a in enumerate(args)
                         if a is not None and i > 0]
                for i, exc in failures:
                    if i == 0:
                        args[0] = self.term(raw_args[0], env, BOOL)
                sibling = known[0] if known else None
                failures = [(i, e) for i, e in failures if i > 0]
            if sibling is None and failures:
                raise failures[0][1]
            for i, _ in failures:
                args[i] = self.term(raw_args[i], env, sibling)

        if head in ARITH_OPS | RELATIONS | {"=", "distinct", "ite"}:
            args = self._coerce_numeric(head, args)
        return store.app(head, args, expected)

    def _coerce_numeric(self, head, args):
        store = self.store
        relevant = args[1:] if head == "ite" else args
        sorts = [store.sort(a) for a in relevant]
        if REAL in sorts and INT in sorts:
            converted = []
            for a in relevant:
                if store.sort(a) is INT:
                    widened = self._to_real(a)
                    if widened is None:
                        raise SortError(
                            f"cannot mix Int and Real operands of {head}")
                    converted.append(widened)
                else:
                    converted.append(a)
            if head == "ite":
                return [args[0]] + converted
            return converted
        return args

    def _to_real(self, tid):
        """Widen an integer-constant expression to Real, or None."""
        store = self.store
        node = store.node(tid)
        from .terms import App, Const
        if isinstance(node, Const) and node.sort is INT:
            return store.real_const(node.value)
        if isinstance(node, App) and node.head in ARITH_OPS:
            widened = [self._to_real(a) for a in node.args]
            if any(w is None for w in widened):
                return None
            return store.app(node.head, widened)
        return None


# ----------------------------------------------------------------------
# region scan over raw commands (anchor nesting only)


def _raw_regions(commands):
    """For each command position, the list of enclosing anchor positions.

    The step named by an anchor's :step annotation closes that anchor's
    region and is itself attributed to the region (its conclusion is
    checked against the region by the rule engine).
    """
    enclosing = []
    stack = []  # positions of open anchors
    closer_of = {}
    open_targets = {}
    for pos, cmd in enumerate(commands):
        enclosing.append(list(stack))
        if isinstance(cmd, RawAnchor):
            stack.append(pos)
            open_targets[cmd.target] = pos
        elif isinstance(cmd, RawStep) and cmd.index in open_targets:
            apos = open_targets[cmd.index]
            if not stack or stack[-1] != apos:
                raise StructureError(
                    f"step {cmd.index} closes an anchor that is not "
                    f"innermost", line=cmd.line, column=cmd.column)
            stack.pop()
            del open_targets[cmd.index]
            closer_of[apos] = pos
    if stack:
        bad = commands[stack[-1]]
        raise StructureError(f"anchor targeting {bad.target!r} is never "
                             f"closed", line=bad.line, column=bad.column)
    return enclosing, closer_of


def _scan_binder_sort(sexpr, name):
    """Find a binder annotation (name SORT) anywhere in a raw term."""
    if not isinstance(sexpr, list):
        return None
    if len(sexpr) == 3 and sexpr[0] in ("forall", "exists", "choice", "let") \
            and isinstance(sexpr[1], list):
        for b in sexpr[1]:
            if isinstance(b, list) and len(b) == 2 and b[0] == name \
                    and isinstance(b[1], str):
                return b[1]
    for item in sexpr:
        got = _scan_binder_sort(item, name)
        if got is not None:
            return got
    return None


def infer_sorts(commands: list, declarations: Declarations | None = None,
                store: TermStore | None = None) -> list:
    """Elaborate raw commands into well-sorted commands over a store.

    Runs to a fixpoint: commands that mention symbols whose rank is only
    discoverable later are retried until nothing improves, then the
    first remaining failure is reported.
    """
    store = store or TermStore()
    elab = Elaborator(store, declarations)
    enclosing, closer_of = _raw_regions(commands)

    done: dict[int, object] = {}
    anchor_env: dict[int, dict] = {}  # anchor pos -> vars it contributes
    errors: dict[int, Exception] = {}

    def env_for(pos):
        env = {}
        for apos in enclosing[pos]:
            if apos not in done:
                raise _Pending(errors.get(apos)
                               or SortError("anchor not yet elaborated"))
            env.update(anchor_env[apos])
        return env

    def elaborate(pos, cmd, force):
        env = env_for(pos)
        if isinstance(cmd, RawAssume):
            return Assume(cmd.index, elab.term(cmd.term, env, BOOL))
        if isinstance(cmd, RawStep):
            clause = tuple(elab.term(t, env, BOOL) for t in cmd.clause)
            args = tuple(_elab_arg(a, env, force) for a in cmd.args)
            return Step(cmd.index, clause, cmd.rule, tuple(cmd.premises),
                        args)
        if isinstance(cmd, RawAnchor):
            entries, contributed = _elab_anchor(pos, cmd, env)
            anchor_env[pos] = contributed
            return Anchor(cmd.target, tuple(entries))
        if isinstance(cmd, RawDefineFun):
            params = [(p, elab.resolve_sort(s)) for p, s in cmd.params]
            body = elab.term(cmd.body, dict(env, **dict(params)))
            declared = elab.resolve_sort(cmd.result_sort)
            if store.sort(body) != declared:
                raise SortError(f"define-fun {cmd.name} declares "
                                f"{declared.name} but its body has sort "
                                f"{store.sort(body).name}")
            store.declare_fun(cmd.name, [s for _, s in params], declared)
            return DefineFun(cmd.name, tuple(params), body, cmd.expanded)
        raise ParseError(f"unknown command {cmd!r}")

    def _elab_arg(a, env, force):
        if isinstance(a, list) and len(a) == 3 and a[0] == ":=" \
                and isinstance(a[1], str):
            return BindingArg(a[1], elab.term(a[2], env))
        try:
            return TermArg(elab.term(a, env))
        except (SortError, ParseError):
            # the grammar also allows (variable term) pairs
            if isinstance(a, list) and len(a) == 2 \
                    and isinstance(a[0], str):
                try:
                    return BindingArg(a[0], elab.term(a[1], env))
                except (SortError, ParseError):
                    pass
            if not force:
                raise
            return SymbolArg(a if isinstance(a, str) else repr(a))

    def _anchor_var_sort(pos, cmd, name):
        closer = closer_of.get(pos)
        scan_targets = []
        if closer is not None:
            scan_targets.append(commands[closer])
        scan_targets.extend(commands[pos + 1:closer])
        for target in scan_targets:
            if isinstance(target, RawStep):
                for lit in target.clause:
                    got = _scan_binder_sort(lit, name)
                    if got is not None:
                        return elab.resolve_sort(got)
            elif isinstance(target, RawAssume):
                got = _scan_binder_sort(target.term, name)
                if got is not None:
                    return elab.resolve_sort(got)
        return None

    def _elab_anchor(pos, cmd, outer_env):
        entries = []
        contributed = {}
        env = dict(outer_env)
        for a in cmd.args:
            if isinstance(a, str):
                sort = _anchor_var_sort(pos, cmd, a)
                if sort is None:
                    raise SortError(f"cannot infer the sort of context "
                                    f"variable {a}")
                entries.append(Fixed(a, sort))
                contributed[a] = sort
                env[a] = sort
                continue
            if isinstance(a, list) and len(a) == 2 and isinstance(a[0], str) \
                    and elab.is_sort_name(a[1]):
                sort = elab.resolve_sort(a[1])
                entries.append(Fixed(a[0], sort))
                contributed[a[0]] = sort
                env[a[0]] = sort
                continue
            if isinstance(a, list) and len(a) == 3 and a[0] == ":=" \
                    and isinstance(a[1], str):
                name, raw_term = a[1], a[2]
            elif isinstance(a, list) and len(a) == 2 \
                    and isinstance(a[0], str):
                name, raw_term = a[0], a[1]
            else:
                raise ParseError(f"malformed anchor argument {a!r}")
            try:
                term = elab.term(raw_term, env)
            except (SortError, ParseError):
                # a bare fresh variable: type it from the conclusion
                if isinstance(raw_term, str):
                    sort = _anchor_var_sort(pos, cmd, raw_term) \
                        or _anchor_var_sort(pos, cmd, name)
                    if sort is None:
                        raise
                    term = store.var(raw_term, sort)
                else:
                    raise
            sort = store.sort(term)
            entries.append(Mapped(name, sort, term))
            contributed[name] = sort
            for vname, vsort in store.free_vars(term):
                contributed.setdefault(vname, vsort)
            env[name] = sort
        return entries, contributed

    pending = list(range(len(commands)))
    while pending:
        progressed = False
        still = []
        for pos in pending:
            try:
                done[pos] = elaborate(pos, commands[pos], force=False)
                progressed = True
            except (_Pending, SortError, ParseError) as exc:
                errors[pos] = exc.cause if isinstance(exc, _Pending) else exc
                still.append(pos)
        pending = still
        if not progressed:
            break
    for pos in list(pending):
        try:
            done[pos] = elaborate(pos, commands[pos], force=True)
            pending.remove(pos)
        except _Pending:
            pass
        except (SortError, ParseError) as exc:
            errors[pos] = exc
    if pending:
        first = min(pending)
        err = errors.get(first) or SortError("unresolved command")
        if isinstance(err, _Pending):
            err = err.cause
        raise err
    return [done[pos] for pos in range(len(commands))]
