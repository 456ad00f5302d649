"""Step DAG construction and the structural rules.

The DAG records, for every command, its premises and the subproof
region it lives in.  Two kinds of region exist: anchor regions, opened
by an anchor command and closed by the step its :step annotation names,
and assume regions, opened by any assume that appears after the leading
assumption block and closed by the next step at the same depth whose
rule is `subproof`.  A closing step belongs to the parent region (its
clause is the only thing visible outside), but may use premises from
the region it closes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .errors import StructureError
from .parser import Anchor, Assume, DefineFun, Fixed, Mapped, Step
from .report import Diagnostic, codes
from .terms import Substitution, TermStore


@dataclass
class Region:
    id: int
    parent: int | None
    kind: str  # "root", "anchor" or "assume"
    opener: int | None = None  # command position of the anchor / assume
    closer: int | None = None  # command position of the closing step
    target: str | None = None
    entries: tuple = ()  # anchor context entries
    assume_index: str | None = None
    depth: int = 0


@dataclass
class ProofDag:
    commands: list
    store: TermStore
    by_index: dict = field(default_factory=dict)  # index -> position
    premises: dict = field(default_factory=dict)  # position -> positions
    regions: list = field(default_factory=list)
    region_of: list = field(default_factory=list)  # per position
    closes: dict = field(default_factory=dict)  # position -> region id
    duplicate_indices: list = field(default_factory=list)

    def command(self, index: str):
        return self.commands[self.by_index[index]]

    def steps(self):
        for pos, cmd in enumerate(self.commands):
            if isinstance(cmd, (Assume, Step)):
                yield pos, cmd

    def max_depth(self):
        return max((r.depth for r in self.regions), default=0)

    def region_chain(self, region_id: int):
        chain = []
        current = region_id
        while current is not None:
            chain.append(current)
            current = self.regions[current].parent
        return chain

    def region_commands(self, region_id: int):
        """Positions strictly inside the region, closer excluded."""
        region = self.regions[region_id]
        start = (region.opener + 1) if region.opener is not None else 0
        end = region.closer if region.closer is not None \
            else len(self.commands)
        return [pos for pos in range(start, end)
                if self.region_of[pos] == region_id or
                self.closes.get(pos) is not None and
                self._closed_parent(pos) == region_id]

    def _closed_parent(self, pos):
        closed = self.closes.get(pos)
        if closed is None:
            return None
        return self.regions[closed].parent

    def last_inner_step(self, region_id: int):
        """The last step command strictly inside the region."""
        region = self.regions[region_id]
        end = region.closer if region.closer is not None \
            else len(self.commands)
        start = (region.opener + 1) if region.opener is not None else 0
        for pos in range(end - 1, start - 1, -1):
            cmd = self.commands[pos]
            if isinstance(cmd, Step) and pos != region.closer:
                return pos
            if isinstance(cmd, Assume) and pos != region.opener:
                return pos
        return None


def build_dag(commands, store: TermStore) -> ProofDag:
    """Index the commands, resolve premises and build the region tree."""
    dag = ProofDag(commands=commands, store=store)
    dag.regions.append(Region(id=0, parent=None, kind="root"))

    # first step/anchor position: assumes before it are the problem
    # assumptions, later assumes open discharge regions
    first_non_assume = next(
        (pos for pos, cmd in enumerate(commands)
         if not isinstance(cmd, (Assume, DefineFun))), len(commands))

    open_stack = [0]
    for pos, cmd in enumerate(commands):
        if isinstance(cmd, (Assume, Step)):
            if cmd.index in dag.by_index:
                dag.duplicate_indices.append(cmd.index)
            else:
                dag.by_index[cmd.index] = pos

    open_anchor_targets = {}
    for pos, cmd in enumerate(commands):
        current = open_stack[-1]
        if isinstance(cmd, Anchor):
            dag.region_of.append(current)
            target_pos = dag.by_index.get(cmd.target)
            if target_pos is None or target_pos <= pos:
                raise StructureError(
                    f"anchor names {cmd.target!r} which does not appear "
                    f"later in the proof")
            region = Region(id=len(dag.regions), parent=current,
                            kind="anchor", opener=pos, target=cmd.target,
                            entries=cmd.entries,
                            depth=dag.regions[current].depth + 1)
            dag.regions.append(region)
            open_stack.append(region.id)
            open_anchor_targets[cmd.target] = region.id
            continue
        if isinstance(cmd, Assume) and pos > first_non_assume:
            dag.region_of.append(current)
            region = Region(id=len(dag.regions), parent=current,
                            kind="assume", opener=pos,
                            assume_index=cmd.index,
                            depth=dag.regions[current].depth + 1)
            dag.regions.append(region)
            open_stack.append(region.id)
            continue
        if isinstance(cmd, Step):
            if cmd.index in open_anchor_targets:
                region_id = open_anchor_targets.pop(cmd.index)
                if open_stack[-1] != region_id:
                    raise StructureError(
                        f"step {cmd.index} closes an anchor region that "
                        f"is not innermost", step=cmd.index)
                open_stack.pop()
                dag.regions[region_id].closer = pos
                dag.closes[pos] = region_id
                dag.region_of.append(open_stack[-1])
                continue
            if cmd.rule == "subproof" and \
                    dag.regions[open_stack[-1]].kind == "assume":
                region_id = open_stack.pop()
                dag.regions[region_id].closer = pos
                dag.closes[pos] = region_id
                dag.region_of.append(open_stack[-1])
                continue
        dag.region_of.append(current)

    if any(dag.regions[rid].kind == "anchor" and dag.regions[rid].closer
           is None for rid in open_stack[1:]):
        raise StructureError("anchor region never closed")

    for pos, cmd in enumerate(commands):
        if not isinstance(cmd, Step):
            continue
        resolved = []
        for premise in cmd.premises:
            ppos = dag.by_index.get(premise)
            if ppos is None:
                raise StructureError(
                    f"step {cmd.index} references unknown premise "
                    f"{premise!r}", step=cmd.index)
            if ppos >= pos:
                raise StructureError(
                    f"step {cmd.index} references {premise!r} which does "
                    f"not appear earlier", step=cmd.index)
            resolved.append(ppos)
        dag.premises[pos] = tuple(resolved)
    return dag


def validate_structure(dag: ProofDag) -> list[Diagnostic]:
    """Structural diagnostics: premise escapes, final step shape,
    undischarged assumptions, duplicate indices."""
    diags = []
    for index in dag.duplicate_indices:
        diags.append(Diagnostic("error", codes.DUPLICATE_INDEX,
                                f"index {index!r} is used twice",
                                step=index))

    for pos, cmd in enumerate(dag.commands):
        if not isinstance(cmd, Step):
            continue
        visible = set(dag.region_chain(dag.region_of[pos]))
        closed_here = dag.closes.get(pos)
        if closed_here is not None:
            visible.add(closed_here)
        for ppos in dag.premises.get(pos, ()):
            phome = dag.region_of[ppos]
            if phome not in visible:
                pcmd = dag.commands[ppos]
                diags.append(Diagnostic(
                    "error", codes.SUBPROOF_PREMISE_ESCAPE,
                    f"step {cmd.index} uses {pcmd.index!r} which lies "
                    f"inside a subproof; only the conclusion of a "
                    f"subproof is visible outside", step=cmd.index,
                    rule=cmd.rule))

    last = dag.commands[-1] if dag.commands else None
    if not (isinstance(last, Step) and not last.clause
            and dag.region_of[len(dag.commands) - 1] == 0):
        diags.append(Diagnostic(
            "error", codes.BAD_FINAL_STEP,
            "the proof must end with an empty-clause step in an empty "
            "context"))

    for region in dag.regions:
        if region.kind == "assume" and region.closer is None:
            cmd = dag.commands[region.opener]
            diags.append(Diagnostic(
                "error", codes.UNDISCHARGED_ASSUME,
                f"assumption {cmd.index!r} is never discharged by a "
                f"subproof step", step=cmd.index))
    return diags


def context_at(dag: ProofDag, pos: int) -> list:
    """Context entries in force at a command, outermost first.

    For a closing step this is the parent context: its conclusion is
    judged outside the region it closes.
    """
    entries = []
    for rid in reversed(dag.region_chain(dag.region_of[pos])):
        region = dag.regions[rid]
        if region.kind == "anchor":
            entries.extend(region.entries)
    return entries


def sigma_of(store: TermStore, entries) -> Substitution:
    """The substitution a context denotes.

    Mappings apply in context order (outer first, newest last).  A fixed
    variable shadows every earlier mapping of the same variable: it is
    protected by renaming it to a fresh variable before the earlier
    mappings apply and renaming it back afterwards.
    """
    def build(items) -> Substitution:
        if not items:
            return Substitution()
        head, last = items[:-1], items[-1]
        inner = build(head)
        if isinstance(last, Mapped):
            return inner.then(last.name, last.sort, last.term)
        shield = store.fresh_name(last.name)
        pre = Substitution(
            (((last.name, last.sort), store.var(shield, last.sort)),))
        return Substitution(pre.mappings + inner.mappings) \
            .then(shield, last.sort, store.var(last.name, last.sort))

    return build(list(entries))


def step_elapsed(fn, *args, **kwargs):
    """Run fn and return (result, elapsed seconds)."""
    start = time.perf_counter()
    result = fn(*args, **kwargs)
    return result, time.perf_counter() - start
