"""Epimorphisms of finite trees and their coherence structure.

An epimorphism is a vertex surjection that preserves edges forward
(allowing collapse, since reflexive pairs are implicit) and reflects
every codomain edge backward.  Monotone means connected fibers.  A
monotone map is weakly coherent at a codomain ramification point when
some fiber vertex, the witness, receives an injection of complement
components compatible with preimages; coherent when that injection is a
bijection between equal orders.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Iterator

from .trees import (
    LabeledTree,
    Tree,
    components_after_removal,
    order,
)


class MorphismError(Exception):
    """Base class for epimorphism construction and query failures."""


class NotSurjective(MorphismError):
    pass


class EdgeNotPreserved(MorphismError):
    pass


class EdgeNotReflected(MorphismError):
    pass


class DomainMismatch(MorphismError):
    pass


class NotRamification(MorphismError):
    pass


class NotMonotone(MorphismError):
    pass


class WitnessNotUnique(MorphismError):
    """Internal invariant failure: two vertices both pass the witness test."""


class EnumerationBudgetExceeded(MorphismError):
    pass


@dataclass(frozen=True)
class Epi:
    """A validated epimorphism dom -> cod; construct via check_epi."""

    dom: LabeledTree
    cod: LabeledTree
    vmap: tuple[int, ...]

    def __call__(self, v: int) -> int:
        return self.vmap[v]

    @cached_property
    def fibers(self) -> tuple[tuple[int, ...], ...]:
        out: list[list[int]] = [[] for _ in range(self.cod.n)]
        for v, w in enumerate(self.vmap):
            out[w].append(v)
        return tuple(tuple(f) for f in out)

    def fiber(self, a: int) -> tuple[int, ...]:
        return self.fibers[a]

    def preimage(self, vs: Iterable[int]) -> set[int]:
        out: set[int] = set()
        for a in vs:
            out.update(self.fibers[a])
        return out

    def is_injective(self) -> bool:
        return self.dom.n == self.cod.n

    def inverse_vmap(self) -> tuple[int, ...]:
        assert self.is_injective()
        inv = [0] * self.cod.n
        for v, w in enumerate(self.vmap):
            inv[w] = v
        return tuple(inv)


def check_epi(dom: LabeledTree, cod: LabeledTree, vmap: Iterable[int]) -> Epi:
    """Validate a vertex map as an epimorphism, or raise."""
    vm = tuple(vmap)
    if len(vm) != dom.n:
        raise DomainMismatch(f"map of length {len(vm)} on a domain of {dom.n} vertices")
    for w in vm:
        if not 0 <= w < cod.n:
            raise DomainMismatch(f"image {w} outside codomain range 0..{cod.n - 1}")
    if len(set(vm)) != cod.n:
        raise NotSurjective(f"image covers {len(set(vm))} of {cod.n} codomain vertices")
    for u, v in dom.tree.edges:
        if vm[u] != vm[v] and not cod.tree.has_edge(vm[u], vm[v]):
            raise EdgeNotPreserved(f"edge ({u},{v}) maps to non-edge ({vm[u]},{vm[v]})")
    reflected = {e: False for e in cod.tree.edges}
    for u, v in dom.tree.edges:
        if vm[u] != vm[v]:
            key = (vm[u], vm[v]) if vm[u] < vm[v] else (vm[v], vm[u])
            reflected[key] = True
    missing = [e for e, ok in reflected.items() if not ok]
    if missing:
        raise EdgeNotReflected(f"codomain edges {missing} have no edge preimage")
    return Epi(dom, cod, vm)


def identity_epi(t: LabeledTree) -> Epi:
    return Epi(t, t, tuple(range(t.n)))


def _fiber_connected(tree: Tree, fiber: tuple[int, ...]) -> bool:
    if len(fiber) <= 1:
        return True
    fs = set(fiber)
    seen = {fiber[0]}
    queue = deque([fiber[0]])
    while queue:
        x = queue.popleft()
        for y in tree.adj[x]:
            if y in fs and y not in seen:
                seen.add(y)
                queue.append(y)
    return len(seen) == len(fs)


def is_monotone(f: Epi) -> bool:
    """True iff every vertex fiber induces a connected subtree."""
    cached = f.__dict__.get("_monotone")
    if cached is None:
        cached = all(_fiber_connected(f.dom.tree, fib) for fib in f.fibers)
        f.__dict__["_monotone"] = cached
    return cached


@dataclass(frozen=True)
class CoherenceResult:
    """Outcome of the witness search at one codomain ramification point."""

    kind: str  # "coherent" | "weakly_coherent" | "incoherent"
    witness: int | None
    injection: tuple[int, ...] | None  # component index in cod -> component index in dom

    @property
    def is_weak(self) -> bool:
        return self.kind in ("coherent", "weakly_coherent")

    @property
    def is_coherent(self) -> bool:
        return self.kind == "coherent"


def _witness_injection(f: Epi, a: int, b: int) -> tuple[int, ...] | None:
    """The forced component injection if b witnesses weak coherence at a."""
    cod_comps = components_after_removal(f.cod.tree, a)
    dom_comps = components_after_removal(f.dom.tree, b)
    comp_index = {}
    for j, comp in enumerate(dom_comps):
        for v in comp:
            comp_index[v] = j
    assignment = []
    for comp in cod_comps:
        targets = {comp_index[v] for v in f.preimage(comp) if v != b}
        if len(targets) != 1:
            return None
        assignment.append(next(iter(targets)))
    if len(set(assignment)) != len(assignment):
        return None
    return tuple(assignment)


def coherence_at(f: Epi, a: int) -> CoherenceResult:
    """Classify f at codomain vertex a and return the unique witness if any."""
    n = order(f.cod.tree, a)
    if n < 3:
        raise NotRamification(f"vertex {a} has order {n}")
    if not is_monotone(f):
        raise NotMonotone("coherence is only defined for monotone epimorphisms")
    memo = f.__dict__.setdefault("_coherence_memo", {})
    if a in memo:
        return memo[a]
    found: CoherenceResult | None = None
    for b in f.fiber(a):
        inj = _witness_injection(f, a, b)
        if inj is None:
            continue
        kind = "coherent" if order(f.dom.tree, b) == n else "weakly_coherent"
        result = CoherenceResult(kind, b, inj)
        if found is not None:
            raise WitnessNotUnique(
                f"both {found.witness} and {b} witness weak coherence at {a}"
            )
        found = result
    result = found if found is not None else CoherenceResult("incoherent", None, None)
    memo[a] = result
    return result


def witness_of(f: Epi, a: int) -> int | None:
    """The weak-coherence witness of f at a, or None."""
    res = coherence_at(f, a)
    return res.witness if res.is_weak else None


def coherence_report(f: Epi) -> dict[int, CoherenceResult]:
    return {a: coherence_at(f, a) for a in f.cod.tree.ramification_points()}


def is_weakly_coherent(f: Epi) -> bool:
    if not is_monotone(f):
        return False
    return all(coherence_at(f, a).is_weak for a in f.cod.tree.ramification_points())


def is_coherent(f: Epi) -> bool:
    if not is_monotone(f):
        return False
    return all(coherence_at(f, a).is_coherent for a in f.cod.tree.ramification_points())


def compose(f: Epi, g: Epi) -> Epi:
    """The composite of f: B -> A after g: C -> B, as a map C -> A."""
    if g.cod != f.dom:
        raise DomainMismatch("codomain of the inner map must equal domain of the outer map")
    return check_epi(g.dom, f.cod, tuple(f.vmap[w] for w in g.vmap))


# ---------------------------------------------------------------------------
# exhaustive enumeration


PREDICATES: dict[str, Callable[[Epi], bool]] = {
    "all": lambda f: True,
    "monotone": is_monotone,
    "weakly_coherent": is_weakly_coherent,
    "coherent": is_coherent,
}


def _bfs_order(t: Tree) -> list[int]:
    if t.n == 0:
        return []
    out = [0]
    seen = {0}
    for x in out:
        for y in t.adj[x]:
            if y not in seen:
                seen.add(y)
                out.append(y)
    return out


def iter_epi_vmaps(
    dom: LabeledTree,
    cod: LabeledTree,
    image_constraint: Callable[[int], Iterable[int]] | None = None,
) -> Iterator[tuple[int, ...]]:
    """Backtracking generator of all epimorphism vertex maps dom -> cod.

    The forward edge condition prunes during assignment; surjectivity and
    edge reflection are checked at the leaves.  image_constraint narrows
    the allowed images of each domain vertex before structural pruning.
    """
    nd, nc = dom.n, cod.n
    if nd < nc:
        return
    bfs = _bfs_order(dom.tree)
    image = [-1] * nd
    covered = [0] * nc
    uncovered = nc

    def rec(i: int) -> Iterator[tuple[int, ...]]:
        nonlocal uncovered
        if i == nd:
            # edge reflection: every codomain edge needs an edge preimage
            hit = set()
            for u, v in dom.tree.edges:
                a, b = image[u], image[v]
                if a != b:
                    hit.add((a, b) if a < b else (b, a))
            if len(hit) == len(cod.tree.edges):
                yield tuple(image)
            return
        if uncovered > nd - i:
            return
        v = bfs[i]
        anchored = [u for u in dom.tree.adj[v] if image[u] != -1]
        if anchored:
            w0 = image[anchored[0]]
            candidates = set(cod.tree.adj[w0]) | {w0}
            for u in anchored[1:]:
                wu = image[u]
                candidates &= set(cod.tree.adj[wu]) | {wu}
        else:
            candidates = set(range(nc))
        if image_constraint is not None:
            candidates &= set(image_constraint(v))
        for w in sorted(candidates):
            image[v] = w
            covered[w] += 1
            if covered[w] == 1:
                uncovered -= 1
            yield from rec(i + 1)
            covered[w] -= 1
            if covered[w] == 0:
                uncovered += 1
            image[v] = -1

    yield from rec(0)


def enumerate_epis(
    dom: LabeledTree,
    cod: LabeledTree,
    predicate: str | Callable[[Epi], bool] = "all",
    cap: int | None = 8,
) -> list[Epi]:
    """Complete, duplicate-free, vmap-sorted list of epis dom -> cod passing predicate."""
    if cap is not None and max(dom.n, cod.n) > cap:
        raise EnumerationBudgetExceeded(
            f"exhaustive enumeration capped at {cap} vertices, got {max(dom.n, cod.n)}"
        )
    pred = PREDICATES[predicate] if isinstance(predicate, str) else predicate
    out = []
    for vmap in iter_epi_vmaps(dom, cod):
        f = Epi(dom, cod, vmap)
        if pred(f):
            out.append(f)
    out.sort(key=lambda f: f.vmap)
    return out
