"""Immersions of trees and their monotone completions.

An immersion places one tree inside another preserving betweenness of
triples; its image is center-closed.  Completing an immersion back to an
epimorphism sends every pendant class to its anchor and splits each
corridor class between its two anchors, which always yields a weakly
coherent map.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping

from .families import EpiWithSection
from .morphisms import Epi, check_epi, coherence_at, is_monotone, is_weakly_coherent
from .trees import LabeledTree, partition_from, path


class ImmersionError(Exception):
    pass


class NotImmersion(ImmersionError):
    pass


class MissingWitness(ImmersionError):
    pass


class BetweennessViolated(ImmersionError):
    pass


class InconsistentConstraints(ImmersionError):
    pass


def _path_sets(t: LabeledTree, pairs) -> dict[tuple[int, int], frozenset[int]]:
    out = {}
    for a, c in pairs:
        key = (a, c) if a < c else (c, a)
        if key not in out:
            out[key] = frozenset(path(t.tree, *key))
    return out


@dataclass(frozen=True)
class Immersion:
    """A betweenness-preserving injection of `source` into `target`."""

    source: LabeledTree
    target: LabeledTree
    vmap: tuple[int, ...]

    @cached_property
    def image(self) -> frozenset[int]:
        return frozenset(self.vmap)

    def __call__(self, v: int) -> int:
        return self.vmap[v]


def check_immersion(source: LabeledTree, target: LabeledTree, vmap) -> Immersion:
    vm = tuple(vmap)
    if len(vm) != source.n:
        raise NotImmersion(f"map of length {len(vm)} on {source.n} vertices")
    if len(set(vm)) != source.n:
        raise NotImmersion("an immersion must be injective")
    n = source.n
    pairs = [(a, c) for a in range(n) for c in range(a + 1, n)]
    src_paths = _path_sets(source, pairs)
    tgt_paths = _path_sets(target, [(vm[a], vm[c]) for a, c in pairs])
    for a in range(n):
        for c in range(a + 1, n):
            sp = src_paths[(a, c)]
            key = (vm[a], vm[c]) if vm[a] < vm[c] else (vm[c], vm[a])
            tp = tgt_paths[key]
            for b in range(n):
                if b == a or b == c:
                    continue
                if (b in sp) != (vm[b] in tp):
                    raise BetweennessViolated(
                        f"betweenness of {b} in [{a},{c}] is not preserved"
                    )
    return Immersion(source, target, vm)


def immersion_of_arrow(f: EpiWithSection) -> Immersion:
    """Sections at endpoints, witnesses at ramification points."""
    cod = f.cod
    vmap = []
    for a in range(cod.n):
        deg = cod.tree.degree(a)
        if deg == 1:
            vmap.append(f.section(a))
        elif deg >= 3:
            res = coherence_at(f.epi, a)
            if not res.is_weak:
                raise MissingWitness(f"no witness at ramification point {a}")
            vmap.append(res.witness)
        else:
            raise MissingWitness(f"vertex {a} has order {deg}; no immersion rule applies")
    return check_immersion(cod, f.dom, vmap)


def complete_immersion_to_epi(
    imm: Immersion,
    corridor_targets: "Mapping[tuple[int, int], int] | None" = None,
) -> Epi:
    """Monotone completion of an immersion into an epi target -> source.

    Pendant classes collapse to their anchors.  Corridor path vertices go
    to the nearer anchor (ties toward the anchor with the smaller source
    id), hanging branches following their path vertex; an entry
    (a, a') -> k in corridor_targets instead sends the first k interior
    path vertices from the a side to a.
    """
    src, tgt = imm.source, imm.target
    back = {imm.vmap[v]: v for v in range(src.n)}
    vmap = [-1] * tgt.n
    for v in range(src.n):
        vmap[imm.vmap[v]] = v
    overrides = dict(corridor_targets or {})
    for key in overrides:
        if tuple(sorted(key)) != tuple(key):
            raise InconsistentConstraints(f"corridor key {key} must be sorted")
    for cls in partition_from(tgt.tree, imm.image):
        if cls.kind == "pendant":
            anchor = back[cls.anchors[0]]
            for v in cls.vertices:
                vmap[v] = anchor
            continue
        ia, ib = cls.anchors
        a, b = back[ia], back[ib]
        if a > b:
            a, b = b, a
            ia, ib = ib, ia
        spine = path(tgt.tree, ia, ib)[1:-1]
        k = len(spine)
        if (a, b) in overrides:
            split = overrides[(a, b)]
            if not 0 <= split <= k:
                raise InconsistentConstraints(
                    f"corridor ({a},{b}) has {k} interior vertices, split {split} out of range"
                )
        else:
            split = (k + 1) // 2
        on_spine = {v: (a if j < split else b) for j, v in enumerate(spine)}
        spine_set = set(spine)
        # hanging branches inside the class follow their spine vertex
        for v in sorted(cls.vertices):
            if v in on_spine:
                vmap[v] = on_spine[v]
            else:
                p = path(tgt.tree, v, ia)
                spot = next(x for x in p if x in spine_set)
                vmap[v] = on_spine[spot]
    f = check_epi(tgt, src, tuple(vmap))
    if not is_monotone(f):
        raise InconsistentConstraints("corridor assignment broke monotonicity")
    assert is_weakly_coherent(f), "completed immersions are weakly coherent by construction"
    for v in range(src.n):
        assert f.vmap[imm.vmap[v]] == v
    return f
