"""Finite trees, vertex labels, and elementary tree geometry.

Vertices are dense ids 0..n-1.  Edges are unordered pairs of distinct
vertices; the reflexive pairs required by the topological-graph convention
are implicit and never stored.  All values are immutable after
construction and safe to share.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations
from typing import Iterable, Iterator, Mapping

INF = float("inf")


class TreeError(Exception):
    """Base class for tree construction and query failures."""


class Disconnected(TreeError):
    pass


class Cyclic(TreeError):
    pass


class DuplicateEdge(TreeError):
    pass


class SelfLoopStored(TreeError):
    pass


class UnknownVertex(TreeError):
    pass


class NotDistinct(TreeError):
    pass


class NotCenterClosed(TreeError):
    pass


class InvalidLabel(TreeError):
    pass


def _norm_edge(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


@dataclass(frozen=True)
class Tree:
    """A finite tree on vertices 0..n-1 with a normalized edge tuple."""

    n: int
    edges: tuple[tuple[int, int], ...]

    @cached_property
    def adj(self) -> tuple[tuple[int, ...], ...]:
        nbrs: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        return tuple(tuple(sorted(b)) for b in nbrs)

    @cached_property
    def edge_set(self) -> frozenset[tuple[int, int]]:
        return frozenset(self.edges)

    def has_edge(self, u: int, v: int) -> bool:
        return _norm_edge(u, v) in self.edge_set

    def degree(self, v: int) -> int:
        if not 0 <= v < self.n:
            raise UnknownVertex(f"vertex {v} not in tree on {self.n} vertices")
        return len(self.adj[v])

    def vertices(self) -> range:
        return range(self.n)

    def endpoints(self) -> tuple[int, ...]:
        return tuple(v for v in range(self.n) if self.degree(v) == 1)

    def ramification_points(self) -> tuple[int, ...]:
        return tuple(v for v in range(self.n) if self.degree(v) >= 3)


def validate_tree(vertex_count: int, edge_list: Iterable[Iterable[int]]) -> Tree:
    """Build a Tree, rejecting loops, duplicates, cycles, and disconnection."""
    edges: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    for raw in edge_list:
        u, v = raw
        if not (0 <= u < vertex_count and 0 <= v < vertex_count):
            raise UnknownVertex(f"edge ({u},{v}) leaves vertex range 0..{vertex_count - 1}")
        if u == v:
            raise SelfLoopStored(f"reflexive edge ({u},{u}) must stay implicit")
        e = _norm_edge(u, v)
        if e in seen:
            raise DuplicateEdge(f"edge {e} listed twice")
        seen.add(e)
        edges.append(e)
    edges.sort()
    if vertex_count > 0:
        reached = {0}
        queue = deque([0])
        nbrs: dict[int, list[int]] = {}
        for u, v in edges:
            nbrs.setdefault(u, []).append(v)
            nbrs.setdefault(v, []).append(u)
        while queue:
            x = queue.popleft()
            for y in nbrs.get(x, ()):
                if y not in reached:
                    reached.add(y)
                    queue.append(y)
        if len(reached) < vertex_count:
            raise Disconnected(f"only {len(reached)} of {vertex_count} vertices reachable")
        if len(edges) != vertex_count - 1:
            raise Cyclic(f"{len(edges)} edges on {vertex_count} connected vertices")
    return Tree(vertex_count, tuple(edges))


@dataclass(frozen=True)
class LabeledTree:
    """A tree with an optional order label on some ramification points.

    Labels live in {finite p >= 3} + {INF}.  Construction enforces that
    only ramification points carry labels; whether a label bounds the
    actual vertex order is a family-level question, not checked here.
    """

    tree: Tree
    labels: tuple[tuple[int, "int | float"], ...] = field(default=())

    def __post_init__(self):
        seen = set()
        for v, p in self.labels:
            if v in seen:
                raise InvalidLabel(f"vertex {v} labeled twice")
            seen.add(v)
            if self.tree.degree(v) < 3:
                raise InvalidLabel(f"label on vertex {v} of degree {self.tree.degree(v)}")
            if p != INF and (not isinstance(p, int) or p < 3):
                raise InvalidLabel(f"label {p!r} is neither a finite order >= 3 nor inf")

    @staticmethod
    def make(tree: Tree, labels: Mapping[int, "int | float"] | None = None) -> "LabeledTree":
        items = tuple(sorted((labels or {}).items()))
        return LabeledTree(tree, items)

    @cached_property
    def label_map(self) -> dict[int, "int | float"]:
        return dict(self.labels)

    def label(self, v: int) -> "int | float | None":
        return self.label_map.get(v)

    @property
    def n(self) -> int:
        return self.tree.n

    def relabeled(self, perm: "list[int]") -> "LabeledTree":
        """Apply a permutation (perm[old] = new) to vertices and labels."""
        edges = tuple(sorted(_norm_edge(perm[u], perm[v]) for u, v in self.tree.edges))
        labels = tuple(sorted((perm[v], p) for v, p in self.labels))
        return LabeledTree(Tree(self.tree.n, edges), labels)

    @cached_property
    def canonical_code(self) -> bytes:
        return canonical_code(self)


def unlabeled(tree: Tree) -> LabeledTree:
    return LabeledTree(tree, ())


def order(t: Tree, v: int) -> int:
    """Order of a vertex: component count of the complement, i.e. its degree."""
    return t.degree(v)


def components_after_removal(t: Tree, v: int) -> list[frozenset[int]]:
    """Connected components of t minus v, sorted by minimum vertex id."""
    if not 0 <= v < t.n:
        raise UnknownVertex(f"vertex {v} not in tree on {t.n} vertices")
    memo = t.__dict__.setdefault("_components_memo", {})
    if v in memo:
        return memo[v]
    seen = {v}
    comps = []
    for start in t.adj[v]:
        if start in seen:
            continue
        comp = {start}
        seen.add(start)
        queue = deque([start])
        while queue:
            x = queue.popleft()
            for y in t.adj[x]:
                if y not in seen:
                    seen.add(y)
                    comp.add(y)
                    queue.append(y)
        comps.append(frozenset(comp))
    comps.sort(key=min)
    memo[v] = comps
    return comps


def component_of(t: Tree, removed: int, inside: int) -> frozenset[int]:
    """The component of t minus `removed` containing `inside`."""
    for comp in components_after_removal(t, removed):
        if inside in comp:
            return comp
    raise UnknownVertex(f"vertex {inside} equals removed vertex {removed}")


def path(t: Tree, a: int, b: int) -> list[int]:
    """The unique simple path from a to b, inclusive."""
    for v in (a, b):
        if not 0 <= v < t.n:
            raise UnknownVertex(f"vertex {v} not in tree on {t.n} vertices")
    if a == b:
        return [a]
    parent = {a: None}
    queue = deque([a])
    while queue:
        x = queue.popleft()
        if x == b:
            break
        for y in t.adj[x]:
            if y not in parent:
                parent[y] = x
                queue.append(y)
    out = [b]
    while out[-1] != a:
        out.append(parent[out[-1]])
    out.reverse()
    return out


def center(t: Tree, x: int, y: int, z: int) -> int:
    """The median of three distinct vertices: the common point of their pairwise paths."""
    if len({x, y, z}) != 3:
        raise NotDistinct(f"center needs three distinct vertices, got {(x, y, z)}")
    common = set(path(t, x, y)) & set(path(t, y, z)) & set(path(t, x, z))
    assert len(common) == 1, f"tree median must be unique, got {common}"
    return next(iter(common))


def center_closure(t: Tree, s: Iterable[int]) -> frozenset[int]:
    """Smallest superset of s closed under taking centers of triples.

    Equals s plus the branch vertices of the subtree spanning s, which a
    single pass computes; the fixpoint property is covered by tests.
    """
    vs = set(s)
    if not vs:
        raise NotDistinct("center closure of an empty set")
    for v in vs:
        if not 0 <= v < t.n:
            raise UnknownVertex(f"vertex {v} not in tree on {t.n} vertices")
    span: set[int] = set()
    base = min(vs)
    for v in vs:
        span.update(path(t, base, v))
    # degree within the spanning subtree
    for v in span:
        if v in vs:
            continue
        d = sum(1 for w in t.adj[v] if w in span)
        if d >= 3:
            vs.add(v)
    return frozenset(vs)


@dataclass(frozen=True)
class PartitionClass:
    """One class of the partition induced by a center-closed set.

    kind is "pendant" (anchored at a single retained vertex) or "corridor"
    (strictly between two retained vertices with nothing retained inside).
    """

    kind: str
    anchors: tuple[int, ...]
    vertices: frozenset[int]


def partition_from(t: Tree, f: Iterable[int]) -> list[PartitionClass]:
    """Partition of t minus f into tagged pendant and corridor classes."""
    fs = frozenset(f)
    if center_closure(t, fs) != fs:
        raise NotCenterClosed(f"{sorted(fs)} is not center-closed")
    seen = set(fs)
    classes = []
    for start in range(t.n):
        if start in seen:
            continue
        comp = {start}
        seen.add(start)
        queue = deque([start])
        boundary: set[int] = set()
        while queue:
            x = queue.popleft()
            for y in t.adj[x]:
                if y in fs:
                    boundary.add(y)
                elif y not in seen:
                    seen.add(y)
                    comp.add(y)
                    queue.append(y)
        anchors = tuple(sorted(boundary))
        # a center-closed boundary meets at most two retained vertices
        assert 1 <= len(anchors) <= 2, f"component boundary {anchors} too large"
        kind = "pendant" if len(anchors) == 1 else "corridor"
        classes.append(PartitionClass(kind, anchors, frozenset(comp)))
    classes.sort(key=lambda c: min(c.vertices))
    return classes


# ---------------------------------------------------------------------------
# canonical forms


def _tree_centroids(t: Tree) -> list[int]:
    n = t.n
    if n == 1:
        return [0]
    deg = [t.degree(v) for v in range(n)]
    leaves = [v for v in range(n) if deg[v] == 1]
    removed = len(leaves)
    while removed < n:
        nxt = []
        for u in leaves:
            deg[u] = 0
            for v in t.adj[u]:
                if deg[v] > 0:
                    deg[v] -= 1
                    if deg[v] == 1:
                        nxt.append(v)
        removed += len(nxt)
        leaves = nxt
    return leaves


def _label_token(p: "int | float | None") -> tuple:
    if p is None:
        return (0,)
    if p == INF:
        return (2,)
    return (1, p)


def _rooted_code(t: LabeledTree, root: int, parent: int) -> tuple:
    children = [v for v in t.tree.adj[root] if v != parent]
    subs = sorted(_rooted_code(t, v, root) for v in children)
    return (_label_token(t.label(root)), tuple(subs))


def canonical_code(t: LabeledTree) -> bytes:
    """A byte string equal across exactly the label-preserving isomorphs of t."""
    best = min(_rooted_code(t, c, -1) for c in _tree_centroids(t.tree))
    return repr((t.n, best)).encode()


def is_isomorphic(t1: LabeledTree, t2: LabeledTree) -> bool:
    return t1.canonical_code == t2.canonical_code


def isomorphisms(t1: LabeledTree, t2: LabeledTree) -> list[list[int]]:
    """All label-preserving isomorphisms t1 -> t2 as vertex arrays."""
    if t1.n != t2.n or len(t1.tree.edges) != len(t2.tree.edges):
        return []
    n = t1.n
    if n == 0:
        return [[]]
    deg1 = [t1.tree.degree(v) for v in range(n)]
    deg2 = [t2.tree.degree(v) for v in range(n)]
    if sorted(deg1) != sorted(deg2):
        return []
    # assign vertices of t1 in BFS order so each new vertex has a mapped neighbor
    bfs: list[int] = [0]
    seen = {0}
    for x in bfs:
        for y in t1.tree.adj[x]:
            if y not in seen:
                seen.add(y)
                bfs.append(y)
    out: list[list[int]] = []
    image = [-1] * n
    used = [False] * n

    def feasible(v: int, w: int) -> bool:
        if deg1[v] != deg2[w] or t1.label(v) != t2.label(w):
            return False
        for u in t1.tree.adj[v]:
            if image[u] != -1 and not t2.tree.has_edge(image[u], w):
                return False
        return True

    def rec(i: int):
        if i == n:
            out.append(image.copy())
            return
        v = bfs[i]
        for w in range(n):
            if not used[w] and feasible(v, w):
                image[v] = w
                used[w] = True
                rec(i + 1)
                image[v] = -1
                used[w] = False

    rec(0)
    return out


def automorphisms(t: LabeledTree) -> list[list[int]]:
    return isomorphisms(t, t)


def canonical_form(t: LabeledTree) -> tuple[LabeledTree, list[int]]:
    """A canonical representative of t's isomorphism class plus one relabeling into it.

    The representative depends only on the class; the permutation maps old
    ids to representative ids.
    """
    best: LabeledTree | None = None
    best_perm: list[int] | None = None
    n = t.n
    for root in _tree_centroids(t.tree):
        perm = [-1] * n
        counter = 0

        def assign(v: int, parent: int):
            nonlocal counter
            perm[v] = counter
            counter += 1
            children = sorted(
                (w for w in t.tree.adj[v] if w != parent),
                key=lambda w: _rooted_code(t, w, v),
            )
            for w in children:
                assign(w, v)

        assign(root, -1)
        cand = t.relabeled(perm)
        if best is None or cand.canonical_code < best.canonical_code or (
            cand.canonical_code == best.canonical_code
            and (cand.tree.edges, cand.labels) < (best.tree.edges, best.labels)
        ):
            best, best_perm = cand, perm
    assert best is not None and best_perm is not None
    return best, best_perm


# ---------------------------------------------------------------------------
# serialization


def tree_to_json(t: LabeledTree) -> dict:
    out: dict = {"n": t.n, "edges": [list(e) for e in t.tree.edges]}
    if t.labels:
        out["labels"] = {
            str(v): ("inf" if p == INF else p) for v, p in t.labels
        }
    return out


def tree_from_json(data: Mapping) -> LabeledTree:
    tree = validate_tree(int(data["n"]), data.get("edges", []))
    labels = {}
    for k, p in (data.get("labels") or {}).items():
        labels[int(k)] = INF if p == "inf" else int(p)
    return LabeledTree.make(tree, labels)


def tree_to_dot(t: LabeledTree, name: str = "T", highlight: Iterable[int] = ()) -> str:
    hi = set(highlight)
    lines = [f"graph {name} {{"]
    for v in range(t.n):
        p = t.label(v)
        text = f"{v}" if p is None else f"{v} (p={'inf' if p == INF else p})"
        extra = ', style=filled, fillcolor="gray80"' if v in hi else ""
        lines.append(f'  {v} [label="{text}"{extra}];')
    for u, v in t.tree.edges:
        lines.append(f"  {u} -- {v};")
    lines.append("}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# small constructors shared by tests and builders


def star(k: int) -> Tree:
    """A star with center 0 and k leaves."""
    return validate_tree(k + 1, [(0, i) for i in range(1, k + 1)])


def path_tree(n: int) -> Tree:
    return validate_tree(n, [(i, i + 1) for i in range(n - 1)])


def tree_from_prufer(seq: tuple[int, ...], n: int) -> Tree:
    """Decode a Prufer sequence over 0..n-1 into the corresponding tree."""
    deg = [1] * n
    for x in seq:
        deg[x] += 1
    edges = []
    leaf_heap = sorted(v for v in range(n) if deg[v] == 1)
    import heapq

    heapq.heapify(leaf_heap)
    for x in seq:
        leaf = heapq.heappop(leaf_heap)
        edges.append(_norm_edge(leaf, x))
        deg[x] -= 1
        if deg[x] == 1:
            heapq.heappush(leaf_heap, x)
    u = heapq.heappop(leaf_heap)
    v = heapq.heappop(leaf_heap)
    edges.append(_norm_edge(u, v))
    return validate_tree(n, edges)


_ALL_TREES_CACHE: dict[int, tuple[Tree, ...]] = {}


def all_trees(n: int) -> list[Tree]:
    """All unlabeled trees on n vertices, one canonical representative each.

    Grown by leaf attachment: every tree on n vertices arises from some
    tree on n-1 vertices by sprouting one leaf.
    """
    if n <= 0:
        return []
    if n in _ALL_TREES_CACHE:
        return list(_ALL_TREES_CACHE[n])
    if n == 1:
        out = [Tree(1, ())]
    else:
        reps: dict[bytes, Tree] = {}
        for base in all_trees(n - 1):
            for v in range(base.n):
                t = Tree(n, tuple(sorted(base.edges + (_norm_edge(v, n - 1),))))
                code = canonical_code(unlabeled(t))
                if code not in reps:
                    canon, _ = canonical_form(unlabeled(t))
                    reps[code] = canon.tree
        out = [reps[c] for c in sorted(reps)]
    _ALL_TREES_CACHE[n] = tuple(out)
    return out


def dumps_canonical(data) -> str:
    """Deterministic JSON: sorted keys, no whitespace jitter."""
    return json.dumps(data, sort_keys=True, separators=(",", ":")) + "\n"
