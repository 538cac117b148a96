"""Explicit constructions: edge splitting, joint projection, amalgamation.

The amalgamation engine recurses on the total nontrivial edge count of
the two legs.  At a ramification target with a partially collapsed
component it cuts that fiber segment out, amalgamates the smaller
diagram, and splices the segment back on the unique edge between the
relevant fibers.  When every fiber-meeting component lies inside the
fiber it amalgamates one corridor diagram per complement component and
joins the leftover fiber bushes through a fresh hub.  At an endpoint
target it collapses the fiber and glues it back onto a section-chosen
endpoint of the smaller amalgam.  Labels ride along unchanged and
endpoint sections are maintained case by case.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .families import (
    DDFP,
    EpiWithSection,
    Family,
    OrderSet,
    arrow_in_family,
    check_ep_arrow,
    compose_arrows,
    padding_order,
    proj_of,
)
from .morphisms import Epi, check_epi, coherence_at, is_monotone
from .trees import (
    INF,
    LabeledTree,
    Tree,
    components_after_removal,
    validate_tree,
)


class ConstructionError(Exception):
    pass


class NotAnEdge(ConstructionError):
    pass


class NoEndpoint(ConstructionError):
    pass


class InvalidCospan(ConstructionError):
    pass


class RecursionBudgetExceeded(ConstructionError):
    pass


class AmalgamationInternalError(ConstructionError):
    """The engine produced something violating its own invariants."""


# ---------------------------------------------------------------------------
# small tree surgery helpers


def _build(n: int, edges: Iterable[tuple[int, int]], labels: Mapping[int, "int | float"]) -> LabeledTree:
    return LabeledTree.make(validate_tree(n, edges), dict(labels))


def _induced(
    t: LabeledTree, keep: Iterable[int], extra_edges: Iterable[tuple[int, int]] = (),
    strip_labels: Iterable[int] = (),
) -> tuple[LabeledTree, dict[int, int]]:
    """Induced subtree on `keep` plus extra edges, re-densified.

    Returns the new tree and the old-id to new-id translation.  Labels of
    vertices in strip_labels are dropped (their degree changed).
    """
    kept = sorted(set(keep))
    trans = {v: i for i, v in enumerate(kept)}
    stripped = set(strip_labels)
    edges = [
        (trans[u], trans[v])
        for u, v in t.tree.edges
        if u in trans and v in trans
    ]
    edges.extend((trans[u], trans[v]) for u, v in extra_edges)
    labels = {trans[v]: p for v, p in t.labels if v in trans and v not in stripped}
    return _build(len(kept), edges, labels), trans


def edge_key(u: int, v: int) -> tuple[int, int]:
    return (u, v) if u < v else (v, u)


# ---------------------------------------------------------------------------
# edge splitting


def split_edge(t: LabeledTree, e: tuple[int, int]) -> tuple[LabeledTree, Epi, Epi]:
    """Split one edge by a fresh degree-2 vertex; return both collapse maps."""
    a, b = e
    if not t.tree.has_edge(a, b):
        raise NotAnEdge(f"({a},{b}) is not an edge")
    star_id = t.n
    edges = [edge for edge in t.tree.edges if edge != edge_key(a, b)]
    edges += [edge_key(a, star_id), edge_key(star_id, b)]
    h = _build(t.n + 1, edges, t.label_map)
    vmap_a = tuple(list(range(t.n)) + [a])
    vmap_b = tuple(list(range(t.n)) + [b])
    return h, check_epi(h, t, vmap_a), check_epi(h, t, vmap_b)


def split_edge_padded(
    t: LabeledTree, e: tuple[int, int], fam: Family, pad_to: int | None = None,
    pad_label: "int | float | None" = None,
) -> tuple[LabeledTree, Epi, Epi]:
    """Split an edge and grow the fresh vertex to an allowed order.

    By default the fresh vertex is padded with leaves up to the family's
    least allowed finite order (or just to order 3 when only infinity is
    allowed) and labeled accordingly; pad_to overrides the target order.
    """
    a, b = e
    if not t.tree.has_edge(a, b):
        raise NotAnEdge(f"({a},{b}) is not an edge")
    if pad_to is None:
        pad_to, pad_label = padding_order(fam)
    elif pad_label is None and fam.kind == DDFP:
        pad_label = pad_to if fam.orders.contains(pad_to) else INF
    star_id = t.n
    pads = list(range(t.n + 1, t.n + 1 + (pad_to - 2)))
    edges = [edge for edge in t.tree.edges if edge != edge_key(a, b)]
    edges += [edge_key(a, star_id), edge_key(star_id, b)]
    edges += [edge_key(star_id, p) for p in pads]
    labels = dict(t.label_map)
    if pad_label is not None:
        labels[star_id] = pad_label
    h = _build(t.n + 1 + len(pads), edges, labels)
    vmap_a = tuple(list(range(t.n)) + [a] * (1 + len(pads)))
    vmap_b = tuple(list(range(t.n)) + [b] * (1 + len(pads)))
    return h, check_epi(h, t, vmap_a), check_epi(h, t, vmap_b)


def refinement_arrow(t: LabeledTree, fam: Family) -> Epi:
    """Double-split every edge with padding; collapse halves toward both ends.

    Each edge (u,v) becomes u - w_u - w_v - v with both fresh vertices
    padded to an allowed order; w_u and its pads map to u, w_v and its
    pads to v.  Every original vertex therefore picks up fresh endpoint
    preimages, and no original triple stays edge-adjacent upstream.
    """
    pad_to, pad_label = padding_order(fam)
    n = t.n
    edges: list[tuple[int, int]] = []
    labels = dict(t.label_map)
    vmap = list(range(n))
    nxt = n

    def fresh(target: int) -> int:
        nonlocal nxt
        vid = nxt
        nxt += 1
        vmap.append(target)
        if pad_label is not None:
            labels[vid] = pad_label
        for _ in range(pad_to - 3):
            pad = nxt
            nxt += 1
            vmap.append(target)
            edges.append(edge_key(vid, pad))
        return vid

    for u, v in t.tree.edges:
        wu = fresh(u)
        wv = fresh(v)
        # the split vertices keep one pad each beyond the chain edges
        pu = nxt
        nxt += 1
        vmap.append(u)
        edges.append(edge_key(wu, pu))
        pv = nxt
        nxt += 1
        vmap.append(v)
        edges.append(edge_key(wv, pv))
        edges += [edge_key(u, wu), edge_key(wu, wv), edge_key(wv, v)]
    h = _build(nxt, edges, labels)
    return check_epi(h, t, tuple(vmap))


def enlarge_arrow(t: LabeledTree, v: int, add: int) -> Epi:
    """Attach `add` fresh leaves to v, all mapping back to v."""
    if add < 1:
        raise ConstructionError("enlargement must add at least one leaf")
    n = t.n
    edges = list(t.tree.edges) + [edge_key(v, n + i) for i in range(add)]
    h = _build(n + add, edges, t.label_map)
    return check_epi(h, t, tuple(list(range(n)) + [v] * add))


def with_identity_section(f: Epi) -> EpiWithSection:
    """Wrap an epi fixing every codomain endpoint with the identity section."""
    return check_ep_arrow(f, {y: y for y in f.cod.tree.endpoints()})


def as_family_arrow(f: Epi, fam: Family) -> "Epi | EpiWithSection":
    return with_identity_section(f) if fam.uses_sections else f


# ---------------------------------------------------------------------------
# joint projection


def joint_projection(
    a: LabeledTree, b: LabeledTree, fam: Family
) -> "tuple[LabeledTree, Epi | EpiWithSection, Epi | EpiWithSection]":
    """Wedge two family objects at an endpoint each and pad the hub.

    The first map restricts to the identity on the first factor; the
    second symmetrically.  Section images avoid the padding leaves.
    """
    if a.n == 1 or b.n == 1:
        # wedging with a point degenerates to the other factor
        if fam.uses_sections:
            raise NoEndpoint("section-mode objects always have endpoints")
        other, point_first = (b, True) if a.n == 1 else (a, False)
        point = a if point_first else b
        const = check_epi(other, point, (0,) * other.n)
        ident = check_epi(other, other, tuple(range(other.n)))
        return (other, const, ident) if point_first else (other, ident, const)
    a_ends, b_ends = a.tree.endpoints(), b.tree.endpoints()
    if not a_ends or not b_ends:
        raise NoEndpoint("joint projection needs an endpoint in each factor")
    a0, b0 = min(a_ends), min(b_ends)
    pad_to, pad_label = padding_order(fam)
    n_a = a.n
    b_keep = [v for v in range(b.n) if v != b0]
    b_trans = {v: n_a + i for i, v in enumerate(b_keep)}
    b_trans[b0] = a0  # the wedge hub
    n = n_a + len(b_keep)
    hub_degree = a.tree.degree(a0) + b.tree.degree(b0)
    pads = list(range(n, n + max(0, pad_to - hub_degree)))
    edges = list(a.tree.edges)
    edges += [edge_key(b_trans[u], b_trans[v]) for u, v in b.tree.edges]
    edges += [edge_key(a0, p) for p in pads]
    labels = {v: p for v, p in a.labels if v != a0}
    labels.update({b_trans[v]: p for v, p in b.labels if v != b0})
    if pad_label is not None:
        labels[a0] = pad_label
    c = _build(n + len(pads), edges, labels)
    vmap_a = [a0] * c.n
    for v in range(n_a):
        vmap_a[v] = v
    vmap_b = [b0] * c.n
    for v in range(b.n):
        vmap_b[b_trans[v]] = v
    f1 = check_epi(c, a, tuple(vmap_a))
    f2 = check_epi(c, b, tuple(vmap_b))
    if not fam.uses_sections:
        return c, f1, f2
    b_copy_ends = sorted(b_trans[y] for y in b_ends if y != b0)
    a_copy_ends = sorted(y for y in a_ends if y != a0)
    if not b_copy_ends or not a_copy_ends:
        raise NoEndpoint("each factor needs a second endpoint to anchor the sections")
    emb1 = {y: y for y in a_ends if y != a0}
    emb1[a0] = b_copy_ends[0]
    emb2 = {y: b_trans[y] for y in b_ends if y != b0}
    emb2[b0] = a_copy_ends[0]
    return c, check_ep_arrow(f1, emb1), check_ep_arrow(f2, emb2)


# ---------------------------------------------------------------------------
# amalgamation


@dataclass(frozen=True)
class Cospan:
    """Two family arrows with a shared codomain: f: B -> A and g: C -> A."""

    f: "Epi | EpiWithSection"
    g: "Epi | EpiWithSection"
    family: Family

    def __post_init__(self):
        if proj_of(self.f).cod != proj_of(self.g).cod:
            raise InvalidCospan("legs of a cospan must share their codomain")


@dataclass(frozen=True)
class Amalgam:
    """An object with arrows onto both cospan legs making the square commute."""

    obj: LabeledTree
    h1: "Epi | EpiWithSection"
    h2: "Epi | EpiWithSection"


@dataclass
class _Arrow:
    """Engine-internal arrow: raw epi plus an optional endpoint section."""

    epi: Epi
    emb: dict[int, int] | None

    @property
    def dom(self) -> LabeledTree:
        return self.epi.dom

    @property
    def cod(self) -> LabeledTree:
        return self.epi.cod

    @property
    def vmap(self) -> tuple[int, ...]:
        return self.epi.vmap


@dataclass
class _Ctx:
    pad_to: int
    pad_label: "int | float | None"
    with_sections: bool
    budget: int

    def tick(self):
        self.budget -= 1
        if self.budget <= 0:
            raise RecursionBudgetExceeded("amalgamation recursion budget exhausted")


def _witness(arr: _Arrow, a: int, what: str) -> tuple[int, tuple[int, ...]]:
    res = coherence_at(arr.epi, a)
    if not res.is_weak:
        raise InvalidCospan(f"{what} is not weakly coherent at {a}")
    return res.witness, res.injection


def _partial_component(arr: _Arrow, a: int, b: int) -> frozenset | None:
    """First component of dom minus witness meeting the fiber of a only partially."""
    fiber = set(arr.epi.fiber(a))
    for comp in components_after_removal(arr.dom.tree, b):
        inter = comp & fiber
        if inter and inter != comp:
            return comp
    return None


def _iso_shortcut(f: _Arrow, g: _Arrow, ctx: _Ctx) -> tuple[LabeledTree, _Arrow, _Arrow]:
    """f is bijective: reuse C as the amalgam."""
    inv = f.epi.inverse_vmap()
    c = g.dom
    h1_vmap = tuple(inv[g.vmap[v]] for v in range(c.n))
    h1_emb = None
    h2_emb = None
    if ctx.with_sections:
        h1_emb = {y: g.emb[f.vmap[y]] for y in f.dom.tree.endpoints()}
        h2_emb = {y: y for y in c.tree.endpoints()}
    h1 = _Arrow(Epi(c, f.dom, h1_vmap), h1_emb)
    h2 = _Arrow(Epi(c, c, tuple(range(c.n))), h2_emb)
    return c, h1, h2


def _wedge_fallback(f: _Arrow, g: _Arrow, ctx: _Ctx) -> tuple[LabeledTree, _Arrow, _Arrow]:
    """Codomain is a single point: any wedge of the legs amalgamates."""
    assert not ctx.with_sections, "section-mode cospans always have ramified codomains"
    pseudo = Family("FP", OrderSet(frozenset({ctx.pad_to}), None, True))
    c, h1, h2 = joint_projection(f.dom, g.dom, pseudo)
    return c, _Arrow(h1, None), _Arrow(h2, None)


def _amalg(f: _Arrow, g: _Arrow, ctx: _Ctx) -> tuple[LabeledTree, _Arrow, _Arrow]:
    ctx.tick()
    a_tree = f.cod
    if f.epi.is_injective():
        return _iso_shortcut(f, g, ctx)
    if g.epi.is_injective():
        c, k1, k2 = _iso_shortcut(g, f, ctx)
        return c, k2, k1
    if a_tree.n == 1:
        return _wedge_fallback(f, g, ctx)
    target = min(a for a in range(a_tree.n) if len(f.epi.fiber(a)) > 1)
    deg = a_tree.tree.degree(target)
    if deg >= 3:
        b, inj_f = _witness(f, target, "first leg")
        comp = _partial_component(f, target, b)
        if comp is not None:
            return _case_segment(f, g, target, b, comp, ctx)
        c, inj_g = _witness(g, target, "second leg")
        comp_g = _partial_component(g, target, c)
        if comp_g is not None:
            d, k1, k2 = _case_segment(g, f, target, c, comp_g, ctx)
            return d, k2, k1
        return _case_corridors(f, g, target, (b, inj_f), (c, inj_g), ctx)
    if deg == 1:
        return _case_endpoint(f, g, target, ctx)
    raise InvalidCospan(f"target {target} has order {deg}; cospan legs are not family-shaped")


def _cross_edges(tree: Tree, left: set[int], right: set[int]) -> list[tuple[int, int]]:
    out = []
    for u, v in tree.edges:
        if u in left and v in right:
            out.append((u, v))
        elif v in left and u in right:
            out.append((v, u))
    return out


def _case_segment(
    f: _Arrow, g: _Arrow, a: int, b: int, comp: frozenset, ctx: _Ctx
) -> tuple[LabeledTree, _Arrow, _Arrow]:
    """Ramification target, fiber meets `comp` partially: cut and splice back."""
    B = f.dom
    fiber = set(f.epi.fiber(a))
    seg = comp & fiber  # the fiber segment to cut out
    cross_b = _cross_edges(B.tree, seg, {b})
    if len(cross_b) != 1:
        raise InvalidCospan("fiber segment must hang off the witness by a single edge")
    b1 = cross_b[0][0]
    cross_out = _cross_edges(B.tree, seg, comp - seg)
    if len(cross_out) != 1:
        raise AmalgamationInternalError("fiber segment must border its component once")
    b2, b3 = cross_out[0]
    keep = [v for v in range(B.n) if v not in seg]
    b_small, trans = _induced(B, keep, extra_edges=[(b, b3)])
    back = {nv: ov for ov, nv in trans.items()}
    f_small_vmap = tuple(f.vmap[back[v]] for v in range(b_small.n))
    emb_small = None
    if ctx.with_sections:
        emb_small = {}
        for y, img in f.emb.items():
            if img in seg:
                raise AmalgamationInternalError("endpoint section image inside a ramification fiber")
            emb_small[y] = trans[img]
    f_small = _Arrow(Epi(b_small, f.cod, f_small_vmap), emb_small)
    d_small, h1s, h2s = _amalg(f_small, g, ctx)

    fib_b = {v for v in range(d_small.n) if h1s.vmap[v] == trans[b]}
    fib_b3 = {v for v in range(d_small.n) if h1s.vmap[v] == trans[b3]}
    bridge = _cross_edges(d_small.tree, fib_b, fib_b3)
    if len(bridge) != 1:
        raise AmalgamationInternalError("expected a unique edge between the witness fibers")
    d1, d2 = bridge[0]

    seg_order = sorted(seg)
    seg_trans = {v: d_small.n + i for i, v in enumerate(seg_order)}
    edges = [e for e in d_small.tree.edges if e != edge_key(d1, d2)]
    edges += [
        edge_key(seg_trans[u], seg_trans[v])
        for u, v in B.tree.edges
        if u in seg and v in seg
    ]
    edges += [edge_key(seg_trans[b1], d1), edge_key(seg_trans[b2], d2)]
    labels = dict(d_small.label_map)
    labels.update({seg_trans[v]: p for v, p in B.labels if v in seg})
    if not ctx.with_sections:
        labels = {}
    d_full = _build(d_small.n + len(seg_order), edges, labels)

    h1_vmap = [0] * d_full.n
    for v in range(d_small.n):
        h1_vmap[v] = back[h1s.vmap[v]]
    for ov, nv in seg_trans.items():
        h1_vmap[nv] = ov
    h2_vmap = [0] * d_full.n
    for v in range(d_small.n):
        h2_vmap[v] = h2s.vmap[v]
    for nv in seg_trans.values():
        h2_vmap[nv] = h2s.vmap[d1]

    h1_emb = h2_emb = None
    if ctx.with_sections:
        h1_emb = {}
        for y in B.tree.endpoints():
            h1_emb[y] = seg_trans[y] if y in seg else h1s.emb[trans[y]]
        h2_emb = dict(h2s.emb)
    h1 = _Arrow(Epi(d_full, B, tuple(h1_vmap)), h1_emb)
    h2 = _Arrow(Epi(d_full, g.dom, tuple(h2_vmap)), h2_emb)
    return d_full, h1, h2


def _case_endpoint(f: _Arrow, g: _Arrow, a: int, ctx: _Ctx) -> tuple[LabeledTree, _Arrow, _Arrow]:
    """Endpoint target: collapse the fiber, amalgamate, glue the fiber back."""
    B = f.dom
    fiber = set(f.epi.fiber(a))
    outside = set(range(B.n)) - fiber
    cross = _cross_edges(B.tree, fiber, outside)
    if len(cross) != 1:
        raise InvalidCospan("an endpoint fiber must attach to the rest by one edge")
    b, b_out = cross[0]
    keep = sorted(outside | {b})
    b_small, trans = _induced(
        B, keep,
        extra_edges=[],
        strip_labels={b},
    )
    back = {nv: ov for ov, nv in trans.items()}
    f_small_vmap = tuple(f.vmap[back[v]] for v in range(b_small.n))
    emb_small = None
    if ctx.with_sections:
        emb_small = {}
        for y, img in f.emb.items():
            emb_small[y] = trans[b] if y == a else trans[img]
    f_small = _Arrow(Epi(b_small, f.cod, f_small_vmap), emb_small)
    d_small, h1s, h2s = _amalg(f_small, g, ctx)

    fib_b = [v for v in range(d_small.n) if h1s.vmap[v] == trans[b]]
    if ctx.with_sections:
        alpha = h1s.emb[trans[b]]
    else:
        ends = set(d_small.tree.endpoints())
        candidates = sorted(v for v in fib_b if v in ends)
        if not candidates:
            raise AmalgamationInternalError("endpoint fiber upstairs contains no endpoint")
        alpha = candidates[0]

    glue_order = sorted(fiber - {b})
    glue_trans = {v: d_small.n + i for i, v in enumerate(glue_order)}
    glue_trans[b] = alpha
    edges = list(d_small.tree.edges)
    edges += [
        edge_key(glue_trans[u], glue_trans[v])
        for u, v in B.tree.edges
        if u in fiber and v in fiber
    ]
    labels = dict(d_small.label_map)
    labels.update({glue_trans[v]: p for v, p in B.labels if v in fiber})
    if not ctx.with_sections:
        labels = {}
    d_full = _build(d_small.n + len(glue_order), edges, labels)

    h1_vmap = [0] * d_full.n
    for v in range(d_small.n):
        h1_vmap[v] = back[h1s.vmap[v]]
    for ov, nv in glue_trans.items():
        h1_vmap[nv] = ov
    h1_vmap[alpha] = b
    h2_vmap = [0] * d_full.n
    for v in range(d_small.n):
        h2_vmap[v] = h2s.vmap[v]
    for ov, nv in glue_trans.items():
        h2_vmap[nv] = h2s.vmap[alpha]

    h1_emb = h2_emb = None
    if ctx.with_sections:
        h1_emb = {}
        for y in B.tree.endpoints():
            h1_emb[y] = glue_trans[y] if y in fiber else h1s.emb[trans[y]]
        ga = g.emb[a]
        if h2s.emb[ga] != alpha:
            raise AmalgamationInternalError("section squares stopped commuting at the glue point")
        h2_emb = dict(h2s.emb)
        h2_emb[ga] = glue_trans[f.emb[a]]
    h1 = _Arrow(Epi(d_full, B, tuple(h1_vmap)), h1_emb)
    h2 = _Arrow(Epi(d_full, g.dom, tuple(h2_vmap)), h2_emb)
    return d_full, h1, h2


def _corridor_restriction(
    arr: _Arrow, a: int, comp_a: frozenset, own_comp: frozenset, wit: int,
    cod_small: LabeledTree, cod_trans: dict[int, int],
) -> tuple[_Arrow, dict[int, int]]:
    """Restrict a leg to one complement corridor: own_comp + witness over {a} + comp_a."""
    dom_small, dom_trans = _induced(arr.dom, set(own_comp) | {wit}, strip_labels={wit})
    back = {nv: ov for ov, nv in dom_trans.items()}
    vmap = tuple(cod_trans[arr.vmap[back[v]]] for v in range(dom_small.n))
    emb = None
    if arr.emb is not None:
        emb = {cod_trans[a]: dom_trans[wit]}
        for y in arr.cod.tree.endpoints():
            if y in comp_a:
                emb[cod_trans[y]] = dom_trans[arr.emb[y]]
    return _Arrow(Epi(dom_small, cod_small, vmap), emb), dom_trans


def _case_corridors(
    f: _Arrow, g: _Arrow, a: int,
    fw: tuple[int, tuple[int, ...]], gw: tuple[int, tuple[int, ...]], ctx: _Ctx,
) -> tuple[LabeledTree, _Arrow, _Arrow]:
    """Both fibers decompose into whole complement components: join through a hub."""
    b, inj_f = fw
    c, inj_g = gw
    B, C, A = f.dom, g.dom, f.cod
    comps_a = components_after_removal(A.tree, a)
    comps_b = components_after_removal(B.tree, b)
    comps_c = components_after_removal(C.tree, c)
    fiber_b = set(f.epi.fiber(a))
    fiber_c = set(g.epi.fiber(a))
    hats_b = [comps_b[j] for j in range(len(comps_b)) if j not in set(inj_f)]
    hats_c = [comps_c[j] for j in range(len(comps_c)) if j not in set(inj_g)]
    for hat in hats_b:
        if not hat <= fiber_b:
            raise AmalgamationInternalError("leftover component escapes the fiber")
    for hat in hats_c:
        if not hat <= fiber_c:
            raise AmalgamationInternalError("leftover component escapes the fiber")
    if len(hats_b) > len(hats_c):
        d, k1, k2 = _case_corridors(g, f, a, gw, fw, ctx)
        return d, k2, k1

    # one corridor amalgam per complement component of the codomain
    pieces = []
    for i, comp_a in enumerate(comps_a):
        cod_small, cod_trans = _induced(A, set(comp_a) | {a}, strip_labels={a})
        f_i, f_i_trans = _corridor_restriction(f, a, comp_a, comps_b[inj_f[i]], b, cod_small, cod_trans)
        g_i, g_i_trans = _corridor_restriction(g, a, comp_a, comps_c[inj_g[i]], c, cod_small, cod_trans)
        d_i, h1_i, h2_i = _amalg(f_i, g_i, ctx)
        b_small = f_i_trans[b]
        c_small = g_i_trans[c]
        if ctx.with_sections:
            x_i = h1_i.emb[b_small]
            if h2_i.emb[c_small] != x_i:
                raise AmalgamationInternalError("corridor sections disagree on the hub preimage")
        else:
            ends = set(d_i.tree.endpoints())
            xs = sorted(
                v for v in ends
                if h1_i.vmap[v] == b_small and h2_i.vmap[v] == c_small
            )
            if not xs:
                raise AmalgamationInternalError("corridor amalgam lost its hub endpoint")
            x_i = xs[0]
        pieces.append((d_i, h1_i, h2_i, f_i_trans, g_i_trans, x_i))

    # assemble: hub d, spokes z_i toward the fiber bushes of C (and B where present)
    bush_b = [sorted(hat) for hat in hats_b]
    bush_c = [sorted(hat) for hat in hats_c]
    s, r = len(bush_b), len(bush_c)
    edges: list[tuple[int, int]] = []
    labels: dict[int, "int | float"] = {}
    h1_vmap: list[int] = []
    h2_vmap: list[int] = []
    h1_emb: dict[int, int] | None = {} if ctx.with_sections else None
    h2_emb: dict[int, int] | None = {} if ctx.with_sections else None

    def alloc(h1_target: int, h2_target: int, label=None) -> int:
        vid = len(h1_vmap)
        h1_vmap.append(h1_target)
        h2_vmap.append(h2_target)
        if label is not None:
            labels[vid] = label
        return vid

    hub_label = C.label(c) if C.label(c) is not None else B.label(b)
    d_id = alloc(b, c, hub_label if ctx.with_sections else None)

    for d_i, h1_i, h2_i, f_i_trans, g_i_trans, x_i in pieces:
        back_f = {nv: ov for ov, nv in f_i_trans.items()}
        back_g = {nv: ov for ov, nv in g_i_trans.items()}
        local: dict[int, int] = {x_i: d_id}
        for v in range(d_i.n):
            if v == x_i:
                continue
            local[v] = alloc(back_f[h1_i.vmap[v]], back_g[h2_i.vmap[v]],
                             d_i.label(v) if ctx.with_sections else None)
        edges += [edge_key(local[u], local[v]) for u, v in d_i.tree.edges]
        if ctx.with_sections:
            # sections of the corridor pieces transfer endpoint by endpoint
            for y in B.tree.endpoints():
                if y in f_i_trans and y != b:
                    h1_emb[y] = local[h1_i.emb[f_i_trans[y]]]
            for y in C.tree.endpoints():
                if y in g_i_trans and y != c:
                    h2_emb[y] = local[h2_i.emb[g_i_trans[y]]]

    # fiber bushes and the connecting spokes
    for i in range(r):
        z_label = ctx.pad_label if ctx.with_sections else None
        z_i = alloc(b, c, z_label)
        edges.append(edge_key(d_id, z_i))
        spoke_degree = 1
        c_bush = bush_c[i]
        c_local = {}
        for v in c_bush:
            c_local[v] = alloc(b, v, C.label(v) if ctx.with_sections else None)
        edges += [
            edge_key(c_local[u], c_local[v])
            for u, v in C.tree.edges
            if u in c_local and v in c_local
        ]
        c_i = next(v for v in c_bush if C.tree.has_edge(v, c))
        edges.append(edge_key(z_i, c_local[c_i]))
        spoke_degree += 1
        if ctx.with_sections:
            for y in C.tree.endpoints():
                if y in c_local:
                    h2_emb[y] = c_local[y]
        if i < s:
            b_bush = bush_b[i]
            b_local = {}
            for v in b_bush:
                b_local[v] = alloc(v, c, B.label(v) if ctx.with_sections else None)
            edges += [
                edge_key(b_local[u], b_local[v])
                for u, v in B.tree.edges
                if u in b_local and v in b_local
            ]
            b_i = next(v for v in b_bush if B.tree.has_edge(v, b))
            edges.append(edge_key(z_i, b_local[b_i]))
            spoke_degree += 1
            if ctx.with_sections:
                for y in B.tree.endpoints():
                    if y in b_local:
                        h1_emb[y] = b_local[y]
        for _ in range(max(0, ctx.pad_to - spoke_degree)):
            pad = alloc(b, c)
            edges.append(edge_key(z_i, pad))

    d_full = _build(len(h1_vmap), edges, labels)
    h1 = _Arrow(Epi(d_full, B, tuple(h1_vmap)), h1_emb)
    h2 = _Arrow(Epi(d_full, C, tuple(h2_vmap)), h2_emb)
    return d_full, h1, h2


def _to_public(arr: _Arrow, fam: Family) -> "Epi | EpiWithSection":
    epi = check_epi(arr.dom, arr.cod, arr.vmap)
    if fam.uses_sections:
        return check_ep_arrow(epi, arr.emb or {})
    return epi


def _to_internal(arrow: "Epi | EpiWithSection", fam: Family) -> _Arrow:
    if fam.uses_sections:
        if not isinstance(arrow, EpiWithSection):
            raise InvalidCospan("section-mode amalgamation needs projection-embedding arrows")
        return _Arrow(arrow.epi, dict(arrow.emb_map))
    return _Arrow(proj_of(arrow), None)


def amalgamate(cospan: Cospan, recursion_budget: int = 10**6, validate: bool = True) -> Amalgam:
    """Amalgamate a family cospan into a commuting square, validating everything."""
    fam = cospan.family
    if validate:
        for name, arrow in (("f", cospan.f), ("g", cospan.g)):
            ok, reasons = arrow_in_family(arrow, fam)
            if not ok:
                raise InvalidCospan(f"leg {name} invalid in {fam}: {reasons}")
    pad_to, pad_label = padding_order(fam)
    ctx = _Ctx(pad_to, pad_label, fam.uses_sections, recursion_budget)
    d, h1, h2 = _amalg(_to_internal(cospan.f, fam), _to_internal(cospan.g, fam), ctx)
    pub1, pub2 = _to_public(h1, fam), _to_public(h2, fam)
    left = compose_arrows(cospan.f, pub1)
    right = compose_arrows(cospan.g, pub2)
    if proj_of(left).vmap != proj_of(right).vmap:
        raise AmalgamationInternalError("amalgamation square does not commute")
    if fam.uses_sections and left.emb != right.emb:
        raise AmalgamationInternalError("amalgamation sections do not commute")
    if validate:
        for name, arrow in (("h1", pub1), ("h2", pub2)):
            ok, reasons = arrow_in_family(arrow, fam)
            if not ok:
                raise AmalgamationInternalError(f"{name} left the family: {reasons}")
    return Amalgam(d, pub1, pub2)


def amalgamate_ep(cospan: Cospan, orders: OrderSet | None = None, **kw) -> Amalgam:
    """Amalgamation for projection-embedding cospans (labels and sections kept)."""
    fam = cospan.family if orders is None else Family(DDFP, orders)
    if fam.kind != DDFP:
        raise InvalidCospan("projection-embedding amalgamation is a DDFP operation")
    return amalgamate(Cospan(cospan.f, cospan.g, fam), **kw)
