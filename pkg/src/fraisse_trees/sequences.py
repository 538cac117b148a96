"""Fraisse-sequence construction to finite depth and its verification.

The builder follows a dovetailed schedule.  Every step joins the current
stage with the next enumerated family object through a wedge, then
absorbs the scheduled arrow type by amalgamating against every composite
from the current stage onto that type's codomain through an earlier
isomorphic stage, then absorbs one global double-split refinement of each
shallow stage (these supply the prespace, density, and endpoint
certificates downstream), and, when infinitely many finite orders are
missing from the order set, grows one tracked witness thread without
bound.  Provenance records every declared and serviced obligation.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from itertools import product as iproduct
from typing import Iterable, Mapping, Sequence

from .constructions import (
    Cospan,
    amalgamate,
    as_family_arrow,
    enlarge_arrow,
    joint_projection,
    refinement_arrow,
    split_edge_padded,
)
from .families import (
    DDFP,
    EpiWithSection,
    Family,
    OrderSet,
    arrow_in_family,
    check_ep_arrow,
    compose_arrows,
    ddfp_projection_reasons,
    object_in_family,
    proj_of,
)
from .immersions import (
    ImmersionError,
    check_immersion,
    complete_immersion_to_epi,
)
from .morphisms import Epi, coherence_at, enumerate_epis, iter_epi_vmaps
from .trees import (
    INF,
    LabeledTree,
    all_trees,
    automorphisms,
    canonical_form,
    isomorphisms,
    path,
    tree_from_json,
    tree_to_json,
    unlabeled,
)


class SequenceError(Exception):
    pass


class BudgetExceeded(SequenceError):
    pass


class SeedInvalid(SequenceError):
    pass


class LadderUnserviced(SequenceError):
    def __init__(self, obligation: str):
        super().__init__(f"no stage services the obligation: {obligation}")
        self.obligation = obligation


class CdhPlanError(SequenceError):
    pass


class NotImmersionPlan(CdhPlanError):
    pass


class IntermediateCondition(CdhPlanError):
    pass


@dataclass(frozen=True)
class Budgets:
    """Bounds for enumeration and construction inside one build."""

    max_vertices: int = 8
    max_label: int | None = None
    refine_horizon: int = 2
    max_stage_vertices: int = 4000
    recursion_budget: int = 10**6

    def label_bound(self) -> int:
        return self.max_label if self.max_label is not None else self.max_vertices

    def to_json(self) -> dict:
        return {
            "max_vertices": self.max_vertices,
            "max_label": self.max_label,
            "refine_horizon": self.refine_horizon,
            "max_stage_vertices": self.max_stage_vertices,
            "recursion_budget": self.recursion_budget,
        }

    @staticmethod
    def from_json(data: Mapping) -> "Budgets":
        return Budgets(**dict(data))


# ---------------------------------------------------------------------------
# enumeration of objects and arrow types


def _label_choices(fam: Family, degree: int, bound: int) -> list:
    out = [p for p in fam.orders.finite_members_upto(bound) if p >= degree]
    if fam.orders.includes_infinity:
        out.append(INF)
    return out


def enumerate_objects(fam: Family, max_vertices: int, max_label: int | None = None) -> list[LabeledTree]:
    """All family objects up to max_vertices, canonical and size-then-code sorted."""
    bound = max_label if max_label is not None else max_vertices
    seen: dict[bytes, LabeledTree] = {}
    for n in range(1, max_vertices + 1):
        for tree in all_trees(n):
            candidates: list[LabeledTree]
            if fam.kind == DDFP:
                rams = [v for v in range(n) if tree.degree(v) >= 3]
                menus = [_label_choices(fam, tree.degree(v), bound) for v in rams]
                if any(not m for m in menus):
                    continue
                candidates = [
                    LabeledTree.make(tree, dict(zip(rams, choice)))
                    for choice in iproduct(*menus)
                ]
            else:
                candidates = [unlabeled(tree)]
            for cand in candidates:
                ok, _ = object_in_family(cand, fam)
                if not ok:
                    continue
                canon, _ = canonical_form(cand)
                seen.setdefault(canon.canonical_code, canon)
    return sorted(seen.values(), key=lambda t: (t.n, t.canonical_code))


@dataclass(frozen=True)
class ArrowType:
    """One cospan-isomorphism class of family arrows, with a representative."""

    rep: "Epi | EpiWithSection"
    code: str

    @property
    def dom(self) -> LabeledTree:
        return proj_of(self.rep).dom

    @property
    def cod(self) -> LabeledTree:
        return proj_of(self.rep).cod


def _arrow_variant(vmap, emb, phi, psi) -> tuple:
    """The arrow conjugated by domain iso phi and codomain iso psi."""
    out = [0] * len(vmap)
    for v, w in enumerate(vmap):
        out[phi[v]] = psi[w]
    emb_t = None
    if emb is not None:
        emb_t = tuple(sorted((psi[y], phi[b]) for y, b in emb))
    return tuple(out), emb_t


def _raw_family_arrows(dom: LabeledTree, cod: LabeledTree, fam: Family):
    """Duplicate-free family arrows dom -> cod, sections expanded for DDFP."""
    if fam.kind != DDFP:
        pred = lambda f: arrow_in_family(f, fam)[0]
        return enumerate_epis(dom, cod, pred, cap=None)
    projs = enumerate_epis(dom, cod, lambda f: not ddfp_projection_reasons(f), cap=None)
    out = []
    dom_ends = set(dom.tree.endpoints())
    for p in projs:
        menus = []
        for y in cod.tree.endpoints():
            menus.append(sorted(b for b in p.fiber(y) if b in dom_ends))
        if any(not m for m in menus):
            continue
        for choice in iproduct(*menus):
            emb = dict(zip(cod.tree.endpoints(), choice))
            out.append(check_ep_arrow(p, emb))
    return out


def enumerate_arrow_types(fam: Family, budgets: Budgets) -> list[ArrowType]:
    """Arrow types within budget, deduplicated up to cospan isomorphism.

    Sorted so small codomains come first; the build schedule cycles this
    list, so the types feeding shallow-stage extension checks are
    serviced earliest.
    """
    objects = enumerate_objects(fam, budgets.max_vertices, budgets.max_label)
    types: list[ArrowType] = []
    for cod in objects:
        for dom in objects:
            if dom.n < cod.n:
                continue
            arrows = _raw_family_arrows(dom, cod, fam)
            if not arrows:
                continue
            bijective = [a for a in arrows if proj_of(a).is_injective()]
            proper = [a for a in arrows if not proj_of(a).is_injective()]
            if bijective:
                code = repr(("iso", dom.canonical_code, cod.canonical_code))
                types.append(ArrowType(bijective[0], code))
            auts_dom = automorphisms(dom)
            auts_cod = automorphisms(cod)
            visited: set[tuple] = set()
            for arrow in proper:
                emb = arrow.emb if isinstance(arrow, EpiWithSection) else None
                key = (proj_of(arrow).vmap, emb)
                if key in visited:
                    continue
                orbit = set()
                for phi in auts_dom:
                    for psi in auts_cod:
                        orbit.add(_arrow_variant(proj_of(arrow).vmap, emb, phi, psi))
                visited |= orbit
                code = repr((dom.canonical_code, cod.canonical_code, min(orbit)))
                rep_key = min(orbit)
                rep_epi = Epi(dom, cod, rep_key[0])
                rep = (
                    check_ep_arrow(rep_epi, dict(rep_key[1]))
                    if fam.uses_sections
                    else rep_epi
                )
                types.append(ArrowType(rep, code))
    types.sort(key=lambda t: (t.cod.n, t.dom.n, t.cod.canonical_code, t.dom.canonical_code, t.code))
    return types


def arrow_type_code(arrow: "Epi | EpiWithSection") -> str:
    """Canonical code of an arrow's cospan-isomorphism class."""
    epi = proj_of(arrow)
    dom_rep, _ = canonical_form(epi.dom)
    cod_rep, _ = canonical_form(epi.cod)
    if epi.is_injective():
        return repr(("iso", dom_rep.canonical_code, cod_rep.canonical_code))
    emb = arrow.emb if isinstance(arrow, EpiWithSection) else None
    best = None
    for phi in isomorphisms(epi.dom, dom_rep):
        for psi in isomorphisms(epi.cod, cod_rep):
            cand = _arrow_variant(epi.vmap, emb, phi, psi)
            if best is None or cand < best:
                best = cand
    return repr((dom_rep.canonical_code, cod_rep.canonical_code, best))


# ---------------------------------------------------------------------------
# the sequence itself


@dataclass
class FraisseSequence:
    family: Family
    stages: list[LabeledTree]
    bonds: list  # bonds[i]: stages[i+1] -> stages[i]
    provenance: list[dict] = field(default_factory=list)
    seed: int = 0
    budgets: Budgets | None = None
    declared_objects: list[LabeledTree] = field(default_factory=list)
    declared_types: list[str] = field(default_factory=list)

    @property
    def depth(self) -> int:
        return len(self.stages) - 1

    def bond(self, n: int, m: int):
        """Composite bond stages[n] -> stages[m] for n >= m."""
        if not 0 <= m <= n <= self.depth:
            raise SequenceError(f"bond indices ({n},{m}) outside 0..{self.depth}")
        memo = self.__dict__.setdefault("_bond_memo", {})
        if (n, m) in memo:
            return memo[(n, m)]
        if n == m:
            from .families import identity_ep_arrow
            from .morphisms import identity_epi

            out = (
                identity_ep_arrow(self.stages[n])
                if self.family.uses_sections
                else identity_epi(self.stages[n])
            )
        else:
            out = compose_arrows(self.bond(n - 1, m), self.bonds[n - 1])
        memo[(n, m)] = out
        return out


def arrow_to_json(arrow) -> dict:
    out = {"map": list(proj_of(arrow).vmap)}
    if isinstance(arrow, EpiWithSection):
        out["emb"] = {str(y): b for y, b in arrow.emb}
    return out


def arrow_from_json(data, dom: LabeledTree, cod: LabeledTree):
    from .morphisms import check_epi

    if isinstance(data, list):
        return check_epi(dom, cod, data)
    epi = check_epi(dom, cod, data["map"])
    if "emb" in data and data["emb"] is not None:
        return check_ep_arrow(epi, {int(y): b for y, b in data["emb"].items()})
    return epi


def sequence_to_json(seq: FraisseSequence) -> dict:
    return {
        "family": seq.family.to_json(),
        "seed": seq.seed,
        "budgets": seq.budgets.to_json() if seq.budgets else None,
        "stages": [tree_to_json(t) for t in seq.stages],
        "bonds": [arrow_to_json(b) for b in seq.bonds],
        "provenance": seq.provenance,
        "declared_types": seq.declared_types,
    }


def sequence_from_json(data: Mapping) -> FraisseSequence:
    fam = Family.from_json(data["family"])
    stages = [tree_from_json(t) for t in data["stages"]]
    bonds = [
        arrow_from_json(b, stages[i + 1], stages[i])
        for i, b in enumerate(data["bonds"])
    ]
    budgets = Budgets.from_json(data["budgets"]) if data.get("budgets") else None
    return FraisseSequence(
        fam, stages, bonds,
        provenance=list(data.get("provenance", [])),
        seed=int(data.get("seed", 0)),
        budgets=budgets,
        declared_types=list(data.get("declared_types", [])),
    )


# ---------------------------------------------------------------------------
# the builder


def _missing_finite_orders(orders: OrderSet):
    q = 3
    while True:
        if not orders.contains(q):
            yield q
        q += 1


def _iso_arrow(src: LabeledTree, dst: LabeledTree, perm: Sequence[int], fam: Family):
    epi = Epi(src, dst, tuple(perm))
    if not fam.uses_sections:
        return epi
    inv = epi.inverse_vmap()
    return check_ep_arrow(epi, {y: inv[y] for y in dst.tree.endpoints()})


def _witness_vertex(arrow, v: int) -> int:
    res = coherence_at(proj_of(arrow), v)
    if not res.is_weak:
        raise SequenceError(f"expected a witness at {v} while tracking the growth thread")
    return res.witness


def witness_chain_vertex(seq: FraisseSequence, from_stage: int, v: int, to_stage: int) -> int:
    """Follow witnesses of the single-step bonds from (from_stage, v) upward."""
    w = v
    for i in range(from_stage, to_stage):
        w = _witness_vertex(seq.bonds[i], w)
    return w


def build_fraisse_sequence(
    fam: Family,
    depth: int,
    budgets: Budgets | None = None,
    seed: int = 0,
) -> FraisseSequence:
    """Build stages 0..depth following the dovetailed schedule."""
    budgets = budgets or Budgets()
    objects = enumerate_objects(fam, budgets.max_vertices, budgets.max_label)
    if not objects:
        raise BudgetExceeded(f"no {fam} objects within {budgets.max_vertices} vertices")
    types = enumerate_arrow_types(fam, budgets)
    rng = random.Random(seed)
    grow = fam.orders.includes_infinity and not fam.orders.finite_complement_bounded()
    missing = _missing_finite_orders(fam.orders) if grow else None

    seq = FraisseSequence(
        fam, [objects[0]], [],
        provenance=[{"step": 0, "kind": "origin", "object_code": repr(objects[0].canonical_code)}],
        seed=seed, budgets=budgets,
        declared_objects=objects,
        declared_types=[t.code for t in types],
    )
    refined: set[int] = set()
    growth_origin: tuple[int, int] | None = None

    for step in range(1, depth + 1):
        n = step - 1
        top = seq.stages[n]
        a_next = objects[step % len(objects)]
        cur, to_top, _ = joint_projection(top, a_next, fam)
        events = [{
            "step": step, "kind": "joint_projection",
            "object_index": step % len(objects),
        }]

        def absorb(target_arrow, s_arrow, event: dict):
            nonlocal cur, to_top
            am = amalgamate(
                Cospan(s_arrow, target_arrow, fam),
                recursion_budget=budgets.recursion_budget,
                validate=False,
            )
            cur = am.obj
            to_top = compose_arrows(to_top, am.h1)
            events.append(event)
            return am.h2

        if types:
            et = types[(step - 1) % len(types)]
            serviced = []
            for m in range(len(seq.stages)):
                if seq.stages[m].canonical_code != et.cod.canonical_code:
                    continue
                isos = isomorphisms(seq.stages[m], et.cod)
                rot = rng.randrange(len(isos))
                isos = isos[rot:] + isos[:rot]
                for i, perm in enumerate(isos):
                    upsilon = _iso_arrow(seq.stages[m], et.cod, perm, fam)
                    stage_path = compose_arrows(seq.bond(n, m), to_top)
                    s_arrow = compose_arrows(upsilon, stage_path)
                    absorb(et.rep, s_arrow, {
                        "step": step, "kind": "arrow_type", "type": et.code,
                        "through_stage": m, "iso_index": i,
                    })
                    serviced.append((m, i))
            if not serviced:
                events.append({
                    "step": step, "kind": "arrow_type", "type": et.code,
                    "through_stage": None, "note": "no stage matches the codomain",
                })

        for m in range(min(len(seq.stages), budgets.refine_horizon + 1)):
            if m in refined:
                continue
            phi = as_family_arrow(refinement_arrow(seq.stages[m], fam), fam)
            s_arrow = compose_arrows(seq.bond(n, m), to_top)
            absorb(phi, s_arrow, {"step": step, "kind": "refine", "stage": m})
            refined.add(m)

        if grow:
            seed_stage = next((m for m in range(len(seq.stages)) if seq.stages[m].tree.edges), None)
            if growth_origin is None and seed_stage is not None:
                target = next(missing)
                edge0 = seq.stages[seed_stage].tree.edges[0]
                h, to_u, _ = split_edge_padded(
                    seq.stages[seed_stage], edge0, fam, pad_to=target,
                    pad_label=INF if fam.uses_sections else None,
                )
                phi = as_family_arrow(to_u, fam)
                s_arrow = compose_arrows(seq.bond(n, seed_stage), to_top)
                h2 = absorb(phi, s_arrow, {
                    "step": step, "kind": "growth_seed", "stage": seed_stage,
                    "edge": list(edge0), "order": target,
                })
                star = seq.stages[seed_stage].n  # the split vertex id inside h
                growth_origin = (step, _witness_vertex(h2, star))
            elif growth_origin is not None:
                o_stage, o_vertex = growth_origin
                w = o_vertex
                for i in range(o_stage, n):
                    w = _witness_vertex(seq.bonds[i], w)
                cur_ord = seq.stages[n].tree.degree(w)
                target = next(t for t in _missing_finite_orders(fam.orders) if t > cur_ord)
                phi = as_family_arrow(enlarge_arrow(seq.stages[n], w, target - cur_ord), fam)
                absorb(phi, to_top, {
                    "step": step, "kind": "growth", "vertex": w, "order": target,
                })

        if cur.n > budgets.max_stage_vertices:
            raise BudgetExceeded(
                f"stage {step} grew to {cur.n} vertices (cap {budgets.max_stage_vertices})"
            )
        ok, reasons = arrow_in_family(to_top, fam)
        if not ok:
            raise SequenceError(f"bond {step} left the family: {reasons}")
        seq.stages.append(cur)
        seq.bonds.append(to_top)
        seq.provenance.extend(events)

    return seq


# ---------------------------------------------------------------------------
# extension property


@dataclass(frozen=True)
class ExtensionResult:
    arrow_index: int
    from_stage: int
    status: str  # "witnessed" | "unserviced"
    stage: int
    factor: "Epi | EpiWithSection | None"


def _section_for_factor(seq, f, g_epi: Epi, bond, n: int):
    """The forced section of a factor candidate, or None if impossible."""
    stage = seq.stages[n]
    stage_ends = set(stage.tree.endpoints())
    forced: dict[int, int] = {}
    for x in proj_of(f).cod.tree.endpoints():
        y = f.section(x)
        b = bond.section(x)
        if g_epi.vmap[b] != y:
            return None
        forced[y] = b
    emb = {}
    for y in proj_of(f).dom.tree.endpoints():
        if y in forced:
            emb[y] = forced[y]
            continue
        options = [b for b in g_epi.fiber(y) if b in stage_ends]
        if not options:
            return None
        emb[y] = min(options)
    return emb


def find_factor(seq: FraisseSequence, f, m: int, n: int):
    """A family arrow g: stages[n] -> dom(f) with f o g equal to the bond, if any."""
    bond = seq.bond(n, m)
    fibers = proj_of(f).fibers
    bond_vmap = proj_of(bond).vmap
    stage = seq.stages[n]
    dom_f = proj_of(f).dom

    def constraint(v: int):
        return fibers[bond_vmap[v]]

    for vmap in iter_epi_vmaps(stage, dom_f, constraint):
        g_epi = Epi(stage, dom_f, vmap)
        if seq.family.uses_sections:
            emb = _section_for_factor(seq, f, g_epi, bond, n)
            if emb is None:
                continue
            candidate = EpiWithSection(g_epi, tuple(sorted(emb.items())))
        else:
            candidate = g_epi
        ok, _ = arrow_in_family(candidate, seq.family)
        if not ok:
            continue
        composite = compose_arrows(f, candidate)
        assert proj_of(composite).vmap == bond_vmap
        if seq.family.uses_sections:
            assert composite.emb == bond.emb
        return candidate
    return None


def check_extension_property(
    seq: FraisseSequence,
    test_arrows: Iterable[tuple],
    search_horizon: int | None = None,
) -> list[ExtensionResult]:
    """For each arrow f: A -> stages[m], search for a factor stage.

    Each test arrow is a pair (f, m).  A witnessed result carries the
    stage n and the factor g with f o g equal to the bond n -> m,
    verified vertex- and section-wise.
    """
    horizon = seq.depth if search_horizon is None else search_horizon
    out = []
    for idx, (f, m) in enumerate(test_arrows):
        if proj_of(f).cod != seq.stages[m]:
            raise SequenceError(f"test arrow {idx} does not land in stage {m}")
        found = None
        for n in range(m, horizon + 1):
            g = find_factor(seq, f, m, n)
            if g is not None:
                found = ExtensionResult(idx, m, "witnessed", n, g)
                break
        out.append(found or ExtensionResult(idx, m, "unserviced", horizon, None))
    return out


# ---------------------------------------------------------------------------
# back and forth


@dataclass(frozen=True)
class LadderRung:
    side: str  # "left" when the arrow leaves the left sequence
    from_stage: int
    to_stage: int
    arrow: "Epi | EpiWithSection"


@dataclass
class Ladder:
    left: FraisseSequence
    right: FraisseSequence
    rungs: list[LadderRung]

    def verify(self) -> bool:
        """Re-check every triangle: next rung composed into the previous equals a bond."""
        for i in range(1, len(self.rungs)):
            prev, cur = self.rungs[i - 1], self.rungs[i]
            seq = self.right if prev.side == "left" else self.left
            composite = compose_arrows(prev.arrow, cur.arrow)
            bond = seq.bond(cur.from_stage, prev.to_stage)
            if proj_of(composite).vmap != proj_of(bond).vmap:
                return False
            if isinstance(composite, EpiWithSection) and composite.emb != bond.emb:
                return False
        return True


def back_and_forth(
    seq_u: FraisseSequence,
    seq_v: FraisseSequence,
    seed_arrow,
    depth: int,
    from_stage: int = 0,
    to_stage: int = 0,
) -> Ladder:
    """Alternating extension searches producing a commuting ladder.

    seed_arrow maps stage from_stage of seq_u onto stage to_stage of
    seq_v.  Each alternation factors the last cross arrow through a
    deeper stage of the other sequence; failure raises with the
    obligation that no stage serviced.
    """
    if seq_u.family != seq_v.family:
        raise SeedInvalid("ladders need both sequences over one family")
    ok, reasons = arrow_in_family(seed_arrow, seq_u.family)
    if not ok:
        raise SeedInvalid(f"seed arrow invalid: {reasons}")
    if proj_of(seed_arrow).dom != seq_u.stages[from_stage]:
        raise SeedInvalid(f"seed arrow does not start at left stage {from_stage}")
    if proj_of(seed_arrow).cod != seq_v.stages[to_stage]:
        raise SeedInvalid(f"seed arrow does not land in right stage {to_stage}")
    rungs = [LadderRung("left", from_stage, to_stage, seed_arrow)]
    src_seq, src_idx = seq_u, from_stage
    dst_seq, dst_idx = seq_v, to_stage
    last_idx = {id(seq_u): from_stage, id(seq_v): to_stage}
    arrow = seed_arrow
    for _ in range(depth):
        # factor the current arrow through a strictly deeper stage of its
        # codomain side, keeping both index maps cofinal
        found = None
        for n in range(max(dst_idx, last_idx[id(dst_seq)] + 1), dst_seq.depth + 1):
            g = find_factor(dst_seq, arrow, dst_idx, n)
            if g is not None:
                found = (n, g)
                break
        if found is None:
            raise LadderUnserviced(
                f"arrow into stage {dst_idx} of the "
                f"{'right' if dst_seq is seq_v else 'left'} sequence"
            )
        n, g = found
        side = "right" if dst_seq is seq_v else "left"
        rungs.append(LadderRung(side, n, src_idx, g))
        last_idx[id(dst_seq)] = n
        arrow = g
        src_seq, dst_seq = dst_seq, src_seq
        src_idx, dst_idx = n, src_idx
    ladder = Ladder(seq_u, seq_v, rungs)
    assert ladder.verify()
    return ladder


# ---------------------------------------------------------------------------
# center-closure plans


def build_cdh_sequence(
    plan_stages: Sequence[LabeledTree],
    inclusions: Sequence[Sequence[int]],
    orders: OrderSet,
) -> FraisseSequence:
    """Turn a nested center-closure plan into a DDFP sequence.

    Each inclusion must be an immersion whose image keeps at least two
    interior vertices on the refinement of every edge; embeddings are the
    inclusions restricted to endpoints and projections are the monotone
    corridor completions, which forces every single-step fiber to carry
    at least two points.
    """
    fam = Family(DDFP, orders)
    if len(inclusions) != len(plan_stages) - 1:
        raise CdhPlanError("need exactly one inclusion per consecutive stage pair")
    for i, t in enumerate(plan_stages):
        ok, reasons = object_in_family(t, fam)
        if not ok:
            raise CdhPlanError(f"stage {i} invalid: {reasons}")
    bonds = []
    for i, inc in enumerate(inclusions):
        lower, upper = plan_stages[i], plan_stages[i + 1]
        try:
            imm = check_immersion(lower, upper, inc)
        except ImmersionError as exc:
            raise NotImmersionPlan(f"inclusion {i}: {exc}") from exc
        for u, v in lower.tree.edges:
            spine = path(upper.tree, imm(u), imm(v))[1:-1]
            if len(spine) < 2:
                raise IntermediateCondition(
                    f"edge ({u},{v}) of stage {i} keeps {len(spine)} interior vertices"
                )
        for y in lower.tree.endpoints():
            if upper.tree.degree(imm(y)) != 1:
                raise NotImmersionPlan(
                    f"inclusion {i} sends endpoint {y} to an interior vertex"
                )
        proj = complete_immersion_to_epi(imm)
        for fiber in proj.fibers:
            assert len(fiber) >= 2, "two-point fibers are forced by the interior condition"
        bond = check_ep_arrow(proj, {y: imm(y) for y in lower.tree.endpoints()})
        ok, reasons = arrow_in_family(bond, fam)
        if not ok:
            raise CdhPlanError(f"completed bond {i} invalid: {reasons}")
        bonds.append(bond)
    prov = [{"step": i, "kind": "cdh_stage"} for i in range(len(plan_stages))]
    return FraisseSequence(fam, list(plan_stages), bonds, provenance=prov)
