"""The three tree families and their arrow-validity predicates.

FP: finite trees with no order-2 vertices; arrows are monotone epis that
are coherent at every codomain point whose order lies in the allowed
order set, and weakly coherent with witness order outside the set at
every other ramification point.  Requires infinity in the order set.

GP: trees all of whose vertices are endpoints or have order in the set,
at least one ramification point, with coherent arrows.  No infinity.

DDFP: label-carrying trees (every ramification point labeled by an
allowed order bounding its own order, endpoints bare, at least one
ramification point) with projection-embedding arrows: a weakly coherent
projection whose witnesses inherit labels, plus an endpoint section.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Mapping

from .morphisms import (
    Epi,
    check_epi,
    coherence_at,
    compose,
    identity_epi,
    is_monotone,
)
from .trees import INF, LabeledTree, order


class FamilyError(Exception):
    pass


class EmptyP(FamilyError):
    pass


class NotFPContext(FamilyError):
    pass


class SectionInvalid(FamilyError):
    pass


@dataclass(frozen=True)
class OrderSet:
    """A set of allowed ramification orders inside {3,4,...} + {inf}.

    Finite members are listed explicitly; an optional cofinite tail
    `cofinite_from` adds every order >= that bound.  Construction
    normalizes so the explicit members stay below and not adjacent to
    the tail.
    """

    finite: frozenset[int] = field(default=frozenset())
    cofinite_from: int | None = None
    includes_infinity: bool = False

    def __post_init__(self):
        fin = set(self.finite)
        cof = self.cofinite_from
        for p in fin:
            if not isinstance(p, int) or p < 3:
                raise FamilyError(f"order {p!r} below 3")
        if cof is not None:
            if cof < 3:
                raise FamilyError(f"cofinite bound {cof} below 3")
            fin = {p for p in fin if p < cof}
            while cof - 1 in fin:
                cof -= 1
                fin.discard(cof)
        object.__setattr__(self, "finite", frozenset(fin))
        object.__setattr__(self, "cofinite_from", cof)

    def contains(self, p: "int | float") -> bool:
        if p == INF:
            return self.includes_infinity
        if not isinstance(p, int) or p < 3:
            return False
        if p in self.finite:
            return True
        return self.cofinite_from is not None and p >= self.cofinite_from

    def min_finite(self) -> int | None:
        candidates = set(self.finite)
        if self.cofinite_from is not None:
            candidates.add(self.cofinite_from)
        return min(candidates) if candidates else None

    def finite_complement_bounded(self) -> bool:
        """True iff only finitely many finite orders are missing."""
        return self.cofinite_from is not None

    def finite_members_upto(self, bound: int) -> list[int]:
        out = [p for p in self.finite if p <= bound]
        if self.cofinite_from is not None:
            out.extend(range(self.cofinite_from, bound + 1))
        return sorted(set(out))

    def to_json(self) -> dict:
        return {
            "fin": sorted(self.finite),
            "cofinite_from": self.cofinite_from,
            "inf": self.includes_infinity,
        }

    @staticmethod
    def from_json(data: Mapping) -> "OrderSet":
        return OrderSet(
            frozenset(int(p) for p in data.get("fin", [])),
            data.get("cofinite_from"),
            bool(data.get("inf", False)),
        )

    @staticmethod
    def parse(text: str) -> "OrderSet":
        """Parse CLI syntax like "3,4", "3,inf", or "cofinite:5,inf"."""
        fin: set[int] = set()
        cof = None
        inf = False
        for part in text.split(","):
            part = part.strip()
            if not part:
                continue
            if part == "inf":
                inf = True
            elif part.startswith("cofinite:"):
                cof = int(part.split(":", 1)[1])
            else:
                fin.add(int(part))
        return OrderSet(frozenset(fin), cof, inf)

    def __str__(self) -> str:
        parts = [str(p) for p in sorted(self.finite)]
        if self.cofinite_from is not None:
            parts.append(f"cofinite:{self.cofinite_from}")
        if self.includes_infinity:
            parts.append("inf")
        return ",".join(parts)


FP = "FP"
GP = "GP"
DDFP = "DDFP"


@dataclass(frozen=True)
class Family:
    kind: str
    orders: OrderSet

    def __post_init__(self):
        if self.kind not in (FP, GP, DDFP):
            raise FamilyError(f"unknown family kind {self.kind!r}")
        if self.kind == GP and self.orders.includes_infinity:
            raise FamilyError("GP requires infinity outside the order set")
        if self.kind == FP and not self.orders.includes_infinity:
            raise FamilyError("FP requires infinity in the order set")

    @property
    def uses_sections(self) -> bool:
        return self.kind == DDFP

    def to_json(self) -> dict:
        return {"family": self.kind, "P": self.orders.to_json()}

    @staticmethod
    def from_json(data: Mapping) -> "Family":
        return Family(data["family"], OrderSet.from_json(data["P"]))

    def __str__(self) -> str:
        return f"{self.kind}({self.orders})"


def padding_order(fam: Family) -> tuple[int, "int | float | None"]:
    """Order to pad fresh branch vertices to, and the label they receive.

    The least allowed finite order when one exists; otherwise, when only
    infinity is allowed, order 3 under the infinity label (FP objects only
    need to avoid order 2, and an infinity label bounds any finite order).
    """
    q = fam.orders.min_finite()
    if q is not None:
        label = q if fam.kind == DDFP else None
        return q, label
    if fam.orders.includes_infinity:
        return 3, (INF if fam.kind == DDFP else None)
    raise EmptyP(f"no padding order available in {fam}")


# ---------------------------------------------------------------------------
# projection-embedding arrows


@dataclass(frozen=True)
class EpiWithSection:
    """A weakly coherent epi packaged with a right inverse on endpoints.

    emb maps each codomain endpoint to a domain endpoint that the
    projection sends back to it; injectivity is forced by the section
    property.  Construct via check_ep_arrow.
    """

    epi: Epi
    emb: tuple[tuple[int, int], ...]

    @property
    def dom(self) -> LabeledTree:
        return self.epi.dom

    @property
    def cod(self) -> LabeledTree:
        return self.epi.cod

    @property
    def vmap(self) -> tuple[int, ...]:
        return self.epi.vmap

    @cached_property
    def emb_map(self) -> dict[int, int]:
        return dict(self.emb)

    def section(self, y: int) -> int:
        return self.emb_map[y]


def check_ep_arrow(epi: Epi, emb: Mapping[int, int]) -> EpiWithSection:
    """Validate an endpoint section against its projection."""
    cod_ends = set(epi.cod.tree.endpoints())
    dom_ends = set(epi.dom.tree.endpoints())
    if set(emb) != cod_ends:
        raise SectionInvalid(
            f"section defined on {sorted(emb)} instead of endpoints {sorted(cod_ends)}"
        )
    for y, b in emb.items():
        if b not in dom_ends:
            raise SectionInvalid(f"section image {b} of {y} is not a domain endpoint")
        if epi.vmap[b] != y:
            raise SectionInvalid(
                f"projection sends section image {b} to {epi.vmap[b]}, not back to {y}"
            )
    return EpiWithSection(epi, tuple(sorted(emb.items())))


def identity_ep_arrow(t: LabeledTree) -> EpiWithSection:
    return check_ep_arrow(identity_epi(t), {y: y for y in t.tree.endpoints()})


def compose_ep(f: EpiWithSection, g: EpiWithSection) -> EpiWithSection:
    """Composite of f: B -> A after g: C -> B, with the section composed backward."""
    proj = compose(f.epi, g.epi)
    emb = {y: g.section(f.section(y)) for y in f.cod.tree.endpoints()}
    return check_ep_arrow(proj, emb)


Arrow = "Epi | EpiWithSection"


def proj_of(f: "Epi | EpiWithSection") -> Epi:
    return f.epi if isinstance(f, EpiWithSection) else f


def compose_arrows(f: "Epi | EpiWithSection", g: "Epi | EpiWithSection"):
    if isinstance(f, EpiWithSection) and isinstance(g, EpiWithSection):
        return compose_ep(f, g)
    return compose(proj_of(f), proj_of(g))


# ---------------------------------------------------------------------------
# membership predicates


def object_in_family(t: LabeledTree, fam: Family) -> tuple[bool, list[str]]:
    """Family-object test with a complete diagnostic list."""
    reasons: list[str] = []
    degrees = [t.tree.degree(v) for v in range(t.n)]
    if fam.kind == FP:
        for v, d in enumerate(degrees):
            if d == 2:
                reasons.append(f"vertex {v} has order 2")
        return not reasons, reasons
    if fam.kind == GP:
        for v, d in enumerate(degrees):
            if d != 1 and not fam.orders.contains(d):
                reasons.append(f"vertex {v} has order {d}, neither endpoint nor allowed")
        if not any(d >= 3 for d in degrees):
            reasons.append("no ramification point")
        return not reasons, reasons
    # DDFP
    if not any(d >= 3 for d in degrees):
        reasons.append("no ramification point")
    for v, d in enumerate(degrees):
        p = t.label(v)
        if d >= 3:
            if p is None:
                reasons.append(f"ramification point {v} is unlabeled")
            elif not fam.orders.contains(p):
                reasons.append(f"label {p} of vertex {v} is not an allowed order")
            elif p != INF and d > p:
                reasons.append(f"vertex {v} has order {d} above its label {p}")
        else:
            if d == 2 or d == 0:
                reasons.append(f"vertex {v} has order {d}, neither endpoint nor ramification")
            if p is not None:
                reasons.append(f"endpoint {v} carries label {p}")
    return not reasons, reasons


def _fp_arrow_reasons(f: Epi, orders: OrderSet) -> list[str]:
    reasons = []
    if not is_monotone(f):
        return ["not monotone"]
    for a in f.cod.tree.ramification_points():
        res = coherence_at(f, a)
        n = order(f.cod.tree, a)
        if orders.contains(n):
            if not res.is_coherent:
                reasons.append(f"order of {a} is allowed ({n}) but the map is not coherent there")
        else:
            if not res.is_weak:
                reasons.append(f"not weakly coherent at {a}")
            else:
                m = order(f.dom.tree, res.witness)
                if orders.contains(m):
                    reasons.append(
                        f"witness {res.witness} at {a} has allowed order {m}, which is forbidden"
                    )
    return reasons


def _gp_arrow_reasons(f: Epi) -> list[str]:
    reasons = []
    if not is_monotone(f):
        return ["not monotone"]
    for a in f.cod.tree.ramification_points():
        if not coherence_at(f, a).is_coherent:
            reasons.append(f"not coherent at {a}")
    return reasons


def ddfp_projection_reasons(epi: Epi) -> list[str]:
    """DDFP conditions on the projection alone (weak coherence, label transport)."""
    reasons = []
    if not is_monotone(epi):
        return ["projection not monotone"]
    for a in epi.cod.tree.ramification_points():
        res = coherence_at(epi, a)
        if not res.is_weak:
            reasons.append(f"projection not weakly coherent at {a}")
            continue
        pa = epi.cod.label(a)
        if pa is not None and epi.dom.label(res.witness) != pa:
            reasons.append(
                f"witness {res.witness} of labeled point {a} carries label "
                f"{epi.dom.label(res.witness)} instead of {pa}"
            )
    return reasons


def arrow_in_family(f: "Epi | EpiWithSection", fam: Family) -> tuple[bool, list[str]]:
    """Family-arrow test with a complete diagnostic list.

    Both endpoints are also re-checked as family objects so a single call
    diagnoses a whole candidate arrow.
    """
    reasons: list[str] = []
    epi = proj_of(f)
    for side, t in (("domain", epi.dom), ("codomain", epi.cod)):
        ok, why = object_in_family(t, fam)
        if not ok:
            reasons.extend(f"{side}: {w}" for w in why)
    if fam.kind == DDFP:
        if not isinstance(f, EpiWithSection):
            reasons.append("missing endpoint section")
        else:
            reasons.extend(ddfp_projection_reasons(f.epi))
    elif fam.kind == FP:
        reasons.extend(_fp_arrow_reasons(epi, fam.orders))
    else:
        reasons.extend(_gp_arrow_reasons(epi))
    return not reasons, reasons


def realized_orders(p: OrderSet) -> OrderSet:
    """The order set actually realized by the FP construction over p.

    With infinitely many finite orders missing the set is returned as is.
    When the missing finite orders are exhausted the infinity member
    deflates: either it simply drops (nothing missing), or it becomes the
    largest missing finite order.
    """
    if not p.includes_infinity:
        raise NotFPContext("realized orders are only defined when infinity is allowed")
    if not p.finite_complement_bounded():
        return p
    complement = [q for q in range(3, p.cofinite_from) if q not in p.finite]
    if not complement:
        return OrderSet(p.finite, p.cofinite_from, False)
    a = max(complement)
    return OrderSet(p.finite | {a}, p.cofinite_from, False)
