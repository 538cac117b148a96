"""Finite-depth exploration of a built sequence's inverse limit.

Points of the limit are approximated by threads: one vertex per stage,
compatible with the bonds, with each step tagged by how it was chosen
(witness of coherence, endpoint embedding, or plain fiber membership).
Reports certify, at finite depth, the prespace property (edge-adjacent
triples eventually separate), arcwise density of prescribed orders, and
density of endpoint threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .families import EpiWithSection, proj_of
from .immersions import (  # noqa: F401  (re-exported; shared corridor rule)
    BetweennessViolated,
    Immersion,
    InconsistentConstraints,
    MissingWitness,
    NotImmersion,
    check_immersion,
    complete_immersion_to_epi,
    immersion_of_arrow,
)
from .morphisms import coherence_at
from .sequences import FraisseSequence, check_extension_property
from .trees import path


class ExplorerError(Exception):
    pass


class EndOfSequence(ExplorerError):
    pass


class NotEventuallyWitnessed(ExplorerError):
    pass


class NotEndpoint(ExplorerError):
    pass


class NotEPSequence(ExplorerError):
    pass


PLAIN, WITNESS, EMBEDDING = "plain", "witness", "embedding"


@dataclass(frozen=True, eq=False)
class Thread:
    """A finite prefix of a limit point: entries[i] lives in stage i."""

    seq: FraisseSequence
    entries: tuple[int, ...]
    roles: tuple[str, ...]

    def __post_init__(self):
        assert len(self.roles) == len(self.entries) - 1
        for i, role in enumerate(self.roles):
            bond = self.seq.bonds[i]
            assert proj_of(bond).vmap[self.entries[i + 1]] == self.entries[i]
            if role == WITNESS:
                res = coherence_at(proj_of(bond), self.entries[i])
                assert res.witness == self.entries[i + 1]
            elif role == EMBEDDING:
                assert isinstance(bond, EpiWithSection)
                assert bond.section(self.entries[i]) == self.entries[i + 1]

    @property
    def top(self) -> int:
        return len(self.entries) - 1

    def order_at(self, i: int) -> int:
        return self.seq.stages[i].tree.degree(self.entries[i])

    def to_json(self) -> dict:
        return {"entries": list(self.entries), "roles": list(self.roles)}


def start_thread(seq: FraisseSequence, stage: int, vertex: int) -> Thread:
    """The thread determined below `stage` by projecting `vertex` down."""
    entries = [0] * (stage + 1)
    entries[stage] = vertex
    for i in range(stage, 0, -1):
        entries[i - 1] = proj_of(seq.bonds[i - 1]).vmap[entries[i]]
    return Thread(seq, tuple(entries), (PLAIN,) * stage)


def _step_role(seq: FraisseSequence, i: int, x: int, nxt: int) -> str:
    bond = seq.bonds[i]
    deg = seq.stages[i].tree.degree(x)
    if deg >= 3:
        res = coherence_at(proj_of(bond), x)
        if res.witness == nxt:
            return WITNESS
    if deg == 1 and isinstance(bond, EpiWithSection) and bond.section(x) == nxt:
        return EMBEDDING
    return PLAIN


def extend_thread(t: Thread, policy: str = "all") -> list[Thread]:
    """All one-step extensions allowed by the policy (all, witness, embedding)."""
    seq = t.seq
    d = t.top
    if d >= seq.depth:
        raise EndOfSequence(f"thread already reaches stage {d}")
    bond = seq.bonds[d]
    x = t.entries[d]
    out = []
    for nxt in proj_of(bond).fiber(x):
        role = _step_role(seq, d, x, nxt)
        if policy == "witness" and role != WITNESS:
            continue
        if policy == "embedding" and role != EMBEDDING:
            continue
        out.append(Thread(seq, t.entries + (nxt,), t.roles + (role,)))
    return out


def witness_chain(seq: FraisseSequence, stage: int, vertex: int, to_stage: int | None = None) -> Thread:
    """Extend (stage, vertex) by witnesses as far as they exist."""
    horizon = seq.depth if to_stage is None else to_stage
    t = start_thread(seq, stage, vertex)
    while t.top < horizon:
        nxts = extend_thread(t, policy="witness")
        if not nxts:
            break
        t = nxts[0]
    return t


@dataclass(frozen=True)
class Classification:
    kind: str  # "stabilized" | "growing" | "endpoint_chain" | "inconclusive"
    order: int | None = None
    stage: int | None = None


def classify_thread(t: Thread, window: int = 3) -> Classification:
    """Classify the tail of a thread at finite depth.

    The verdict is explicitly depth-limited: a constant order over the
    last `window` stages reads as stabilized, strict growth as growing,
    anything else as inconclusive.
    """
    roles = t.roles
    n = len(t.entries)
    emb_start = n - 1
    while emb_start > 0 and roles[emb_start - 1] == EMBEDDING:
        emb_start -= 1
    # an endpoint tail may be a bare final entry; embeddings only lengthen it
    if t.order_at(n - 1) == 1:
        while emb_start < n - 1 and t.order_at(emb_start) != 1:
            emb_start += 1
        if all(t.order_at(i) == 1 for i in range(emb_start, n)):
            return Classification("endpoint_chain", stage=emb_start)
    wit_start = n - 1
    while wit_start > 0 and roles[wit_start - 1] == WITNESS:
        wit_start -= 1
    if wit_start == n - 1:
        raise NotEventuallyWitnessed("no witness or embedding tail to classify")
    if n - wit_start < window:
        return Classification("inconclusive")
    orders = [t.order_at(i) for i in range(n - window, n)]
    if len(set(orders)) == 1:
        k = n - 1
        while k > wit_start and t.order_at(k - 1) == orders[0]:
            k -= 1
        return Classification("stabilized", order=orders[0], stage=k)
    if all(orders[i] < orders[i + 1] for i in range(window - 1)):
        return Classification("growing")
    return Classification("inconclusive")


# ---------------------------------------------------------------------------
# density and prespace reports


@dataclass(frozen=True)
class ProbeResult:
    stage: int
    pair: tuple[int, int]
    status: str  # "found" | "not_found" | "refused"
    found_stage: int | None = None
    vertex: int | None = None
    thread: Thread | None = None

    def to_json(self) -> dict:
        out = {
            "stage": self.stage, "pair": list(self.pair), "status": self.status,
            "found_stage": self.found_stage, "vertex": self.vertex,
        }
        if self.thread is not None:
            out["thread"] = self.thread.to_json()
        return out


def canonical_lift(seq: FraisseSequence, stage: int, vertex: int, to_stage: int) -> list[int]:
    """The canonical continuation of a stage vertex as a point of the limit.

    Ramification points follow their witnesses, endpoints follow the
    section when there is one and otherwise the least endpoint of their
    fiber; entry k of the result is the stage-(stage+k) vertex.
    """
    out = [vertex]
    x = vertex
    for i in range(stage, to_stage):
        bond = seq.bonds[i]
        deg = seq.stages[i].tree.degree(x)
        fiber = proj_of(bond).fiber(x)
        if deg >= 3:
            res = coherence_at(proj_of(bond), x)
            assert res.is_weak, "family bonds are weakly coherent at ramification points"
            x = res.witness
        elif deg == 1 and isinstance(bond, EpiWithSection):
            x = bond.section(x)
        else:
            upstairs = seq.stages[i + 1].tree
            ends = [v for v in fiber if upstairs.degree(v) == 1]
            x = min(ends) if ends else min(fiber)
        out.append(x)
    return out


def _probe_paths(seq: FraisseSequence, i: int, pair, horizon: int) -> list[list[int]]:
    """Interior of the path between the canonical lifts, per stage n >= i."""
    a, b = pair
    lift_a = canonical_lift(seq, i, a, horizon)
    lift_b = canonical_lift(seq, i, b, horizon)
    out = []
    for n in range(i, horizon + 1):
        spine = path(seq.stages[n].tree, lift_a[n - i], lift_b[n - i])
        out.append(spine[1:-1])
    return out


def _matches_order(seq: FraisseSequence, n: int, v: int, p) -> bool:
    stage = seq.stages[n]
    if seq.family.kind == "DDFP":
        return stage.label(v) == p
    return stage.tree.degree(v) == p


def arcwise_density_report(
    seq: FraisseSequence,
    p,
    stage_pairs: Iterable[tuple[int, tuple[int, int]]],
    depth: int | None = None,
) -> list[ProbeResult]:
    """Search each probed pair for an order-p point between its fibers.

    A hit needs a matching vertex between the fibers at some stage plus a
    witness chain of that same order running to the requested depth.
    """
    horizon = seq.depth if depth is None else depth
    results = []
    for i, pair in stage_pairs:
        if not seq.family.orders.contains(p):
            results.append(ProbeResult(i, tuple(pair), "refused"))
            continue
        paths = _probe_paths(seq, i, pair, horizon)
        hit = None
        for n in range(i, horizon + 1):
            for v in paths[n - i]:
                if not _matches_order(seq, n, v, p):
                    continue
                if seq.stages[n].tree.degree(v) < 3:
                    continue
                chain = witness_chain(seq, n, v, horizon)
                if chain.top < horizon:
                    continue
                if seq.family.kind != "DDFP" and any(
                    chain.order_at(k) != p for k in range(n, horizon + 1)
                ):
                    continue
                # the chain must stay on the probe path at every later stage
                if any(chain.entries[m] not in paths[m - i] for m in range(n, horizon + 1)):
                    continue
                hit = ProbeResult(i, tuple(pair), "found", n, v, chain)
                break
            if hit:
                break
        results.append(hit or ProbeResult(i, tuple(pair), "not_found", horizon))
    return results


def growth_probe(
    seq: FraisseSequence,
    stage_pairs: Iterable[tuple[int, tuple[int, int]]],
    depth: int | None = None,
    window: int = 3,
) -> list[ProbeResult]:
    """Search probed paths for a witness chain of unboundedly growing order."""
    horizon = seq.depth if depth is None else depth
    results = []
    for i, pair in stage_pairs:
        paths = _probe_paths(seq, i, pair, horizon)
        hit = None
        for n in range(i, horizon + 1):
            for v in paths[n - i]:
                if seq.stages[n].tree.degree(v) < 3:
                    continue
                chain = witness_chain(seq, n, v, horizon)
                if chain.top < horizon:
                    continue
                try:
                    cls = classify_thread(chain, window=window)
                except NotEventuallyWitnessed:
                    continue
                if cls.kind == "growing":
                    hit = ProbeResult(i, tuple(pair), "found", n, v, chain)
                    break
            if hit:
                break
        results.append(hit or ProbeResult(i, tuple(pair), "not_found", horizon))
    return results


@dataclass(frozen=True)
class TripleResult:
    stage: int
    triple: tuple[int, int, int]
    separated_at: int | None

    def to_json(self) -> dict:
        return {
            "stage": self.stage, "triple": list(self.triple),
            "separated_at": self.separated_at,
        }


def _separated(seq: FraisseSequence, n: int, triple, m: int) -> bool:
    a, b, c = triple
    bond = proj_of(seq.bond(m, n))
    fa, fb, fc = set(bond.fiber(a)), set(bond.fiber(b)), set(bond.fiber(c))
    tree = seq.stages[m].tree
    for q in fb:
        touches_a = any(w in fa for w in tree.adj[q])
        touches_c = any(w in fc for w in tree.adj[q])
        if touches_a and touches_c:
            return False
    return True


def two_edge_paths(stage) -> list[tuple[int, int, int]]:
    out = []
    for b in range(stage.n):
        nbrs = stage.tree.adj[b]
        for i in range(len(nbrs)):
            for j in range(i + 1, len(nbrs)):
                out.append((nbrs[i], b, nbrs[j]))
    return out


@dataclass
class PrespaceReport:
    passed: bool
    certificates: list[TripleResult]
    counterexamples: list[TripleResult]

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "certificates": [c.to_json() for c in self.certificates],
            "counterexamples": [c.to_json() for c in self.counterexamples],
        }


def prespace_check(
    seq: FraisseSequence,
    depth: int | None = None,
    probe_stages: Sequence[int] = (0, 1),
) -> PrespaceReport:
    """Certify that probed edge-adjacent triples separate by some stage.

    For each two-edge path a-b-c at a probed stage the certificate names
    a stage m where no lift of b is edge-adjacent to lifts of both a and
    c; separation persists to deeper stages once achieved.
    """
    horizon = seq.depth if depth is None else depth
    certs, bad = [], []
    for n in probe_stages:
        if n > horizon:
            continue
        for triple in two_edge_paths(seq.stages[n]):
            found = None
            for m in range(n, horizon + 1):
                if _separated(seq, n, triple, m):
                    found = m
                    break
            if found is None:
                bad.append(TripleResult(n, triple, None))
            else:
                certs.append(TripleResult(n, triple, found))
    return PrespaceReport(not bad, certs, bad)


# ---------------------------------------------------------------------------
# endpoints


def endpoint_isolation_probe(seq: FraisseSequence, m: int, edge: tuple[int, int], depth: int | None = None):
    """Whether the split isolating an endpoint along its edge is serviced."""
    from .constructions import as_family_arrow, split_edge_padded

    e, other = edge
    if seq.stages[m].tree.degree(e) != 1:
        raise NotEndpoint(f"vertex {e} of stage {m} has degree {seq.stages[m].tree.degree(e)}")
    _, to_e, _ = split_edge_padded(seq.stages[m], (e, other), seq.family)
    arrow = as_family_arrow(to_e, seq.family)
    horizon = seq.depth if depth is None else depth
    return check_extension_property(seq, [(arrow, m)], horizon)[0]


def endpoint_threads(seq: FraisseSequence, depth: int | None = None) -> list[Thread]:
    """Embedding chains from every endpoint of every stage, deduplicated."""
    if not seq.family.uses_sections:
        raise NotEPSequence("endpoint threads follow sections of projection-embedding bonds")
    horizon = seq.depth if depth is None else depth
    seen = {}
    for m in range(horizon + 1):
        for y in seq.stages[m].tree.endpoints():
            t = start_thread(seq, m, y)
            while t.top < horizon:
                t = extend_thread(t, policy="embedding")[0]
            seen.setdefault(t.entries, t)
    return [seen[k] for k in sorted(seen)]


# ---------------------------------------------------------------------------
# the bundled report


@dataclass
class WpReport:
    passed: bool
    stage_validity: list[bool]
    prespace: PrespaceReport
    density: dict
    growth: list[ProbeResult] | None

    def to_json(self) -> dict:
        return {
            "passed": self.passed,
            "stage_validity": self.stage_validity,
            "prespace": self.prespace.to_json(),
            "density": {
                str(p): [r.to_json() for r in results]
                for p, results in self.density.items()
            },
            "growth": [r.to_json() for r in self.growth] if self.growth is not None else None,
        }


def default_probe_pairs(seq: FraisseSequence, stages: Sequence[int] = (0, 1)) -> list[tuple[int, tuple[int, int]]]:
    out = []
    for i in stages:
        if i <= seq.depth:
            out.extend((i, e) for e in seq.stages[i].tree.edges)
    return out


def wp_prespace_report(seq: FraisseSequence, depth: int | None = None) -> WpReport:
    """Bundle stage validity, prespace and density certificates into one verdict.

    Probes cover all adjacent pairs at stages 0 and 1 with the least
    allowed finite order; sets allowing infinity add an unbounded-growth
    probe, passing when at least one probed path carries a growing chain.
    """
    from .families import object_in_family

    horizon = seq.depth if depth is None else depth
    validity = [object_in_family(t, seq.family)[0] for t in seq.stages[: horizon + 1]]
    pre = prespace_check(seq, horizon)
    pairs = default_probe_pairs(seq)
    density: dict = {}
    p = seq.family.orders.min_finite()
    ok = all(validity) and pre.passed
    if p is not None:
        density[p] = arcwise_density_report(seq, p, pairs, horizon)
        ok = ok and all(r.status == "found" for r in density[p])
    growth = None
    if seq.family.orders.includes_infinity:
        if seq.family.orders.finite_complement_bounded():
            growth = []
        else:
            growth = growth_probe(seq, pairs, horizon)
            ok = ok and any(r.status == "found" for r in growth)
    return WpReport(ok, validity, pre, density, growth)
