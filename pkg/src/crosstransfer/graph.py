"""Bipartite user-item interaction graph and neighborhood-guided selection of
source-domain records.

Selection runs in three steps: seed nodes are the target vocabulary mapped
onto the source graph, one-hop expansion follows direct click/pay edges, and
two-hop expansion follows co-click paths (item-user-item and user-item-user).
A source record is admitted when its endpoints lie in the expanded node set.

All expansion caps break ties the same way: higher-degree nodes first, then
ascending id, with users before items at equal degree.  That makes every
output a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

EDGE_KINDS = ("click", "pay")


@dataclass
class NodeSet:
    users: set = field(default_factory=set)
    items: set = field(default_factory=set)

    def __len__(self):
        return len(self.users) + len(self.items)

    def union(self, other: "NodeSet") -> "NodeSet":
        return NodeSet(self.users | other.users, self.items | other.items)

    def difference(self, other: "NodeSet") -> "NodeSet":
        return NodeSet(self.users - other.users, self.items - other.items)

    def __eq__(self, other):
        return self.users == other.users and self.items == other.items


@dataclass(frozen=True)
class GstConfig:
    one_hop_kinds: tuple = EDGE_KINDS
    enable_two_hop: bool = True
    max_expanded_nodes: int = 1_000_000
    fanout_cap: int = 10_000
    require_both_endpoints: bool = True

    def validate(self):
        if self.max_expanded_nodes <= 0 or self.fanout_cap <= 0:
            raise ValueError("expansion caps must be positive")
        bad = set(self.one_hop_kinds) - set(EDGE_KINDS)
        if bad:
            raise ValueError(f"unknown edge kinds {sorted(bad)}")


class InteractionGraph:
    """Immutable after build; adjacency is stored from both sides."""

    def __init__(self):
        self.user_ids: set = set()
        self.item_ids: set = set()
        # adjacency[kind][id] -> set of neighbor ids on the other side
        self.user_adj: dict = {k: {} for k in EDGE_KINDS}
        self.item_adj: dict = {k: {} for k in EDGE_KINDS}

    def user_neighbors(self, user_id: int, kinds) -> set:
        out: set = set()
        for k in kinds:
            out |= self.user_adj[k].get(user_id, set())
        return out

    def item_neighbors(self, item_id: int, kinds) -> set:
        out: set = set()
        for k in kinds:
            out |= self.item_adj[k].get(item_id, set())
        return out

    def user_degree(self, user_id: int) -> int:
        return len(self.user_neighbors(user_id, EDGE_KINDS))

    def item_degree(self, item_id: int) -> int:
        return len(self.item_neighbors(item_id, EDGE_KINDS))

    @property
    def nodes(self) -> NodeSet:
        return NodeSet(set(self.user_ids), set(self.item_ids))

    def edge_count(self) -> int:
        return sum(len(v) for adj in self.user_adj.values() for v in adj.values())


def build_graph(events) -> InteractionGraph:
    """One edge per distinct (user, item, kind); duplicates collapse."""
    if not events:
        raise ValueError("build_graph: no events")
    g = InteractionGraph()
    for e in events:
        if e.kind not in EDGE_KINDS:
            raise ValueError(f"build_graph: unknown edge kind {e.kind!r}")
        if e.user_id < 0 or e.item_id < 0:
            raise ValueError(f"build_graph: bad id on event {e}")
        g.user_ids.add(e.user_id)
        g.item_ids.add(e.item_id)
        g.user_adj[e.kind].setdefault(e.user_id, set()).add(e.item_id)
        g.item_adj[e.kind].setdefault(e.item_id, set()).add(e.user_id)
    return g


def seed_nodes(graph: InteractionGraph, target_users, target_items) -> NodeSet:
    """Target vocabulary mapped onto the source graph (set intersection)."""
    return NodeSet(
        users=graph.user_ids & set(int(u) for u in target_users),
        items=graph.item_ids & set(int(i) for i in target_items),
    )


def _top_by_degree(ids, degree_of, cap: int | None) -> set:
    ids = set(ids)
    if cap is None or len(ids) <= cap:
        return ids
    ranked = sorted(ids, key=lambda n: (-degree_of(n), n))
    return set(ranked[:cap])


def _truncate_nodeset(ns: NodeSet, graph: InteractionGraph, cap: int | None) -> NodeSet:
    if cap is None or len(ns) <= cap:
        return ns
    ranked = sorted(
        [(-graph.user_degree(u), 0, u) for u in ns.users]
        + [(-graph.item_degree(i), 1, i) for i in ns.items]
    )
    kept = ranked[:cap]
    return NodeSet(
        users={n for _, t, n in kept if t == 0},
        items={n for _, t, n in kept if t == 1},
    )


def expand_one_hop(
    graph: InteractionGraph,
    seeds: NodeSet,
    kinds=EDGE_KINDS,
    fanout_cap: int | None = None,
    max_nodes: int | None = None,
) -> NodeSet:
    """Direct neighbors of the seeds through edges of the given kinds,
    excluding the seeds themselves."""
    _check_seeds(graph, seeds)
    out = NodeSet()
    for u in seeds.users:
        out.items |= _top_by_degree(graph.user_neighbors(u, kinds), graph.item_degree, fanout_cap)
    for i in seeds.items:
        out.users |= _top_by_degree(graph.item_neighbors(i, kinds), graph.user_degree, fanout_cap)
    out = out.difference(seeds)
    return _truncate_nodeset(out, graph, max_nodes)


def expand_two_hop(
    graph: InteractionGraph,
    seeds: NodeSet,
    exclude: NodeSet | None = None,
    fanout_cap: int | None = None,
    max_nodes: int | None = None,
) -> NodeSet:
    """Co-click neighbors: item-user-item paths from seed items and
    user-item-user paths from seed users, minus seeds and `exclude`
    (normally the one-hop set).  Only click edges participate."""
    _check_seeds(graph, seeds)
    out = NodeSet()
    for i in seeds.items:
        reached: set = set()
        for u in graph.item_neighbors(i, ("click",)):
            reached |= graph.user_neighbors(u, ("click",))
        out.items |= _top_by_degree(reached, graph.item_degree, fanout_cap)
    for u in seeds.users:
        reached = set()
        for i in graph.user_neighbors(u, ("click",)):
            reached |= graph.item_neighbors(i, ("click",))
        out.users |= _top_by_degree(reached, graph.user_degree, fanout_cap)
    out = out.difference(seeds)
    if exclude is not None:
        out = out.difference(exclude)
    return _truncate_nodeset(out, graph, max_nodes)


def _check_seeds(graph: InteractionGraph, seeds: NodeSet):
    bad_u = seeds.users - graph.user_ids
    bad_i = seeds.items - graph.item_ids
    if bad_u or bad_i:
        raise KeyError(
            f"seeds not in graph: users {sorted(bad_u)[:5]}, items {sorted(bad_i)[:5]}"
        )


def expanded_nodes(graph: InteractionGraph, seeds: NodeSet, config: GstConfig) -> NodeSet:
    """Seeds plus capped one- and two-hop expansion under `config`."""
    config.validate()
    one = expand_one_hop(
        graph, seeds, config.one_hop_kinds, config.fanout_cap, config.max_expanded_nodes
    )
    admitted = seeds.union(one)
    if config.enable_two_hop:
        budget = config.max_expanded_nodes - len(one)
        if budget > 0:
            two = expand_two_hop(
                graph, seeds, exclude=admitted, fanout_cap=config.fanout_cap, max_nodes=budget
            )
            admitted = admitted.union(two)
    return admitted


def gst_select(graph: InteractionGraph, seeds: NodeSet, config: GstConfig, source_records) -> list:
    """Source records whose endpoints fall inside the expanded node set,
    in deterministic (window, user_id, item_id) order."""
    admitted = expanded_nodes(graph, seeds, config)
    if config.require_both_endpoints:
        keep = [
            r for r in source_records
            if r.user_id in admitted.users and r.item_id in admitted.items
        ]
    else:
        keep = [
            r for r in source_records
            if r.user_id in admitted.users or r.item_id in admitted.items
        ]
    return sorted(keep, key=lambda r: (r.window, r.user_id, r.item_id))


EDGE_FILE_VERSION = "crosstransfer-edges-v1"


def export_edges(path, graph: InteractionGraph, nodes: NodeSet | None = None) -> None:
    """Debug dump of the (sub)graph as one `user item kind` line per edge."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"#{EDGE_FILE_VERSION}\n")
        for kind in EDGE_KINDS:
            for u in sorted(graph.user_adj[kind]):
                if nodes is not None and u not in nodes.users:
                    continue
                for i in sorted(graph.user_adj[kind][u]):
                    if nodes is not None and i not in nodes.items:
                        continue
                    fh.write(f"{u}\t{i}\t{kind}\n")
