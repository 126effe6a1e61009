"""Directed leader-follower graphs, shared by ground truth and predictions."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class CausalGraph:
    """A set of directed leader -> follower edges over named vehicles.

    Invariants: every follower has at most one leader, edges reference
    declared nodes only, and self-loops are rejected.
    """

    nodes: tuple[str, ...]
    edges: frozenset[tuple[str, str]] = frozenset()

    def __post_init__(self) -> None:
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise ValueError("duplicate node ids")
        followers: set[str] = set()
        for leader, follower in self.edges:
            if leader == follower:
                raise ValueError(f"self edge on {leader!r}")
            if leader not in node_set or follower not in node_set:
                raise ValueError(f"edge ({leader!r} -> {follower!r}) references unknown node")
            if follower in followers:
                raise ValueError(f"{follower!r} has more than one leader")
            followers.add(follower)

    @classmethod
    def from_lists(cls, nodes, edges) -> CausalGraph:
        return cls(
            nodes=tuple(sorted(str(n) for n in nodes)),
            edges=frozenset((str(a), str(b)) for a, b in edges),
        )

    def leader_of(self, follower: str) -> str | None:
        for leader, fol in self.edges:
            if fol == follower:
                return leader
        return None

    def followers(self) -> frozenset[str]:
        return frozenset(f for _, f in self.edges)

    def to_json(self) -> dict:
        return {
            "nodes": list(self.nodes),
            "edges": sorted([a, b] for a, b in self.edges),
        }

    @classmethod
    def from_json(cls, obj: dict) -> CausalGraph:
        return cls.from_lists(obj["nodes"], [tuple(e) for e in obj["edges"]])
