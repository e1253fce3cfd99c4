"""Concept graph with aliases and path-based semantic similarity."""

from __future__ import annotations

import difflib
from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import ParseError, UnknownNameError, ValidationError

BUNDLED = "shapesworld.tax"


@dataclass(frozen=True)
class Taxonomy:
    nodes: frozenset
    edges: frozenset  # frozenset of frozenset({a, b})
    aliases: dict = field(default_factory=dict)

    def __post_init__(self):
        adj = {n: [] for n in self.nodes}
        for e in self.edges:
            a, b = tuple(e)
            adj[a].append(b)
            adj[b].append(a)
        for n in adj:
            adj[n].sort()
        object.__setattr__(self, "_adj", adj)

    def neighbors(self, node):
        return self._adj[node]

    def __contains__(self, node):
        return node in self.nodes


def parse_taxonomy(text: str, source: str = "<string>") -> Taxonomy:
    nodes: list[str] = []
    edges: list[tuple[str, str]] = []
    aliases: list[tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        kind, args = parts[0], parts[1:]
        want = {"node": 1, "edge": 2, "alias": 2}.get(kind)
        if want is None:
            raise ParseError(f"{source}:{lineno}: unknown directive {kind!r}")
        if len(args) != want:
            raise ParseError(f"{source}:{lineno}: {kind} takes {want} argument(s), got {len(args)}")
        if kind == "node":
            nodes.append(args[0].lower())
        elif kind == "edge":
            edges.append((args[0].lower(), args[1].lower()))
        else:
            aliases.append((args[0].lower(), args[1].lower()))
    if not nodes:
        raise ParseError(f"{source}: no nodes declared")

    seen = set()
    for n in nodes:
        if n in seen:
            raise ValidationError(f"{source}: duplicate node id {n!r}")
        seen.add(n)
    edge_set = set()
    for a, b in edges:
        for end in (a, b):
            if end not in seen:
                raise ValidationError(f"{source}: edge {a} -- {b} references unknown node {end!r}")
        if a == b:
            raise ValidationError(f"{source}: self-loop on {a!r}")
        edge_set.add(frozenset((a, b)))
    alias_map: dict[str, str] = {}
    for name, target in aliases:
        if target not in seen:
            raise ValidationError(f"{source}: alias {name!r} points at unknown node {target!r}")
        if name in seen and name != target:
            raise ValidationError(f"{source}: alias {name!r} shadows a different node id")
        if alias_map.get(name, target) != target:
            raise ValidationError(
                f"{source}: ambiguous alias {name!r} -> {alias_map[name]!r} and {target!r}")
        alias_map[name] = target
    return Taxonomy(frozenset(seen), frozenset(edge_set), alias_map)


def load_taxonomy(path=None) -> Taxonomy:
    """Load a taxonomy file; ``None`` loads the bundled shapes taxonomy."""
    if path is None:
        text = resources.files("unseendet.data").joinpath(BUNDLED).read_text("utf-8")
        return parse_taxonomy(text, BUNDLED)
    path = Path(path)
    return parse_taxonomy(path.read_text("utf-8"), str(path))


def resolve_alias(t: Taxonomy, name: str) -> str:
    key = name.strip().lower()
    if key in t.aliases:
        return t.aliases[key]
    if key in t.nodes:
        return key
    pool = sorted(t.nodes | set(t.aliases))
    raise UnknownNameError(name, difflib.get_close_matches(key, pool, n=3))


def _require(t: Taxonomy, c: str):
    if c not in t.nodes:
        raise UnknownNameError(c, difflib.get_close_matches(c, sorted(t.nodes), n=3))


def shortest_path_length(t: Taxonomy, a: str, b: str):
    """Edge count of the shortest a-b path, or None when disconnected."""
    _require(t, a)
    _require(t, b)
    if a == b:
        return 0
    dist = {a: 0}
    queue = deque([a])
    while queue:
        cur = queue.popleft()
        for nxt in t.neighbors(cur):
            if nxt not in dist:
                dist[nxt] = dist[cur] + 1
                if nxt == b:
                    return dist[nxt]
                queue.append(nxt)
    return None


def path_similarity(t: Taxonomy, a: str, b: str) -> float:
    length = shortest_path_length(t, a, b)
    if length is None:
        return 0.0
    return 1.0 / (length + 1)


def nearest_semantic(t: Taxonomy, u: str, candidates) -> list[tuple[str, float]]:
    """Rank ``candidates`` by path similarity to ``u`` (ties: id order).

    The first entry is the class whose detector slot gets relabelled.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValidationError("nearest_semantic needs at least one candidate class")
    scored = [(c, path_similarity(t, u, c)) for c in candidates]
    scored.sort(key=lambda cs: (-cs[1], cs[0]))
    return scored


def is_connected(t: Taxonomy) -> bool:
    start = min(t.nodes)
    return all(shortest_path_length(t, start, n) is not None for n in t.nodes)
