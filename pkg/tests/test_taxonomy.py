from collections import deque

import numpy as np
import pytest

from unseendet.errors import ParseError, UnknownNameError, ValidationError
from unseendet.shapesworld import VOCABULARY
from unseendet.taxonomy import (
    is_connected,
    load_taxonomy,
    nearest_semantic,
    parse_taxonomy,
    path_similarity,
    resolve_alias,
)


def bfs_edges(t, a, b):
    """Independent shortest-path oracle over the raw edge set."""
    adj = {}
    for e in t.edges:
        x, y = tuple(e)
        adj.setdefault(x, set()).add(y)
        adj.setdefault(y, set()).add(x)
    dist = {a: 0}
    q = deque([a])
    while q:
        cur = q.popleft()
        for n in adj.get(cur, ()):
            if n not in dist:
                dist[n] = dist[cur] + 1
                q.append(n)
    return dist.get(b)


class TestLoad:
    def test_bundled_fixture(self, taxonomy):
        assert len(taxonomy.nodes) >= 24
        assert is_connected(taxonomy)
        assert set(VOCABULARY) <= taxonomy.nodes

    def test_bundled_node_count(self, taxonomy):
        # counted from the shipped file
        assert len(taxonomy.nodes) == 46

    def test_dangling_edge(self):
        with pytest.raises(ValidationError, match="unknown node"):
            parse_taxonomy("node a\nedge a b\n")

    def test_empty_file(self, tmp_path):
        p = tmp_path / "empty.tax"
        p.write_text("")
        with pytest.raises(ParseError):
            load_taxonomy(p)

    @pytest.mark.parametrize(
        "text",
        ["node a\nnode a\n", "node a\nedge a a\n", "node a\nnode b\nalias x a\nalias x b\n", "node a\nnode b\nalias b a\n"],
    )
    def test_validation_errors(self, text):
        with pytest.raises(ValidationError):
            parse_taxonomy(text)

    def test_bad_directive(self):
        with pytest.raises(ParseError, match="unknown directive"):
            parse_taxonomy("node a\nvertex b\n")


class TestResolve:
    def test_case_folding(self, taxonomy):
        assert resolve_alias(taxonomy, "Goat") == "goat"

    def test_dataset_alias(self, taxonomy):
        assert resolve_alias(taxonomy, "n-box-05") == "pentagon"
        assert resolve_alias(taxonomy, "N-BOX-05") == "pentagon"

    def test_unknown_lists_suggestions(self, taxonomy):
        with pytest.raises(UnknownNameError) as exc:
            resolve_alias(taxonomy, "gremlin")
        assert exc.value.name == "gremlin"
        with pytest.raises(UnknownNameError) as exc:
            resolve_alias(taxonomy, "hexagn")
        assert "hexagon" in exc.value.suggestions


class TestPathSimilarity:
    def test_identity(self, taxonomy):
        assert path_similarity(taxonomy, "ring", "ring") == 1.0

    def test_shared_parent(self, toy_taxonomy):
        assert path_similarity(toy_taxonomy, "goatlike", "sheeplike") == pytest.approx(1 / 3, abs=0)

    def test_bundled_siblings(self, taxonomy):
        assert bfs_edges(taxonomy, "goatlike", "sheeplike") == 2
        assert path_similarity(taxonomy, "goatlike", "sheeplike") == 1 / 3

    def test_disconnected(self, toy_taxonomy):
        assert path_similarity(toy_taxonomy, "gecko", "rock") == 0.0

    def test_unknown_concept(self, taxonomy):
        with pytest.raises(UnknownNameError):
            path_similarity(taxonomy, "ring", "gremlin")

    def test_oracle_random_pairs(self, taxonomy):
        nodes = sorted(taxonomy.nodes)
        rng = np.random.default_rng(7)
        for _ in range(50):
            a, b = (nodes[i] for i in rng.integers(0, len(nodes), size=2))
            assert path_similarity(taxonomy, a, b) == 1.0 / (bfs_edges(taxonomy, a, b) + 1)
            assert path_similarity(taxonomy, a, b) == path_similarity(taxonomy, b, a)

    def test_range_and_identity_iff(self, taxonomy):
        nodes = sorted(taxonomy.nodes)
        for a in nodes[::3]:
            for b in nodes[::4]:
                s = path_similarity(taxonomy, a, b)
                assert 0.0 <= s <= 1.0
                assert (s == 1.0) == (a == b)


class TestNearestSemantic:
    def test_close_neighbour_first(self, taxonomy):
        # hexagon -> pentagon is 2 edges, the others are >= 3
        ranked = nearest_semantic(taxonomy, "hexagon", ["circle", "pentagon", "triangle", "plus"])
        assert ranked[0] == ("pentagon", 1 / 3)
        assert all(s <= 1 / 4 for _, s in ranked[1:])

    def test_self_first(self, taxonomy):
        ranked = nearest_semantic(taxonomy, "ring", ["circle", "ring", "star5"])
        assert ranked[0] == ("ring", 1.0)

    def test_ties_lexicographic(self, taxonomy):
        ranked = nearest_semantic(taxonomy, "ellipse", ["ring", "circle"])
        assert [c for c, _ in ranked] == ["circle", "ring"]

    def test_permutation_sorted(self, taxonomy):
        k = ["plus", "star4", "house", "pentagon", "goatlike", "ring"]
        ranked = nearest_semantic(taxonomy, "sheeplike", k)
        assert sorted(c for c, _ in ranked) == sorted(k)
        scores = [s for _, s in ranked]
        assert scores == sorted(scores, reverse=True)

    def test_empty(self, taxonomy):
        with pytest.raises(ValidationError):
            nearest_semantic(taxonomy, "ring", [])
