from __future__ import annotations

import json
import tempfile
import unittest
from dataclasses import replace
from pathlib import Path

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from fixtures import QuietEvents, paper_graph
from focal.hetgraph import (
    GraphFormatError,
    GraphValidationError,
    MetaPath,
    MetaPathError,
    NodeRef,
    Relation,
    Splits,
    coverage_neighborhood,
    graph_from_dict,
    graph_to_dict,
    load_graph,
    metapath_neighborhood,
    save_graph,
)

# (paper, author) pairs over 3 papers and 2 authors
pairs = st.lists(st.tuples(st.integers(0, 2), st.integers(0, 1)), max_size=12)


def brute_force_reach(edge_lists: list[list[list[int]]], start: int) -> set[int]:
    frontier = {start}
    for edges in edge_lists:
        frontier = {dst for src, dst in edges if src in frontier}
    return frontier


class GraphModelTests(QuietEvents, unittest.TestCase):
    def test_offsets_and_global_ids(self) -> None:
        g = paper_graph()
        np.testing.assert_array_equal(g.offsets, [0, 3, 5])
        self.assertEqual(g.total_nodes, 7)
        self.assertEqual(g.global_id(NodeRef(2, 1)), 6)
        self.assertEqual(g.feature_dims, (2, 2, 3))

    def test_edge_out_of_range_names_relation_and_row(self) -> None:
        with self.assertRaisesRegex(GraphValidationError, r"'author-paper' edge row 2: src index 5"):
            paper_graph(author_paper=[[0, 0], [1, 0], [5, 1]])

    def test_node_in_two_splits_is_rejected(self) -> None:
        g = paper_graph()
        with self.assertRaisesRegex(GraphValidationError, "both"):
            replace(g, splits=Splits(np.array([0, 1]), np.array([1]), np.array([2])))

    def test_non_binary_labels_are_rejected(self) -> None:
        g = paper_graph()
        with self.assertRaisesRegex(GraphValidationError, "multi-hot"):
            replace(g, labels=np.array([[1, 0], [0, 2], [1, 1]]))

    def test_non_finite_feature_is_rejected(self) -> None:
        g = paper_graph()
        bad = g.features[1].copy()
        bad[1, 0] = np.nan
        with self.assertRaisesRegex(GraphValidationError, "'author' row 1 column 0"):
            g.with_features(1, bad)

    def test_arrays_are_read_only(self) -> None:
        g = paper_graph()
        with self.assertRaises(ValueError):
            g.edges[0][0, 0] = 1

    def test_with_relations_appends_at_the_end(self) -> None:
        g = paper_graph()
        g2 = g.with_relations([(Relation("extra", 0, 0), np.array([[0, 1]]))])
        self.assertEqual(len(g2.relations), 5)
        self.assertEqual(g2.relation_id("extra"), 4)
        self.assertEqual(g2.relations[:4], g.relations)


class NeighbourhoodTests(QuietEvents, unittest.TestCase):
    def test_coverage_neighbourhood_keeps_duplicates_in_relation_order(self) -> None:
        g = paper_graph()
        self.assertEqual(
            coverage_neighborhood(g, 0),
            [(0, NodeRef(1, 0)), (0, NodeRef(1, 1)), (2, NodeRef(2, 0)), (2, NodeRef(2, 0))],
        )
        self.assertEqual(coverage_neighborhood(g, 1), [(0, NodeRef(1, 1)), (2, NodeRef(2, 1))])
        self.assertEqual(coverage_neighborhood(g, 2), [])

    def test_coverage_neighbourhood_rejects_out_of_range_target(self) -> None:
        with self.assertRaises(GraphValidationError):
            coverage_neighborhood(paper_graph(), 3)

    def test_metapath_neighbourhood(self) -> None:
        g = paper_graph()
        path = g.metapath(["paper-author", "author-paper"])
        self.assertEqual(metapath_neighborhood(g, path, 0), frozenset({0, 1}))
        self.assertEqual(metapath_neighborhood(g, path, 1), frozenset({0, 1}))
        self.assertEqual(metapath_neighborhood(g, path, 2), frozenset())

    def test_metapath_must_start_at_target_type(self) -> None:
        with self.assertRaisesRegex(MetaPathError, "starts at 'author'"):
            paper_graph().metapath(["author-paper"])

    def test_metapath_steps_must_chain(self) -> None:
        with self.assertRaisesRegex(MetaPathError, "step 1"):
            paper_graph().metapath(["paper-author", "paper-term"])

    def test_unknown_relation_and_empty_path(self) -> None:
        g = paper_graph()
        with self.assertRaisesRegex(MetaPathError, "unknown relation 'cites'"):
            g.metapath(["cites"])
        with self.assertRaises(MetaPathError):
            metapath_neighborhood(g, MetaPath(()), 0)

    @settings(max_examples=60, deadline=None)
    @given(pa=pairs, ap=pairs, start=st.integers(0, 2))
    def test_metapath_neighbourhood_matches_brute_force(
        self, pa: list[tuple[int, int]], ap: list[tuple[int, int]], start: int
    ) -> None:
        edge_lists = [[[p, a] for p, a in pa], [[a, p] for p, a in ap]]
        g = paper_graph(author_paper=edge_lists[1], paper_author=edge_lists[0])
        path = g.metapath(["paper-author", "author-paper"])
        self.assertEqual(set(metapath_neighborhood(g, path, start)), brute_force_reach(edge_lists, start))


class FileFormatTests(QuietEvents, unittest.TestCase):
    def test_save_and_load_preserve_the_graph(self) -> None:
        g = paper_graph()
        with tempfile.TemporaryDirectory(prefix="graph-") as tmp:
            path = Path(tmp) / "g.graph"
            save_graph(g, path)
            self.assertEqual(load_graph(path), g)

    def test_unsupported_format_version(self) -> None:
        doc = graph_to_dict(paper_graph())
        doc["format_version"] = 99
        with self.assertRaisesRegex(GraphFormatError, "format_version 99"):
            graph_from_dict(doc)

    def test_missing_section(self) -> None:
        doc = graph_to_dict(paper_graph())
        del doc["edges"]
        with self.assertRaisesRegex(GraphFormatError, "'edges'"):
            graph_from_dict(doc)

    def test_label_rows_must_match_declared_width(self) -> None:
        doc = graph_to_dict(paper_graph())
        doc["labels"]["num_labels"] = 3
        with self.assertRaises(GraphValidationError):
            graph_from_dict(doc)

    def test_relation_with_unknown_type_is_a_format_error(self) -> None:
        doc = graph_to_dict(paper_graph())
        doc["schema"]["relations"][0]["src"] = "venue"
        with self.assertRaises(GraphFormatError):
            graph_from_dict(doc)

    def test_non_json_file(self) -> None:
        with tempfile.TemporaryDirectory(prefix="graph-") as tmp:
            path = Path(tmp) / "g.graph"
            path.write_text("not json", encoding="utf-8")
            with self.assertRaises(GraphFormatError):
                load_graph(path)

    def test_file_is_plain_json(self) -> None:
        with tempfile.TemporaryDirectory(prefix="graph-") as tmp:
            path = Path(tmp) / "g.graph"
            save_graph(paper_graph(), path)
            doc = json.loads(path.read_text(encoding="utf-8"))
        self.assertEqual(doc["counts"], {"paper": 3, "author": 2, "term": 2})
        self.assertEqual(doc["splits"], {"train": [0], "val": [1], "test": [2]})


if __name__ == "__main__":
    unittest.main()
