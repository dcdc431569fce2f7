from __future__ import annotations

import os
from typing import Any

import numpy as np

from focal import events
from focal.hetgraph import HetGraph, Relation, Splits
from focal.synthgen import SynthConfig, generate
from focal.trainer import FocalConfig

SMALL_SYNTH: dict[str, Any] = {
    "num_targets": 30,
    "num_labels": 3,
    "primary_degree": 2.0,
    "secondary_degree": 4.0,
    "rare_rate": 0.2,
    "label_cardinality": 1.5,
    "feature_dims": [4, 4, 4],
    "noise_std": 0.1,
    "anchors_per_label": 2,
    "decisive_per_label": 1,
    "num_contexts": 10,
}

PAPER_PATHS = [["paper-author", "author-paper"]]


def small_graph(seed: int = 0, **overrides: Any) -> HetGraph:
    return generate(SynthConfig.from_dict({**SMALL_SYNTH, **overrides, "seed": seed}))


def small_config(**overrides: Any) -> FocalConfig:
    base = {
        "hidden_dim": 4,
        "out_dim": 4,
        "coa_heads": 2,
        "aoa_heads": 2,
        "dropout": 0.0,
        "max_epoch": 3,
        "patience": 5,
    }
    base.update(overrides)
    return FocalConfig.from_dict(base)


def paper_graph(
    author_paper: list[list[int]] | None = None,
    paper_author: list[list[int]] | None = None,
    term_paper: list[list[int]] | None = None,
) -> HetGraph:
    """Three papers (targets), two authors, two terms; paper 2 has no in-edges."""
    author_paper = [[0, 0], [1, 0], [1, 1]] if author_paper is None else author_paper
    paper_author = [[0, 0], [0, 1], [1, 1]] if paper_author is None else paper_author
    term_paper = [[0, 0], [0, 0], [1, 1]] if term_paper is None else term_paper
    rng = np.random.default_rng(3)
    return HetGraph(
        node_type_names=("paper", "author", "term"),
        node_counts=(3, 2, 2),
        relations=(
            Relation("author-paper", 1, 0, primary=True),
            Relation("paper-author", 0, 1, primary=True),
            Relation("term-paper", 2, 0, primary=False),
            Relation("paper-term", 0, 2, primary=False),
        ),
        edges=(
            np.array(author_paper, dtype=np.int64).reshape(-1, 2),
            np.array(paper_author, dtype=np.int64).reshape(-1, 2),
            np.array(term_paper, dtype=np.int64).reshape(-1, 2),
            np.array([[0, 0], [2, 1]], dtype=np.int64),
        ),
        features=(rng.standard_normal((3, 2)), rng.standard_normal((2, 2)), rng.standard_normal((2, 3))),
        target_type=0,
        labels=np.array([[1, 0], [0, 1], [1, 1]]),
        splits=Splits(np.array([0]), np.array([1]), np.array([2])),
    )


class QuietEvents:
    """Mixin that keeps library events out of the user's event log during a test."""

    def setUp(self) -> None:
        super().setUp()  # type: ignore[misc]
        self._saved_events_env = os.environ.pop(events.EVENTS_ENV, None)
        events.configure(None)

    def tearDown(self) -> None:
        events.configure(None)
        if self._saved_events_env is not None:
            os.environ[events.EVENTS_ENV] = self._saved_events_env
        super().tearDown()  # type: ignore[misc]
