"""Episodic sampling, support/query pair construction and the relation network.

An episode over N attack types with K shots holds:
  support: K spoofs from each of N-1 kept types, then K bona fide (NK items)
  query:   K spoofs of the held-out type, then K other bona fide (2K items)
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor
from .nn import Linear, Module

BONAFIDE = "bonafide"
MATCH_GRANULARITIES = ("binary", "per_type")


class EpisodeError(ValueError):
    pass


@dataclass(frozen=True)
class Episode:
    support: tuple  # ((item, label), ...)
    query: tuple
    held_out_type: Hashable
    n_way: int
    k_shot: int

    @property
    def members(self) -> list:
        """Support then query items, the order expected by ``build_pairs``."""
        return [item for item, _ in self.support + self.query]

    @property
    def labels(self) -> list:
        return [label for _, label in self.support + self.query]

    def binary_labels(self) -> np.ndarray:
        """0 for bona fide, 1 for spoof, over support then query."""
        return np.array([0 if lab == BONAFIDE else 1 for lab in self.labels], dtype=np.int64)

    def match_mask(self, granularity: str = "binary") -> np.ndarray:
        """``NK x 2K`` indicator of label agreement between support row and query column."""
        if granularity not in MATCH_GRANULARITIES:
            raise ValueError(f"match granularity must be one of {MATCH_GRANULARITIES}")
        labels = self.labels
        if granularity == "binary":
            labels = list(self.binary_labels())
        s, q = labels[: len(self.support)], labels[len(self.support):]
        return np.array([[float(a == b) for b in q] for a in s])


def index_by_label(items: Sequence, labels: Sequence) -> dict:
    """Group ``items`` by label; bona fide items must carry the label ``"bonafide"``."""
    if len(items) != len(labels):
        raise ShapeError(f"{len(items)} items but {len(labels)} labels")
    index: dict = {}
    for item, label in zip(items, labels):
        index.setdefault(label, []).append(item)
    return index


def sample_episode(corpus_index: Mapping, n_way: int, k_shot: int, rng: np.random.Generator) -> Episode:
    """Draw one episode; ``corpus_index`` maps each label to its items.

    When the corpus has more than ``n_way`` attack types, ``n_way`` of them are
    drawn first. Items are drawn without replacement within the episode.
    """
    if n_way < 2 or k_shot < 1:
        raise EpisodeError("need n_way >= 2 and k_shot >= 1")
    attack_types = sorted((t for t in corpus_index if t != BONAFIDE), key=str)
    if len(attack_types) < n_way:
        raise EpisodeError(f"corpus has {len(attack_types)} attack types, episode needs {n_way}")
    genuine = list(corpus_index.get(BONAFIDE, ()))
    if len(genuine) < 2 * k_shot:
        raise EpisodeError(f"type {BONAFIDE!r} has {len(genuine)} items, episode needs {2 * k_shot}")
    for t in attack_types:
        if len(corpus_index[t]) < k_shot:
            raise EpisodeError(f"attack type {t!r} has {len(corpus_index[t])} items, episode needs {k_shot}")

    if len(attack_types) > n_way:
        chosen = [attack_types[i] for i in sorted(rng.choice(len(attack_types), n_way, replace=False))]
    else:
        chosen = attack_types
    held_out = chosen[int(rng.integers(n_way))]

    def draw(label, count):
        pool = corpus_index[label]
        return [(pool[i], label) for i in rng.choice(len(pool), count, replace=False)]

    support = []
    for t in chosen:
        if t != held_out:
            support += draw(t, k_shot)
    query = draw(held_out, k_shot)
    both = draw(BONAFIDE, 2 * k_shot)
    support += both[:k_shot]
    query += both[k_shot:]
    return Episode(tuple(support), tuple(query), held_out, n_way, k_shot)


def build_pairs(episode: Episode, embeddings, granularity: str = "binary"):
    """Concatenate every (support, query) embedding pair, support first.

    ``embeddings`` holds one row per member in ``episode.members`` order.
    Returns the ``(NK*2K) x 2d`` pair tensor (row-major over support, then query)
    and the ``NK x 2K`` target matrix.
    """
    embeddings = ag.as_tensor(embeddings)
    n_s, n_q = len(episode.support), len(episode.query)
    if embeddings.ndim != 2 or embeddings.shape[0] != n_s + n_q:
        raise ShapeError(f"expected {n_s + n_q} embedding rows, got shape {embeddings.shape}")
    rows = np.repeat(np.arange(n_s), n_q)
    cols = np.tile(np.arange(n_s, n_s + n_q), n_s)
    pairs = ag.concat([ag.getitem(embeddings, rows), ag.getitem(embeddings, cols)], axis=1)
    return pairs, episode.match_mask(granularity)


class RelationNet(Module):
    """Linear(2d -> hidden), SeLU, Linear(hidden -> 1), sigmoid."""

    def __init__(self, embed_dim: int, rng: np.random.Generator, hidden: int = 128, dtype=np.float64):
        super().__init__()
        self.embed_dim = embed_dim
        self.fc1 = Linear(2 * embed_dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, 1, rng, dtype=dtype)

    def forward(self, pairs):
        return relation_score(pairs, self)


def relation_score(pairs, net: RelationNet, grid=None) -> Tensor:
    """Scores in (0, 1) per pair, reshaped to ``grid`` (e.g. ``(NK, 2K)``) when given."""
    pairs = ag.as_tensor(pairs)
    if pairs.ndim != 2 or pairs.shape[1] != 2 * net.embed_dim:
        raise ShapeError(f"pairs of shape {pairs.shape} do not match embed_dim {net.embed_dim}")
    out = ag.sigmoid(net.fc2(ag.selu(net.fc1(pairs))))
    if grid is None:
        return ag.reshape(out, (pairs.shape[0],))
    if grid[0] * grid[1] != pairs.shape[0]:
        raise ShapeError(f"{pairs.shape[0]} pairs cannot fill a {grid} grid")
    return ag.reshape(out, tuple(grid))
