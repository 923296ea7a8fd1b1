"""Domain types: label items, datasets, parent-index taxonomies, feature layout, model."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .features import BinSpec, ProjectionMatrix

ROOT = 0


class TaxonomyError(ValueError):
    """Raised when a parent mapping does not form a tree rooted at the pseudo-root."""


@dataclass
class LabelItem:
    id: int
    name: str
    word_vec: np.ndarray | None = None
    image_vecs: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))

    def __post_init__(self):
        if not self.name:
            raise ValueError(f"item {self.id}: empty name")
        if self.word_vec is not None:
            self.word_vec = np.asarray(self.word_vec, dtype=float)
            if self.word_vec.ndim != 1:
                raise ValueError(f"item {self.id}: word vector must be 1-d")
        imgs = np.asarray([] if self.image_vecs is None else self.image_vecs, dtype=float)
        if imgs.size == 0:
            imgs = imgs.reshape(0, imgs.shape[1] if imgs.ndim == 2 else 0)
        if imgs.ndim != 2:
            raise ValueError(f"item {self.id}: image vectors must form a 2-d array")
        self.image_vecs = imgs

    @property
    def has_images(self) -> bool:
        return len(self.image_vecs) > 0

    @property
    def has_word(self) -> bool:
        return self.word_vec is not None


@dataclass
class Dataset:
    """N categories indexed 1..N; index 0 is reserved for the pseudo-root."""

    items: list[LabelItem]
    image_dim: int
    word_dim: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, item in enumerate(self.items, start=1):
            if item.id != k:
                raise ValueError(f"item ids must be 1..N without gaps (position {k} has id {item.id})")
            if item.has_images and item.image_vecs.shape[1] != self.image_dim:
                raise ValueError(f"item {k}: image dim {item.image_vecs.shape[1]} != {self.image_dim}")
            if item.has_word and item.word_vec.shape[0] != self.word_dim:
                raise ValueError(f"item {k}: word dim {item.word_vec.shape[0]} != {self.word_dim}")

    @property
    def n(self) -> int:
        return len(self.items)

    def item(self, k: int) -> LabelItem:
        return self.items[k - 1]

    def names(self) -> list[str]:
        return [""] + [it.name for it in self.items]

    def subset(self, ids: Sequence[int]) -> "Dataset":
        """Dense re-indexing of the given ids, in the given order."""
        items = []
        for new_id, old in enumerate(ids, start=1):
            it = self.item(old)
            items.append(LabelItem(new_id, it.name, it.word_vec, it.image_vecs))
        return Dataset(items, self.image_dim, self.word_dim, dict(self.meta))


class Taxonomy:
    """Rooted tree over nodes 0..N stored as parent indices; ``parent[0] == -1``."""

    def __init__(self, parent: Sequence[int], validate: bool = True):
        p = np.asarray(parent, dtype=np.int64)
        if p.ndim != 1 or len(p) < 1:
            raise TaxonomyError("parent array must be 1-d and include the pseudo-root slot")
        if p[ROOT] != -1:
            raise TaxonomyError("the pseudo-root must have parent -1")
        self.parent = p.copy()
        if validate:
            self.validate()

    @classmethod
    def star(cls, n: int) -> "Taxonomy":
        return cls([-1] + [ROOT] * n)

    @property
    def n(self) -> int:
        return len(self.parent) - 1

    def copy(self) -> "Taxonomy":
        return Taxonomy(self.parent, validate=False)

    def __eq__(self, other):
        return isinstance(other, Taxonomy) and np.array_equal(self.parent, other.parent)

    def __repr__(self):
        return f"Taxonomy({self.parent[1:].tolist()})"

    def edges(self) -> list[tuple[int, int]]:
        return [(int(self.parent[c]), c) for c in range(1, self.n + 1)]

    def children(self) -> list[list[int]]:
        kids: list[list[int]] = [[] for _ in range(self.n + 1)]
        for c in range(1, self.n + 1):
            kids[self.parent[c]].append(c)
        return kids

    def child_counts(self) -> np.ndarray:
        return np.bincount(self.parent[1:], minlength=self.n + 1)

    def depths(self) -> np.ndarray:
        """Depth of every node; pseudo-root 0, its children 1."""
        depth = np.full(self.n + 1, -1, dtype=np.int64)
        depth[ROOT] = 0
        kids = self.children()
        queue = deque([ROOT])
        while queue:
            u = queue.popleft()
            for c in kids[u]:
                depth[c] = depth[u] + 1
                queue.append(c)
        return depth

    def depth(self, node: int) -> int:
        d = 0
        while node != ROOT:
            node = int(self.parent[node])
            d += 1
        return d

    def height(self) -> int:
        return int(self.depths().max())

    def validate(self) -> None:
        n = self.n
        p = self.parent
        if n and (p[1:].min() < 0 or p[1:].max() > n):
            raise TaxonomyError("parent index out of range")
        if np.any(p[1:] == np.arange(1, n + 1)):
            raise TaxonomyError("self loop")
        if np.any(self.depths()[1:] < 0):
            raise TaxonomyError("cycle detected: some nodes do not reach the pseudo-root")

    def is_tree(self) -> bool:
        try:
            self.validate()
        except TaxonomyError:
            return False
        return True

    def move(self, n: int, m: int) -> None:
        """In-place structure operation (see :func:`structure_op`)."""
        if n == ROOT:
            raise TaxonomyError("the pseudo-root cannot be moved")
        if m == n or m in descendants(self, n):
            raise TaxonomyError(f"cannot attach {n} under its own descendant {m}")
        self.parent[n] = m


def taxonomy_from_edges(edges: Iterable[tuple[int, int]], n: int) -> Taxonomy:
    parent = [-1] + [ROOT] * n
    seen = set()
    for p, c in edges:
        if not (1 <= c <= n) or not (0 <= p <= n):
            raise TaxonomyError(f"edge ({p}, {c}) out of range for n={n}")
        if c in seen:
            raise TaxonomyError(f"duplicate child {c}")
        seen.add(c)
        parent[c] = p
    return Taxonomy(parent)


def descendants(t: Taxonomy, n: int) -> set[int]:
    kids = t.children()
    out: set[int] = set()
    stack = list(kids[n])
    while stack:
        u = stack.pop()
        out.add(u)
        stack.extend(kids[u])
    return out


def structure_op(t: Taxonomy, n: int, m: int) -> Taxonomy:
    """Detach ``n`` from its parent and attach it under ``m``; returns a new tree."""
    out = t.copy()
    out.move(n, m)
    return out


# ---------------------------------------------------------------------------
# feature layout and model

BLOCK_NAMES = ("S-V1", "PC-V1", "PC-V2", "S-T1", "PC-T1", "SURF")
BINNED_BLOCKS = ("S-V1", "PC-V1", "PC-V2", "S-T1", "PC-T1")
BIN_WIDTH = 20
SURF_WIDTH = 32


@dataclass(frozen=True)
class Block:
    name: str
    offset: int
    width: int

    @property
    def slice(self) -> slice:
        return slice(self.offset, self.offset + self.width)


@dataclass(frozen=True)
class FeatureLayout:
    blocks: tuple[Block, ...]
    bias: int

    @classmethod
    def default(cls) -> "FeatureLayout":
        blocks = []
        off = 0
        for name in BLOCK_NAMES:
            w = SURF_WIDTH if name == "SURF" else BIN_WIDTH
            blocks.append(Block(name, off, w))
            off += w
        return cls(tuple(blocks), off)

    @property
    def width(self) -> int:
        return self.bias + 1

    def __getitem__(self, name: str) -> Block:
        for b in self.blocks:
            if b.name == name:
                return b
        raise KeyError(name)


@dataclass
class Model:
    """Layer-wise weights plus everything needed to featurize unseen label sets.

    ``alpha_by_depth[d]`` is the Dirichlet pseudo-count of a parent sitting at depth
    ``d`` (index 0 is the pseudo-root); ``alpha_default`` covers nodes of unknown depth.
    """

    layout: FeatureLayout
    weights: np.ndarray
    bins: dict[str, "BinSpec"]
    proj_image_word: "ProjectionMatrix | None"
    proj_word_word: "ProjectionMatrix | None"
    alpha_by_depth: np.ndarray
    alpha_default: float = 1.0
    top_k: int | None = None
    visual: bool = True

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2 or self.weights.shape[1] != self.layout.width:
            raise ValueError(f"weights must be (L, {self.layout.width}), got {self.weights.shape}")
        self.alpha_by_depth = np.asarray(self.alpha_by_depth, dtype=float)
        if np.any(self.alpha_by_depth <= 0) or self.alpha_default <= 0:
            raise ValueError("Dirichlet pseudo-counts must be positive")

    @property
    def max_depth(self) -> int:
        return self.weights.shape[0]

    def layer(self, depth: int) -> int:
        """Zero-based weight row for a child at ``depth``; deeper nodes share the last row."""
        return min(max(depth, 1), self.max_depth) - 1

    def alpha_for(self, n: int, depths: Sequence[int] | None = None) -> np.ndarray:
        """Per-candidate-parent pseudo-counts for a label set of size ``n``.

        Nodes with a known depth use their depth bucket, the rest the pooled default.
        """
        alpha = np.full(n + 1, self.alpha_default)
        alpha[ROOT] = self.alpha_by_depth[0]
        if depths is not None:
            for k in range(1, n + 1):
                d = depths[k]
                if d is not None and 0 < d < len(self.alpha_by_depth):
                    alpha[k] = self.alpha_by_depth[d]
        return alpha
