"""Synthetic multimodal hypernym trees for desk-scale experiments."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import ROOT, Dataset, LabelItem, Taxonomy

SYLLABLES = ("ka", "lo", "mi", "ru", "te", "za", "po", "ne", "vi", "su", "da", "fe",
             "go", "hu", "ji", "bo", "ce", "wa", "xi", "yu")


@dataclass
class SynthConfig:
    nodes: int = 50
    height: int = 3
    img_dim: int = 16
    word_dim: int = 16
    images: int = 10
    noise: float = 0.3          # image scatter around each category prototype
    drift: float = 1.0          # prototype displacement from parent to child
    word_noise: float = 1.0     # word vector displacement from parent to child
    suffix_prob: float = 0.5    # chance a child name is a modifier + the parent name
    # optional per-depth overrides (index 0 = depth 1)
    drift_by_depth: Sequence[float] | None = None
    noise_by_depth: Sequence[float] | None = None
    word_noise_by_depth: Sequence[float] | None = None
    suffix_prob_by_depth: Sequence[float] | None = None
    # chance a node's word / image prototype derives from a random wrong node one level up
    word_confuse_by_depth: Sequence[float] | None = None
    image_confuse_by_depth: Sequence[float] | None = None
    # optional node count per depth; overrides nodes/height when given
    level_sizes: Sequence[int] | None = None

    def __post_init__(self):
        if self.level_sizes:
            sizes = [int(x) for x in self.level_sizes]
            if sizes[0] != 1 or min(sizes) < 1:
                raise ValueError("level_sizes must start with 1 and stay positive")
            self.level_sizes = sizes
            self.nodes, self.height = sum(sizes), len(sizes)
        if self.nodes < self.height or self.height < 1:
            raise ValueError("need nodes >= height >= 1")

    def at(self, name: str, depth: int) -> float:
        per = getattr(self, f"{name}_by_depth")
        if per:
            return float(per[min(depth, len(per)) - 1])
        return float(getattr(self, name, 0.0))


def random_gold_tree(n: int, height: int, rng: np.random.Generator,
                     sizes: Sequence[int] | None = None) -> Taxonomy:
    """Single-rooted tree (top node 1 under the pseudo-root) of exactly ``height`` levels.

    With ``sizes``, depth d holds sizes[d-1] nodes, each under a random node one level up.
    """
    if sizes:
        parent = [-1, ROOT]
        prev = [1]
        for size in sizes[1:]:
            start = len(parent)
            parent.extend(int(rng.choice(prev)) for _ in range(size))
            prev = list(range(start, start + size))
        return Taxonomy(parent)
    parent = np.full(n + 1, -1, dtype=np.int64)
    depth = np.zeros(n + 1, dtype=np.int64)
    parent[1], depth[1] = ROOT, 1
    for v in range(2, height + 1):
        parent[v], depth[v] = v - 1, v
    for v in range(height + 1, n + 1):
        open_ = np.flatnonzero((depth[1:v] >= 1) & (depth[1:v] < height)) + 1
        p = int(rng.choice(open_))
        parent[v], depth[v] = p, depth[p] + 1
    return Taxonomy(parent)


def _word(rng, k=3) -> str:
    return "".join(rng.choice(SYLLABLES) for _ in range(k))


def _confused(p: int, level: np.ndarray, prob: float, rng) -> int:
    if prob <= 0 or len(level) < 2 or rng.random() >= prob:
        return p
    others = level[level != p]
    return int(rng.choice(others))


def generate(cfg: SynthConfig, rng: np.random.Generator, tag: str = "") -> tuple[Dataset, Taxonomy]:
    """One gold tree with its label set.

    Word vectors and image prototypes drift from parent to child; images scatter
    around their node's prototype.
    """
    tree = random_gold_tree(cfg.nodes, cfg.height, rng, cfg.level_sizes)
    depths = tree.depths()
    word = np.zeros((cfg.nodes + 1, cfg.word_dim))
    proto = np.zeros((cfg.nodes + 1, cfg.img_dim))
    names = [""] * (cfg.nodes + 1)
    used = set()
    # parents precede children in id order by construction
    for v in range(1, cfg.nodes + 1):
        p, d = int(tree.parent[v]), int(depths[v])
        if p == ROOT:
            word[v] = rng.normal(0, 1, cfg.word_dim) * 3
            proto[v] = rng.normal(0, 1, cfg.img_dim) * 3
            name = tag + _word(rng)
        else:
            level = np.flatnonzero(depths[:v] == d - 1)
            pw = _confused(p, level, cfg.at("word_confuse", d), rng)
            pi = _confused(p, level, cfg.at("image_confuse", d), rng)
            word[v] = word[pw] + rng.normal(0, 1, cfg.word_dim) * cfg.at("word_noise", d)
            proto[v] = proto[pi] + rng.normal(0, 1, cfg.img_dim) * cfg.at("drift", d)
            if rng.random() < cfg.at("suffix_prob", d):
                name = _word(rng, 1) + names[p]
            else:
                name = _word(rng)
        while name in used:
            name = _word(rng, 1) + name
        used.add(name)
        names[v] = name
    items = []
    for v in range(1, cfg.nodes + 1):
        noise = cfg.at("noise", int(depths[v]))
        imgs = proto[v] + rng.normal(0, 1, (cfg.images, cfg.img_dim)) * noise
        items.append(LabelItem(v, names[v], word[v].copy(), imgs))
    ds = Dataset(items, cfg.img_dim, cfg.word_dim, {"source": "synthetic"})
    return ds, tree


def generate_many(cfg: SynthConfig, count: int, seed: int) -> list[tuple[Dataset, Taxonomy]]:
    rng = np.random.default_rng(seed)
    return [generate(cfg, rng) for _ in range(count)]
