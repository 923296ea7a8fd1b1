"""File formats: JSON-lines datasets, tab-separated trees, JSON models, CSV tables."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Iterable

import numpy as np

from .core import Block, Dataset, FeatureLayout, LabelItem, Model, Taxonomy, TaxonomyError
from .features import BinSpec, ProjectionMatrix

DATASET_FORMAT = "taxinduce-dataset"
MODEL_FORMAT = "taxinduce-model"
MODEL_VERSION = "1.0"


class DataError(ValueError):
    """Unreadable or inconsistent input file."""


def atomic_write(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _floats(a) -> list:
    return np.asarray(a, dtype=float).tolist()


# ---------------------------------------------------------------------------
# datasets

def dumps_dataset(ds: Dataset) -> str:
    lines = [json.dumps({"format": DATASET_FORMAT, "version": 1, "image_dim": ds.image_dim,
                         "word_dim": ds.word_dim, "count": ds.n, "meta": ds.meta},
                        sort_keys=True)]
    for it in ds.items:
        lines.append(json.dumps({
            "id": it.id, "name": it.name,
            "word_vec": None if it.word_vec is None else _floats(it.word_vec),
            "image_vecs": _floats(it.image_vecs),
        }, sort_keys=True))
    return "\n".join(lines) + "\n"


def loads_dataset(text: str) -> Dataset:
    rows = [ln for ln in text.splitlines() if ln.strip()]
    if not rows:
        raise DataError("empty dataset file")
    try:
        header = json.loads(rows[0])
        records = [json.loads(r) for r in rows[1:]]
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed dataset record: {exc}") from None
    if header.get("format") != DATASET_FORMAT:
        raise DataError("missing dataset header")
    a, b = int(header["image_dim"]), int(header["word_dim"])
    if int(header.get("count", len(records))) != len(records):
        raise DataError(f"header announces {header['count']} items, file has {len(records)}")
    items = []
    try:
        for r in records:
            raw = r.get("image_vecs") or []
            imgs = np.asarray(raw, dtype=float) if raw else np.zeros((0, a))
            if imgs.ndim != 2:
                raise ValueError(f"item {r.get('id')}: ragged image vectors")
            wv = r.get("word_vec")
            items.append(LabelItem(int(r["id"]), str(r["name"]),
                                   None if wv is None else np.asarray(wv, dtype=float), imgs))
        return Dataset(items, a, b, header.get("meta") or {})
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"invalid dataset: {exc}") from None


def write_dataset(path, ds: Dataset) -> None:
    atomic_write(path, dumps_dataset(ds))


def read_dataset(path) -> Dataset:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    return loads_dataset(text)


# ---------------------------------------------------------------------------
# trees

def dumps_tree(t: Taxonomy) -> str:
    return "".join(f"{p}\t{c}\n" for p, c in t.edges())


def loads_tree(text: str, n: int | None = None) -> Taxonomy:
    edges = []
    for k, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t") if "\t" in line else line.split()
        if len(parts) != 2:
            raise DataError(f"line {k}: expected 'parent<TAB>child'")
        try:
            edges.append((int(parts[0]), int(parts[1])))
        except ValueError:
            raise DataError(f"line {k}: non-integer id") from None
    if n is None:
        n = max((max(p, c) for p, c in edges), default=0)
    parent = [-1] + [None] * n
    for p, c in edges:
        if not (1 <= c <= n and 0 <= p <= n):
            raise DataError(f"edge ({p}, {c}) out of range for {n} nodes")
        if parent[c] is not None:
            raise DataError(f"node {c} has two parents")
        parent[c] = p
    missing = [c for c in range(1, n + 1) if parent[c] is None]
    if missing:
        raise DataError(f"nodes without a parent edge: {missing[:10]}")
    try:
        return Taxonomy(parent)
    except TaxonomyError as exc:
        raise DataError(str(exc)) from None


def write_tree(path, t: Taxonomy) -> None:
    atomic_write(path, dumps_tree(t))


def read_tree(path, n: int | None = None) -> Taxonomy:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    return loads_tree(text, n)


# ---------------------------------------------------------------------------
# models

def _proj_to_json(p: ProjectionMatrix | None):
    if p is None:
        return None
    return {"matrix": _floats(p.matrix), "lambda": p.lam, "objective": p.objective}


def _proj_from_json(d) -> ProjectionMatrix | None:
    if d is None:
        return None
    m = np.asarray(d["matrix"], dtype=float)
    return ProjectionMatrix(m, float(d["lambda"]), float(d["objective"]))


def dumps_model(model: Model) -> str:
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "layout": [{"name": b.name, "offset": b.offset, "width": b.width}
                   for b in model.layout.blocks] + [{"name": "bias", "offset": model.layout.bias,
                                                     "width": 1}],
        "bins": {k: _floats(v.edges) for k, v in sorted(model.bins.items())},
        "weights": _floats(model.weights),
        "alpha_by_depth": _floats(model.alpha_by_depth),
        "alpha_default": float(model.alpha_default),
        "top_k": model.top_k,
        "visual": model.visual,
        "proj_image_word": _proj_to_json(model.proj_image_word),
        "proj_word_word": _proj_to_json(model.proj_word_word),
    }
    return json.dumps(doc, sort_keys=True, indent=1) + "\n"


def loads_model(text: str) -> Model:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed model file: {exc}") from None
    if doc.get("format") != MODEL_FORMAT:
        raise DataError("not a model file")
    major = str(doc.get("version", "")).split(".")[0]
    if major != MODEL_VERSION.split(".")[0]:
        raise DataError(f"unsupported model format version {doc.get('version')!r}")
    try:
        blocks = tuple(Block(b["name"], int(b["offset"]), int(b["width"]))
                       for b in doc["layout"] if b["name"] != "bias")
        bias = next(int(b["offset"]) for b in doc["layout"] if b["name"] == "bias")
        layout = FeatureLayout(blocks, bias)
        bins = {k: BinSpec(k, v) for k, v in doc["bins"].items()}
        weights = np.asarray(doc["weights"], dtype=float).reshape(-1, layout.width)
        return Model(layout, weights, bins, _proj_from_json(doc["proj_image_word"]),
                     _proj_from_json(doc["proj_word_word"]),
                     np.asarray(doc["alpha_by_depth"], dtype=float), float(doc["alpha_default"]),
                     doc["top_k"], bool(doc["visual"]))
    except (KeyError, ValueError, TypeError, StopIteration) as exc:
        raise DataError(f"invalid model file: {exc}") from None


def write_model(path, model: Model) -> None:
    atomic_write(path, dumps_model(model))


def read_model(path) -> Model:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    return loads_model(text)


# ---------------------------------------------------------------------------
# CSV tables

def dumps_csv(header: list[str], rows: Iterable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([r[h] for h in header] if isinstance(r, dict) else r)
    return buf.getvalue()


def dumps_marginals(probs: np.ndarray) -> str:
    """Nonzero entries of a marginal table as (child, parent, probability) rows."""
    rows = []
    for i in range(probs.shape[0]):
        for m in np.flatnonzero(probs[i]):
            rows.append((i + 1, int(m), repr(float(probs[i, m]))))
    return dumps_csv(["child", "parent", "probability"], rows)
