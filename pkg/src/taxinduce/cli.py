"""Command line entry points.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as tio
from .core import TaxonomyError
from .evaluation import ancestor_f1, construct, leave_one_out, run_completion
from .inference import SamplerConfig
from .reports import export_dot, relevance_rows
from .synth import SynthConfig, generate
from .training import TrainConfig, TrainingTree, em_train, prepare_model

REPORT_COLUMNS = ["task", "height", "precision", "recall", "f1", "predicted", "gold", "correct"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _k(value: str) -> int | None:
    if value.lower() in ("all", "inf"):
        return None
    k = int(value)
    if k < 1:
        raise argparse.ArgumentTypeError("K must be >= 1 or 'all'")
    return k


def _floats(value: str) -> list[float]:
    return [float(x) for x in value.split(",") if x.strip()]


def _add_train_options(p):
    g = p.add_argument_group("model")
    g.add_argument("--layers", type=int, default=6, help="number of layer-specific weight vectors")
    g.add_argument("--em-iters", type=int, default=300)
    g.add_argument("--lambda", dest="lam", type=float, default=1e-3, help="L1 weight of projections")
    g.add_argument("--k", type=_k, default=None, help="PC-V1 top-K parent images (int or 'all')")
    g.add_argument("--no-visual", action="store_true", help="disable the three visual blocks")
    g.add_argument("--e-burn", type=int, default=5, help="E-step burn-in sweeps per EM iteration")
    g.add_argument("--e-samples", type=int, default=20, help="E-step sample sweeps per EM iteration")
    g.add_argument("--patience", type=int, default=50, help="early-stop window; 0 disables")
    g.add_argument("--seed", type=int, default=0)


def _train_config(a) -> TrainConfig:
    return TrainConfig(em_iterations=a.em_iters, layers=a.layers, lam=a.lam, top_k=a.k,
                       visual=not a.no_visual, burn_in=a.e_burn, samples=a.e_samples,
                       seed=a.seed, patience=a.patience or None)


def _add_sampler_options(p, seed=True):
    p.add_argument("--burn", type=int, default=1000, help="burn-in sweeps")
    p.add_argument("--samples", type=int, default=5000, help="retained sweeps")
    if seed:
        p.add_argument("--seed", type=int, default=0)


def _training_trees(data: list[str], trees: list[str]) -> list[TrainingTree]:
    if len(data) == 1 and len(trees) >= 1 and len(trees) != 1:
        data = data * len(trees)
    if len(data) != len(trees):
        raise UsageError("give one --data per --tree (or a single --data shared by all trees)")
    out = []
    for d, t in zip(data, trees):
        ds = tio.read_dataset(d)
        out.append(TrainingTree(ds, tio.read_tree(t, ds.n)))
    return out


def _write_report(report, csv_path):
    print(report)
    if csv_path:
        tio.atomic_write(csv_path, tio.dumps_csv(REPORT_COLUMNS, [report.as_row()]))


# ---------------------------------------------------------------------------
# commands

def cmd_train(a):
    trees = _training_trees(a.data, a.tree)
    cfg = _train_config(a)
    model, caches = prepare_model(trees, cfg)
    model, tlog = em_train(trees, cfg, model, caches)
    tio.write_model(a.out, model)
    log_path = a.log or str(a.out) + ".log.csv"
    tio.atomic_write(log_path, tio.dumps_csv(tlog.header(cfg.layers), tlog.rows))
    print(f"wrote {a.out} ({len(tlog.rows)} EM iterations, log {log_path})")


def cmd_construct(a):
    model = tio.read_model(a.model)
    ds = tio.read_dataset(a.data)
    _check_dims(model, ds)
    scfg = SamplerConfig(a.burn, a.samples, a.seed)
    tree, marg = construct(model, ds, scfg)
    tio.write_tree(a.out_tree, tree)
    if a.out_marginals:
        tio.atomic_write(a.out_marginals, tio.dumps_marginals(marg.probs))
    print(f"wrote {a.out_tree} ({ds.n} nodes, height {tree.height()})")


def _check_dims(model, ds):
    if model.proj_image_word is not None and ds.n and any(it.has_images for it in ds.items):
        if model.proj_image_word.matrix.shape[1] != ds.image_dim:
            raise tio.DataError(f"model expects image dim {model.proj_image_word.matrix.shape[1]}, "
                                f"data has {ds.image_dim}")
    for proj in (model.proj_image_word, model.proj_word_word):
        if proj is not None and proj.matrix.shape[0] != ds.word_dim:
            raise tio.DataError(f"model expects word dim {proj.matrix.shape[0]}, "
                                f"data has {ds.word_dim}")


def cmd_eval(a):
    gold = tio.read_tree(a.gold)
    pred = tio.read_tree(a.pred)
    if pred.n != gold.n:
        raise tio.DataError(f"node-set mismatch: prediction has {pred.n} nodes, gold {gold.n}")
    _write_report(ancestor_f1(pred, gold), a.csv)


def cmd_complete(a):
    ds = tio.read_dataset(a.data)
    gold = tio.read_tree(a.tree, ds.n)
    scfg = SamplerConfig(a.burn, a.samples, a.seed)
    report, pred = run_completion(ds, gold, _train_config(a), scfg, a.split_seed, a.test_frac)
    if a.out_tree:
        tio.write_tree(a.out_tree, pred)
    _write_report(report, a.csv)


def cmd_synth(a):
    cfg = SynthConfig(nodes=a.nodes, height=a.height, img_dim=a.img_dim, word_dim=a.word_dim,
                      images=a.images, noise=a.noise, drift=a.drift, word_noise=a.word_noise,
                      suffix_prob=a.suffix_prob, noise_by_depth=a.noise_by_depth,
                      drift_by_depth=a.drift_by_depth, word_noise_by_depth=a.word_noise_by_depth,
                      suffix_prob_by_depth=a.suffix_prob_by_depth,
                      word_confuse_by_depth=a.word_confuse_by_depth,
                      image_confuse_by_depth=a.image_confuse_by_depth,
                      level_sizes=[int(x) for x in a.level_sizes] if a.level_sizes else None)
    rng = np.random.default_rng(a.seed)
    out = Path(a.out_dir)
    for k in range(a.trees):
        ds, tree = generate(cfg, rng)
        tio.write_dataset(out / f"tree{k}.jsonl", ds)
        tio.write_tree(out / f"tree{k}.tsv", tree)
    print(f"wrote {a.trees} dataset/tree pairs to {out}")


def cmd_inspect_weights(a):
    model = tio.read_model(a.model)
    text = tio.dumps_csv(["block", "layer", "relevance"], relevance_rows(model))
    if a.out:
        tio.atomic_write(a.out, text)
    else:
        sys.stdout.write(text)


def cmd_sweep_k(a):
    trees = _training_trees(a.data, a.tree)
    if len(trees) < 2:
        raise UsageError("sweep-k needs at least two trees for leave-one-out")
    scfg = SamplerConfig(a.burn, a.samples, a.seed)
    rows = []
    for k in a.k_list:
        cfg = _train_config(a)
        cfg.top_k = k
        reps = leave_one_out(trees, cfg, scfg)
        f1 = float(np.mean([r.f1 for r in reps]))
        rows.append({"K": "all" if k is None else k, "f1": repr(f1)})
        print(f"K={rows[-1]['K']}: mean F1 {f1:.4f}", file=sys.stderr)
    text = tio.dumps_csv(["K", "f1"], rows)
    if a.out:
        tio.atomic_write(a.out, text)
    sys.stdout.write(text)


def cmd_export_dot(a):
    tree = tio.read_tree(a.tree)
    names = tio.read_dataset(a.data).names() if a.data else [str(i) for i in range(tree.n + 1)]
    ref = tio.read_tree(a.gold, tree.n) if a.gold else None
    text = export_dot(tree, names, ref)
    if a.out:
        tio.atomic_write(a.out, text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="taxinduce", description="Multimodal taxonomy induction")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("train", help="fit a model on gold trees")
    s.add_argument("--data", action="append", required=True)
    s.add_argument("--tree", action="append", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--log", help="training log CSV (default: <out>.log.csv)")
    _add_train_options(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("construct", help="build a taxonomy over an unseen label set")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    _add_sampler_options(s)
    s.add_argument("--out-tree", required=True)
    s.add_argument("--out-marginals")
    s.set_defaults(func=cmd_construct)

    s = sub.add_parser("eval", help="ancestor-F1 of a predicted tree")
    s.add_argument("--pred", required=True)
    s.add_argument("--gold", required=True)
    s.add_argument("--csv")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("complete", help="hierarchy-completion experiment on one tree")
    s.add_argument("--data", required=True)
    s.add_argument("--tree", required=True)
    s.add_argument("--split-seed", type=int, default=0)
    s.add_argument("--test-frac", type=float, default=0.3)
    _add_train_options(s)
    _add_sampler_options(s, seed=False)
    s.add_argument("--out-tree")
    s.add_argument("--csv")
    s.set_defaults(func=cmd_complete)

    s = sub.add_parser("synth", help="generate synthetic datasets and gold trees")
    s.add_argument("--trees", type=int, default=3)
    s.add_argument("--nodes", type=int, default=50)
    s.add_argument("--height", type=int, default=3)
    s.add_argument("--img-dim", type=int, default=16)
    s.add_argument("--word-dim", type=int, default=16)
    s.add_argument("--images", type=int, default=10)
    s.add_argument("--noise", type=float, default=0.3, help="image scatter around prototypes")
    s.add_argument("--drift", type=float, default=1.0)
    s.add_argument("--word-noise", type=float, default=1.0)
    s.add_argument("--suffix-prob", type=float, default=0.5)
    for name in ("noise", "drift", "word-noise", "suffix-prob"):
        s.add_argument(f"--{name}-by-depth", type=_floats, default=None,
                       help="comma-separated per-depth values overriding --" + name)
    s.add_argument("--word-confuse-by-depth", type=_floats, default=None,
                   help="per-depth chance a word vector derives from a wrong parent")
    s.add_argument("--image-confuse-by-depth", type=_floats, default=None,
                   help="per-depth chance an image prototype derives from a wrong parent")
    s.add_argument("--level-sizes", type=_floats, default=None,
                   help="nodes per depth, starting with 1; overrides --nodes/--height")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("inspect-weights", help="per-layer relevance of each feature block")
    s.add_argument("--model", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_inspect_weights)

    s = sub.add_parser("sweep-k", help="leave-one-out F1 for several PC-V1 K values")
    s.add_argument("--data", action="append", required=True)
    s.add_argument("--tree", action="append", required=True)
    s.add_argument("--k-list", type=lambda v: [_k(x) for x in v.split(",")], required=True)
    _add_train_options(s)
    _add_sampler_options(s, seed=False)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sweep_k)

    s = sub.add_parser("export-dot", help="Graphviz rendering of a tree")
    s.add_argument("--tree", required=True)
    s.add_argument("--data", help="dataset for node names")
    s.add_argument("--gold", help="reference tree; marks false and missed edges")
    s.add_argument("--out")
    s.set_defaults(func=cmd_export_dot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    a = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        a.func(a)
    except UsageError as exc:
        print(f"taxinduce: error: {exc}", file=sys.stderr)
        return 1
    except (tio.DataError, TaxonomyError, ValueError) as exc:
        print(f"taxinduce: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
