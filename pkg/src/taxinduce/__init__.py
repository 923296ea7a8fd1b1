"""Taxonomy induction from word and image embeddings with a collapsed tree model."""
from .core import (Dataset, FeatureLayout, LabelItem, Model, Taxonomy, TaxonomyError,
                   descendants, structure_op, taxonomy_from_edges)
from .evaluation import EvalReport, ancestor_f1, ancestor_pairs, bfs_subtree
from .inference import MarginalTable, SamplerConfig, mst_decode, run_chain
from .training import TrainConfig, TrainingTree, em_train

__version__ = "0.1.0"
