"""Document graph networks for supporting-fact identification in multi-hop QA."""

from .embeddings import EmbeddingTable, embed, load_embeddings, tokenize
from .graph_builder import DocumentGraph, build_graph, induced_subgraph, link_documents
from .hotpot_io import SpExample, parse_dataset
from .model import ModelConfig, forward, init_params
from .prefilter import eval_recall, rank_and_select, score_sentence
from .train_eval import TrainConfig, evaluate, sp_metrics_single, train

__version__ = "0.1.0"
