from graphicl.graphcore.features import SIGN_RULES, DEFAULT_WIDTH, line_graph_transform, unify_features, unify_graph
from graphicl.graphcore.graph import UNLABELED, Graph, KnowledgeGraph, graph_distance, normalize_adjacency
from graphicl.graphcore.io import (
    read_graph,
    read_knowledge_graph,
    read_matrix,
    write_graph,
    write_knowledge_graph,
    write_matrix,
)
from graphicl.graphcore.synth import (
    CorpusSpec,
    DomainSpec,
    SyntheticCorpus,
    fewshot_corpus_spec,
    generate_corpus,
    graded_corpus_spec,
)

__all__ = [
    "DEFAULT_WIDTH",
    "SIGN_RULES",
    "UNLABELED",
    "CorpusSpec",
    "DomainSpec",
    "Graph",
    "KnowledgeGraph",
    "SyntheticCorpus",
    "fewshot_corpus_spec",
    "generate_corpus",
    "graded_corpus_spec",
    "graph_distance",
    "line_graph_transform",
    "normalize_adjacency",
    "read_graph",
    "read_knowledge_graph",
    "read_matrix",
    "unify_features",
    "unify_graph",
    "write_graph",
    "write_knowledge_graph",
    "write_matrix",
]
