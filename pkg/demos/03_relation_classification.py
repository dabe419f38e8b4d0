"""Relation classification as node classification.

Every triple of a small knowledge graph becomes a node of its line graph,
labeled by its relation; triples that share an entity are joined. The
node-level model pretrained on ordinary graphs then classifies relations
from one labeled triple per relation.

    python demos/03_relation_classification.py
"""

import numpy as np

from graphicl.graphcore import (
    KnowledgeGraph,
    fewshot_corpus_spec,
    generate_corpus,
    line_graph_transform,
    unify_graph,
)
from graphicl.inference import InferenceConfig, SupportSet, in_context_predict
from graphicl.trainer import TrainConfig, pretrain


def toy_kg(rng, entities=15, relations=3, size=30):
    triples = set()
    while len(triples) < size:
        h, t = rng.choice(entities, 2, replace=False)
        triples.add((int(h), int((h // 5 + t // 5) % relations), int(t)))
    return KnowledgeGraph(entities, np.array(sorted(triples)), rng.normal(size=(entities, 24)), relations, "toy")


def main():
    rng = np.random.default_rng(10)
    kg = toy_kg(rng)
    g = line_graph_transform(kg, 64)
    print(f"{len(kg.triples)} triples over {kg.num_entities} entities -> line graph with "
          f"{g.num_nodes} nodes and {len(g.edges)} edges")
    print("first triples (head, relation, tail):", kg.triples[:4].tolist())

    graphs = [unify_graph(x, 64, sign="data") for x in generate_corpus(fewshot_corpus_spec()).graphs]
    bundle = pretrain(graphs[:4], TrainConfig(m=5, k=5, T=5, episodes=2000, seed=0)).bundle

    for trial in range(3):
        items = np.array([rng.choice(g.nodes_of_class(c)) for c in range(kg.num_relations)])
        queries = np.setdiff1d(np.arange(g.num_nodes), items)
        line = []
        for mode in ("dpaa", "refine"):
            pred = in_context_predict(bundle, g, SupportSet(items, g.labels[items]), queries,
                                      InferenceConfig(mode=mode))
            line.append(f"{mode} {np.mean(pred.predictions == g.labels[queries]):.2f}")
        print(f"support triples {items.tolist()}: accuracy " + ", ".join(line) + " (chance 0.33)")


if __name__ == "__main__":
    main()
