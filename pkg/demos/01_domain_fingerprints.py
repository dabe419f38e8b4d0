"""Domains as gradient fingerprints.

A fixed random encoder takes one gradient step on each graph's labels. The
step is a d x d matrix that depends on features, structure and labels
together, and the embedder maps it to a vector whose distances follow the
distances between the domains.

    python demos/01_domain_fingerprints.py
"""

from itertools import combinations

import numpy as np
from scipy.stats import spearmanr

from graphicl.embedder import embed_many, in_context_embedding
from graphicl.encoder import EncoderInit, fingerprint, fingerprint_closed_form
from graphicl.graphcore import generate_corpus, graded_corpus_spec, unify_graph
from graphicl.trainer import TrainConfig, sample_episode, stage_a


def main():
    corpus = generate_corpus(graded_corpus_spec())
    graphs = [unify_graph(g, 64, sign="data") for g in corpus.graphs]
    print("six domains, each rotated and shifted a little further from the first")
    for g in graphs:
        print(f"  {g.name}: {g.num_nodes} nodes, {len(g.edges)} edges, {g.num_classes} classes")

    cfg = TrainConfig()
    theta0 = EncoderInit.create(64, cfg.d, cfg.seed).theta0

    # the tape-based step and the closed form agree to rounding
    fp = fingerprint(graphs[0], theta0=theta0)
    gap = np.abs(fp.delta - fingerprint_closed_form(graphs[0], theta0=theta0).delta).max()
    print(f"\nfingerprint of {graphs[0].name}: norm {np.linalg.norm(fp.delta):.4f}, closed-form gap {gap:.1e}")

    fps, fit = stage_a(graphs, theta0, cfg)
    print(f"embedder fit: distance loss {fit.initial_loss:.3e} -> {fit.final_loss:.3e} in {len(fit.losses)} steps")
    E = embed_many(fps, fit.params)

    pairs = list(combinations(range(len(graphs)), 2))
    emb = np.array([np.linalg.norm(E[i] - E[j]) for i, j in pairs])
    ref = np.array([corpus.distances[i, j] for i, j in pairs])
    print("\n pair   graph distance   embedding distance")
    for (i, j), a, b in zip(pairs, ref, emb):
        print(f" {i}-{j}    {a:10.3f}        {b:10.4f}")
    print(f"rank correlation {spearmanr(emb, ref).correlation:.3f}")

    # a handful of labeled nodes is enough to place a domain
    g = graphs[3]
    rng = np.random.default_rng(0)
    ep = sample_episode(g, 5, 5, 1, rng)
    s = ep.support()
    e = in_context_embedding(g, s.items, s.classes, theta0, fit.params, num_classes=g.num_classes).vector
    dist = np.linalg.norm(E - e, axis=1)
    print(f"\n25 labeled nodes of {g.name} land nearest to {graphs[int(np.argmin(dist))].name}")
    print("distances to each domain:", " ".join(f"{d:.4f}" for d in dist))


if __name__ == "__main__":
    main()
