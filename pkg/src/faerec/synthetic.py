"""Synthetic long-tail interaction logs whose items share semantic clusters.

Item ``i`` (external key ``i0000`` style) belongs to cluster ``i % n_clusters``,
matching :func:`faerec.semantic.synth_semantic`. Each user prefers one cluster
and mostly consumes items from it, so items of a cluster co-occur in
sequences. Item popularity follows a Zipf law over a random item ranking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import InteractionDataset, InteractionRecord, build_dataset
from .semantic import SemanticStore, synth_semantic


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 500
    n_items: int = 200
    n_clusters: int = 8
    zipf_exponent: float = 1.2
    min_len: int = 5
    max_len: int = 15
    in_cluster: float = 0.9
    d_llm: int = 64


def item_key(i: int) -> str:
    return f"i{i:04d}"


def synth_interactions(cfg: SynthConfig, seed: int) -> list[InteractionRecord]:
    rng = np.random.default_rng(seed)
    n, c = cfg.n_items, cfg.n_clusters
    ranks = rng.permutation(n) + 1
    weight = ranks.astype(np.float64) ** -cfg.zipf_exponent
    cluster_of = np.arange(n) % c
    members = [np.flatnonzero(cluster_of == k) for k in range(c)]

    sequences: list[list[int]] = []
    home = rng.integers(0, c, size=cfg.n_users)
    for u in range(cfg.n_users):
        length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        seq: list[int] = []
        for _ in range(length):
            pool = members[home[u]] if rng.random() < cfg.in_cluster else np.arange(n)
            pool = np.setdiff1d(pool, seq, assume_unique=True)
            if len(pool) == 0:
                pool = np.setdiff1d(np.arange(n), seq, assume_unique=True)
            p = weight[pool] / weight[pool].sum()
            seq.append(int(rng.choice(pool, p=p)))
        sequences.append(seq)

    # every item appears at least once: give each unused item to a user of its cluster
    used = {i for s in sequences for i in s}
    for i in range(n):
        if i in used:
            continue
        candidates = np.flatnonzero(home == cluster_of[i])
        if len(candidates) == 0:
            candidates = np.arange(cfg.n_users)
        u = int(rng.choice(candidates))
        pos = int(rng.integers(0, len(sequences[u]) + 1))
        sequences[u].insert(pos, i)

    records = []
    t = 0
    for u, seq in enumerate(sequences):
        for i in seq:
            records.append(InteractionRecord(f"u{u:05d}", item_key(i), t))
            t += 1
    return records


def synth_experiment_data(cfg: SynthConfig, seed: int, max_seq_len: int = 50) -> tuple[InteractionDataset, SemanticStore]:
    """Dataset plus a semantic store whose rows follow the dataset's dense ids."""
    dataset = build_dataset(synth_interactions(cfg, seed), min_seq_len=3, max_seq_len=max_seq_len)
    latent = synth_semantic(cfg.n_items, cfg.d_llm, cfg.n_clusters, seed)
    order = [int(k[1:]) for k in dataset.item_keys]
    return dataset, latent.reindex(order)
