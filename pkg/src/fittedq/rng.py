"""Deterministic random-number streams.

Every stochastic consumer (environment sampling, network initialization,
minibatch draws, exploration) owns a stream derived from the master seed
and a string label, so adding or removing one consumer never perturbs the
draws seen by the others.
"""

from __future__ import annotations

import hashlib

import numpy as np


def stream_key(label):
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def rng_stream(master_seed, label):
    """Generator seeded by (master_seed, sha256(label)); stable across runs."""
    seq = np.random.SeedSequence([int(master_seed) & (2**63 - 1), stream_key(label)])
    return np.random.default_rng(seq)
