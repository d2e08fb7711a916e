"""Counter-based random streams keyed by (master seed, replication, copy).

Each stream is a Philox generator whose 256-bit counter encodes the
replication, the copy and the step index as separate words, so distinct
(replication, copy, step) triples use disjoint counter blocks by
construction: no stream state ever needs to be saved, a run can be resumed
bit-exactly from just the step index, and stepping copies in any order or
in parallel yields identical draws.
"""

import numpy as np

NOISE_TAG = 0x01   # per-step Brownian increments
INIT_TAG = 0x02    # initial-data synthesis
PROBE_TAG = 0x03   # 1D probe noise

_MAX_SEED = 2 ** 64


def stream_key(master_seed, rep, copy, tag=NOISE_TAG):
    """Stream descriptor [master_seed, tag, rep, copy] as four uint64 words."""
    if not (0 <= master_seed < _MAX_SEED):
        raise ValueError("master seed must fit in 64 bits")
    if rep < 0 or copy < 0:
        raise ValueError("replication and copy indices must be non-negative")
    return np.array([master_seed, tag, rep, copy], dtype=np.uint64)


def seed_streams(master_seed, M, N, tag=NOISE_TAG):
    """Table of stream descriptors, shape (M, N, 4)."""
    if M < 1 or N < 1:
        raise ValueError("need at least one replication and one copy")
    table = np.empty((M, N, 4), dtype=np.uint64)
    table[..., 0] = master_seed
    table[..., 1] = tag
    table[..., 2] = np.arange(M, dtype=np.uint64)[:, None]
    table[..., 3] = np.arange(N, dtype=np.uint64)[None, :]
    return table


def generator(stream, step=0):
    """Fresh Philox generator positioned at the stream's block for a step."""
    stream = np.asarray(stream, dtype=np.uint64)
    if stream.shape != (4,):
        raise ValueError("stream descriptor must have four words")
    counter = np.array([0, step, stream[3], stream[2]], dtype=np.uint64)
    key = np.array([stream[0], stream[1]], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


def normals(stream, step, n):
    """n standard normal draws for one (stream, step); order-independent."""
    return generator(stream, step).standard_normal(n)
