"""Counter-based random streams.

Every stream is a Philox-4x64 generator. The 128-bit key comes from the master
seed through ``SeedSequence``; the 256-bit counter is laid out as
``[0, stream, cell, replication]``. Draws only advance the lowest word, so
streams that differ in any of the upper three words never overlap (each has
2**64 blocks of headroom). A replication's draws therefore depend only on
``(master_seed, cell, replication, stream)``, never on scheduling.
"""
import numpy as np

_MASK64 = (1 << 64) - 1


def _key(master_seed):
    ss = np.random.SeedSequence(int(master_seed) & _MASK64)
    return ss.generate_state(2, dtype=np.uint64)


def stream(master_seed, cell=0, replication=0, stream_id=0):
    """Return an independent ``numpy.random.Generator`` for one counter slot."""
    counter = np.array(
        [0, stream_id & _MASK64, cell & _MASK64, replication & _MASK64], dtype=np.uint64
    )
    return np.random.Generator(np.random.Philox(key=_key(master_seed), counter=counter))
