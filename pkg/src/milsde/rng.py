"""Splittable counter-based random streams.

Every stochastic object in the package draws from its own Philox stream,
keyed by (master_seed, component, path_index, channel).  Philox is
counter-based, so streams for distinct keys are independent and the values
produced for a given key never depend on how many other streams exist or in
which order they are consumed.  That is what makes batch composition,
chunking and thread count irrelevant to the output.
"""

import numpy as np

# Component codes.  New components append only; reordering would silently
# change every stream.
DRIVER_W = 0
AUX_B = 1
AUX_WBAR = 2
LIMIT_W = 3
ORACLE = 4


def stream(master_seed: int, component: int, path_index: int, channel: int = 0) -> np.random.Generator:
    """Return the generator for one (component, path, channel) slot."""
    if master_seed < 0 or path_index < 0 or channel < 0:
        raise ValueError("seed, path index and channel must be non-negative")
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(component, path_index, channel))
    return np.random.Generator(np.random.Philox(seq))


def normal_matrix(master_seed: int, component: int, path_index: int,
                  shape: tuple, channel: int = 0) -> np.ndarray:
    """Standard normals for one slot, drawn in a fixed row-major order."""
    return stream(master_seed, component, path_index, channel).standard_normal(shape)
