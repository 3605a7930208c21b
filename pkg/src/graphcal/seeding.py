"""Deterministic sub-seed derivation.

Every random decision in the package flows from one integer seed. Components
derive independent streams with ``subseed(seed, *tags)``, where the tags are
small integers naming the consumer. The rule is fixed so that identical
(seed, tags) always yields the identical stream:

    subseed(seed, *tags) = SeedSequence([seed, *tags]).generate_state(1)[0]

Tags in use:
    1  classifier weight init          2  classifier dropout
    3  calibrator weight init          4  calibrator dropout
    5  SBM edges/features              6  label split shuffle
    7  self-training stage base (combined with the 1-based stage index)
"""

import numpy as np

TAG_CLS_INIT = 1
TAG_CLS_DROPOUT = 2
TAG_CAL_INIT = 3
TAG_CAL_DROPOUT = 4
TAG_SBM = 5
TAG_SPLIT = 6
TAG_STAGE = 7


def subseed(seed: int, *tags: int) -> int:
    """Derive a child seed from a base seed and integer tags."""
    return int(np.random.SeedSequence([int(seed), *[int(t) for t in tags]]).generate_state(1)[0])


def substream(seed: int, *tags: int) -> np.random.Generator:
    """Generator seeded by the documented derivation rule."""
    return np.random.default_rng(subseed(seed, *tags))
