"""
Deterministic random streams.

Every random draw of the package comes from a numpy Generator over PCG64,
seeded with the pair (seed, stream id). The stream id is taken from
STREAM_IDS so that the same seed gives independent draws for the features,
the evaluation kernel, the datasets and the neural critic.
"""

import numpy as np

from sobolev_descent.errors import ParameterError

STREAM_IDS = {
    "features": 1,
    "eval_features": 2,
    "source": 3,
    "target": 4,
    "network": 5,
    "batches": 6,
}


def stream_id(purpose):
    """
    Return the integer id of a stream.

    :param purpose: one of the keys of STREAM_IDS
    """
    try:
        return STREAM_IDS[purpose]
    except KeyError:
        raise ParameterError(
            f"Unknown random stream '{purpose}', "
            f"choose among {sorted(STREAM_IDS)}"
        )


def make_stream(seed, purpose):
    """
    Create the generator of one purpose.

    :param seed: 64-bit non negative integer
    :param purpose: key of STREAM_IDS
    :return: np.random.Generator
    """
    seed = int(seed)
    if seed < 0 or seed >= 2**64:
        raise ParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    sequence = np.random.SeedSequence([seed, stream_id(purpose)])
    return np.random.Generator(np.random.PCG64(sequence))


def box_muller(rng, size):
    """
    Standard normal draws by the Box-Muller transform.

    Two uniform doubles are consumed per pair of normals, u1 is taken in
    (0, 1] so that the logarithm is finite.

    :param rng: np.random.Generator
    :param size: int or shape tuple
    :return: float64 array of the requested shape
    """
    shape = (size,) if np.isscalar(size) else tuple(size)
    count = int(np.prod(shape))
    pairs = (count + 1) // 2

    u1 = 1.0 - rng.random(pairs)
    u2 = rng.random(pairs)
    radius = np.sqrt(-2.0 * np.log(u1))
    angle = 2.0 * np.pi * u2

    normals = np.empty(2 * pairs)
    normals[0::2] = radius * np.cos(angle)
    normals[1::2] = radius * np.sin(angle)
    return normals[:count].reshape(shape)
