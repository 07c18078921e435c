"""Deterministic, splittable random streams for ensemble simulation.

Every path of an ensemble owns a family of independent gaussian streams,
one per physical role (temporal noise, spatial noise, frame noise, ...).
Streams are backed by the counter-based Philox generator keyed by
``(seed, path_index, role)``, so

* the same (seed, path, role) always yields the same numbers, no matter
  how many worker threads run or in which order paths are simulated;
* adding or removing one subsystem (e.g. switching the spatial sector off)
  never shifts the draws consumed by another, because roles never share a
  stream;
* per-path streams are independent without any coordination.

Draw order within a stream is fixed: one block of ``width`` gaussians per
step, step index increasing.  ``GaussianBlocks`` pre-generates blocks of
steps to amortize generator overhead in long runs.
"""

import numpy as np

# Stream roles.  Values are part of the on-disk reproducibility contract:
# changing them changes every simulated path.
ROLE_TEMPORAL = 0
ROLE_SPATIAL = 1
ROLE_FRAME = 2
ROLE_BASE = 3
ROLE_AUX = 4

_MAX_ROLE = 255


def stream(seed, path_index, role):
    """Return a fresh ``numpy.random.Generator`` for one (path, role) pair.

    Philox is counter based: generators for distinct keys are independent
    and the mapping key -> sequence is stable across processes and numpy
    versions supporting the Philox bit generator.
    """
    if not 0 <= role <= _MAX_ROLE:
        raise ValueError("role out of range")
    if path_index < 0:
        raise ValueError("path_index must be nonnegative")
    key = np.array([np.uint64(seed) & np.uint64(0xFFFFFFFFFFFFFFFF),
                    (np.uint64(path_index) << np.uint64(8)) | np.uint64(role)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


class GaussianBlocks:
    """Block-buffered standard normal draws for one stream.

    Parameters
    ----------
    seed, path_index, role
        Stream key, as for :func:`stream`.
    width : int
        Gaussians consumed per step (fixed for the life of the stream).
    block_steps : int
        Steps worth of draws generated per refill.
    """

    def __init__(self, seed, path_index, role, width, block_steps=2048):
        self._gen = stream(seed, path_index, role)
        self.width = int(width)
        self._block_steps = int(block_steps)
        self._buf = None
        self._pos = 0

    def next_step(self):
        """Gaussians for the next step, shape (width,)."""
        if self._buf is None or self._pos >= self._buf.shape[0]:
            self._buf = self._gen.standard_normal(
                (self._block_steps, self.width))
            self._pos = 0
        out = self._buf[self._pos]
        self._pos += 1
        return out


class EnsembleBlocks:
    """Per-path block buffers for a whole ensemble, one role.

    Returns draws with a leading path axis so vectorized steppers can
    consume all paths at once while each path still sees exactly the
    sequence its private stream would produce.  A nonzero ``path_offset``
    shifts the stream keys, so a chunk of a larger ensemble reproduces the
    draws its paths would see in the full run.
    """

    def __init__(self, seed, n_paths, role, width, block_steps=1024,
                 path_offset=0):
        self._gens = [stream(seed, path_offset + i, role)
                      for i in range(n_paths)]
        self.width = int(width)
        self._block_steps = int(block_steps)
        self._buf = None
        self._pos = 0

    def next_step(self):
        """Gaussians for the next step, shape (n_paths, width)."""
        if self._buf is None or self._pos >= self._buf.shape[1]:
            self._buf = np.stack([g.standard_normal(
                (self._block_steps, self.width)) for g in self._gens])
            self._pos = 0
        out = self._buf[:, self._pos]
        self._pos += 1
        return out
