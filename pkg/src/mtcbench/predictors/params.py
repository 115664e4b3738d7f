"""Flat parameter vector with a per-tensor shape manifest."""
import math

import numpy as np

from ..exceptions import NumericalError, ShapeError


class ModelParams:
    """All trainable values in one contiguous vector.

    ``views()`` returns named reshaped views into :attr:`vector`, so optimisers
    and finite-difference checks can treat the model as a single array.
    """

    def __init__(self, manifest, vector=None, dtype=np.float64):
        self.manifest = [(name, tuple(shape)) for name, shape in manifest]
        self.count = sum(math.prod(shape) for _, shape in self.manifest)
        if vector is None:
            vector = np.zeros(self.count, dtype=dtype)
        vector = np.ascontiguousarray(vector, dtype=dtype)
        if vector.shape != (self.count,):
            raise ShapeError(f"parameter vector of length {vector.size}, manifest needs {self.count}")
        self.vector = vector

    @property
    def dtype(self):
        return self.vector.dtype

    def views(self, vector=None):
        vector = self.vector if vector is None else vector
        out, pos = {}, 0
        for name, shape in self.manifest:
            n = math.prod(shape)
            out[name] = vector[pos:pos + n].reshape(shape)
            pos += n
        return out

    def zeros_like(self):
        return ModelParams(self.manifest, np.zeros_like(self.vector))

    def copy(self):
        return ModelParams(self.manifest, self.vector.copy())

    def check_finite(self):
        for name, view in self.views().items():
            if not np.all(np.isfinite(view)):
                raise NumericalError(f"non-finite parameter values in {name}", layer=name)

    def __len__(self):
        return self.count

    def __repr__(self):
        return f"ModelParams(count={self.count}, tensors={len(self.manifest)})"
