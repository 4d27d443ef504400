from __future__ import annotations

import numpy as np


def he_init(shape, rng: np.random.Generator, fan_in: int | None = None, dtype=np.float32):
    """He-normal weights (std sqrt(2 / fan_in)) and a zero bias.

    ``shape`` is (c_out, c_in, kz, ky, kx); ``fan_in`` defaults to c_in*kz*ky*kx.
    """
    shape = tuple(int(s) for s in shape)
    if fan_in is None:
        fan_in = int(np.prod(shape[1:]))
    if fan_in <= 0:
        raise ValueError("fan_in must be positive")
    w = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)
    return w, np.zeros(shape[0], dtype=dtype)
