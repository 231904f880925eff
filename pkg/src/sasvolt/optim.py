"""Adam optimizer over plain numpy parameter arrays.

Complex parameters are handled through their interleaved float views,
which is equivalent to optimizing the real and imaginary parts as
independent real variables (the gradient convention everywhere in this
package: grad.real = dL/dRe, grad.imag = dL/dIm).
"""

from __future__ import annotations

import numpy as np


def _float_view(a: np.ndarray) -> np.ndarray:
    return a.view(np.float64) if np.iscomplexobj(a) else a


class Adam:
    def __init__(self, params, lr=1e-2, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.lr = float(lr)
        self.b1, self.b2 = betas
        self.eps = float(eps)
        self.t = 0
        self.m = [np.zeros_like(_float_view(p)) for p in self.params]
        self.v = [np.zeros_like(_float_view(p)) for p in self.params]

    def step(self, grads) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1 ** self.t
        bc2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = _float_view(np.asarray(g))
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * np.square(g)
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            _float_view(p)[...] -= self.lr * update
