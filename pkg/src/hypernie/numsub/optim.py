import numpy as np


def adam_step(w, g, m, v, t, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """One bias-corrected Adam update with decoupled weight decay, in place.

    ``t`` is the 1-based step count. Returns nothing; ``w``, ``m``, ``v``
    are mutated.
    """
    if w.shape != g.shape:
        raise ValueError(f"gradient shape {g.shape} != parameter shape {w.shape}")
    b1, b2 = betas
    m *= b1
    m += (1 - b1) * g
    v *= b2
    v += (1 - b2) * g * g
    m_hat = m / (1 - b1 ** t)
    v_hat = v / (1 - b2 ** t)
    if weight_decay:
        w -= lr * weight_decay * w
    w -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(w.dtype)


class Adam:
    def __init__(self, params, lr=0.005, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.t += 1
        for p, m, v in zip(self.params, self.m, self.v):
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(f"non-finite gradient in {p.name or 'parameter'}")
            adam_step(p.data, p.grad, m, v, self.t, self.lr, self.betas, self.eps,
                      self.weight_decay)
