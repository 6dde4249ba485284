import numpy as np


class Adam:
    """Adam over a dict of named leaf tensors."""

    def __init__(self, params, lr=0.01, betas=(0.9, 0.999), eps=1e-8, clip_norm=0.0):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = np.zeros_like(p.data)

    def grad_norm(self):
        return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for p in self.params.values())))

    def step(self):
        scale = 1.0
        if self.clip_norm > 0:
            norm = self.grad_norm()
            if norm > self.clip_norm:
                scale = self.clip_norm / norm
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in self.params.items():
            g = p.grad * scale if scale != 1.0 else p.grad
            m = self.m[k]
            v = self.v[k]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
