"""Minimal dense network with hand-written reverse-mode gradients.

Deliberately framework-free: a stack of affine layers with tanh hidden
activations and a linear output.  ``backward`` returns exact analytic
gradients for an arbitrary upstream gradient on the outputs; the test
suite pins them against central finite differences.
"""

from __future__ import annotations

import numpy as np


class Mlp:
    """Fully connected tanh network.

    ``sizes`` lists layer widths input-first, e.g. ``(14, 256, 256, 3)``.
    ``out_scale`` shrinks the output layer's initial weights, which keeps
    freshly initialized policy heads near-uniform.
    """

    def __init__(self, sizes, rng: np.random.Generator, out_scale: float = 1.0):
        if len(sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        self.sizes = tuple(int(s) for s in sizes)
        self.weights = []
        self.biases = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes, self.sizes[1:])):
            scale = 1.0 / np.sqrt(fan_in)
            if i == len(self.sizes) - 2:
                scale *= out_scale
            self.weights.append(rng.normal(0.0, scale, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Deterministic forward pass; accepts a single vector or a batch."""
        y, _ = self.forward_cached(x)
        return y

    def forward_cached(self, x: np.ndarray):
        """Forward pass returning (output, activation cache) for ``backward``."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.sizes[0]:
            raise ValueError(
                f"input width {x.shape[1]} does not match layer width {self.sizes[0]}"
            )
        activations = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i != last:
                h = np.tanh(h)
            activations.append(h)
        out = h[0] if squeeze else h
        return out, (activations, squeeze)

    def backward(self, cache, upstream: np.ndarray):
        """Gradients of ``sum(upstream * output)`` w.r.t. every parameter.

        ``upstream`` must match the cached forward's output shape; batch
        contributions are summed.  Returns ``[(dW, db), ...]`` aligned with
        the layers.
        """
        activations, squeeze = cache
        g = np.asarray(upstream, dtype=np.float64)
        if squeeze:
            g = g[None, :]
        if g.shape != activations[-1].shape and not squeeze:
            raise ValueError("upstream shape does not match cached output")
        grads = [None] * len(self.weights)
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                g = g * (1.0 - activations[i + 1] ** 2)  # through tanh
            grads[i] = (activations[i].T @ g, g.sum(axis=0))
            if i > 0:
                g = g @ self.weights[i].T
        return grads

    def flat_params(self) -> np.ndarray:
        """Copy of all parameters as one flat vector (weights then bias per layer)."""
        return np.concatenate(
            [np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)]
        )

    def set_flat_params(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} parameters, got {vec.shape}")
        offset = 0
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[i] = vec[offset : offset + w.size].reshape(w.shape).copy()
            offset += w.size
            self.biases[i] = vec[offset : offset + b.size].copy()
            offset += b.size


class Adam:
    """Adam updates for one ``Mlp``, gradients supplied per step."""

    def __init__(self, net: Mlp, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
        self.net = net
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [
            (np.zeros_like(w), np.zeros_like(b))
            for w, b in zip(net.weights, net.biases)
        ]
        self.v = [
            (np.zeros_like(w), np.zeros_like(b))
            for w, b in zip(net.weights, net.biases)
        ]

    def step(self, grads) -> None:
        """Apply one descent step along ``grads`` (layout from ``Mlp.backward``)."""
        self.t += 1
        correct1 = 1.0 - self.beta1**self.t
        correct2 = 1.0 - self.beta2**self.t
        for i, (dw, db) in enumerate(grads):
            mw, mb = self.m[i]
            vw, vb = self.v[i]
            mw *= self.beta1
            mw += (1.0 - self.beta1) * dw
            mb *= self.beta1
            mb += (1.0 - self.beta1) * db
            vw *= self.beta2
            vw += (1.0 - self.beta2) * dw**2
            vb *= self.beta2
            vb += (1.0 - self.beta2) * db**2
            self.net.weights[i] -= self.lr * (mw / correct1) / (
                np.sqrt(vw / correct2) + self.eps
            )
            self.net.biases[i] -= self.lr * (mb / correct1) / (
                np.sqrt(vb / correct2) + self.eps
            )


class Sgd:
    """Plain gradient descent, the no-frills alternative to Adam."""

    def __init__(self, net: Mlp, lr: float):
        self.net = net
        self.lr = lr

    def step(self, grads) -> None:
        for i, (dw, db) in enumerate(grads):
            self.net.weights[i] -= self.lr * dw
            self.net.biases[i] -= self.lr * db
