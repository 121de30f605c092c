"""Small shared-trunk policy/value network on a flat parameter vector.

Two tanh hidden layers feeding a softmax action head and a scalar value
head. Forward and reverse passes are explicit numpy so gradients can be
checked against finite differences.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Architecture:
    n_inputs: int
    hidden: tuple = (64, 64)
    n_actions: int = 5

    def __post_init__(self):
        if self.n_inputs < 1 or self.n_actions < 2 or len(self.hidden) != 2:
            raise ValueError("invalid architecture")


class PolicyNetwork:
    def __init__(self, arch: Architecture):
        self.arch = arch
        n, (h1, h2), a = arch.n_inputs, arch.hidden, arch.n_actions
        self._shapes = [
            ("w1", (n, h1)), ("b1", (h1,)),
            ("w2", (h1, h2)), ("b2", (h2,)),
            ("wp", (h2, a)), ("bp", (a,)),
            ("wv", (h2, 1)), ("bv", (1,)),
        ]
        self.n_params = sum(int(np.prod(s)) for _, s in self._shapes)

    def unpack(self, params: np.ndarray) -> dict:
        if params.shape != (self.n_params,):
            raise ValueError(
                f"expected {self.n_params} parameters, got {params.shape}")
        out, off = {}, 0
        for name, shape in self._shapes:
            size = int(np.prod(shape))
            out[name] = params[off:off + size].reshape(shape)
            off += size
        return out

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        params = np.zeros(self.n_params)
        p = self.unpack(params)
        for name in ("w1", "w2", "wv"):
            fan_in = p[name].shape[0]
            p[name][...] = rng.normal(0.0, 1.0 / np.sqrt(fan_in),
                                      p[name].shape)
        # near-uniform initial policy
        p["wp"][...] = rng.normal(0.0, 0.01 / np.sqrt(p["wp"].shape[0]),
                                  p["wp"].shape)
        return params

    def forward(self, params: np.ndarray, obs: np.ndarray):
        """Returns (probs (B,A), values (B,), cache for backward)."""
        obs = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        if obs.shape[1] != self.arch.n_inputs:
            raise ValueError(
                f"observation dim {obs.shape[1]} != {self.arch.n_inputs}")
        p = self.unpack(params)
        h1 = np.tanh(obs @ p["w1"] + p["b1"])
        h2 = np.tanh(h1 @ p["w2"] + p["b2"])
        logits = h2 @ p["wp"] + p["bp"]
        values = (h2 @ p["wv"] + p["bv"])[:, 0]
        shifted = logits - logits.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        probs = expz / expz.sum(axis=1, keepdims=True)
        log_probs = shifted - np.log(expz.sum(axis=1, keepdims=True))
        cache = {"obs": obs, "h1": h1, "h2": h2, "probs": probs,
                 "log_probs": log_probs, "p": p}
        return probs, values, cache

    def backward(self, cache: dict, dlogits: np.ndarray,
                 dvalues: np.ndarray) -> np.ndarray:
        """Accumulate dL/dparams given upstream gradients at both heads."""
        p = cache["p"]
        h1, h2, obs = cache["h1"], cache["h2"], cache["obs"]
        grad = np.zeros(self.n_params)
        g = self.unpack(grad)
        dv = np.asarray(dvalues, dtype=np.float64)[:, None]
        g["wp"][...] = h2.T @ dlogits
        g["bp"][...] = dlogits.sum(axis=0)
        g["wv"][...] = h2.T @ dv
        g["bv"][...] = dv.sum(axis=0)
        dh2 = dlogits @ p["wp"].T + dv @ p["wv"].T
        dz2 = dh2 * (1.0 - h2 * h2)
        g["w2"][...] = h1.T @ dz2
        g["b2"][...] = dz2.sum(axis=0)
        dh1 = dz2 @ p["w2"].T
        dz1 = dh1 * (1.0 - h1 * h1)
        g["w1"][...] = obs.T @ dz1
        g["b1"][...] = dz1.sum(axis=0)
        return grad


def policy_forward(net: PolicyNetwork, params: np.ndarray, obs: np.ndarray):
    """Single-observation convenience: (probabilities, value)."""
    probs, values, _ = net.forward(params, obs)
    return probs[0], float(values[0])
