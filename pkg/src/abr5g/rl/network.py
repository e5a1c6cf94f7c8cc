"""Actor and critic networks in plain numpy with hand-written backprop.

Both networks share the same trunk shape: a 1-d convolution bank over each
history vector (throughputs, download times, next chunk sizes), a dense bank
over each scalar input (buffer, chunks remaining, last quality), a merge
into one hidden dense layer, then a linear head (softmax logits for the
actor, a scalar for the critic). All hidden activations are ReLU.
"""
from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import NumericalFault

VECTOR_INPUTS = ("throughput", "download_time", "chunk_sizes")
SCALAR_INPUTS = ("buffer", "remaining", "last_quality")


class Bundle(NamedTuple):
    """Normalised network inputs; every field has a leading batch axis."""

    throughput: np.ndarray
    download_time: np.ndarray
    chunk_sizes: np.ndarray
    buffer: np.ndarray
    remaining: np.ndarray
    last_quality: np.ndarray

    @property
    def size(self) -> int:
        return self.buffer.shape[0]

    def take(self, idx) -> "Bundle":
        return Bundle(*(f[idx] for f in self))


def stack_bundles(bundles) -> Bundle:
    return Bundle(*(np.concatenate(parts) for parts in zip(*bundles)))


class Net:
    """One trunk plus a linear head of width ``out_dim``.

    Parameters live in a single flat vector; ``self.p`` holds named views
    into it so optimisers and checkpoints can treat the network as one array.
    """

    def __init__(self, n_actions=10, out_dim=None, n_filters=320, kernel=4, history=8,
                 dtype=np.float64, params=None, rng=None, init_scale=0.05):
        self.n_actions = n_actions
        self.out_dim = n_actions if out_dim is None else out_dim
        self.n_filters = n_filters
        self.kernel = kernel
        self.history = history
        self.dtype = np.dtype(dtype)
        F = n_filters
        self.conv_len = {"throughput": history - kernel + 1, "download_time": history - kernel + 1,
                         "chunk_sizes": n_actions - kernel + 1}
        if min(self.conv_len.values()) < 1:
            raise ValueError("kernel wider than an input vector")
        self.merge_dim = F * (sum(self.conv_len.values()) + len(SCALAR_INPUTS))
        layout = []
        for name in VECTOR_INPUTS:
            layout += [(f"{name}_W", (F, kernel)), (f"{name}_b", (F,))]
        for name in SCALAR_INPUTS:
            layout += [(f"{name}_w", (F,)), (f"{name}_b", (F,))]
        layout += [("hidden_W", (self.merge_dim, F)), ("hidden_b", (F,)),
                   ("out_W", (F, self.out_dim)), ("out_b", (self.out_dim,))]
        self.layout = layout
        self.size = sum(int(np.prod(s)) for _, s in layout)
        if params is None:
            rng = np.random.default_rng(rng)
            params = rng.uniform(-init_scale, init_scale, self.size)
        self.params = np.array(params, dtype=self.dtype)
        if self.params.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got {self.params.shape}")
        self._bind()

    def _bind(self):
        self.p = {}
        offset = 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            self.p[name] = self.params[offset:offset + n].reshape(shape)
            offset += n

    def set_params(self, flat):
        self.params[...] = flat

    def copy(self) -> "Net":
        return Net(self.n_actions, self.out_dim, self.n_filters, self.kernel, self.history,
                   self.dtype, params=self.params.copy())

    def arch(self) -> dict:
        return {"n_actions": self.n_actions, "out_dim": self.out_dim, "n_filters": self.n_filters,
                "kernel": self.kernel, "history": self.history}

    def forward(self, x: Bundle):
        """Return ``(output, cache)`` for a batch of inputs."""
        p = self.p
        dt = self.dtype
        parts, cache = [], {}
        for name in VECTOR_INPUTS:
            v = np.asarray(getattr(x, name), dtype=dt)
            win = sliding_window_view(v, self.kernel, axis=1)  # (B, L, k)
            h = np.maximum(win @ p[f"{name}_W"].T + p[f"{name}_b"], 0)  # (B, L, F)
            cache[name] = (win, h)
            parts.append(h.reshape(h.shape[0], -1))
        for name in SCALAR_INPUTS:
            s = np.asarray(getattr(x, name), dtype=dt)[:, None]
            h = np.maximum(s * p[f"{name}_w"] + p[f"{name}_b"], 0)
            cache[name] = (s, h)
            parts.append(h)
        merge = np.concatenate(parts, axis=1)
        hidden = np.maximum(merge @ p["hidden_W"] + p["hidden_b"], 0)
        out = hidden @ p["out_W"] + p["out_b"]
        cache["merge"] = merge
        cache["hidden"] = hidden
        return out, cache

    def backward(self, cache, dout) -> np.ndarray:
        """Gradient of ``sum(dout * output)`` with respect to the flat parameters."""
        p = self.p
        g = np.zeros_like(self.params)
        gv = {}
        offset = 0
        for name, shape in self.layout:
            n = int(np.prod(shape))
            gv[name] = g[offset:offset + n].reshape(shape)
            offset += n
        dout = np.asarray(dout, dtype=self.dtype)
        hidden, merge = cache["hidden"], cache["merge"]
        gv["out_W"][...] = hidden.T @ dout
        gv["out_b"][...] = dout.sum(axis=0)
        dh = (dout @ p["out_W"].T) * (hidden > 0)
        gv["hidden_W"][...] = merge.T @ dh
        gv["hidden_b"][...] = dh.sum(axis=0)
        dmerge = dh @ p["hidden_W"].T
        B = dmerge.shape[0]
        F = self.n_filters
        col = 0
        for name in VECTOR_INPUTS:
            win, h = cache[name]
            L = self.conv_len[name]
            dpre = dmerge[:, col:col + L * F].reshape(B, L, F) * (h > 0)
            col += L * F
            gv[f"{name}_W"][...] = dpre.reshape(-1, F).T @ win.reshape(-1, self.kernel)
            gv[f"{name}_b"][...] = dpre.sum(axis=(0, 1))
        for name in SCALAR_INPUTS:
            s, h = cache[name]
            dpre = dmerge[:, col:col + F] * (h > 0)
            col += F
            gv[f"{name}_w"][...] = (dpre * s).sum(axis=0)
            gv[f"{name}_b"][...] = dpre.sum(axis=0)
        return g


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


class PolicyNetwork:
    """Actor (softmax over rungs) plus a separate critic (state value)."""

    def __init__(self, n_actions=10, n_filters=320, kernel=4, history=8, dtype=np.float64,
                 seed=None, actor_params=None, critic_params=None, init_scale=0.05):
        rng = np.random.default_rng(seed)
        self.actor = Net(n_actions, None, n_filters, kernel, history, dtype, actor_params, rng, init_scale)
        self.critic = Net(n_actions, 1, n_filters, kernel, history, dtype, critic_params, rng, init_scale)

    @property
    def n_actions(self) -> int:
        return self.actor.n_actions

    def arch(self) -> dict:
        a = self.actor.arch()
        del a["out_dim"]
        return a

    def flat(self) -> np.ndarray:
        return np.concatenate([self.actor.params, self.critic.params])

    def load_flat(self, flat):
        flat = np.asarray(flat)
        n = self.actor.size
        self.actor.set_params(flat[:n])
        self.critic.set_params(flat[n:])

    def check_finite(self):
        if not (np.all(np.isfinite(self.actor.params)) and np.all(np.isfinite(self.critic.params))):
            raise NumericalFault("network parameters are not finite")

    def probabilities(self, x: Bundle) -> np.ndarray:
        logits, _ = self.actor.forward(x)
        return softmax(logits.astype(np.float64))

    def forward(self, x: Bundle):
        """Action distributions ``(B, n_actions)`` and values ``(B,)``."""
        self.check_finite()
        probs = self.probabilities(x)
        value, _ = self.critic.forward(x)
        return probs, value[:, 0].astype(np.float64)


def forward(network: PolicyNetwork, bundle: Bundle):
    """Single-observation convenience wrapper: ``(probs, value)``."""
    batched = bundle.buffer.ndim == 1
    if not batched:
        bundle = Bundle(*(np.asarray(f)[None] for f in bundle))
    probs, value = network.forward(bundle)
    return (probs, value) if batched else (probs[0], float(value[0]))


# --- gradient checking -------------------------------------------------------

def _logprob(net: Net, x: Bundle, action: int):
    logits, cache = net.forward(x)
    return float(log_softmax(logits)[0, action]), cache, logits


def _logprob_grad(net: Net, x: Bundle, action: int):
    _, cache, logits = _logprob(net, x, action)
    probs = softmax(logits)
    onehot = np.zeros_like(probs)
    onehot[0, action] = 1.0
    return net.backward(cache, onehot - probs)


def _value_grad(net: Net, x: Bundle):
    out, cache = net.forward(x)
    return net.backward(cache, np.ones_like(out))


def _active(cache) -> np.ndarray:
    """Which ReLU units are on; the network is smooth while this stays fixed."""
    return np.concatenate([(cache[name][1] > 0).ravel() for name in VECTOR_INPUTS + SCALAR_INPUTS]
                          + [(cache["hidden"] > 0).ravel()])


def gradient_check(network: PolicyNetwork, bundle: Bundle, tolerance: float = 1e-4, n_coords: int = 200,
                   action: int | None = None, eps: float = 1e-4, seed=0, corrupt: bool = False) -> dict:
    """Compare analytic gradients with central differences.

    Checks ``log pi(action|x)`` for the actor and ``V(x)`` for the critic on
    ``n_coords`` random coordinates each. Coordinates are drawn from the
    parameters that influence the output at ``x`` (ReLU-dead units carry an
    exactly zero gradient and are skipped). Errors are
    ``|a - n| / max(|a|, |n|)``. ``corrupt`` flips the analytic sign, a
    negative control that must fail.

    The step starts at ``eps`` and shrinks tenfold whenever the perturbation
    switches a ReLU on or off, so a difference never straddles a kink. It
    starts large on purpose: many coordinates have gradients near 1e-7,
    where a 1e-6 step loses more to cancellation than curvature costs at 1e-4.
    """
    if network.actor.dtype != np.float64:
        raise ValueError("gradient checks need a float64 network")
    rng = np.random.default_rng(seed)
    x = bundle if bundle.buffer.ndim == 1 else Bundle(*(np.asarray(f)[None] for f in bundle))
    if action is None:
        action = int(np.argmax(network.probabilities(x)[0]))
    report = {"tolerance": tolerance, "action": action}
    worst = 0.0

    def actor_fn(n):
        value, cache, _ = _logprob(n, x, action)
        return value, cache

    def critic_fn(n):
        out, cache = n.forward(x)
        return float(out[0, 0]), cache

    checks = (
        ("actor", network.actor, actor_fn, lambda n: _logprob_grad(n, x, action)),
        ("critic", network.critic, critic_fn, lambda n: _value_grad(n, x)),
    )
    for label, net, fn, grad_fn in checks:
        grad = grad_fn(net)
        if corrupt:
            grad = -grad
        base = _active(fn(net)[1])
        live = np.flatnonzero(grad != 0)
        pool = live if live.size >= n_coords else np.arange(net.size)
        coords = rng.choice(pool, size=min(n_coords, pool.size), replace=False)
        errs = np.empty(coords.size)
        saved = net.params.copy()
        for j, c in enumerate(coords):
            step = eps
            for _ in range(6):
                net.params[c] = saved[c] + step
                up, cache_up = fn(net)
                net.params[c] = saved[c] - step
                down, cache_down = fn(net)
                net.params[c] = saved[c]
                if np.array_equal(_active(cache_up), base) and np.array_equal(_active(cache_down), base):
                    break
                step /= 10
            numeric = (up - down) / (2 * step)
            denom = max(abs(numeric), abs(grad[c]))
            errs[j] = 0.0 if denom == 0 else abs(numeric - grad[c]) / denom
        report[f"{label}_max_rel_error"] = float(errs.max())
        report[f"{label}_coords"] = int(coords.size)
        worst = max(worst, float(errs.max()))
    report["max_rel_error"] = worst
    report["passed"] = worst < tolerance
    return report
