"""Block-partitioned Q-network with per-agent heads.

Every layer's units are split into per-agent partitions.  Block ``(r, c)``
of a layer's weight matrix maps partition ``c`` of the layer input onto
partition ``r`` of its output and is stored as its own ``(out_r, in_c)``
array.  Hidden layers use a rectifier, the output layer is linear, and the
output partition of agent ``r`` is that agent's Q-head over its own actions.
The joint Q-value is the sum of the per-agent heads.

Accumulation order is fixed (own block first, then the others in index
order) so that a network whose off-diagonal blocks are zero computes
exactly the same floating-point values as the stand-alone per-agent nets.
"""

from __future__ import annotations

import enum
import json
from pathlib import Path
from typing import Sequence

import numpy as np

CHECKPOINT_VERSION = 1


class UpdateMask(enum.Enum):
    FULL = "full"
    DIAGONAL = "diagonal"


class BlockParams:
    """Weights and biases of a block-partitioned feedforward net.

    ``sizes[l]`` is the tuple of per-agent widths at layer boundary ``l``
    (``l = 0`` is the input).  ``weights[l][r][c]`` has shape
    ``(sizes[l + 1][r], sizes[l][c])`` and ``biases[l][r]`` has shape
    ``(sizes[l + 1][r],)``.
    """

    def __init__(self, sizes, weights, biases):
        self.sizes = [tuple(int(w) for w in s) for s in sizes]
        self.weights = weights
        self.biases = biases
        self._check()

    def _check(self):
        n = self.n_agents
        if any(len(s) != n for s in self.sizes):
            raise ValueError("every layer boundary needs one width per agent")
        if len(self.weights) != self.n_layers or len(self.biases) != self.n_layers:
            raise ValueError("weights/biases do not match the layer count")
        for l in range(self.n_layers):
            for r in range(n):
                if self.biases[l][r].shape != (self.sizes[l + 1][r],):
                    raise ValueError(f"bias ({l}, {r}) has wrong shape")
                for c in range(n):
                    shape = (self.sizes[l + 1][r], self.sizes[l][c])
                    if self.weights[l][r][c].shape != shape:
                        raise ValueError(f"block ({l}, {r}, {c}) has shape "
                                         f"{self.weights[l][r][c].shape}, expected {shape}")

    @property
    def n_agents(self) -> int:
        return len(self.sizes[0])

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def input_size(self) -> int:
        return sum(self.sizes[0])

    def partition_index(self, boundary: int) -> list[int]:
        """Agent offsets at layer boundary ``boundary``."""
        return [0, *np.cumsum(self.sizes[boundary]).tolist()]

    def full_weight(self, layer: int) -> np.ndarray:
        return np.block(self.weights[layer])

    def full_bias(self, layer: int) -> np.ndarray:
        return np.concatenate(self.biases[layer])

    def blocks(self):
        """Yield ``(layer, r, c, array)`` for every weight block."""
        for l, layer in enumerate(self.weights):
            for r, row in enumerate(layer):
                for c, w in enumerate(row):
                    yield l, r, c, w

    def copy(self) -> "BlockParams":
        return BlockParams(
            self.sizes,
            [[[w.copy() for w in row] for row in layer] for layer in self.weights],
            [[b.copy() for b in layer] for layer in self.biases],
        )

    def zeros_like(self) -> "BlockParams":
        return BlockParams(
            self.sizes,
            [[[np.zeros_like(w) for w in row] for row in layer] for layer in self.weights],
            [[np.zeros_like(b) for b in layer] for layer in self.biases],
        )

    def equals(self, other: "BlockParams") -> bool:
        if self.sizes != other.sizes:
            return False
        return all(
            np.array_equal(a, b)
            for a, b in zip(self.flat_arrays(), other.flat_arrays())
        )

    def flat_arrays(self) -> list[np.ndarray]:
        out = [w for *_, w in self.blocks()]
        out += [b for layer in self.biases for b in layer]
        return out

    def agent_view(self, agent: int) -> "BlockParams":
        """Single-partition net made of agent ``agent``'s diagonal blocks."""
        return BlockParams(
            [(s[agent],) for s in self.sizes],
            [[[layer[agent][agent].copy()]] for layer in self.weights],
            [[layer[agent].copy()] for layer in self.biases],
        )

    @classmethod
    def initialize(cls, sizes, seed, offdiag: str = "uniform", agent_offset: int = 0) -> "BlockParams":
        """Glorot-uniform blocks, zero biases.

        Block ``(l, r, c)`` is drawn from its own generator keyed on
        ``(seed, l, r + agent_offset, c + agent_offset)`` so that a
        single-agent net built with ``agent_offset=i`` reproduces diagonal
        block ``i`` of the multi-agent net.  ``offdiag="zero"`` zeroes the
        cross-agent blocks.
        """
        if offdiag not in ("uniform", "zero"):
            raise ValueError("offdiag must be 'uniform' or 'zero'")
        sizes = [tuple(s) for s in sizes]
        n = len(sizes[0])
        weights, biases = [], []
        for l in range(len(sizes) - 1):
            layer = []
            for r in range(n):
                row = []
                for c in range(n):
                    fan_out, fan_in = sizes[l + 1][r], sizes[l][c]
                    if r != c and offdiag == "zero":
                        row.append(np.zeros((fan_out, fan_in)))
                        continue
                    rng = np.random.default_rng(
                        [int(seed), l, r + agent_offset, c + agent_offset])
                    limit = np.sqrt(6.0 / (fan_in + fan_out))
                    row.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)))
                layer.append(row)
            weights.append(layer)
            biases.append([np.zeros(sizes[l + 1][r]) for r in range(n)])
        return cls(sizes, weights, biases)


def layer_sizes(obs_sizes: Sequence[int], hidden: Sequence[int], n_actions: int = 3) -> list[tuple]:
    """Per-boundary widths for agents with the given observation sizes."""
    n = len(obs_sizes)
    return [tuple(obs_sizes)] + [(h,) * n for h in hidden] + [(n_actions,) * n]


def _split_input(params: BlockParams, X: np.ndarray) -> list[np.ndarray]:
    if X.shape[-1] != params.input_size:
        raise ValueError(f"observation length {X.shape[-1]} does not match "
                         f"network input {params.input_size}")
    if params.n_agents == 1:
        return [np.ascontiguousarray(X)]
    off = params.partition_index(0)
    return [np.ascontiguousarray(X[:, off[i]:off[i + 1]]) for i in range(params.n_agents)]


def _forward(params: BlockParams, X: np.ndarray):
    h = _split_input(params, X)
    n = params.n_agents
    acts, pre = [h], []
    for l in range(params.n_layers):
        W, b = params.weights[l], params.biases[l]
        z = []
        for r in range(n):
            acc = h[r] @ W[r][r].T
            for c in range(n):
                if c != r:
                    acc = acc + h[c] @ W[r][c].T
            z.append(acc + b[r])
        pre.append(z)
        h = [np.maximum(zr, 0.0) for zr in z] if l < params.n_layers - 1 else z
        acts.append(h)
    return h, acts, pre


def forward(params: BlockParams, joint_obs) -> list[np.ndarray]:
    """Per-agent Q-heads for one observation ``(D,)`` or a batch ``(B, D)``."""
    X = np.asarray(joint_obs, dtype=float)
    single = X.ndim == 1
    heads, _, _ = _forward(params, np.atleast_2d(X))
    return [h[0] for h in heads] if single else heads


def joint_q(heads: Sequence[np.ndarray], actions) -> np.ndarray:
    """Sum over agents of each head evaluated at that agent's action."""
    actions = np.asarray(actions)
    if actions.ndim == 1 and heads[0].ndim == 1:
        return sum(h[a] for h, a in zip(heads, actions))
    rows = np.arange(len(actions))
    return sum(h[rows, actions[:, r]] for r, h in enumerate(heads))


def greedy(heads: Sequence[np.ndarray]) -> np.ndarray:
    """Per-agent argmax, ties to the lowest action index.

    Maximizes the additive joint Q-value because the sum separates.
    """
    return np.stack([np.argmax(h, axis=-1) for h in heads], axis=-1)


def backward(params: BlockParams, joint_obs, actions, targets):
    """Loss and exact gradient of the per-head squared TD error.

    ``loss = mean_b sum_r (targets[b, r] - Q_r(obs[b], actions[b, r]))**2``.
    Returns ``(gradient, loss, td_errors)`` where the gradient is a
    :class:`BlockParams` with the same layout and ``td_errors`` has shape
    ``(B, n_agents)``.
    """
    X = np.atleast_2d(np.asarray(joint_obs, dtype=float))
    actions = np.asarray(actions, dtype=np.int64).reshape(len(X), -1)
    targets = np.asarray(targets, dtype=float).reshape(len(X), -1)
    n, B = params.n_agents, len(X)
    heads, acts, pre = _forward(params, X)
    rows = np.arange(B)

    td = np.empty((B, n))
    delta = []
    for r in range(n):
        td[:, r] = targets[:, r] - heads[r][rows, actions[:, r]]
        d = np.zeros_like(heads[r])
        d[rows, actions[:, r]] = -2.0 * td[:, r] / B
        delta.append(d)
    loss = float(np.mean(np.sum(td * td, axis=1)))

    grad = params.zeros_like()
    for l in reversed(range(params.n_layers)):
        W = params.weights[l]
        for r in range(n):
            for c in range(n):
                grad.weights[l][r][c] = delta[r].T @ acts[l][c]
            grad.biases[l][r] = delta[r].sum(axis=0)
        if l == 0:
            break
        new_delta = []
        for c in range(n):
            acc = delta[c] @ W[c][c]
            for r in range(n):
                if r != c:
                    acc = acc + delta[r] @ W[r][c]
            new_delta.append(acc * (pre[l - 1][c] > 0))
        delta = new_delta
    return grad, loss, td


def mask_gradient(grad: BlockParams, mask: UpdateMask) -> BlockParams:
    """Zero the off-diagonal gradient blocks in diagonal mode (in place)."""
    if UpdateMask(mask) is UpdateMask.DIAGONAL:
        for l, r, c, g in grad.blocks():
            if r != c:
                g[...] = 0.0
    return grad


def clip_by_agent(grad: BlockParams, max_norm: float, mask: UpdateMask = UpdateMask.FULL) -> BlockParams:
    """Rescale each agent's gradient rows to norm ``<= max_norm`` (in place).

    Agent ``r`` owns output partition ``r`` of every layer: blocks
    ``(l, r, *)`` and bias ``(l, r)``.  Blocks removed by ``mask`` are left
    out of the norm.
    """
    if max_norm is None or max_norm <= 0:
        return grad
    diagonal = UpdateMask(mask) is UpdateMask.DIAGONAL
    n = grad.n_agents
    for r in range(n):
        owned = []
        for l in range(grad.n_layers):
            for c in range(n):
                if diagonal and c != r:
                    continue
                owned.append(grad.weights[l][r][c])
            owned.append(grad.biases[l][r])
        sq = 0.0
        for g in owned:
            sq += float(np.sum(g * g))
        norm = np.sqrt(sq)
        if norm > max_norm:
            scale = max_norm / norm
            for g in owned:
                g *= scale
    return grad


def apply_update_(params: BlockParams, grad: BlockParams, learning_rate: float,
                  mask: UpdateMask = UpdateMask.FULL) -> BlockParams:
    """In-place gradient step; see :func:`apply_update`."""
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    diagonal = UpdateMask(mask) is UpdateMask.DIAGONAL
    for l, r, c, w in params.blocks():
        if diagonal and r != c:
            continue
        w -= learning_rate * grad.weights[l][r][c]
    for l in range(params.n_layers):
        for r in range(params.n_agents):
            params.biases[l][r] -= learning_rate * grad.biases[l][r]
    return params


def apply_update(params: BlockParams, grad: BlockParams, learning_rate: float,
                 mask: UpdateMask = UpdateMask.FULL) -> BlockParams:
    """Return ``params - learning_rate * grad`` restricted by ``mask``.

    In diagonal mode the off-diagonal blocks are copied unchanged; biases
    are always updated.
    """
    return apply_update_(params.copy(), grad, learning_rate, mask)


class QNetwork:
    """Online parameters plus a frozen target copy."""

    def __init__(self, online: BlockParams, target: BlockParams | None = None):
        self.online = online
        self.target = online.copy() if target is None else target
        if self.target.sizes != self.online.sizes:
            raise ValueError("target and online networks differ in structure")

    @property
    def n_agents(self) -> int:
        return self.online.n_agents

    @property
    def hidden_sizes(self) -> list[tuple]:
        return self.online.sizes[1:-1]

    def sync_target(self):
        self.target = self.online.copy()

    def q_values(self, joint_obs) -> list[np.ndarray]:
        return forward(self.online, joint_obs)


def sync_target(net: QNetwork) -> None:
    net.sync_target()


def td_targets(net: QNetwork, rewards, next_obs, terminal, gamma: float) -> np.ndarray:
    """Per-head bootstrap targets ``r_i + gamma * max_a Q_i(s', a; target)``.

    Their sum over agents is the joint target of the additive Q-function.
    """
    rewards = np.atleast_2d(np.asarray(rewards, dtype=float))
    heads = forward(net.target, np.atleast_2d(next_obs))
    boot = np.stack([h.max(axis=1) for h in heads], axis=1)
    live = 1.0 - np.asarray(terminal, dtype=float).reshape(-1, 1)
    return rewards + gamma * live * boot


def td_target(net: QNetwork, transition, gamma: float) -> float:
    """Joint target ``team reward + gamma * sum_i max Q_i(s', .; target)``."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    y = td_targets(net, np.reshape(transition.reward, (1, -1)), transition.next_obs,
                   [transition.terminal], gamma)
    return float(np.sum(y))


def save_checkpoint(path, nets, meta: dict | None = None) -> Path:
    """Write one network or a list of networks to an ``.npz`` file.

    Each network contributes its layer sizes and every weight block and
    bias of both parameter sets; ``meta`` is stored as JSON.
    """
    path = Path(path)
    single = isinstance(nets, QNetwork)
    nets = [nets] if single else list(nets)
    arrays = {
        "format_version": np.array(CHECKPOINT_VERSION),
        "n_networks": np.array(len(nets)),
        "single": np.array(single),
        "meta": np.array(json.dumps(meta or {}, sort_keys=True)),
    }
    for k, net in enumerate(nets):
        arrays[f"{k}/sizes"] = np.array(net.online.sizes, dtype=np.int64)
        for name, params in (("online", net.online), ("target", net.target)):
            for l, r, c, w in params.blocks():
                arrays[f"{k}/{name}/W/{l}/{r}/{c}"] = w
            for l, layer in enumerate(params.biases):
                for r, b in enumerate(layer):
                    arrays[f"{k}/{name}/b/{l}/{r}"] = b
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path, with_meta: bool = False):
    """Inverse of :func:`save_checkpoint`."""
    with np.load(path) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        nets = []
        for k in range(int(data["n_networks"])):
            sizes = [tuple(s) for s in data[f"{k}/sizes"].tolist()]
            n, L = len(sizes[0]), len(sizes) - 1
            pair = []
            for name in ("online", "target"):
                weights = [[[data[f"{k}/{name}/W/{l}/{r}/{c}"] for c in range(n)]
                            for r in range(n)] for l in range(L)]
                biases = [[data[f"{k}/{name}/b/{l}/{r}"] for r in range(n)] for l in range(L)]
                pair.append(BlockParams(sizes, weights, biases))
            nets.append(QNetwork(*pair))
        meta = json.loads(str(data["meta"]))
        out = nets[0] if bool(data["single"]) else nets
    return (out, meta) if with_meta else out
