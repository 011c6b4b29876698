"""User sequence encoders: causal self-attention (default) and a GRU variant.

Sequences are right-padded; the user vector is the encoder output at the
last real position. With a causal mask, right padding can never leak into
real positions, so batched and one-by-one encodings agree exactly.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .blocks import Linear, TransformerStack, xavier
from .numerics import MASKED, Parameter, Tensor

BACKBONES = ("self_attention", "recurrent")


def causal_mask(length):
    """Additive lower-triangular mask: queries cannot attend to later keys."""
    mask = np.full((length, length), MASKED)
    return np.triu(mask, k=1)


class SelfAttentionSeqTower:
    def __init__(self, rng, d, max_len, layers=2, heads=2, name="seq"):
        self.d = d
        self.max_len = max_len
        self.pos = Parameter(0.1 * rng.normal(size=(max_len, d)), f"{name}.pos")
        self.encoder = TransformerStack(rng, d, heads, layers, f"{name}.sa")

    def encode_batch(self, item_vecs, lengths, drop=0.0, rng=None):
        """item_vecs: (B, T, d) right-padded; lengths: (B,) real lengths."""
        b, t, d = item_vecs.shape
        if t > self.max_len:
            raise ValueError(f"sequence length {t} exceeds max_len {self.max_len}")
        lengths = np.asarray(lengths, dtype=np.int64)
        if np.any(lengths < 1):
            raise ValueError("empty sequence")
        x = nm.add(item_vecs, nm.take_rows(self.pos, np.arange(t)))
        x = self.encoder(x, mask=causal_mask(t), drop=drop, rng=rng)
        return nm.take_steps(x, lengths - 1)

    def encode_sequence(self, item_vecs, drop=0.0, rng=None):
        """item_vecs: (L, d) single user sequence."""
        length, d = item_vecs.shape
        batched = nm.reshape(item_vecs, (1, length, d))
        out = self.encode_batch(batched, np.array([length]), drop=drop, rng=rng)
        return nm.reshape(out, (d,))

    def params(self):
        return [self.pos] + self.encoder.params()


class GruSeqTower:
    def __init__(self, rng, d, max_len, layers=1, name="seq"):
        self.d = d
        self.max_len = max_len
        self.cells = []
        for i in range(layers):
            cell = {}
            for gate in ("r", "z", "n"):
                cell[f"Wx{gate}"] = Parameter(xavier(rng, d, d), f"{name}.gru{i}.Wx{gate}")
                cell[f"Wh{gate}"] = Parameter(xavier(rng, d, d), f"{name}.gru{i}.Wh{gate}")
                cell[f"b{gate}"] = Parameter(np.zeros(d), f"{name}.gru{i}.b{gate}")
            self.cells.append(cell)

    def _step(self, cell, x, h):
        r = nm.sigmoid(nm.add(nm.add(nm.matmul(x, cell["Wxr"]), nm.matmul(h, cell["Whr"])), cell["br"]))
        z = nm.sigmoid(nm.add(nm.add(nm.matmul(x, cell["Wxz"]), nm.matmul(h, cell["Whz"])), cell["bz"]))
        n = nm.tanh(nm.add(nm.add(nm.matmul(x, cell["Wxn"]), nm.mul(r, nm.matmul(h, cell["Whn"]))), cell["bn"]))
        return nm.add(nm.mul(nm.sub(1.0, z), n), nm.mul(z, h))

    def encode_batch(self, item_vecs, lengths, drop=0.0, rng=None):
        b, t, d = item_vecs.shape
        lengths = np.asarray(lengths, dtype=np.int64)
        if np.any(lengths < 1):
            raise ValueError("empty sequence")
        x = item_vecs
        for cell in self.cells:
            h = Tensor(np.zeros((b, d)))
            states = []
            for step in range(t):
                xt = nm.take_steps(x, np.full(b, step))
                h_next = self._step(cell, xt, h)
                # Frozen past the end of each row, so the read-out at
                # lengths-1 matches the unpadded recurrence exactly.
                alive = Tensor((lengths > step).astype(np.float64)[:, None])
                h = nm.add(nm.mul(alive, h_next), nm.mul(nm.sub(1.0, alive), h))
                states.append(nm.reshape(h, (b, 1, d)))
            x = nm.concat(states, axis=1)
        return nm.take_steps(x, lengths - 1)

    def encode_sequence(self, item_vecs, drop=0.0, rng=None):
        length, d = item_vecs.shape
        batched = nm.reshape(item_vecs, (1, length, d))
        out = self.encode_batch(batched, np.array([length]))
        return nm.reshape(out, (d,))

    def params(self):
        return [p for cell in self.cells for p in cell.values()]


def build_seq_tower(cfg_model, rng, branch):
    if cfg_model.backbone == "self_attention":
        return SelfAttentionSeqTower(
            rng,
            cfg_model.d,
            cfg_model.max_len,
            layers=cfg_model.seq_layers,
            heads=cfg_model.heads,
            name=f"seq_{branch}",
        )
    if cfg_model.backbone == "recurrent":
        return GruSeqTower(
            rng,
            cfg_model.d,
            cfg_model.max_len,
            layers=cfg_model.gru_layers,
            name=f"seq_{branch}",
        )
    raise ValueError(f"unknown backbone {cfg_model.backbone!r}; expected one of {BACKBONES}")
