"""Item encoders: turn raw per-item features into final branch embeddings.

The default tower runs one joint transformer over the concatenation
[visual patches | ID | text tokens] with an asymmetric mask: the ID slot
attends to everything, but modality slots cannot attend to the ID slot.
Variants cover separate per-modality transformers, plain MLP transforms,
and an ID-embedding-only path for the classical baseline.
"""

from __future__ import annotations

import numpy as np

from . import numerics as nm
from .blocks import Linear, MlpHead, TransformerStack
from .numerics import MASKED, Parameter, Tensor

ID_INIT_MODES = ("avg_modal", "text", "image", "random")


def build_id_isolation_mask(n_v, n_t, id_mask=True):
    """Additive (L, L) mask over [visual 0..n_v | id n_v+1 | text n_v+2..].

    With id_mask on, the ID column is blocked for every row except the ID
    row itself; everything else is fully visible.
    """
    if n_v < 1 or n_t < 1:
        raise ValueError("n_v and n_t must be >= 1")
    side = n_v + n_t + 3
    mask = np.zeros((side, side))
    if id_mask:
        id_col = n_v + 1
        mask[:, id_col] = MASKED
        mask[id_col, id_col] = 0.0
    return mask


def init_id_table(catalog, mode, seed=0, d_id=None, scale=0.1):
    """Build the learnable per-item ID table under the chosen init mode."""
    if mode not in ID_INIT_MODES:
        raise ValueError(f"unknown id init mode {mode!r}; expected one of {ID_INIT_MODES}")
    if mode == "avg_modal":
        if catalog.d_v != catalog.d_t:
            raise ValueError("avg_modal init requires d_v == d_t")
        data = 0.5 * (catalog.visual_cls + catalog.textual_cls)
    elif mode == "text":
        data = catalog.textual_cls.copy()
    elif mode == "image":
        data = catalog.visual_cls.copy()
    else:
        if d_id is None:
            d_id = catalog.d_v
        rng = np.random.default_rng(seed)
        data = scale * rng.normal(size=(catalog.n_items, d_id))
    return Parameter(data, "id_table")


class FusedItemTower:
    """Joint transformer over projected visual, ID, and textual slots."""

    def __init__(
        self,
        catalog,
        id_table,
        d,
        rng,
        layers=2,
        heads=2,
        include_id=True,
        id_mask=True,
        name="item",
    ):
        self.catalog = catalog
        self.id_table = id_table
        self.d = d
        self.include_id = include_id
        self.proj_v = Linear(rng, catalog.d_v, d, f"{name}.proj_v")
        self.proj_t = Linear(rng, catalog.d_t, d, f"{name}.proj_t")
        self.encoder = TransformerStack(rng, d, heads, layers, f"{name}.fused")
        self.head_v = MlpHead(rng, d, f"{name}.head_v")
        self.head_t = MlpHead(rng, d, f"{name}.head_t")
        if include_id:
            d_id = id_table.shape[1]
            self.proj_id = Linear(rng, d_id, d, f"{name}.proj_id")
            self.head_id = MlpHead(rng, d, f"{name}.head_id")
            self.mask = build_id_isolation_mask(catalog.n_v, catalog.n_t, id_mask)
        else:
            self.mask = None  # no ID slot, no restriction needed

    @property
    def branches(self):
        return ("v", "t", "id") if self.include_id else ("v", "t")

    def item_embeddings(self, item_idx, drop=0.0, rng=None):
        item_idx = np.asarray(item_idx, dtype=np.int64)
        n_v, n_t = self.catalog.n_v, self.catalog.n_t
        ev = self.proj_v(Tensor(self.catalog.visual[item_idx]))
        et = self.proj_t(Tensor(self.catalog.textual[item_idx]))
        parts = [ev]
        if self.include_id:
            eid = self.proj_id(nm.take_rows(self.id_table, item_idx))
            parts.append(nm.reshape(eid, (len(item_idx), 1, self.d)))
        parts.append(et)
        x = nm.concat(parts, axis=1)
        x = self.encoder(x, mask=self.mask, drop=drop, rng=rng)
        v_cls = nm.take_steps(x, np.full(len(item_idx), n_v))
        out = {"v": self.head_v(v_cls)}
        if self.include_id:
            id_out = nm.take_steps(x, np.full(len(item_idx), n_v + 1))
            out["id"] = self.head_id(id_out)
            t_cls_pos = n_v + 2
        else:
            t_cls_pos = n_v + 1
        t_cls = nm.take_steps(x, np.full(len(item_idx), t_cls_pos))
        out["t"] = self.head_t(t_cls)
        return out

    def params(self):
        out = self.proj_v.params() + self.proj_t.params()
        out += self.encoder.params()
        out += self.head_v.params() + self.head_t.params()
        if self.include_id:
            out += [self.id_table] + self.proj_id.params() + self.head_id.params()
        return out


class SeparateItemTower:
    """Per-modality transformer stacks; the ID branch skips transformers."""

    def __init__(
        self,
        catalog,
        id_table,
        d,
        rng,
        layers_per_modality=2,
        heads=2,
        include_id=True,
        name="item",
    ):
        self.catalog = catalog
        self.id_table = id_table
        self.d = d
        self.include_id = include_id
        self.proj_v = Linear(rng, catalog.d_v, d, f"{name}.proj_v")
        self.proj_t = Linear(rng, catalog.d_t, d, f"{name}.proj_t")
        self.enc_v = TransformerStack(rng, d, heads, layers_per_modality, f"{name}.sep_v")
        self.enc_t = TransformerStack(rng, d, heads, layers_per_modality, f"{name}.sep_t")
        self.head_v = MlpHead(rng, d, f"{name}.head_v")
        self.head_t = MlpHead(rng, d, f"{name}.head_t")
        if include_id:
            self.proj_id = Linear(rng, id_table.shape[1], d, f"{name}.proj_id")
            self.head_id = MlpHead(rng, d, f"{name}.head_id")

    @property
    def branches(self):
        return ("v", "t", "id") if self.include_id else ("v", "t")

    def item_embeddings(self, item_idx, drop=0.0, rng=None):
        item_idx = np.asarray(item_idx, dtype=np.int64)
        ev = self.enc_v(self.proj_v(Tensor(self.catalog.visual[item_idx])), drop=drop, rng=rng)
        et = self.enc_t(self.proj_t(Tensor(self.catalog.textual[item_idx])), drop=drop, rng=rng)
        v_cls = nm.take_steps(ev, np.full(len(item_idx), self.catalog.n_v))
        t_cls = nm.take_steps(et, np.zeros(len(item_idx), dtype=np.int64))
        out = {"v": self.head_v(v_cls), "t": self.head_t(t_cls)}
        if self.include_id:
            eid = self.proj_id(nm.take_rows(self.id_table, item_idx))
            out["id"] = self.head_id(eid)
        return out

    def params(self):
        out = self.proj_v.params() + self.proj_t.params()
        out += self.enc_v.params() + self.enc_t.params()
        out += self.head_v.params() + self.head_t.params()
        if self.include_id:
            out += [self.id_table] + self.proj_id.params() + self.head_id.params()
        return out


class MlpItemTower:
    """Plain MLP transform on the cls features, no transformer layers."""

    def __init__(self, catalog, id_table, d, rng, include_id=True, name="item"):
        self.catalog = catalog
        self.id_table = id_table
        self.d = d
        self.include_id = include_id
        self.proj_v = Linear(rng, catalog.d_v, d, f"{name}.proj_v")
        self.proj_t = Linear(rng, catalog.d_t, d, f"{name}.proj_t")
        self.head_v = MlpHead(rng, d, f"{name}.head_v")
        self.head_t = MlpHead(rng, d, f"{name}.head_t")
        if include_id:
            self.proj_id = Linear(rng, id_table.shape[1], d, f"{name}.proj_id")
            self.head_id = MlpHead(rng, d, f"{name}.head_id")

    @property
    def branches(self):
        return ("v", "t", "id") if self.include_id else ("v", "t")

    def item_embeddings(self, item_idx, drop=0.0, rng=None):
        item_idx = np.asarray(item_idx, dtype=np.int64)
        out = {
            "v": self.head_v(self.proj_v(Tensor(self.catalog.visual_cls[item_idx]))),
            "t": self.head_t(self.proj_t(Tensor(self.catalog.textual_cls[item_idx]))),
        }
        if self.include_id:
            eid = self.proj_id(nm.take_rows(self.id_table, item_idx))
            out["id"] = self.head_id(eid)
        return out

    def params(self):
        out = self.proj_v.params() + self.proj_t.params()
        out += self.head_v.params() + self.head_t.params()
        if self.include_id:
            out += [self.id_table] + self.proj_id.params() + self.head_id.params()
        return out


class IdOnlyTower:
    """Classical ID embedding lookup; the table itself is the item embedding."""

    def __init__(self, n_items, d, rng, name="item", scale=0.1):
        self.id_table = Parameter(scale * rng.normal(size=(n_items, d)), f"{name}.id_table")
        self.d = d

    @property
    def branches(self):
        return ("id",)

    def item_embeddings(self, item_idx, drop=0.0, rng=None):
        return {"id": nm.take_rows(self.id_table, np.asarray(item_idx, dtype=np.int64))}

    def params(self):
        return [self.id_table]


def build_item_tower(catalog, cfg_model, rng, id_init_seed=0):
    """Construct the item tower matching the model config (see config module)."""
    branches = cfg_model.branch_list
    if branches == ("id",):
        return IdOnlyTower(catalog.n_items, cfg_model.d, rng)
    include_id = "id" in branches
    id_table = None
    if include_id:
        id_table = init_id_table(catalog, cfg_model.id_init, seed=id_init_seed)
    if cfg_model.fst == "imt":
        return FusedItemTower(
            catalog,
            id_table,
            cfg_model.d,
            rng,
            layers=cfg_model.item_layers,
            heads=cfg_model.heads,
            include_id=include_id,
            id_mask=cfg_model.id_mask,
        )
    if cfg_model.fst == "separate":
        return SeparateItemTower(
            catalog,
            id_table,
            cfg_model.d,
            rng,
            layers_per_modality=cfg_model.separate_layers,
            heads=cfg_model.heads,
            include_id=include_id,
        )
    if cfg_model.fst == "dnn":
        return MlpItemTower(catalog, id_table, cfg_model.d, rng, include_id=include_id)
    raise ValueError(f"unknown fst variant {cfg_model.fst!r}")
