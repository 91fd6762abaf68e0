"""Dual-channel model, logit fusion and the training objective.

``total = L_fusion + alpha * L_contrastive + beta * (L_struct + L_semantic) / 2``
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numsub import tensor as T
from .numsub.nn import Linear, Module, Parameter
from .numsub.tensor import Tensor
from .sem_enc import SemanticEncoder
from .struct_enc import StructuralEncoder

MODES = ("full", "structural", "semantic", "concat")


@dataclass
class ModelConfig:
    mode: str = "full"
    hidden: int = 20
    struct_heads: int = 4
    sem_heads: int = 4
    struct_layers: int = 1
    sem_layers: int = 1
    type_dim: int = 16
    dropout: float = 0.3
    chunk_size: int = 2000
    eta1: float = 0.3
    learn_eta: bool = True
    tau: float = 0.5
    learn_tau: bool = True
    raw_dot: bool = False
    ffn_on_attended: bool = False
    dtype: str = "float32"

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0.0 < self.eta1 < 1.0 and self.learn_eta:
            raise ValueError("learnable eta1 must lie strictly inside (0, 1)")
        if not 0.0 <= self.eta1 <= 1.0:
            raise ValueError("eta1 must lie in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")


@dataclass
class ModelOutput:
    z_struct: Tensor = None
    z_semantic: Tensor = None
    s_struct: Tensor = None
    s_semantic: Tensor = None
    s_fusion: Tensor = None


@dataclass
class LossParts:
    fusion: Tensor
    contrastive: Tensor = None
    struct: Tensor = None
    semantic: Tensor = None

    def values(self) -> dict:
        def f(t):
            return float(t.data) if t is not None else float("nan")
        return {"loss_fusion": f(self.fusion), "loss_contrastive": f(self.contrastive),
                "loss_struct": f(self.struct), "loss_semantic": f(self.semantic)}


def fuse(s_struct, s_semantic, eta1, eta2=None):
    """``eta1 * s_struct + eta2 * s_semantic`` with ``eta2 = 1 - eta1`` by default."""
    if eta2 is None:
        eta2 = 1.0 - eta1
    return s_struct * eta1 + s_semantic * eta2


def _l2_rows(z, eps=1e-12):
    return z / T.sqrt((z * z).sum(axis=-1, keepdims=True) + eps)


def contrastive_loss(z_struct, z_semantic, tau, batch_indices, normalize=True):
    """Symmetric cross-entropy over the in-batch cross-modal similarity matrix.

    Row ``i`` of each view is the positive for row ``i`` of the other; every
    other in-batch row is a negative.
    """
    batch_indices = np.asarray(batch_indices)
    if len(batch_indices) == 0:
        raise ValueError("contrastive batch is empty")
    if z_struct.shape != z_semantic.shape:
        raise ValueError(f"embedding shapes differ: {z_struct.shape} vs {z_semantic.shape}")
    a = T.gather(z_struct, batch_indices)
    b = T.gather(z_semantic, batch_indices)
    if normalize:
        a, b = _l2_rows(a), _l2_rows(b)
    sim = T.matmul(a, b.T) / tau
    eye = np.eye(len(batch_indices), dtype=sim.dtype)
    ce_rows = -(T.log_softmax(sim, axis=1) * eye).sum() / len(batch_indices)
    ce_cols = -(T.log_softmax(sim, axis=0) * eye).sum() / len(batch_indices)
    return (ce_rows + ce_cols) * 0.5


def mse(pred, targets, index):
    index = np.asarray(index)
    if len(index) == 0:
        raise ValueError("empty mask for regression loss")
    diff = T.gather(pred, index) - np.asarray(targets, dtype=pred.dtype)
    return (diff * diff).mean()


def regression_losses(s_struct, s_semantic, s_fusion, targets, index):
    """MSE of each branch against ``targets`` (aligned with ``index``)."""
    return tuple(mse(p, targets, index) if p is not None else None
                 for p in (s_struct, s_semantic, s_fusion))


def total_loss(parts: LossParts, alpha=0.1, beta=0.2, use_contrastive=True, use_unimodal=True):
    """Combine branch losses; zero-weighted or disabled terms leave the graph."""
    if alpha < 0 or beta < 0:
        raise ValueError("loss weights must be nonnegative")
    total = parts.fusion
    if use_contrastive and alpha > 0 and parts.contrastive is not None:
        total = total + parts.contrastive * alpha
    if use_unimodal and beta > 0 and parts.struct is not None and parts.semantic is not None:
        total = total + (parts.struct + parts.semantic) * (beta / 2.0)
    return total


def _logit(p):
    return float(np.log(p / (1.0 - p)))


class DualModel(Module):
    def __init__(self, d_struct, d_semantic, n_types, cfg: ModelConfig, rng):
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        self.struct = self.sem = None
        if cfg.mode in ("full", "structural", "concat"):
            self.struct = StructuralEncoder(d_struct, cfg.hidden, cfg.struct_heads,
                                            cfg.struct_layers, n_types, cfg.type_dim, rng, dtype,
                                            cfg.dropout, cfg.ffn_on_attended)
        if cfg.mode in ("full", "semantic", "concat"):
            self.sem = SemanticEncoder(d_semantic, cfg.hidden, cfg.sem_heads, cfg.sem_layers,
                                       n_types, cfg.type_dim, rng, dtype, cfg.chunk_size)
        self.eta_logit = self.log_tau = self.concat_head = None
        if cfg.mode in ("full", "concat"):
            self.log_tau = Parameter(np.array(np.log(cfg.tau), dtype=dtype)) \
                if cfg.learn_tau else None
        if cfg.mode == "full" and cfg.learn_eta:
            self.eta_logit = Parameter(np.array(_logit(cfg.eta1), dtype=dtype))
        if cfg.mode == "concat":
            self.concat_head = Linear(2 * cfg.hidden, 1, rng, dtype)

    @property
    def dual(self) -> bool:
        return self.struct is not None and self.sem is not None

    def eta1(self):
        if self.eta_logit is not None:
            return T.sigmoid(self.eta_logit)
        return self.cfg.eta1

    def tau(self):
        if self.log_tau is not None:
            return T.exp(self.log_tau)
        return self.cfg.tau

    def __call__(self, hg, features, rng=None, chunk_size=None, dense=False) -> ModelOutput:
        out = ModelOutput()
        if self.struct is not None:
            so = self.struct(hg, features.X1, features.e_type_ids, rng)
            out.z_struct, out.s_struct = so.z_struct, so.s_struct
        if self.sem is not None:
            out.z_semantic, out.s_semantic = self.sem(hg, features.X2, features.e_type_ids,
                                                      chunk_size, dense)
        mode = self.cfg.mode
        if mode == "structural":
            out.s_fusion = out.s_struct
        elif mode == "semantic":
            out.s_fusion = out.s_semantic
        elif mode == "concat":
            z = T.concat([out.z_struct, out.z_semantic], axis=1)
            out.s_fusion = self.concat_head(z).reshape(hg.n_nodes)
        else:
            out.s_fusion = fuse(out.s_struct, out.s_semantic, self.eta1())
        return out

    def loss_parts(self, out: ModelOutput, targets, index, batch) -> LossParts:
        l_struct, l_sem, l_fusion = regression_losses(out.s_struct, out.s_semantic,
                                                      out.s_fusion, targets, index)
        parts = LossParts(l_fusion)
        if self.dual:
            parts.struct, parts.semantic = l_struct, l_sem
            parts.contrastive = contrastive_loss(out.z_struct, out.z_semantic, self.tau(), batch,
                                                 normalize=not self.cfg.raw_dot)
        return parts
