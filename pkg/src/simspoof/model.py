"""Encoder plus the heads used by the training objectives, and checkpoint I/O."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .config import TrainConfig
from .encoder import RawNetEncoder
from .episodes import RelationNet
from .losses import AamHead, cosine_logits
from .nn import Linear, Module

CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


class SpoofModel(Module):
    """Every head is built regardless of loss mode so that parameter
    initialization consumes the same random stream in all modes."""

    def __init__(self, cfg: TrainConfig, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        dtype = np.dtype(cfg.dtype)
        self.encoder = RawNetEncoder(cfg.encoder_config(), rng, dtype)
        self.aam_head = AamHead(cfg.embed_dim, rng, dtype)
        self.relation = RelationNet(cfg.embed_dim, rng, cfg.relation_hidden, dtype)
        self.wce_head = Linear(cfg.embed_dim, 2, rng, dtype=dtype)

    @property
    def dtype(self):
        return np.dtype(self.cfg.dtype)

    def forward(self, waves) -> Tensor:
        return self.encoder(ag.as_tensor(np.asarray(waves, dtype=self.dtype)))

    def trainable_parameters(self) -> list:
        if self.cfg.loss_mode == "wce":
            modules = (self.encoder, self.wce_head)
        elif self.cfg.loss_mode == "aam":
            modules = (self.encoder, self.aam_head)
        else:
            modules = (self.encoder, self.aam_head, self.relation)
        return [p for m in modules for p in m.parameters()]

    def bonafide_score(self, embeddings) -> np.ndarray:
        """Higher means more bona fide: the bona-fide anchor cosine, or the
        bona-fide vs spoof log-odds for the cross-entropy head."""
        if self.cfg.loss_mode == "wce":
            logits = self.wce_head(embeddings).data
            return (logits[:, 0] - logits[:, 1]).astype(np.float64)
        return cosine_logits(embeddings, self.aam_head.weight).data[:, 0].astype(np.float64)

    def score(self, waves, chunk: int = 32) -> np.ndarray:
        was_training = self.training
        self.eval()
        out = []
        with ag.no_grad():
            for start in range(0, len(waves), chunk):
                out.append(self.bonafide_score(self(waves[start:start + chunk])))
        self.train(was_training)
        return np.concatenate(out)


def save_checkpoint(path, model: SpoofModel, meta: dict | None = None) -> None:
    """npz of little-endian arrays (``param/...``, ``buffer/...``) plus JSON config and metadata."""
    arrays = {k: np.ascontiguousarray(v, dtype=v.dtype.newbyteorder("<")) for k, v in model.state_dict().items()}
    header = {"version": CHECKPOINT_VERSION, "config": model.cfg.to_dict(), "meta": meta or {}}
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> tuple:
    """Rebuild the model saved at ``path``; returns ``(model, meta)``."""
    try:
        with np.load(path, allow_pickle=False) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"{path}: unreadable checkpoint ({exc})") from None
    if "header" not in arrays:
        raise CheckpointError(f"{path}: missing header")
    header = json.loads(arrays.pop("header").tobytes().decode("utf-8"))
    if header.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header.get('version')}")
    cfg = TrainConfig(**header["config"])
    model = SpoofModel(cfg, np.random.default_rng(0))
    try:
        model.load_state_dict(arrays)
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{path}: {exc}") from None
    return model, header["meta"]
