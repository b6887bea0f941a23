"""Model assemblies over the shared frozen backbone.

The backbone is reconstructed from a public seed on every node, so source
and target sides hold identical frozen weights without exchanging them.
Only prompts and heads ever receive updates; backbone tensors keep
requires_grad=False for their whole lifetime.
"""

from __future__ import annotations

import numpy as np

from . import encoder as enc
from .autodiff import Tensor, no_grad, softmax
from .checkpoint import load_checkpoint, save_checkpoint
from .encoder import EncoderConfig
from .errors import ConfigError
from .losses import PromptAutoencoder
from .pseudo_labels import aggregate_branches
from .rng import derive_seed


class PromptedClassifier:
    """Frozen backbone + one prompt + one classification head.

    Used for source-domain training and as the teacher behind the
    prediction service.
    """

    def __init__(self, cfg: EncoderConfig, backbone_seed: int, seed: int):
        self.cfg = cfg
        self.backbone = enc.init_backbone(cfg, backbone_seed)
        self.prompt = enc.init_prompt(cfg, derive_seed(seed, "src-prompt"))
        self.cls_w, self.cls_b = enc.init_cls_head(cfg)
        for t in self.trainable():
            t.requires_grad = True

    def trainable(self) -> list[Tensor]:
        return [self.prompt, self.cls_w, self.cls_b]

    def logits(self, x, mask=None) -> Tensor:
        tokens = enc.encode(Tensor(np.asarray(x, dtype=np.float64)),
                            self.prompt, mask, self.backbone, self.cfg)
        return enc.classify_head(tokens, self.cls_w, self.cls_b)

    def predict_proba(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if len(x) == 0:
            return np.zeros((0, self.cfg.classes))
        with no_grad():
            return softmax(self.logits(x), axis=-1).data

    def predict_hard(self, x) -> np.ndarray:
        probs = self.predict_proba(x)
        return probs.argmax(axis=-1)

    def named_params(self) -> dict[str, Tensor]:
        out = dict(self.backbone)
        out["prompt"] = self.prompt
        out["cls_w"] = self.cls_w
        out["cls_b"] = self.cls_b
        return out

    def save(self, path) -> None:
        save_checkpoint(path, self.cfg, self.named_params())

    @classmethod
    def load(cls, path) -> "PromptedClassifier":
        cfg, arrays, _ = load_checkpoint(path)
        model = cls.__new__(cls)
        model.cfg = cfg
        model.backbone = {n: Tensor(arrays[n])
                          for n in enc.backbone_param_names(cfg)}
        model.prompt = Tensor(arrays["prompt"])
        model.cls_w = Tensor(arrays["cls_w"])
        model.cls_b = Tensor(arrays["cls_b"])
        return model


class DualBranchModel:
    """Two prompted branches over one frozen backbone, plus shared heads.

    Branch f owns prompt_f and cls head f; the reconstruction head and the
    prompt autoencoder are shared. clone_prompts starts both branches from
    identical prompts (used to show embeddings coincide before training).
    """

    def __init__(self, cfg: EncoderConfig, backbone_seed: int, seed: int,
                 clone_prompts: bool = False):
        self.cfg = cfg
        self.backbone = enc.init_backbone(cfg, backbone_seed)
        self.p1 = enc.init_prompt(cfg, derive_seed(seed, "prompt", 1))
        if clone_prompts:
            self.p2 = Tensor(self.p1.data.copy())
        else:
            self.p2 = enc.init_prompt(cfg, derive_seed(seed, "prompt", 2))
        self.cls1_w, self.cls1_b = enc.init_cls_head(cfg)
        self.cls2_w, self.cls2_b = enc.init_cls_head(cfg)
        self.recon_w, self.recon_b = enc.init_recon_head(
            cfg, derive_seed(seed, "recon"))
        self.autoencoder = PromptAutoencoder(cfg.model_dim,
                                             derive_seed(seed, "ae"))
        for t in self.trainable():
            t.requires_grad = True

    # -- parameter groups ------------------------------------------------
    def prompts(self) -> tuple[Tensor, Tensor]:
        return self.p1, self.p2

    def branch_params(self, branch: int) -> list[Tensor]:
        if branch == 1:
            own = [self.p1, self.cls1_w, self.cls1_b]
        elif branch == 2:
            own = [self.p2, self.cls2_w, self.cls2_b]
        else:
            raise ConfigError("branch must be 1 or 2")
        return own + [self.recon_w, self.recon_b] + self.autoencoder.params()

    def trainable(self) -> list[Tensor]:
        seen: dict[int, Tensor] = {}
        for branch in (1, 2):
            for t in self.branch_params(branch):
                seen[id(t)] = t
        return list(seen.values())

    def named_params(self) -> dict[str, Tensor]:
        out = dict(self.backbone)
        out.update({
            "prompt1": self.p1, "prompt2": self.p2,
            "cls1_w": self.cls1_w, "cls1_b": self.cls1_b,
            "cls2_w": self.cls2_w, "cls2_b": self.cls2_b,
            "recon_w": self.recon_w, "recon_b": self.recon_b,
        })
        out.update(self.autoencoder.named_params())
        return out

    # -- forward paths ----------------------------------------------------
    def _prompt(self, branch: int) -> Tensor | None:
        p = self.p1 if branch == 1 else self.p2
        return p if p.shape[0] > 0 else None

    def branch_tokens(self, x, branch: int, mask=None) -> Tensor:
        data = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
        return enc.encode(data, self._prompt(branch), mask,
                          self.backbone, self.cfg)

    def branch_probs(self, tokens: Tensor, branch: int) -> Tensor:
        w, b = ((self.cls1_w, self.cls1_b) if branch == 1
                else (self.cls2_w, self.cls2_b))
        return softmax(enc.classify_head(tokens, w, b), axis=-1)

    def reconstruct(self, tokens: Tensor) -> Tensor:
        return enc.reconstruct_head(tokens, self.recon_w, self.recon_b, self.cfg)

    def aggregated_proba(self, x) -> np.ndarray:
        """Confidence-weighted blend of both branch predictions (no mask)."""
        x = np.asarray(x, dtype=np.float64)
        if len(x) == 0:
            return np.zeros((0, self.cfg.classes))
        with no_grad():
            o1 = self.branch_probs(self.branch_tokens(x, 1), 1).data
            o2 = self.branch_probs(self.branch_tokens(x, 2), 2).data
        return aggregate_branches(o1, o2)

    def predict_hard(self, x) -> np.ndarray:
        return self.aggregated_proba(x).argmax(axis=-1)

    def embeddings(self, x, branch: int) -> np.ndarray:
        """Mean-pooled encoder output per sample (projection dumps)."""
        with no_grad():
            tokens = self.branch_tokens(np.asarray(x, dtype=np.float64), branch)
        return tokens.data.mean(axis=-2)

    # -- persistence -------------------------------------------------------
    def save(self, path, buffer_entries: dict | None = None) -> None:
        save_checkpoint(path, self.cfg, self.named_params(), buffer_entries)

    @classmethod
    def load(cls, path) -> tuple["DualBranchModel", dict]:
        cfg, arrays, buffer = load_checkpoint(path)
        model = cls.__new__(cls)
        model.cfg = cfg
        model.backbone = {n: Tensor(arrays[n])
                          for n in enc.backbone_param_names(cfg)}
        model.p1 = Tensor(arrays["prompt1"])
        model.p2 = Tensor(arrays["prompt2"])
        model.cls1_w = Tensor(arrays["cls1_w"])
        model.cls1_b = Tensor(arrays["cls1_b"])
        model.cls2_w = Tensor(arrays["cls2_w"])
        model.cls2_b = Tensor(arrays["cls2_b"])
        model.recon_w = Tensor(arrays["recon_w"])
        model.recon_b = Tensor(arrays["recon_b"])
        ae = PromptAutoencoder.__new__(PromptAutoencoder)
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            setattr(ae, name, Tensor(arrays[f"ae.{name}"]))
        model.autoencoder = ae
        return model, buffer
