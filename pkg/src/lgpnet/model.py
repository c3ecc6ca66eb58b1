"""Classifier assembly: conv stem, residual (optionally SE) blocks, pooling,
two-path fusion, and overlap-segmented scoring of variable-length utterances.

A *path* maps an LGP feature map (order, time) to a fixed-width embedding:

    conv(3,1,ch) + BN + ReLU
    blocks x [conv-BN-ReLU, conv-BN-ReLU, optional SE, skip add]
    max over time

One-path models classify a single embedding; two-path models run one path
per class-conditional GMM and classify the concatenated embeddings.  The
detection score is the bona fide logit minus the spoof logit (class 0 is
bona fide throughout).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensorio
from .errors import FormatError
from .gmm import Gmm
from .lgp import LgpNormStats, extract_lgp
from .nn import BatchNorm1d, Conv1d, Linear, MaxOverTime, ReLU, SEBlock

BONA_FIDE, SPOOF = 0, 1
LABEL_NAMES = {"bonafide": BONA_FIDE, "spoof": SPOOF}


@dataclass
class ClassifierConfig:
    gmm_order: int
    channels: int = 512
    blocks: int = 6
    se_enabled: bool = False
    se_reduction: int = 16
    input_length: int = 400
    paths: int = 1
    lgp_form: str = "fast"

    def __post_init__(self):
        if self.gmm_order < 1 or self.channels < 1 or self.blocks < 1:
            raise ValueError("gmm_order, channels and blocks must be >= 1")
        if self.input_length < 1:
            raise ValueError("input length must be >= 1")
        if self.paths not in (1, 2):
            raise ValueError("paths must be 1 or 2")
        if self.se_enabled and self.channels % self.se_reduction != 0:
            raise ValueError("se_reduction must divide channels")


@dataclass
class UfmConfig:
    """Overlap segmentation: segments of ``segment_length`` frames, hop N/2."""

    segment_length: int

    def __post_init__(self):
        if self.segment_length < 2 or self.segment_length % 2 != 0:
            raise ValueError("segment length must be even and >= 2")

    @property
    def overlap(self) -> int:
        return self.segment_length // 2


class ResBlock:
    """Residual unit: out = x + [SE](ReLU(BN(conv(ReLU(BN(conv(x)))))))."""

    def __init__(self, channels, se_enabled, se_reduction, rng):
        self.conv1 = Conv1d(channels, channels, 3, padding=1, rng=rng)
        self.bn1 = BatchNorm1d(channels)
        self.relu1 = ReLU()
        self.conv2 = Conv1d(channels, channels, 3, padding=1, rng=rng)
        self.bn2 = BatchNorm1d(channels)
        self.relu2 = ReLU()
        self.se = SEBlock(channels, se_reduction, rng=rng) if se_enabled else None

    def parameters(self):
        params = (self.conv1.parameters() + self.bn1.parameters()
                  + self.conv2.parameters() + self.bn2.parameters())
        if self.se is not None:
            params += self.se.parameters()
        return params

    def forward(self, x, training):
        h = self.relu1.forward(self.bn1.forward(self.conv1.forward(x), training))
        h = self.relu2.forward(self.bn2.forward(self.conv2.forward(h), training))
        if self.se is not None:
            h = self.se.forward(h)
        return x + h

    def backward(self, grad_out):
        g = grad_out
        if self.se is not None:
            g = self.se.backward(g)
        g = self.conv2.backward(self.bn2.backward(self.relu2.backward(g)))
        g = self.conv1.backward(self.bn1.backward(self.relu1.backward(g)))
        return grad_out + g


class PathNetwork:
    """One classifier path: LGP map (order, N) -> embedding (channels,)."""

    def __init__(self, cfg: ClassifierConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.conv = Conv1d(cfg.gmm_order, cfg.channels, 3, padding=1, rng=rng)
        self.bn = BatchNorm1d(cfg.channels)
        self.relu = ReLU()
        self.blocks = [
            ResBlock(cfg.channels, cfg.se_enabled, cfg.se_reduction, rng)
            for _ in range(cfg.blocks)
        ]
        self.pool = MaxOverTime()

    def parameters(self):
        params = self.conv.parameters() + self.bn.parameters()
        for block in self.blocks:
            params += block.parameters()
        return params

    def batchnorms(self):
        bns = [self.bn]
        for block in self.blocks:
            bns += [block.bn1, block.bn2]
        return bns

    def forward(self, lgp, training):
        """(order, N) or (B, order, N) -> (channels,) or (B, channels)."""
        h = self.relu.forward(self.bn.forward(self.conv.forward(lgp), training))
        for block in self.blocks:
            h = block.forward(h, training)
        return self.pool.forward(h)

    def backward(self, grad_emb):
        g = self.pool.backward(grad_emb)
        for block in reversed(self.blocks):
            g = block.backward(g)
        return self.conv.backward(self.bn.backward(self.relu.backward(g)))

    def state_tensors(self) -> dict[str, np.ndarray]:
        out = {}
        for name, layer in self._named_layers():
            if isinstance(layer, Conv1d):
                out[f"{name}.weight"] = layer.weight.data
                out[f"{name}.bias"] = layer.bias.data
            elif isinstance(layer, BatchNorm1d):
                out[f"{name}.gamma"] = layer.gamma.data
                out[f"{name}.beta"] = layer.beta.data
                out[f"{name}.running_mean"] = layer.running_mean
                out[f"{name}.running_var"] = layer.running_var
            elif isinstance(layer, SEBlock):
                for pname in ("w1", "b1", "w2", "b2"):
                    out[f"{name}.{pname}"] = getattr(layer, pname).data
        return out

    def load_state_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        for name, layer in self._named_layers():
            if isinstance(layer, Conv1d):
                layer.weight.data = _take(tensors, f"{name}.weight", layer.weight.shape)
                layer.bias.data = _take(tensors, f"{name}.bias", layer.bias.shape)
            elif isinstance(layer, BatchNorm1d):
                layer.gamma.data = _take(tensors, f"{name}.gamma", layer.gamma.shape)
                layer.beta.data = _take(tensors, f"{name}.beta", layer.beta.shape)
                layer.running_mean = _take(tensors, f"{name}.running_mean", layer.running_mean.shape)
                layer.running_var = _take(tensors, f"{name}.running_var", layer.running_var.shape)
            elif isinstance(layer, SEBlock):
                for pname in ("w1", "b1", "w2", "b2"):
                    param = getattr(layer, pname)
                    param.data = _take(tensors, f"{name}.{pname}", param.shape)

    def _named_layers(self):
        yield "stem.conv", self.conv
        yield "stem.bn", self.bn
        for b, block in enumerate(self.blocks):
            yield f"block{b}.conv1", block.conv1
            yield f"block{b}.bn1", block.bn1
            yield f"block{b}.conv2", block.conv2
            yield f"block{b}.bn2", block.bn2
            if block.se is not None:
                yield f"block{b}.se", block.se


def _take(tensors, name, shape):
    try:
        arr = np.asarray(tensors[name], dtype=np.float64)
    except KeyError as exc:
        raise FormatError(f"checkpoint is missing tensor {exc}") from None
    if arr.shape != tuple(shape):
        raise FormatError(f"tensor {name!r} has shape {arr.shape}, expected {tuple(shape)}")
    return arr


class SpoofModel:
    """Full detector: per-path GMM + normalization stats + network, shared head."""

    def __init__(self, cfg: ClassifierConfig, gmms: list[Gmm], stats: list[LgpNormStats],
                 seed: int = 0):
        if len(gmms) != cfg.paths or len(stats) != cfg.paths:
            raise ValueError(f"need {cfg.paths} GMM(s) and stats, got {len(gmms)}/{len(stats)}")
        for g, s in zip(gmms, stats):
            if g.order != cfg.gmm_order:
                raise ValueError(f"GMM order {g.order} != configured {cfg.gmm_order}")
            if s.order != g.order:
                raise ValueError("stats do not match their GMM")
            if s.form != cfg.lgp_form:
                raise ValueError(f"stats use form {s.form!r}, config wants {cfg.lgp_form!r}")
        self.cfg = cfg
        self.gmms = list(gmms)
        self.stats = list(stats)
        seq = np.random.SeedSequence(seed)
        path_seeds = seq.spawn(cfg.paths)
        self.paths = [PathNetwork(cfg, np.random.default_rng(path_seeds[k]))
                      for k in range(cfg.paths)]
        # Zero-init head: uniform softmax (loss ln 2) before the first update.
        self.fc = Linear(cfg.paths * cfg.channels, 2, init="zero")

    def parameters(self):
        params = []
        for path in self.paths:
            params += path.parameters()
        return params + self.fc.parameters()

    # -- feature plumbing ----------------------------------------------------

    def path_lgp(self, k: int, feats: np.ndarray) -> np.ndarray:
        """Normalized LGP map of raw features under path ``k``'s GMM; (M, T)."""
        return extract_lgp(self.gmms[k], self.stats[k], feats, self.cfg.lgp_form)

    # -- inference -----------------------------------------------------------

    def embed_batch(self, lgp_per_path: list[np.ndarray], training: bool) -> np.ndarray:
        """Concatenate per-path embeddings: list of (B, M, N) -> (B, paths*ch)."""
        embs = [path.forward(lgp, training) for path, lgp in zip(self.paths, lgp_per_path)]
        return np.concatenate(embs, axis=1)

    def forward_model(self, feats: np.ndarray) -> tuple[np.ndarray, float]:
        """Logits and detection score for one fixed-length feature matrix (N, D)."""
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2:
            raise ValueError("features must be a (T, D) matrix")
        if feats.shape[0] != self.cfg.input_length:
            raise ValueError(
                f"expected {self.cfg.input_length} frames, got {feats.shape[0]}; "
                "fix the length or score through score_utterance"
            )
        lgps = [self.path_lgp(k, feats)[None, :, :] for k in range(self.cfg.paths)]
        logits = self.fc.forward(self.embed_batch(lgps, training=False))[0]
        return logits, float(logits[BONA_FIDE] - logits[SPOOF])

    def score_utterance(self, feats: np.ndarray) -> float:
        """Mean detection score over all overlap segments of an utterance."""
        segments = segment_ufm(feats, UfmConfig(self.cfg.input_length))
        batch = np.stack(segments)                                  # (S, N, D)
        lgps = []
        for k in range(self.cfg.paths):
            lgps.append(np.stack([self.path_lgp(k, seg) for seg in batch]))
        logits = self.fc.forward(self.embed_batch(lgps, training=False))
        scores = logits[:, BONA_FIDE] - logits[:, SPOOF]
        return float(scores.mean())

    # -- persistence -----------------------------------------------------------

    def to_tensors(self) -> dict[str, np.ndarray]:
        cfg = self.cfg
        out = {
            "cfg.gmm_order": np.array([cfg.gmm_order]),
            "cfg.channels": np.array([cfg.channels]),
            "cfg.blocks": np.array([cfg.blocks]),
            "cfg.se_enabled": np.array([1.0 if cfg.se_enabled else 0.0]),
            "cfg.se_reduction": np.array([cfg.se_reduction]),
            "cfg.input_length": np.array([cfg.input_length]),
            "cfg.paths": np.array([cfg.paths]),
            "cfg.lgp_form": np.array([1.0 if cfg.lgp_form == "fast" else 0.0]),
        }
        for k, path in enumerate(self.paths):
            for name, arr in path.state_tensors().items():
                out[f"path{k}.{name}"] = arr
            out[f"path{k}.gmm_sha256"] = _digest_tensor(self.gmms[k].fingerprint())
            out[f"path{k}.stats_sha256"] = _digest_tensor(self.stats[k].fingerprint())
        out["fc.weight"] = self.fc.weight.data
        out["fc.bias"] = self.fc.bias.data
        return out

    def save(self, path) -> None:
        tensorio.save_tensors(path, self.to_tensors())

    @classmethod
    def load(cls, path, gmms: list[Gmm], stats: list[LgpNormStats]) -> "SpoofModel":
        """Rebuild a model from a checkpoint plus the exact GMM/stats it was
        trained with; mismatched fingerprints are refused."""
        tensors = tensorio.load_tensors(path)
        cfg = ClassifierConfig(
            gmm_order=int(tensors["cfg.gmm_order"][0]),
            channels=int(tensors["cfg.channels"][0]),
            blocks=int(tensors["cfg.blocks"][0]),
            se_enabled=bool(tensors["cfg.se_enabled"][0]),
            se_reduction=int(tensors["cfg.se_reduction"][0]),
            input_length=int(tensors["cfg.input_length"][0]),
            paths=int(tensors["cfg.paths"][0]),
            lgp_form="fast" if tensors["cfg.lgp_form"][0] else "full",
        )
        model = cls(cfg, gmms, stats, seed=0)
        for k in range(cfg.paths):
            stored_gmm = _tensor_digest(tensors[f"path{k}.gmm_sha256"])
            stored_stats = _tensor_digest(tensors[f"path{k}.stats_sha256"])
            if stored_gmm != gmms[k].fingerprint():
                raise FormatError(f"path {k}: GMM fingerprint does not match the checkpoint")
            if stored_stats != stats[k].fingerprint():
                raise FormatError(f"path {k}: stats fingerprint does not match the checkpoint")
            prefix = f"path{k}."
            path_tensors = {
                name[len(prefix):]: arr for name, arr in tensors.items()
                if name.startswith(prefix) and not name.endswith("sha256")
            }
            model.paths[k].load_state_tensors(path_tensors)
        model.fc.weight.data = _take(tensors, "fc.weight", model.fc.weight.shape)
        model.fc.bias.data = _take(tensors, "fc.bias", model.fc.bias.shape)
        return model


def _digest_tensor(digest: bytes) -> np.ndarray:
    return np.frombuffer(digest, dtype=np.uint8).astype(np.float64)


def _tensor_digest(arr: np.ndarray) -> bytes:
    return bytes(np.asarray(arr).astype(np.uint8).tobytes())


def segment_ufm(feats: np.ndarray, cfg: UfmConfig) -> list[np.ndarray]:
    """Cut an utterance into half-overlapping fixed-length segments.

    The utterance is first extended by cyclic repetition to the least
    multiple L of N with L >= T, then segments start at 0, N/2, ..., L - N,
    giving exactly 2L/N - 1 of them.
    """
    feats = np.asarray(feats)
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValueError("features must be a non-empty (T, D) matrix")
    n = cfg.segment_length
    t = feats.shape[0]
    length = -(-t // n) * n
    reps = -(-length // t)
    extended = np.tile(feats, (reps, 1))[:length]
    hop = n // 2
    return [extended[start : start + n] for start in range(0, length - n + 1, hop)]

