"""The fused detector: a feature DNN branch (quality + LPQ vector) and a
dense-block CNN branch joined by concatenation under a single classifier
head, trained jointly so gradients from one branch shape the other.

Also home to the Adam optimizer, the versioned weight-file format, and the
training loop.
"""

from __future__ import annotations

import dataclasses
import json
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensornet as tn
from .errors import (
    BatchTooSmall,
    ChecksumMismatch,
    ConfigMismatch,
    CorruptFile,
    InvalidConfig,
    ShapeMismatch,
    SingleClassDataset,
)

N_QUALITY = 13
FEATURE_DIM = 269  # 13 quality values + 256 LPQ bins

BRANCH_FUSED = "fused"
BRANCH_FEAT = "feat"
BRANCH_CNN = "cnn"


@dataclass(frozen=True)
class DyffpadConfig:
    image_side: int = 64
    stem_channels: int = 16
    stem_stride: int = 2
    block_layers: tuple = (2, 2)
    growth: int = 8
    cnn_head: tuple = (512, 256, 32)
    feat_dnn: tuple = (128, 64, 32)
    final_head: tuple = (32, 1)
    feature_dim: int = FEATURE_DIM
    branch: str = BRANCH_FUSED

    def __post_init__(self):
        if self.branch not in (BRANCH_FUSED, BRANCH_FEAT, BRANCH_CNN):
            raise InvalidConfig(f"unknown branch {self.branch!r}")
        if self.feat_dnn[-1] != 32:
            raise InvalidConfig("feat_dnn must end in 32")
        if self.cnn_head[-1] != 32:
            raise InvalidConfig("cnn_head must end in 32")
        if self.final_head[-1] != 1:
            raise InvalidConfig("final_head must end in 1")
        if self.feature_dim != FEATURE_DIM:
            raise InvalidConfig(f"feature_dim must be {FEATURE_DIM}")
        if len(self.block_layers) < 1 or self.growth < 1:
            raise InvalidConfig("need at least one dense block and growth >= 1")

    @classmethod
    def full_preset(cls, **overrides):
        """DenseNet-121-style block sizes at full input resolution."""
        base = dict(
            image_side=224,
            stem_channels=64,
            stem_stride=2,
            block_layers=(6, 12, 24, 16),
            growth=32,
        )
        base.update(overrides)
        return cls(**base)

    @property
    def final_in(self):
        return 64 if self.branch == BRANCH_FUSED else 32

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["block_layers"] = list(self.block_layers)
        d["cnn_head"] = list(self.cnn_head)
        d["feat_dnn"] = list(self.feat_dnn)
        d["final_head"] = list(self.final_head)
        return d

    @classmethod
    def from_dict(cls, d):
        kw = dict(d)
        for key in ("block_layers", "cnn_head", "feat_dnn", "final_head"):
            kw[key] = tuple(kw[key])
        return cls(**kw)


def _mlp(widths, in_f, rng, dtype, final_relu=True):
    layers = []
    prev = in_f
    for i, w in enumerate(widths):
        layers.append(tn.Linear(prev, w, rng=rng, dtype=dtype))
        if final_relu or i < len(widths) - 1:
            layers.append(tn.ReLU())
        prev = w
    return tn.Sequential(layers)


class DyffpadModel:
    """Parameter set of both branches plus the fusion head."""

    def __init__(self, cfg: DyffpadConfig, seed: int = 0, dtype=tn.DEFAULT_DTYPE):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng(seed)

        # CNN branch: stem conv/BN/ReLU/pool, dense blocks with transitions,
        # final BN/ReLU, global pool, FC head ending in 32.
        if cfg.branch in (BRANCH_FUSED, BRANCH_CNN):
            stem = [
                tn.Conv2d(1, cfg.stem_channels, 3, stride=cfg.stem_stride, pad=1,
                          rng=rng, dtype=dtype),
                tn.BatchNorm(cfg.stem_channels, dtype=dtype),
                tn.ReLU(),
                tn.AvgPool(2, 2),
            ]
            ch = cfg.stem_channels
            body = []
            for i, n_layers in enumerate(cfg.block_layers):
                block = tn.DenseBlock(ch, n_layers, cfg.growth, rng, dtype)
                ch = block.out_ch
                body.append(block)
                if i < len(cfg.block_layers) - 1:
                    trans = tn.Transition(ch, ch // 2, rng, dtype)
                    ch = trans.out_ch
                    body.append(trans)
            tail = [tn.BatchNorm(ch, dtype=dtype), tn.ReLU(), tn.GlobalAvgPool()]
            self.cnn = tn.Sequential(stem + body + tail)
            self.cnn_out_ch = ch
            self.cnn_head = _mlp(cfg.cnn_head, ch, rng, dtype)
        else:
            self.cnn = None
            self.cnn_head = None

        if cfg.branch in (BRANCH_FUSED, BRANCH_FEAT):
            self.feat_dnn = _mlp(cfg.feat_dnn, cfg.feature_dim, rng, dtype)
        else:
            self.feat_dnn = None

        self.final_head = _mlp(cfg.final_head, cfg.final_in, rng, dtype,
                               final_relu=False)
        self.sigmoid = tn.Sigmoid()

        # z-score statistics for the 13 quality values, set from the
        # training split; identity until then.
        self.feat_mean = np.zeros(N_QUALITY, dtype=dtype)
        self.feat_std = np.ones(N_QUALITY, dtype=dtype)

        self._concat_cache = None

    # -- parameter plumbing ------------------------------------------------

    def _components(self):
        comps = []
        if self.cnn is not None:
            comps += [("cnn", self.cnn), ("cnn_head", self.cnn_head)]
        if self.feat_dnn is not None:
            comps.append(("feat_dnn", self.feat_dnn))
        comps.append(("final_head", self.final_head))
        return comps

    def named_params(self):
        for prefix, comp in self._components():
            for name, p in comp.params():
                yield f"{prefix}.{name}", p

    def named_buffers(self):
        for prefix, comp in self._components():
            for name, b in comp.buffers():
                yield f"{prefix}.{name}", b
        yield "feat_stats.mean", self.feat_mean
        yield "feat_stats.std", self.feat_std

    def zero_grad(self):
        for _, p in self.named_params():
            p.grad[...] = 0.0

    def param_count(self):
        return sum(p.value.size for _, p in self.named_params())

    # -- forward / backward ------------------------------------------------

    def _standardize(self, feats):
        out = feats.astype(self.dtype, copy=True)
        out[:, :N_QUALITY] = (out[:, :N_QUALITY] - self.feat_mean) / self.feat_std
        return out

    def forward(self, imgs=None, feats=None, training=False):
        """Scores in (0, 1), shape (N,).

        imgs: (N, 1, S, S) in [0, 1]; feats: (N, 269) in quality-then-LPQ
        column order.  Either may be omitted for single-branch configs.
        """
        cfg = self.cfg
        parts = []
        if self.feat_dnn is not None:
            if feats is None or feats.ndim != 2 or feats.shape[1] != cfg.feature_dim:
                raise ShapeMismatch(f"expected (N,{cfg.feature_dim}) features")
            parts.append(self.feat_dnn.forward(self._standardize(feats), training))
        if self.cnn is not None:
            if imgs is None or imgs.ndim != 4 or imgs.shape[1] != 1 \
                    or imgs.shape[2] != cfg.image_side or imgs.shape[3] != cfg.image_side:
                raise ShapeMismatch(f"expected (N,1,{cfg.image_side},{cfg.image_side}) images")
            pooled = self.cnn.forward(imgs.astype(self.dtype), training)
            parts.append(self.cnn_head.forward(pooled, training))
        if len(parts) == 2:
            joined, self._concat_cache = tn.concat_forward(parts)
        else:
            joined, self._concat_cache = parts[0], None
        logits = self.final_head.forward(joined, training)
        return self.sigmoid.forward(logits, training).ravel()

    def backward(self, dscores):
        """Backpropagate d(loss)/d(scores) through every component."""
        dlogits = self.sigmoid.backward(dscores.reshape(-1, 1).astype(self.dtype))
        djoined = self.final_head.backward(dlogits)
        if self._concat_cache is not None:
            dfeat, dcnn = tn.concat_backward(djoined, self._concat_cache)
        elif self.feat_dnn is not None:
            dfeat, dcnn = djoined, None
        else:
            dfeat, dcnn = None, djoined
        if dfeat is not None:
            self.feat_dnn.backward(dfeat)
        if dcnn is not None:
            self.cnn.backward(self.cnn_head.backward(dcnn))


def build_model(cfg: DyffpadConfig, seed: int = 0) -> DyffpadModel:
    """Deterministic initialization: same (cfg, seed) -> identical parameters."""
    return DyffpadModel(cfg, seed=seed)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self._m = {}
        self._v = {}

    def step(self, named_params):
        self.t += 1
        for name, p in named_params:
            m = self._m.setdefault(name, np.zeros_like(p.value))
            v = self._v.setdefault(name, np.zeros_like(p.value))
            g = p.grad
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            mhat = m / (1 - self.beta1**self.t)
            vhat = v / (1 - self.beta2**self.t)
            p.value -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.value.dtype)


def backward_step(model: DyffpadModel, imgs, feats, labels, optimizer: Adam) -> float:
    """One training step over a batch; returns the batch BCE loss."""
    if labels.shape[0] < 2 and model.cnn is not None:
        raise BatchTooSmall("batch norm needs at least 2 samples")
    model.zero_grad()
    scores = model.forward(imgs, feats, training=True)
    loss, dscores = tn.bce_loss(scores, labels)
    model.backward(dscores)
    optimizer.step(model.named_params())
    return loss


# ---------------------------------------------------------------------------
# weight file
# ---------------------------------------------------------------------------

MAGIC = b"FPFW"
FORMAT_VERSION = 1


def save_weights(model: DyffpadModel, path):
    """Versioned header + little-endian float32 payload + CRC32 checksum."""
    entries = []
    chunks = []
    offset = 0
    for name, p in model.named_params():
        arr = np.ascontiguousarray(p.value, dtype="<f4")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    for name, b in model.named_buffers():
        arr = np.ascontiguousarray(b, dtype="<f4")
        entries.append({"name": f"buffer:{name}", "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    payload = b"".join(chunks)
    header = {
        "format_version": FORMAT_VERSION,
        "config": model.cfg.to_dict(),
        "checksum": zlib.crc32(payload),
        "payload_bytes": len(payload),
        "params": entries,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(np.uint32(FORMAT_VERSION).tobytes())
        fh.write(np.uint32(len(header_bytes)).tobytes())
        fh.write(header_bytes)
        fh.write(payload)


def load_weights(path, cfg: DyffpadConfig | None = None) -> DyffpadModel:
    """Rebuild a model from disk; bit-exact parameter round trip."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CorruptFile(f"{path}: not a weight file")
    version = int(np.frombuffer(raw[4:8], dtype="<u4")[0])
    if version != FORMAT_VERSION:
        raise CorruptFile(f"{path}: unsupported format version {version}")
    hlen = int(np.frombuffer(raw[8:12], dtype="<u4")[0])
    try:
        header = json.loads(raw[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise CorruptFile(f"{path}: malformed header") from None
    payload = raw[12 + hlen :]
    if len(payload) != header["payload_bytes"]:
        raise CorruptFile(f"{path}: payload truncated "
                          f"({len(payload)} of {header['payload_bytes']} bytes)")
    if zlib.crc32(payload) != header["checksum"]:
        raise ChecksumMismatch(f"{path}: payload checksum mismatch")
    stored_cfg = DyffpadConfig.from_dict(header["config"])
    if cfg is not None and cfg != stored_cfg:
        raise ConfigMismatch("requested config does not match the stored one")
    model = build_model(stored_cfg, seed=0)
    arrays = {name: arr for name, arr in _iter_model_arrays(model)}
    for entry in header["params"]:
        name, shape, off = entry["name"], tuple(entry["shape"]), entry["offset"]
        if name not in arrays:
            raise ConfigMismatch(f"unexpected parameter {name!r}")
        target = arrays[name]
        if target.shape != shape:
            raise ConfigMismatch(f"{name}: stored shape {shape}, model has {target.shape}")
        count = int(np.prod(shape)) if shape else 1
        data = np.frombuffer(payload, dtype="<f4", count=count, offset=off)
        target[...] = data.reshape(shape)
    return model


def _iter_model_arrays(model):
    for name, p in model.named_params():
        yield name, p.value
    for name, b in model.named_buffers():
        yield f"buffer:{name}", b


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def accuracy(scores, labels, threshold=0.5):
    pred = scores >= threshold
    return float(np.mean(pred == (labels > 0.5)))


def evaluate_scores(model, imgs, feats, batch=64):
    """Inference-mode scores in batches."""
    n = (imgs if imgs is not None else feats).shape[0]
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, batch):
        sl = slice(start, min(start + batch, n))
        out[sl] = model.forward(
            imgs[sl] if imgs is not None else None,
            feats[sl] if feats is not None else None,
            training=False,
        )
    return out


@dataclass
class TrainResult:
    model: DyffpadModel
    history: list  # dicts: epoch, loss, train_acc, val_acc


def train(model: DyffpadModel, train_set, epochs=50, batch=16, lr=1e-3, seed=0,
          val_set=None) -> TrainResult:
    """Seeded SGD loop over (imgs, feats, labels) arrays.

    With a validation set the returned model is the best-val-accuracy
    checkpoint; otherwise the last epoch's parameters stand.
    """
    imgs, feats, labels = train_set
    n = labels.shape[0]
    if n == 0 or len(np.unique(labels > 0.5)) < 2:
        raise SingleClassDataset("training split must contain both classes")

    # standardize the quality features from training statistics
    if model.feat_dnn is not None and feats is not None:
        mu = feats[:, :N_QUALITY].mean(axis=0)
        sd = feats[:, :N_QUALITY].std(axis=0)
        sd[sd == 0] = 1.0
        model.feat_mean[...] = mu.astype(model.dtype)
        model.feat_std[...] = sd.astype(model.dtype)

    optimizer = Adam(lr=lr)
    rng = np.random.default_rng(seed)
    history = []
    best = None  # (val_acc, params snapshot, buffers snapshot)

    for epoch in range(epochs):
        order = rng.permutation(n)
        losses = []
        for start in range(0, n, batch):
            idx = order[start : start + batch]
            if idx.size < 2 and model.cnn is not None:
                continue  # leftover singleton cannot feed batch norm
            losses.append(backward_step(
                model,
                imgs[idx] if imgs is not None else None,
                feats[idx] if feats is not None else None,
                labels[idx],
                optimizer,
            ))
        train_scores = evaluate_scores(model, imgs, feats)
        record = {
            "epoch": epoch,
            "loss": float(np.mean(losses)) if losses else float("nan"),
            "train_acc": accuracy(train_scores, labels),
            "val_acc": None,
        }
        if val_set is not None:
            v_imgs, v_feats, v_labels = val_set
            val_scores = evaluate_scores(model, v_imgs, v_feats)
            record["val_acc"] = accuracy(val_scores, v_labels)
            if best is None or record["val_acc"] > best[0]:
                best = (record["val_acc"], _snapshot(model))
        history.append(record)

    if best is not None:
        _restore(model, best[1])
    return TrainResult(model=model, history=history)


def _snapshot(model):
    return {name: arr.copy() for name, arr in _iter_model_arrays(model)}


def _restore(model, snap):
    for name, arr in _iter_model_arrays(model):
        arr[...] = snap[name]
