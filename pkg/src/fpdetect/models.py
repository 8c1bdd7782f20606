"""ResNet, LCNN and x-vector classifiers over (frames x dim) feature matrices.

Every model's ``forward`` returns ``(logits, embedding)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import IntEnum

import numpy as np

from .autograd import ops
from .autograd.nn import BatchNorm, Conv2d, Linear, LSTM, Module, TdnnLayer
from .autograd.tensor import Tensor
from .errors import ConfigError
from .features import FEATURE_DIMS, FeatureKind

N_CLASSES = 5


class ModelKind(IntEnum):
    RESNET = 0
    LCNN = 1
    XVECTOR = 2

    @classmethod
    def parse(cls, value) -> "ModelKind":
        if isinstance(value, cls):
            return value
        try:
            return cls[str(value).upper().replace("-", "")]
        except KeyError:
            raise ConfigError(f"unknown model kind {value!r}; expected resnet, lcnn or xvector") from None


PROFILES = ("paper", "desk")
DESK_DIVISOR = 4


@dataclass(frozen=True)
class ModelConfig:
    kind: str = "resnet"
    profile: str = "desk"
    feature_kind: str = "LFCC"
    n_classes: int = N_CLASSES
    crop_frames: int = 300
    recurrent: str = "blstm"  # LCNN only; "identity" bypasses the recurrent layers

    def __post_init__(self):
        ModelKind.parse(self.kind)
        FeatureKind.parse(self.feature_kind)
        if self.profile not in PROFILES:
            raise ConfigError(f"profile must be one of {PROFILES}, got {self.profile!r}")
        if self.n_classes != N_CLASSES:
            raise ConfigError(f"n_classes must be {N_CLASSES} (systems A-E)")
        if self.recurrent not in ("blstm", "identity"):
            raise ConfigError(f"recurrent must be 'blstm' or 'identity', got {self.recurrent!r}")

    @property
    def input_dim(self) -> int:
        return FEATURE_DIMS[FeatureKind.parse(self.feature_kind)]

    def width(self, n: int) -> int:
        return n // DESK_DIVISOR if self.profile == "desk" else n

    def to_dict(self):
        return asdict(self)


class Classifier(Module):
    kind: ModelKind
    min_frames: int

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        object.__setattr__(self, "cfg", cfg)
        if cfg.crop_frames < self.min_frames:
            raise ConfigError(
                f"{type(self).__name__} needs at least {self.min_frames} frames, "
                f"crop length is {cfg.crop_frames}"
            )

    def prepare(self, batch: np.ndarray) -> Tensor:
        """(N, T, dim) feature batch -> model input tensor."""
        raise NotImplementedError

    def check_input(self, x: Tensor, time_axis: int):
        if x.shape[time_axis] < self.min_frames:
            raise ConfigError(
                f"{type(self).__name__} input has {x.shape[time_axis]} frames, "
                f"needs at least {self.min_frames}"
            )


# ---------------------------------------------------------------- ResNet


class BasicBlock(Module):
    """Two 3x3 conv/BN layers with an identity or 1x1-projection shortcut."""

    def __init__(self, in_ch, out_ch, stride, *, rng, dtype):
        super().__init__()
        self.conv1 = Conv2d(in_ch, out_ch, 3, stride, 1, bias=False, rng=rng, dtype=dtype)
        self.bn1 = BatchNorm(out_ch, dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, 1, 1, bias=False, rng=rng, dtype=dtype)
        self.bn2 = BatchNorm(out_ch, dtype=dtype)
        self.projects = stride != 1 or in_ch != out_ch
        if self.projects:
            self.proj = Conv2d(in_ch, out_ch, 1, stride, 0, bias=False, rng=rng, dtype=dtype)
            self.proj_bn = BatchNorm(out_ch, dtype=dtype)

    def residual(self, x):
        h = ops.relu(self.bn1(self.conv1(x)))
        return self.bn2(self.conv2(h))

    def shortcut(self, x):
        return self.proj_bn(self.proj(x)) if self.projects else x

    def forward(self, x):
        return ops.relu(ops.add(self.residual(x), self.shortcut(x)))


class ResNet(Classifier):
    kind = ModelKind.RESNET
    min_frames = 16
    stage_widths = (64, 128, 256, 512)

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        super().__init__(cfg)
        w = [cfg.width(c) for c in self.stage_widths]
        self.stem = Conv2d(1, w[0], 7, 2, 3, bias=False, rng=rng, dtype=dtype)
        self.stem_bn = BatchNorm(w[0], dtype=dtype)
        in_ch = w[0]
        blocks = []
        for stage, out_ch in enumerate(w):
            for b in range(2):
                stride = 2 if stage > 0 and b == 0 else 1
                blocks.append(self.add_module(f"block{stage + 1}_{b + 1}", BasicBlock(in_ch, out_ch, stride, rng=rng, dtype=dtype)))
                in_ch = out_ch
        object.__setattr__(self, "blocks", blocks)
        self.fc = Linear(in_ch, cfg.n_classes, rng=rng, dtype=dtype)
        object.__setattr__(self, "embedding_dim", in_ch)

    def prepare(self, batch):
        batch = np.asarray(batch)
        return Tensor(batch[:, None, :, :])

    def forward(self, x):
        self.check_input(x, 2)
        h = ops.relu(self.stem_bn(self.stem(x)))
        h = ops.max_pool2d(h, 3, 2, 1)
        for block in self.blocks:
            h = block(h)
        emb = ops.global_avg_pool(h)
        return self.fc(emb), emb


# ---------------------------------------------------------------- LCNN


class MfmConv(Module):
    """Convolution with ``out_ch`` declared channels followed by max feature map
    (so ``out_ch // 2`` channels come out)."""

    def __init__(self, in_ch, out_ch, kernel, *, rng, dtype):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, kernel, 1, kernel // 2, rng=rng, dtype=dtype)

    def forward(self, x):
        return ops.mfm_halve_max(self.conv(x))


class LCNN(Classifier):
    kind = ModelKind.LCNN
    min_frames = 32
    conv_channels = (64, 64, 96, 96, 128, 128, 64, 64, 64)
    conv_kernels = (5, 1, 3, 1, 3, 1, 3, 1, 3)
    pool_after = (0, 2, 4, 6, 8)
    hidden = 256

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        super().__init__(cfg)
        in_ch = 1
        layers = []
        for i, (ch, k) in enumerate(zip(self.conv_channels, self.conv_kernels)):
            ch = cfg.width(ch)
            mfm = self.add_module(f"conv{i + 1}", MfmConv(in_ch, ch, k, rng=rng, dtype=dtype))
            bn = self.add_module(f"bn{i + 1}", BatchNorm(ch // 2, dtype=dtype)) if i > 0 else None
            layers.append((mfm, bn, i in self.pool_after))
            in_ch = ch // 2
        object.__setattr__(self, "layers", layers)
        freq = cfg.input_dim
        for _ in self.pool_after:
            freq //= 2
        if freq < 1:
            raise ConfigError(f"feature dim {cfg.input_dim} is too small for {len(self.pool_after)} poolings")
        seq_dim = in_ch * freq
        hidden = cfg.width(self.hidden)
        self.blstm1 = LSTM(seq_dim, hidden, rng=rng, dtype=dtype)
        self.blstm2 = LSTM(self.blstm1.out_dim, hidden, rng=rng, dtype=dtype)
        emb_dim = self.blstm2.out_dim if cfg.recurrent == "blstm" else seq_dim
        self.fc = Linear(emb_dim, cfg.n_classes, rng=rng, dtype=dtype)
        object.__setattr__(self, "embedding_dim", emb_dim)

    def prepare(self, batch):
        batch = np.asarray(batch)
        return Tensor(batch[:, None, :, :])

    def sequence(self, x):
        """Convolutional front end: (N, 1, T, F) -> time-major (N, T', C*F')."""
        self.check_input(x, 2)
        h = x
        for mfm, bn, pool in self.layers:
            h = mfm(h)
            if pool:
                h = ops.max_pool2d(h, 2, 2)
            if bn is not None:
                h = bn(h)
        n, c, t, f = h.shape
        return ops.reshape(ops.transpose(h, (0, 2, 1, 3)), (n, t, c * f))

    def head(self, seq):
        if self.cfg.recurrent == "blstm":
            seq = self.blstm2(self.blstm1(seq))
        emb = ops.sum(seq, axis=1)
        return self.fc(emb), emb

    def forward(self, x):
        return self.head(self.sequence(x))


# ---------------------------------------------------------------- x-vector


class XVector(Classifier):
    kind = ModelKind.XVECTOR
    contexts = (5, 3, 3, 1, 1)
    dilations = (1, 2, 3, 1, 1)
    frame_width = 512
    embedding_width = 512

    min_frames = 1 + sum(d * (c - 1) for c, d in zip(contexts, dilations))

    def __init__(self, cfg: ModelConfig, rng, dtype=np.float32):
        super().__init__(cfg)
        in_ch = cfg.input_dim
        frames = []
        for i, (c, d) in enumerate(zip(self.contexts, self.dilations)):
            out_ch = cfg.width(self.frame_width)
            tdnn = self.add_module(f"frame{i + 1}", TdnnLayer(in_ch, out_ch, c, d, rng=rng, dtype=dtype))
            bn = self.add_module(f"frame{i + 1}_bn", BatchNorm(out_ch, dtype=dtype))
            frames.append((tdnn, bn))
            in_ch = out_ch
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "pooled_dim", 2 * in_ch)
        emb = cfg.width(self.embedding_width)
        self.segment6 = Linear(2 * in_ch, emb, rng=rng, dtype=dtype)
        self.segment6_bn = BatchNorm(emb, dtype=dtype)
        self.segment7 = Linear(emb, emb, rng=rng, dtype=dtype)
        self.segment7_bn = BatchNorm(emb, dtype=dtype)
        self.output = Linear(emb, cfg.n_classes, rng=rng, dtype=dtype)
        object.__setattr__(self, "embedding_dim", emb)

    def prepare(self, batch):
        batch = np.asarray(batch)
        return Tensor(np.ascontiguousarray(batch.transpose(0, 2, 1)))

    def pooled(self, x):
        self.check_input(x, 2)
        h = x
        for tdnn, bn in self.frames:
            h = bn(ops.relu(tdnn(h)))
        return ops.stats_pool_mean_std(h)

    def forward(self, x):
        stats = self.pooled(x)
        emb = self.segment6(stats)
        h = self.segment6_bn(ops.relu(emb))
        h = self.segment7_bn(ops.relu(self.segment7(h)))
        return self.output(h), emb


MODEL_CLASSES = {ModelKind.RESNET: ResNet, ModelKind.LCNN: LCNN, ModelKind.XVECTOR: XVector}


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> Classifier:
    rng = np.random.default_rng(seed)
    return MODEL_CLASSES[ModelKind.parse(cfg.kind)](cfg, rng, dtype)


def build_resnet(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> ResNet:
    return ResNet(cfg, np.random.default_rng(seed), dtype)


def build_lcnn(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> LCNN:
    return LCNN(cfg, np.random.default_rng(seed), dtype)


def build_xvector(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> XVector:
    return XVector(cfg, np.random.default_rng(seed), dtype)
