"""Convolutional autoencoder over CNN feature maps.

The encoder compresses a layer-normalized feature map through three
conv + batch norm + PReLU blocks; the decoder mirrors them with transposed
convolutions, its final block bare (no norm, no activation) so the
reconstruction can take the normalized map's negative values. Training
minimizes the reconstruction MSE; descriptors come from the encoder alone,
flattened and L2-normalized.
"""

from __future__ import annotations

import hashlib
import io
import struct
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import (
    ArchitectureError,
    ConfigError,
    DataError,
    FormatError,
    NumericError,
    ShapeError,
)
from .nn import (
    LayerNormConfig,
    Param,
    adam_step,
    batchnorm_backward,
    batchnorm_forward,
    check_tensor4,
    conv2d_backward,
    conv2d_forward,
    conv_output_size,
    deconv2d_backward,
    deconv2d_forward,
    layernorm,
    mse_loss,
    prelu_backward,
    prelu_forward,
)

__all__ = [
    "ArchSpec",
    "TrainConfig",
    "ConvAutoencoder",
    "build_model",
    "encode",
    "reconstruct",
    "train",
    "save_checkpoint",
    "load_checkpoint",
    "CANONICAL_D3",
]

# Backbone feature-map geometry for 640x480 inputs: channels, rows, cols.
BACKBONE_INPUT_DIMS = {
    "vgg16": (512, 30, 40),
    "alexnet": (256, 28, 38),
}

# Encoder blocks as ((kh, kw), (sh, sw)); kernel heights sit on the image
# height axis. The decoder reuses them in reverse order.
BACKBONE_BLOCKS = {
    "vgg16": (((4, 4), (1, 1)), ((7, 5), (2, 2)), ((5, 3), (2, 2))),
    "alexnet": (((4, 4), (1, 1)), ((5, 3), (2, 2)), ((5, 3), (2, 2))),
}

CANONICAL_D3 = (8, 16, 32, 64, 128, 256, 512)

BATCHNORM_MOMENTUM = 0.1
BATCHNORM_EPS = 1e-5
PRELU_INIT = 0.25


@dataclass(frozen=True)
class ArchSpec:
    """Autoencoder geometry: backbone tag, block channels, kernels, strides.

    ``vgg16`` / ``alexnet`` carry the canonical 640x480 geometry; pass
    explicit ``input_dims`` and ``blocks`` for reduced synthetic setups
    (flagged non-canonical).
    """

    backbone: str
    input_dims: tuple[int, int, int]
    d1: int = 128
    d2: int = 128
    d3: int = 256
    blocks: tuple = ()

    def __post_init__(self):
        if self.backbone not in ("vgg16", "alexnet", "custom"):
            raise ArchitectureError(f"unknown backbone {self.backbone!r}")
        if not self.blocks:
            if self.backbone == "custom":
                raise ArchitectureError("custom specs must define their blocks")
            object.__setattr__(self, "blocks", BACKBONE_BLOCKS[self.backbone])
        if len(self.blocks) != 3:
            raise ArchitectureError(f"expected 3 blocks, got {len(self.blocks)}")
        for d, name in ((self.d1, "d1"), (self.d2, "d2"), (self.d3, "d3")):
            if d < 1:
                raise ArchitectureError(f"{name} must be >= 1, got {d}")
        if len(self.input_dims) != 3 or min(self.input_dims) < 1:
            raise ArchitectureError(f"bad input dims {self.input_dims}")
        self._validate_geometry()

    def _validate_geometry(self):
        _, h, w = self.input_dims
        for idx, ((kh, kw), (sh, sw)) in enumerate(self.blocks, start=1):
            if min(kh, kw, sh, sw) < 1:
                raise ArchitectureError(f"block {idx}: non-positive kernel/stride")
            if kh > h or kw > w:
                raise ArchitectureError(
                    f"block {idx}: kernel ({kh},{kw}) exceeds input ({h},{w})"
                )
            nh, nw = conv_output_size(h, kh, sh), conv_output_size(w, kw, sw)
            if nh < 1 or nw < 1:
                raise ArchitectureError(
                    f"block {idx}: output spatial dims ({nh},{nw}) not positive"
                )
            # Transposed block must invert the shape exactly, so the stride
            # has to divide the kernel overhang.
            if (h - kh) % sh or (w - kw) % sw:
                raise ArchitectureError(
                    f"block {idx}: stride ({sh},{sw}) does not divide "
                    f"(input - kernel) for ({h},{w}) -> shape round trip breaks"
                )
            h, w = nh, nw

    @classmethod
    def vgg16(cls, d3: int = 256, d1: int = 128, d2: int = 128) -> "ArchSpec":
        return cls("vgg16", BACKBONE_INPUT_DIMS["vgg16"], d1=d1, d2=d2, d3=d3)

    @classmethod
    def alexnet(cls, d3: int = 256, d1: int = 128, d2: int = 128) -> "ArchSpec":
        return cls("alexnet", BACKBONE_INPUT_DIMS["alexnet"], d1=d1, d2=d2, d3=d3)

    @property
    def channels(self) -> tuple[int, int, int, int]:
        return (self.input_dims[0], self.d1, self.d2, self.d3)

    def encoder_shapes(self) -> list[tuple[int, int, int]]:
        """Shapes (c, h, w) after each encoder block."""
        shapes = []
        _, h, w = self.input_dims
        chans = (self.d1, self.d2, self.d3)
        for c, ((kh, kw), (sh, sw)) in zip(chans, self.blocks):
            h, w = conv_output_size(h, kh, sh), conv_output_size(w, kw, sw)
            shapes.append((c, h, w))
        return shapes

    @property
    def code_dims(self) -> tuple[int, int, int]:
        """Encoder output (d3, h'', w'')."""
        return self.encoder_shapes()[-1]

    @property
    def flat_dim(self) -> int:
        c, h, w = self.code_dims
        return c * h * w

    @property
    def is_canonical(self) -> bool:
        return (
            self.backbone in BACKBONE_INPUT_DIMS
            and self.input_dims == BACKBONE_INPUT_DIMS[self.backbone]
            and tuple(self.blocks) == BACKBONE_BLOCKS[self.backbone]
            and self.d3 in CANONICAL_D3
        )


@dataclass
class TrainConfig:
    """Reconstruction-training hyperparameters."""

    lr: float = 0.001
    batch_size: int = 128
    epochs: int = 50
    seed: int = 0
    layernorm: LayerNormConfig = field(default_factory=LayerNormConfig)
    shuffle: bool = True
    checkpoint_every: int = 0  # epochs between checkpoints; 0 disables

    def __post_init__(self):
        # lr == 0 is allowed as an explicit null update.
        if self.lr < 0:
            raise ConfigError(f"lr must be >= 0, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")


@dataclass
class Block:
    """Parameters of one encoder/decoder block; norm fields absent on the
    bare final decoder block."""

    w: Param
    b: Param
    gamma: Optional[Param] = None
    beta: Optional[Param] = None
    running_mean: Optional[np.ndarray] = None
    running_var: Optional[np.ndarray] = None
    alpha: Optional[Param] = None

    @property
    def has_norm(self) -> bool:
        return self.gamma is not None


class ConvAutoencoder:
    """Three-block convolutional encoder/decoder with Adam training state."""

    def __init__(
        self,
        spec: ArchSpec,
        encoder: list[Block],
        decoder: list[Block],
        rng_seed: int,
        layernorm_cfg: Optional[LayerNormConfig] = None,
    ):
        self.spec = spec
        self.encoder = encoder
        self.decoder = decoder
        self.rng_seed = rng_seed
        self.layernorm = layernorm_cfg or LayerNormConfig()

    # -- construction -----------------------------------------------------

    @classmethod
    def build(
        cls,
        spec: ArchSpec,
        seed: int = 0,
        layernorm_cfg: Optional[LayerNormConfig] = None,
    ) -> "ConvAutoencoder":
        """Initialize parameters deterministically from ``seed``.

        Conv/deconv weights are fan-in-scaled uniform (bound sqrt(6/fan_in)),
        biases zero, batch-norm gamma 1 / beta 0, PReLU slopes 0.25.
        """
        rng = np.random.default_rng(seed)
        chans = spec.channels

        def uniform(shape, fan_in):
            bound = np.sqrt(6.0 / fan_in)
            return rng.uniform(-bound, bound, size=shape).astype(np.float32)

        def norm_parts(c_out, name):
            return dict(
                gamma=Param.of(np.ones(c_out, np.float32), f"{name}.gamma"),
                beta=Param.of(np.zeros(c_out, np.float32), f"{name}.beta"),
                running_mean=np.zeros(c_out, np.float32),
                running_var=np.ones(c_out, np.float32),
                alpha=Param.of(np.full(c_out, PRELU_INIT, np.float32), f"{name}.alpha"),
            )

        encoder = []
        for i, ((kh, kw), _) in enumerate(spec.blocks):
            c_in, c_out = chans[i], chans[i + 1]
            encoder.append(
                Block(
                    w=Param.of(uniform((c_out, c_in, kh, kw), c_in * kh * kw), f"enc{i}.w"),
                    b=Param.of(np.zeros(c_out, np.float32), f"enc{i}.b"),
                    **norm_parts(c_out, f"enc{i}"),
                )
            )

        decoder = []
        for i in range(3):
            (kh, kw), _ = spec.blocks[2 - i]
            c_in, c_out = chans[3 - i], chans[2 - i]
            w = Param.of(uniform((c_in, c_out, kh, kw), c_in * kh * kw), f"dec{i}.w")
            b = Param.of(np.zeros(c_out, np.float32), f"dec{i}.b")
            if i < 2:
                decoder.append(Block(w=w, b=b, **norm_parts(c_out, f"dec{i}")))
            else:
                decoder.append(Block(w=w, b=b))

        return cls(spec, encoder, decoder, seed, layernorm_cfg)

    # -- parameter access --------------------------------------------------

    def parameters(self) -> list[Param]:
        params = []
        for blk in self.encoder + self.decoder:
            params.extend([blk.w, blk.b])
            if blk.has_norm:
                params.extend([blk.gamma, blk.beta, blk.alpha])
        return params

    def _tensors(self):
        """(kind, name, array-holder) records in declaration order; kind is
        'param' or 'buffer'."""
        records = []
        for tag, blocks in (("enc", self.encoder), ("dec", self.decoder)):
            for i, blk in enumerate(blocks):
                records.append(("param", f"{tag}{i}.w", blk.w))
                records.append(("param", f"{tag}{i}.b", blk.b))
                if blk.has_norm:
                    records.append(("param", f"{tag}{i}.gamma", blk.gamma))
                    records.append(("param", f"{tag}{i}.beta", blk.beta))
                    records.append(("buffer", f"{tag}{i}.running_mean", blk))
                    records.append(("buffer", f"{tag}{i}.running_var", blk))
                    records.append(("param", f"{tag}{i}.alpha", blk.alpha))
        return records

    def checksum(self) -> bytes:
        """8-byte digest over all parameter and buffer payloads."""
        h = hashlib.sha256()
        for kind, name, holder in self._tensors():
            arr = _tensor_array(kind, name, holder)
            h.update(arr.astype("<f4", copy=False).tobytes())
        return h.digest()[:8]

    # -- forward passes ----------------------------------------------------

    def _check_input(self, F):
        F = check_tensor4(F, "feature map")
        if tuple(F.shape[1:]) != self.spec.input_dims:
            raise ShapeError(
                f"feature map dims {tuple(F.shape[1:])} do not match the "
                f"architecture input {self.spec.input_dims}"
            )
        return F

    def encoder_forward(self, h, training=False, caches=None):
        x = h
        for blk, (_, stride) in zip(self.encoder, self.spec.blocks):
            pre = conv2d_forward(x, blk.w, blk.b, stride)
            normed = batchnorm_forward(
                pre, blk.gamma, blk.beta, blk.running_mean, blk.running_var,
                momentum=BATCHNORM_MOMENTUM, training=training, eps=BATCHNORM_EPS,
            )
            out = prelu_forward(normed, blk.alpha)
            if caches is not None:
                caches.append((x, pre, normed))
            x = out
        return x

    def decoder_forward(self, code, training=False, caches=None):
        x = code
        for i, blk in enumerate(self.decoder):
            _, stride = self.spec.blocks[2 - i]
            pre = deconv2d_forward(x, blk.w, blk.b, stride)
            if blk.has_norm:
                normed = batchnorm_forward(
                    pre, blk.gamma, blk.beta, blk.running_mean, blk.running_var,
                    momentum=BATCHNORM_MOMENTUM, training=training, eps=BATCHNORM_EPS,
                )
                out = prelu_forward(normed, blk.alpha)
            else:
                normed, out = None, pre
            if caches is not None:
                caches.append((x, pre, normed))
            x = out
        return x

    def _backward(self, enc_caches, dec_caches, grad):
        for i in reversed(range(3)):
            blk = self.decoder[i]
            _, stride = self.spec.blocks[2 - i]
            x, pre, normed = dec_caches[i]
            if blk.has_norm:
                grad, _ = prelu_backward(normed, blk.alpha, grad)
                grad, _, _ = batchnorm_backward(pre, blk.gamma, blk.beta, grad,
                                                eps=BATCHNORM_EPS)
            grad, _, _ = deconv2d_backward(x, blk.w, stride, grad, bias=blk.b)
        for i in reversed(range(3)):
            blk = self.encoder[i]
            _, stride = self.spec.blocks[i]
            x, pre, normed = enc_caches[i]
            grad, _ = prelu_backward(normed, blk.alpha, grad)
            grad, _, _ = batchnorm_backward(pre, blk.gamma, blk.beta, grad,
                                            eps=BATCHNORM_EPS)
            grad, _, _ = conv2d_backward(x, blk.w, stride, grad, bias=blk.b)
        return grad

    # -- public operations ---------------------------------------------------

    def encode(self, F) -> np.ndarray:
        """Descriptors for a batch of raw feature maps.

        Per sample: layer-normalize, run the encoder in eval mode, flatten
        (channel-major, then row-major spatial) and L2-normalize. Returns a
        (batch, flat_dim) float32 array of unit rows.
        """
        F = self._check_input(F)
        h = layernorm(F, self.layernorm)
        code = self.encoder_forward(h, training=False)
        flat = code.reshape(code.shape[0], -1).astype(np.float32)
        norms = np.linalg.norm(flat.astype(np.float64), axis=1)
        if np.any(norms == 0.0):
            bad = int(np.nonzero(norms == 0.0)[0][0])
            raise NumericError(f"degenerate descriptor: sample {bad} encoded to zero")
        return (flat / norms[:, None]).astype(np.float32)

    def reconstruct(self, F, training=False):
        """Autoencode a batch; returns (reconstruction, mse loss vs the
        layer-normalized input)."""
        F = self._check_input(F)
        h = layernorm(F, self.layernorm)
        code = self.encoder_forward(h, training=training)
        y_hat = self.decoder_forward(code, training=training)
        loss, _ = mse_loss(y_hat, h)
        return y_hat, loss

    def train_step(self, h_batch, lr: float) -> float:
        """One forward/backward/Adam update on an already-normalized batch."""
        enc_caches, dec_caches = [], []
        code = self.encoder_forward(h_batch, training=True, caches=enc_caches)
        y_hat = self.decoder_forward(code, training=True, caches=dec_caches)
        loss, grad = mse_loss(y_hat, h_batch)
        if not np.isfinite(loss):
            raise NumericError("non-finite loss")
        self._backward(enc_caches, dec_caches, grad)
        adam_step(self.parameters(), lr=lr)
        return loss


def build_model(
    spec: ArchSpec, seed: int = 0, layernorm_cfg: Optional[LayerNormConfig] = None
) -> ConvAutoencoder:
    """Construct a deterministic, freshly initialized autoencoder."""
    return ConvAutoencoder.build(spec, seed, layernorm_cfg)


def encode(model: ConvAutoencoder, F) -> np.ndarray:
    return model.encode(F)


def reconstruct(model: ConvAutoencoder, F, training: bool = False):
    return model.reconstruct(F, training=training)


def _maps_of(dataset) -> np.ndarray:
    maps = np.asarray(getattr(dataset, "maps", dataset))
    if maps.ndim == 4 and maps.shape[0] == 0:
        raise DataError("empty feature map set")
    return check_tensor4(maps, "feature map set")


def train(
    model: ConvAutoencoder,
    train_set,
    val_set=None,
    cfg: Optional[TrainConfig] = None,
    checkpoint_dir=None,
) -> list[dict]:
    """Reconstruction training; returns one log record per epoch.

    ``train_set`` / ``val_set`` are FeatureMapSets or plain (n, c, h, w)
    arrays. Shuffling and updates are driven by ``cfg.seed``, so equal seeds
    give identical loss curves. When ``checkpoint_dir`` is set, a checkpoint
    is written every ``cfg.checkpoint_every`` epochs.
    """
    cfg = cfg or TrainConfig()
    maps = _maps_of(train_set)
    if tuple(maps.shape[1:]) != model.spec.input_dims:
        raise ShapeError(
            f"train set dims {tuple(maps.shape[1:])} do not match the "
            f"architecture input {model.spec.input_dims}"
        )

    model.layernorm = cfg.layernorm
    if cfg.layernorm.mode == "frozen_stats":
        # Accumulate the global scalar statistics of the training elements;
        # normalization during training stays per-sample.
        flat = maps.astype(np.float64).reshape(-1)
        model.layernorm = replace(
            cfg.layernorm, frozen_mean=float(flat.mean()), frozen_var=float(flat.var())
        )
    per_sample = LayerNormConfig(epsilon=cfg.layernorm.epsilon)

    normalized = layernorm(maps, per_sample)
    val_maps = None
    if val_set is not None:
        val_maps = _maps_of(val_set)
        if tuple(val_maps.shape[1:]) != model.spec.input_dims:
            raise ShapeError("validation set dims do not match the architecture input")

    rng = np.random.default_rng(cfg.seed)
    n = normalized.shape[0]
    log = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            try:
                loss = model.train_step(normalized[idx], lr=cfg.lr)
            except NumericError as exc:
                raise NumericError(
                    f"at epoch {epoch}, batch {start // cfg.batch_size}: {exc}"
                ) from exc
            total += loss * len(idx)
            seen += len(idx)
        record = {"epoch": epoch, "train_loss": total / seen}
        if val_maps is not None:
            _, val_loss = model.reconstruct(val_maps, training=False)
            record["val_loss"] = val_loss
        log.append(record)
        if checkpoint_dir is not None and cfg.checkpoint_every:
            if epoch % cfg.checkpoint_every == 0:
                path = f"{checkpoint_dir}/checkpoint_epoch{epoch:04d}.cae"
                with open(path, "wb") as fh:
                    fh.write(save_checkpoint(model))
    return log


# ---------------------------------------------------------------------------
# Checkpoint format: magic "CAEC", version, architecture, then every tensor
# in declaration order as little-endian float32 blobs (params also carry
# their Adam moments and step counts).
# ---------------------------------------------------------------------------

CHECKPOINT_MAGIC = b"CAEC"
CHECKPOINT_VERSION = 1
_BACKBONE_TAGS = {"vgg16": 0, "alexnet": 1, "custom": 2}
_TAG_BACKBONES = {v: k for k, v in _BACKBONE_TAGS.items()}
_LN_MODES = {"per_sample": 0, "frozen_stats": 1}
_MODE_LNS = {v: k for k, v in _LN_MODES.items()}


def _tensor_array(kind, name, holder):
    if kind == "param":
        return holder.value
    return holder.running_mean if name.endswith("running_mean") else holder.running_var


def save_checkpoint(model: ConvAutoencoder) -> bytes:
    spec = model.spec
    out = io.BytesIO()
    out.write(struct.pack("<4sH", CHECKPOINT_MAGIC, CHECKPOINT_VERSION))
    out.write(struct.pack("<B", _BACKBONE_TAGS[spec.backbone]))
    out.write(struct.pack("<3I", *spec.input_dims))
    out.write(struct.pack("<3I", spec.d1, spec.d2, spec.d3))
    for (kh, kw), (sh, sw) in spec.blocks:
        out.write(struct.pack("<4I", kh, kw, sh, sw))
    out.write(struct.pack("<q", model.rng_seed))

    ln = model.layernorm
    has_stats = ln.frozen_mean is not None and ln.frozen_var is not None
    out.write(
        struct.pack(
            "<BdBdd",
            _LN_MODES[ln.mode],
            ln.epsilon,
            1 if has_stats else 0,
            ln.frozen_mean if has_stats else 0.0,
            ln.frozen_var if has_stats else 0.0,
        )
    )

    records = model._tensors()
    out.write(struct.pack("<I", len(records)))
    for kind, name, holder in records:
        arr = _tensor_array(kind, name, holder)
        out.write(struct.pack("<BB", 0 if kind == "param" else 1, arr.ndim))
        out.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.write(arr.astype("<f4", copy=False).tobytes())
        if kind == "param":
            out.write(holder.m.astype("<f4", copy=False).tobytes())
            out.write(holder.v.astype("<f4", copy=False).tobytes())
            out.write(struct.pack("<Q", holder.step_count))
    return out.getvalue()


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(
                f"truncated checkpoint: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def floats(self, count: int) -> np.ndarray:
        raw = self.take(4 * count)
        return np.frombuffer(raw, dtype="<f4").copy()


def load_checkpoint(data: bytes) -> ConvAutoencoder:
    """Rebuild a model bit-exactly from ``save_checkpoint`` output."""
    r = _Reader(data)
    magic, version = r.unpack("<4sH")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")

    (backbone_tag,) = r.unpack("<B")
    if backbone_tag not in _TAG_BACKBONES:
        raise FormatError(f"unknown backbone tag {backbone_tag}")
    input_dims = r.unpack("<3I")
    d1, d2, d3 = r.unpack("<3I")
    blocks = []
    for _ in range(3):
        kh, kw, sh, sw = r.unpack("<4I")
        blocks.append(((kh, kw), (sh, sw)))
    (seed,) = r.unpack("<q")
    spec = ArchSpec(
        _TAG_BACKBONES[backbone_tag], tuple(input_dims),
        d1=d1, d2=d2, d3=d3, blocks=tuple(blocks),
    )

    mode_tag, eps, has_stats, fmean, fvar = r.unpack("<BdBdd")
    if mode_tag not in _MODE_LNS:
        raise FormatError(f"unknown layernorm mode tag {mode_tag}")
    ln = LayerNormConfig(
        epsilon=eps,
        mode=_MODE_LNS[mode_tag],
        frozen_mean=fmean if has_stats else None,
        frozen_var=fvar if has_stats else None,
    )

    model = ConvAutoencoder.build(spec, seed=seed, layernorm_cfg=ln)
    records = model._tensors()
    (count,) = r.unpack("<I")
    if count != len(records):
        raise FormatError(
            f"checkpoint lists {count} tensors, architecture expects {len(records)}"
        )
    for kind, name, holder in records:
        tag, ndim = r.unpack("<BB")
        expected_tag = 0 if kind == "param" else 1
        if tag != expected_tag:
            raise FormatError(f"tensor {name}: expected kind {kind}")
        shape = r.unpack(f"<{ndim}I")
        arr = _tensor_array(kind, name, holder)
        if shape != arr.shape:
            raise FormatError(
                f"tensor {name}: shape {shape} does not match architecture {arr.shape}"
            )
        size = int(np.prod(shape))
        value = r.floats(size).reshape(shape)
        if kind == "param":
            holder.value[...] = value
            holder.m[...] = r.floats(size).reshape(shape)
            holder.v[...] = r.floats(size).reshape(shape)
            (holder.step_count,) = r.unpack("<Q")
        elif name.endswith("running_mean"):
            holder.running_mean[...] = value
        else:
            holder.running_var[...] = value
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after checkpoint payload")
    return model
