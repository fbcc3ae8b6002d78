"""Channel-expanded encoder-decoder dehazer, input assembly and training."""

import enum
import json
import math
import struct
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import metrics
from .errors import (
    ConfigError,
    DataError,
    FormatError,
    ShapeError,
    TrainingError,
    VariantContextError,
)
from .segbackend import SegmenterKind, SegmenterSpec, segment
from .segcodec import encode, luma

OUTPUT_CHANNELS = 3

# (base_width, depth) per size tier; roughly 0.1M / 1M / 4M parameters
SIZE_TIERS = {
    "tiny": (8, 3),
    "small": (24, 3),
    "base": (24, 4),
}


@dataclass(frozen=True)
class ModelConfig:
    input_channels: int = 4
    base_width: int = 8
    depth: int = 3
    size_tier: str = "tiny"

    @classmethod
    def from_tier(cls, tier, input_channels=4):
        try:
            width, depth = SIZE_TIERS[tier]
        except KeyError:
            raise ConfigError(f"unknown size tier {tier!r}") from None
        return cls(input_channels, width, depth, tier)

    def validate(self):
        if self.input_channels not in (3, 4):
            raise ConfigError(f"input_channels must be 3 or 4, got {self.input_channels}")
        if self.base_width < 1 or self.depth < 1:
            raise ConfigError("base_width and depth must be positive")
        return self


def _double_conv(cin, cout):
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, padding=1),
        nn.ReLU(inplace=True),
        nn.Conv2d(cout, cout, 3, padding=1),
        nn.ReLU(inplace=True),
    )


class DehazeUNet(nn.Module):
    """U-shaped encoder-decoder with skip connections.

    All input channels (RGB plus the optional mask channel) enter the first
    encoder convolution together.  The network predicts a correction that is
    added to the RGB input; the head starts at zero so an untrained model is
    the identity on RGB.
    """

    def __init__(self, config):
        super().__init__()
        self.config = config.validate()
        widths = [config.base_width * 2**i for i in range(config.depth + 1)]
        self.encoders = nn.ModuleList()
        cin = config.input_channels
        for w in widths[:-1]:
            self.encoders.append(_double_conv(cin, w))
            cin = w
        self.bottleneck = _double_conv(cin, widths[-1])
        self.upsamplers = nn.ModuleList()
        self.decoders = nn.ModuleList()
        cin = widths[-1]
        for w in reversed(widths[:-1]):
            self.upsamplers.append(nn.ConvTranspose2d(cin, w, 2, stride=2))
            self.decoders.append(_double_conv(2 * w, w))
            cin = w
        self.head = nn.Conv2d(cin, OUTPUT_CHANNELS, 1)
        nn.init.zeros_(self.head.weight)
        nn.init.zeros_(self.head.bias)

    def forward(self, x):
        if x.shape[1] != self.config.input_channels:
            raise ShapeError(
                f"model expects {self.config.input_channels} channels, got {x.shape[1]}"
            )
        h, w = x.shape[-2:]
        m = 2**self.config.depth
        pad_h, pad_w = -h % m, -w % m
        if pad_h or pad_w:
            mode = "reflect" if pad_h < h and pad_w < w else "replicate"
            x = F.pad(x, (0, pad_w, 0, pad_h), mode=mode)
        skips = []
        z = x
        for enc in self.encoders:
            z = enc(z)
            skips.append(z)
            z = F.max_pool2d(z, 2)
        z = self.bottleneck(z)
        for up, dec in zip(self.upsamplers, self.decoders):
            z = dec(torch.cat([up(z), skips.pop()], dim=1))
        out = x[:, :OUTPUT_CHANNELS] + self.head(z)
        return out[..., :h, :w]


def build_model(config, seed=0):
    torch.manual_seed(seed)
    return DehazeUNet(config)


def count_parameters(model):
    return sum(p.numel() for p in model.parameters())


class MaskVariant(enum.Enum):
    HAZE_GRAY = "haze_gray"
    NOHAZE_GRAY = "nohaze_gray"
    HAZE_SEG = "haze_seg"
    NOHAZE_SEG = "nohaze_seg"
    DEHAZE_SEG = "dehaze_seg"

    @property
    def uses_segmenter(self):
        return self in (MaskVariant.HAZE_SEG, MaskVariant.NOHAZE_SEG, MaskVariant.DEHAZE_SEG)


@dataclass
class InputContext:
    """What input assembly may draw on besides the hazy image.

    ``masks`` short-circuits segmentation (e.g. masks loaded from disk);
    ``scene`` feeds the oracle segmenter; ``predehaze`` is the stage-one model
    for ``DEHAZE_SEG``.
    """

    clean: np.ndarray = None
    scene: object = None
    masks: object = None
    segmenter: SegmenterSpec = None
    predehaze: nn.Module = None
    frame_id: str = None


def _segment_channel(image, ctx):
    if ctx.masks is not None:
        masks = ctx.masks
    else:
        if ctx.segmenter is None:
            raise VariantContextError("segmentation variants need a segmenter or masks")
        if ctx.segmenter.kind is SegmenterKind.ORACLE and ctx.scene is None:
            raise VariantContextError("the oracle segmenter needs the scene")
        masks = segment(ctx.segmenter, image=image, scene=ctx.scene, frame_id=ctx.frame_id)
    if masks.shape is None:
        return np.zeros(image.shape[:2])
    return encode(masks).astype(np.float64) / 255.0


def assemble_input(hazy, variant, context=None):
    """Stack hazy RGB with the variant's fourth channel into an H x W x 4 array."""
    hazy = np.asarray(hazy, dtype=np.float64)
    if hazy.ndim != 3 or hazy.shape[2] != 3:
        raise ShapeError(f"hazy image must be H x W x 3, got {hazy.shape}")
    ctx = context or InputContext()
    variant = MaskVariant(variant)
    if variant is MaskVariant.HAZE_GRAY:
        extra = luma(hazy)
    elif variant is MaskVariant.NOHAZE_GRAY:
        if ctx.clean is None:
            raise VariantContextError("NOHAZE_GRAY needs the clean image")
        extra = luma(ctx.clean)
    elif variant is MaskVariant.HAZE_SEG:
        extra = _segment_channel(hazy, ctx)
    elif variant is MaskVariant.NOHAZE_SEG:
        if ctx.clean is None and ctx.masks is None:
            raise VariantContextError("NOHAZE_SEG needs the clean image")
        extra = _segment_channel(ctx.clean, ctx)
    else:
        if ctx.predehaze is None and ctx.masks is None:
            raise VariantContextError("DEHAZE_SEG needs a pre-dehaze model")
        stage1 = hazy
        if ctx.masks is None:
            stage1 = infer(ctx.predehaze, assemble_input(hazy, MaskVariant.HAZE_GRAY))
        extra = _segment_channel(stage1, ctx)
    if extra.shape != hazy.shape[:2]:
        raise ShapeError(f"fourth channel {extra.shape} does not match image {hazy.shape[:2]}")
    return np.concatenate([hazy, extra[:, :, None]], axis=2).astype(np.float32)


def _to_tensor(batch_hwc):
    arr = np.asarray(batch_hwc, dtype=np.float32)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2)))


def infer(model, inputs):
    """Run the model on an H x W x C array; returns H x W x 3 clipped to [0, 1]."""
    inputs = np.asarray(inputs)
    if inputs.ndim != 3:
        raise ShapeError(f"expected H x W x C input, got {inputs.shape}")
    if inputs.shape[2] != model.config.input_channels:
        raise ShapeError(
            f"model expects {model.config.input_channels} channels, got {inputs.shape[2]}"
        )
    model.eval()
    with torch.no_grad():
        out = model(_to_tensor(inputs))[0]
    return np.clip(out.numpy().transpose(1, 2, 0).astype(np.float64), 0.0, 1.0)


def two_stage_infer(hazy, predehaze_model, segmenter, final_model, scene=None):
    """Dehaze with the baseline model, segment that result, dehaze again with its mask."""
    stage1 = infer(predehaze_model, assemble_input(hazy, MaskVariant.HAZE_GRAY))
    ctx = InputContext(scene=scene, segmenter=segmenter)
    mask = _segment_channel(stage1, ctx)
    x = np.concatenate([np.asarray(hazy, dtype=np.float64), mask[:, :, None]], axis=2)
    return infer(final_model, x.astype(np.float32))


@dataclass
class TrainHyper:
    epochs: int = 60
    batch_size: int = 8
    lr: float = 1e-3
    patch_size: int = 64
    optimizer: str = "rmsprop"


@dataclass
class Sample:
    hazy: np.ndarray
    clean: np.ndarray
    context: InputContext = field(default_factory=InputContext)


@dataclass
class TrainRecord:
    seed: int
    variant: str
    config: dict
    hyper: dict
    train_loss: list = field(default_factory=list)
    val_psnr: list = field(default_factory=list)
    epoch_seconds: list = field(default_factory=list)
    final_psnr: float = float("nan")
    final_ssim: float = float("nan")

    def epochs_to_reach(self, loss):
        """First 1-based epoch whose training loss is at or below ``loss``."""
        for i, value in enumerate(self.train_loss):
            if value <= loss:
                return i + 1
        return None

    def comparable(self):
        """Everything except wall-clock timings."""
        d = asdict(self)
        d.pop("epoch_seconds")
        return d

    def write_jsonl(self, path):
        with open(path, "w") as fh:
            for i, (loss, vp, sec) in enumerate(
                zip(self.train_loss, self.val_psnr, self.epoch_seconds)
            ):
                row = {
                    "epoch": i + 1,
                    "train_loss": loss,
                    "val_psnr": vp,
                    "seconds": sec,
                    "seed": self.seed,
                    "variant": self.variant,
                }
                fh.write(json.dumps(row) + "\n")

    @staticmethod
    def read_jsonl(path):
        rows = [json.loads(ln) for ln in Path(path).read_text().splitlines() if ln.strip()]
        return rows


def _make_optimizer(name, params, lr):
    if name == "rmsprop":
        return torch.optim.RMSprop(params, lr=lr, momentum=0.0)
    if name == "adam":
        return torch.optim.Adam(params, lr=lr)
    raise ConfigError(f"unknown optimizer {name!r}")


def _crop_batch(x, y, patch, rng):
    h, w = x.shape[-2:]
    if patch >= h and patch >= w:
        return x, y
    ph, pw = min(patch, h), min(patch, w)
    top = int(rng.integers(0, h - ph + 1))
    left = int(rng.integers(0, w - pw + 1))
    return x[..., top : top + ph, left : left + pw], y[..., top : top + ph, left : left + pw]


def l1_loss(model, inputs, targets):
    return (model(inputs) - targets).abs().mean()


def evaluate(model, inputs, cleans):
    """Mean PSNR and SSIM of the model's outputs against clean targets."""
    psnrs, ssims = [], []
    for x, clean in zip(inputs, cleans):
        out = infer(model, x)
        psnrs.append(metrics.psnr(out, clean))
        ssims.append(metrics.ssim(out, clean))
    return float(np.mean(psnrs)), float(np.mean(ssims))


def train(train_set, variant, config, hyper=None, seed=0, val_set=None, log=None):
    """Fit a fresh model to ``train_set`` with L1 loss.

    Inputs are assembled once up front.  Batches follow a seeded permutation per
    epoch, so identical arguments give identical loss histories.
    """
    hyper = hyper or TrainHyper()
    variant = MaskVariant(variant)
    if not train_set:
        raise DataError("training set is empty")
    if config.input_channels == 3 and variant is not MaskVariant.HAZE_GRAY:
        raise ConfigError("a 3-channel model has no slot for a mask variant")

    def stack(samples):
        xs = [assemble_input(s.hazy, variant, s.context) for s in samples]
        if config.input_channels == 3:
            xs = [x[:, :, :3] for x in xs]
        return xs

    train_x = _to_tensor(np.stack(stack(train_set)))
    train_y = _to_tensor(np.stack([s.clean for s in train_set]))
    val_x = stack(val_set) if val_set else []
    val_y = [s.clean for s in val_set] if val_set else []

    model = build_model(config, seed)
    opt = _make_optimizer(hyper.optimizer, model.parameters(), hyper.lr)
    rng = np.random.default_rng(seed)
    record = TrainRecord(seed, variant.value, asdict(config), asdict(hyper))
    n = len(train_set)

    for epoch in range(hyper.epochs):
        start = time.perf_counter()
        model.train()
        order = rng.permutation(n)
        total = 0.0
        for i in range(0, n, hyper.batch_size):
            idx = torch.from_numpy(order[i : i + hyper.batch_size])
            xb, yb = _crop_batch(train_x[idx], train_y[idx], hyper.patch_size, rng)
            opt.zero_grad()
            loss = l1_loss(model, xb, yb)
            loss.backward()
            opt.step()
            total += loss.item() * len(idx)
        mean_loss = total / n
        if not math.isfinite(mean_loss):
            raise TrainingError(f"training diverged at epoch {epoch + 1}", epoch=epoch + 1)
        record.train_loss.append(mean_loss)
        if val_x:
            record.val_psnr.append(evaluate(model, val_x, val_y)[0])
        else:
            record.val_psnr.append(float("nan"))
        record.epoch_seconds.append(time.perf_counter() - start)
        if log:
            log(f"epoch {epoch + 1}/{hyper.epochs} loss {mean_loss:.5f} val_psnr {record.val_psnr[-1]:.3f}")

    if val_x:
        record.final_psnr, record.final_ssim = evaluate(model, val_x, val_y)
    return model, record


# checkpoint container -------------------------------------------------------
#
#   offset 0   8 bytes  magic b"SDHZCKPT"
#   offset 8   4 bytes  format version, uint32 LE
#   offset 12  4 bytes  header length N, uint32 LE
#   offset 16  N bytes  UTF-8 JSON header: config, seed, extra metadata and a
#                       tensor table [{name, shape, offset, count}]
#   then                concatenated float32 LE blobs; offsets are relative
#                       to the start of this payload

CHECKPOINT_MAGIC = b"SDHZCKPT"
CHECKPOINT_VERSION = 1
_CKPT_HEAD = struct.Struct("<8sII")


def save_checkpoint(path, model, seed, extra=None):
    tensors, blobs, offset = [], [], 0
    for name, value in model.state_dict().items():
        arr = value.detach().cpu().numpy().astype("<f4")
        tensors.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": arr.size})
        blobs.append(arr.tobytes())
        offset += arr.nbytes
    header = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "seed": seed,
        "extra": extra or {},
        "tensors": tensors,
    }
    head = json.dumps(header, sort_keys=True).encode()
    Path(path).write_bytes(
        _CKPT_HEAD.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, len(head)) + head + b"".join(blobs)
    )


def load_checkpoint(path):
    """Returns ``(model, header)``."""
    data = Path(path).read_bytes()
    if len(data) < _CKPT_HEAD.size:
        raise FormatError(f"{path}: truncated checkpoint")
    magic, version, n = _CKPT_HEAD.unpack_from(data)
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint")
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[_CKPT_HEAD.size : _CKPT_HEAD.size + n])
    payload = memoryview(data)[_CKPT_HEAD.size + n :]
    model = DehazeUNet(ModelConfig(**header["config"]))
    state = {}
    for t in header["tensors"]:
        if t["offset"] + 4 * t["count"] > len(payload):
            raise FormatError(f"{path}: truncated tensor {t['name']}")
        arr = np.frombuffer(payload, dtype="<f4", count=t["count"], offset=t["offset"])
        state[t["name"]] = torch.from_numpy(arr.reshape(t["shape"]).copy())
    model.load_state_dict(state)
    return model, header
