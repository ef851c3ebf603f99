"""Network definitions: SR generator, fused-conditional discriminator,
Siamese verifier, residual pore detector, and a fixed perceptual extractor.

Shape conventions follow torch: batches are (n, c, h, w), single-channel
fingerprint patches enter as (n, 1, h, w) in [0, 1]. The nominal training
patch is 40x30 low-resolution upsampled 2x to 80x60.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import torch
import torch.nn.functional as F
from torch import nn

MIN_INPUT_SIDE = 8


def _ceil_half(n: int) -> int:
    return (n + 1) // 2


# ---------------------------------------------------------------------------
# specs


@dataclass
class GeneratorSpec:
    residual_blocks: int = 7
    feature_maps: int = 64
    upsample_stages: int = 1  # each stage doubles resolution

    def __post_init__(self):
        if self.residual_blocks < 1 or self.feature_maps < 1:
            raise ValueError("residual_blocks and feature_maps must be >= 1")
        if self.upsample_stages not in (1, 2):
            raise ValueError("upsample_stages must be 1 or 2")

    @property
    def scale(self) -> int:
        return 2**self.upsample_stages


@dataclass
class VerifierSpec:
    base_width: int = 64  # tap widths are base, 2x, 4x
    embedding_dim: int = 128


@dataclass
class DiscriminatorSpec:
    base_width: int = 64  # pre-fusion tap widths are base, 2x, 4x
    dense_units: int = 1024
    input_hw: Tuple[int, int] = (80, 60)  # fixes the dense head's fan-in


@dataclass
class PoreDetectorSpec:
    residual_blocks: int = 8
    base_width: int = 16
    width_cap_factor: int = 8  # widths double every 2 blocks up to base*cap


@dataclass
class PerceptualExtractorSpec:
    seed: int = 2024
    # conv widths per stage of the 19-layer-style stack; taps are named
    # relu<stage>_<index> and a 2x pool follows each stage
    stage_widths: Tuple[Tuple[int, ...], ...] = (
        (64, 64),
        (128, 128),
        (256, 256, 256, 256),
        (512,),
    )
    default_layer: str = "relu2_2"


# ---------------------------------------------------------------------------
# generator


class _ResidualBlock(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv2d(channels, channels, 3, padding=1)
        self.bn1 = nn.BatchNorm2d(channels)
        self.act = nn.PReLU(channels)
        self.conv2 = nn.Conv2d(channels, channels, 3, padding=1)
        self.bn2 = nn.BatchNorm2d(channels)

    def forward(self, x):
        y = self.act(self.bn1(self.conv1(x)))
        y = self.bn2(self.conv2(y))
        return x + y


class SRGenerator(nn.Module):
    """Fully convolutional 2x (or 4x) super-resolution generator.

    Entry conv + parametric rectifier, a chain of identical residual blocks
    with batch normalization, a global skip, sub-pixel upsampling, and a
    sigmoid squashing the output into [0, 1].
    """

    def __init__(self, spec: GeneratorSpec = GeneratorSpec()):
        super().__init__()
        self.spec = spec
        f = spec.feature_maps
        self.entry = nn.Conv2d(1, f, 3, padding=1)
        self.entry_act = nn.PReLU(f)
        self.blocks = nn.Sequential(
            *[_ResidualBlock(f) for _ in range(spec.residual_blocks)]
        )
        self.mid = nn.Conv2d(f, f, 3, padding=1)
        self.mid_bn = nn.BatchNorm2d(f)
        ups = []
        for _ in range(spec.upsample_stages):
            ups += [nn.Conv2d(f, 4 * f, 3, padding=1), nn.PixelShuffle(2), nn.PReLU(f)]
        self.upsample = nn.Sequential(*ups)
        self.exit = nn.Conv2d(f, 1, 3, padding=1)

    def forward(self, lr: torch.Tensor) -> torch.Tensor:
        if lr.ndim != 4 or lr.shape[1] != 1:
            raise ValueError(f"expected (n, 1, h, w) input, got {tuple(lr.shape)}")
        if lr.shape[2] < MIN_INPUT_SIDE or lr.shape[3] < MIN_INPUT_SIDE:
            raise ValueError(
                f"input {tuple(lr.shape[2:])} below minimum "
                f"{MIN_INPUT_SIDE}x{MIN_INPUT_SIDE}"
            )
        head = self.entry_act(self.entry(lr))
        body = self.mid_bn(self.mid(self.blocks(head)))
        return torch.sigmoid(self.exit(self.upsample(head + body)))


# ---------------------------------------------------------------------------
# verifier


class SiameseVerifier(nn.Module):
    """Shared-weight identity encoder exposing its first three feature maps.

    Three stride-2 3x3 convolutions produce taps shaped (base)x(h/2)x(w/2),
    (2 base)x(h/4)x(w/4), (4 base)x(h/8)x(w/8); on the nominal 80x60 patch
    with base width 64 that is 64x40x30, 128x20x15, 256x10x8. A fourth conv
    plus global average pooling feeds the contrastive embedding.
    """

    def __init__(self, spec: VerifierSpec = VerifierSpec()):
        super().__init__()
        self.spec = spec
        b = spec.base_width
        self.conv1 = nn.Conv2d(1, b, 3, stride=2, padding=1)
        self.conv2 = nn.Conv2d(b, 2 * b, 3, stride=2, padding=1)
        self.conv3 = nn.Conv2d(2 * b, 4 * b, 3, stride=2, padding=1)
        self.conv4 = nn.Conv2d(4 * b, 4 * b, 3, stride=2, padding=1)
        self.act = nn.LeakyReLU(0.2)
        self.project = nn.Linear(4 * b, spec.embedding_dim)

    def forward(self, x: torch.Tensor) -> Tuple[torch.Tensor, List[torch.Tensor]]:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected (n, 1, h, w) input, got {tuple(x.shape)}")
        if x.shape[2] < MIN_INPUT_SIDE or x.shape[3] < MIN_INPUT_SIDE:
            raise ValueError(
                f"input {tuple(x.shape[2:])} too small for three stride-2 stages"
            )
        t1 = self.act(self.conv1(x))
        t2 = self.act(self.conv2(t1))
        t3 = self.act(self.conv3(t2))
        head = self.act(self.conv4(t3))
        pooled = F.adaptive_avg_pool2d(head, 1).flatten(1)
        return self.project(pooled), [t1, t2, t3]


# ---------------------------------------------------------------------------
# discriminator


class QualityDiscriminator(nn.Module):
    """Conditional real/generated classifier with verifier-feature fusion.

    The low-resolution conditioning patch is nearest-neighbor upsampled and
    channel-concatenated with the candidate. Verifier taps concatenate
    depth-wise wherever spatial sizes agree, lifting channel counts at the
    fusion points from (base, 2 base, 4 base) to (2 base, 4 base, 8 base);
    with base width 64 that is 128, 256 and 512.
    """

    def __init__(self, spec: DiscriminatorSpec = DiscriminatorSpec()):
        super().__init__()
        self.spec = spec
        b = spec.base_width
        self.act = nn.LeakyReLU(0.2)
        self.conv1 = nn.Conv2d(2, b, 3, stride=1, padding=1)
        self.conv2 = nn.Conv2d(b, b, 3, stride=2, padding=1)  # -> h/2, fuse tap1
        self.conv3 = nn.Conv2d(2 * b, 2 * b, 3, stride=2, padding=1)  # -> h/4, fuse tap2
        self.conv4 = nn.Conv2d(4 * b, 4 * b, 3, stride=2, padding=1)  # -> h/8, fuse tap3
        self.conv5 = nn.Conv2d(8 * b, 8 * b, 3, stride=1, padding=1)
        self.conv6 = nn.Conv2d(8 * b, 8 * b, 3, stride=2, padding=1)  # -> h/16
        self.conv7 = nn.Conv2d(8 * b, 8 * b, 3, stride=1, padding=1)
        h, w = spec.input_hw
        flat = 8 * b * math.ceil(h / 16) * math.ceil(w / 16)
        self.dense1 = nn.Linear(flat, spec.dense_units)
        self.dense2 = nn.Linear(spec.dense_units, 1)

    @staticmethod
    def _check_tap(tap: torch.Tensor, want_c: int, want_hw: Tuple[int, int], k: int):
        if tuple(tap.shape[1:]) != (want_c, *want_hw):
            raise ValueError(
                f"fusion tap {k}: expected (n, {want_c}, {want_hw[0]}, "
                f"{want_hw[1]}), got {tuple(tap.shape)}"
            )

    def forward(
        self,
        lr: torch.Tensor,
        candidate: torch.Tensor,
        verifier_taps: Sequence[torch.Tensor],
    ) -> torch.Tensor:
        if candidate.shape[2:] != (2 * lr.shape[2], 2 * lr.shape[3]):
            raise ValueError(
                f"candidate {tuple(candidate.shape[2:])} is not 2x the "
                f"conditioning patch {tuple(lr.shape[2:])}"
            )
        if len(verifier_taps) != 3:
            raise ValueError(f"need 3 verifier taps, got {len(verifier_taps)}")
        b = self.spec.base_width
        h, w = candidate.shape[2], candidate.shape[3]
        cond = F.interpolate(lr, size=(h, w), mode="nearest")
        x = self.act(self.conv1(torch.cat([cond, candidate], dim=1)))

        x = self.act(self.conv2(x))
        hw = (_ceil_half(h), _ceil_half(w))
        self._check_tap(verifier_taps[0], b, hw, 1)
        x = torch.cat([x, verifier_taps[0]], dim=1)

        x = self.act(self.conv3(x))
        hw = (_ceil_half(hw[0]), _ceil_half(hw[1]))
        self._check_tap(verifier_taps[1], 2 * b, hw, 2)
        x = torch.cat([x, verifier_taps[1]], dim=1)

        x = self.act(self.conv4(x))
        hw = (_ceil_half(hw[0]), _ceil_half(hw[1]))
        self._check_tap(verifier_taps[2], 4 * b, hw, 3)
        x = torch.cat([x, verifier_taps[2]], dim=1)

        x = self.act(self.conv5(x))
        x = self.act(self.conv6(x))
        x = self.act(self.conv7(x))
        x = self.act(self.dense1(x.flatten(1)))
        return torch.sigmoid(self.dense2(x)).squeeze(1)


# ---------------------------------------------------------------------------
# pore detector


class _PoreResidualBlock(nn.Module):
    """3x3 conv, rectifier, 1x1 conv on the residual branch; identity
    shortcut, zero-padded on the channel axis where the width grows."""

    def __init__(self, in_ch: int, out_ch: int):
        super().__init__()
        if out_ch < in_ch:
            raise ValueError("widths never shrink")
        self.conv3 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv1 = nn.Conv2d(out_ch, out_ch, 1)
        self.pad = out_ch - in_ch

    def forward(self, x):
        y = self.conv1(F.relu(self.conv3(x)))
        shortcut = F.pad(x, (0, 0, 0, 0, 0, self.pad)) if self.pad else x
        return shortcut + y


class PoreDetector(nn.Module):
    """Residual pore-intensity regressor; 18 weight layers, no normalization.

    A stem 3x3 conv feeds 8 residual blocks whose widths double every second
    block (16, 16, 32, 32, 64, 64, 128, 128 at the default base width); a
    final 1x1 conv and sigmoid emit a same-size map in [0, 1]. The absence of
    batch normalization keeps single-sample training and frozen evaluation
    exactly reproducible.
    """

    def __init__(self, spec: PoreDetectorSpec = PoreDetectorSpec()):
        super().__init__()
        self.spec = spec
        widths = [
            spec.base_width * min(2 ** (i // 2), spec.width_cap_factor)
            for i in range(spec.residual_blocks)
        ]
        self.stem = nn.Conv2d(1, spec.base_width, 3, padding=1)
        blocks = []
        in_ch = spec.base_width
        for w in widths:
            blocks.append(_PoreResidualBlock(in_ch, w))
            in_ch = w
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Conv2d(in_ch, 1, 1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected (n, 1, h, w) input, got {tuple(x.shape)}")
        y = F.relu(self.stem(x))
        return torch.sigmoid(self.head(self.blocks(y)))


# ---------------------------------------------------------------------------
# perceptual extractor


class PerceptualExtractor(nn.Module):
    """Frozen deep conv stack exposing named rectified activations.

    Weights are drawn once from a seeded generator (scaled He-style normal)
    and never trained, so features are a fixed deterministic function of the
    input. Single-channel input is replicated to three channels; each stage
    ends with a 2x max pool, so relu2_2 on an 80x60 patch is 128x40x30.
    """

    def __init__(self, spec: PerceptualExtractorSpec = PerceptualExtractorSpec()):
        super().__init__()
        self.spec = spec
        gen = torch.Generator().manual_seed(spec.seed)
        self.convs = nn.ModuleList()
        self._plan: List[Tuple[str, int]] = []  # (layer name, conv index)
        in_ch = 3
        idx = 0
        for stage, widths in enumerate(spec.stage_widths, start=1):
            for j, out_ch in enumerate(widths, start=1):
                conv = nn.Conv2d(in_ch, out_ch, 3, padding=1)
                fan_in = in_ch * 9
                with torch.no_grad():
                    conv.weight.copy_(
                        torch.randn(conv.weight.shape, generator=gen)
                        * math.sqrt(2.0 / fan_in)
                    )
                    conv.bias.zero_()
                self.convs.append(conv)
                self._plan.append((f"relu{stage}_{j}", idx))
                idx += 1
                in_ch = out_ch
        for p in self.parameters():
            p.requires_grad_(False)
        if spec.default_layer not in self.layer_names():
            raise ValueError(f"default layer {spec.default_layer!r} not in plan")

    def layer_names(self) -> List[str]:
        return [name for name, _ in self._plan]

    def forward(self, x: torch.Tensor, layer: str = None) -> torch.Tensor:
        layer = layer or self.spec.default_layer
        names = self.layer_names()
        if layer not in names:
            raise ValueError(f"unknown layer {layer!r}; choose from {names}")
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected (n, 1, h, w) input, got {tuple(x.shape)}")
        y = x.repeat(1, 3, 1, 1)
        stage_ends = {sum(len(w) for w in self.spec.stage_widths[: s + 1]) - 1
                      for s in range(len(self.spec.stage_widths))}
        for name, idx in self._plan:
            y = F.relu(self.convs[idx](y))
            if name == layer:
                return y
            if idx in stage_ends:
                y = F.max_pool2d(y, 2)
        raise AssertionError("unreachable")


def perceptual_features(
    extractor: PerceptualExtractor, img: torch.Tensor, layer: str = None
) -> torch.Tensor:
    """Named-layer activations; gradients flow to `img` through frozen weights."""
    return extractor(img, layer)


# ---------------------------------------------------------------------------
# introspection


def describe(module: nn.Module) -> Dict:
    """Architecture summary with stable parameter/buffer shape listing."""
    params = [(name, tuple(p.shape)) for name, p in module.named_parameters()]
    buffers = [(name, tuple(b.shape)) for name, b in module.named_buffers()]
    return {
        "class": type(module).__name__,
        "parameters": int(sum(math.prod(s) for _, s in params)),
        "trainable_parameters": int(
            sum(p.numel() for p in module.parameters() if p.requires_grad)
        ),
        "weight_tensors": sorted(params),
        "buffer_tensors": sorted(buffers),
    }


def architecture_hash(module: nn.Module) -> str:
    """Hex digest over the sorted parameter/buffer shape listing; equal for
    identically configured models regardless of weight values."""
    d = describe(module)
    payload = json.dumps(
        {
            "class": d["class"],
            "weights": d["weight_tensors"],
            "buffers": d["buffer_tensors"],
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
