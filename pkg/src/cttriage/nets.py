"""Network architectures and the self-describing weights container.

Five kinds share one declarative :class:`NetworkSpec`:

* ``unet2d`` / ``lung_unet2d`` - slice-wise U-Net (plain or residual blocks).
* ``unet3d`` - volumetric U-Net run over fixed-size sub-patches whose
  predictions are stitched without overlap.
* ``resnet_cls`` - per-slice residual backbone, slice-axis pyramid
  max-pooling, two fully connected layers, sigmoid.
* ``multitask`` - U-Net segmentation trunk plus a classification head fed
  from a configurable attachment point: the encoder bottleneck (``latent``)
  or the decoder feature maps at upper level l (``spatial:l``, where l=1 is
  the full-resolution map and level l is downsampled in-plane by 2^(l-1)).

Weights files are zip containers of named float arrays with a JSON manifest
holding the format version and each model's spec, so a file is loadable
without outside knowledge.
"""

from __future__ import annotations

import json
import math
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .errors import EmptyInput, InvalidSpec, KeyMismatch, UnreadableFile, VersionMismatch

WEIGHTS_FORMAT_VERSION = 1
MANIFEST_KEY = "__manifest__"

KINDS = ("unet2d", "unet3d", "lung_unet2d", "resnet_cls", "multitask")


@dataclass(frozen=True)
class NetworkSpec:
    kind: str = "multitask"
    levels: int = 7
    base_channels: int = 16
    channel_cap: int = 512
    block: str = "residual"
    attach: str = "spatial:1"  # multitask only: "latent" or "spatial:<l>"
    pyramid_levels: tuple[int, ...] = (1, 2, 4)
    fc_hidden: int = 128
    in_channels: int = 1
    patch_size: int = 160  # unet3d only

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown kind {self.kind!r}")
        if self.levels < 2:
            raise InvalidSpec("need at least 2 levels")
        if self.base_channels < 1 or self.fc_hidden < 1 or self.in_channels < 1:
            raise InvalidSpec("channel/width fields must be >= 1")
        if self.block not in ("plain", "residual"):
            raise InvalidSpec(f"unknown block {self.block!r}")
        if not self.pyramid_levels or any(k < 1 for k in self.pyramid_levels):
            raise InvalidSpec(f"bad pyramid levels {self.pyramid_levels}")
        if self.kind == "multitask":
            self.attach_level  # parse/validate
        if self.kind == "unet3d" and self.patch_size % (1 << (self.levels - 1)) != 0:
            raise InvalidSpec(
                f"patch_size {self.patch_size} not divisible by 2^{self.levels - 1}"
            )
        object.__setattr__(self, "pyramid_levels", tuple(self.pyramid_levels))

    @property
    def attach_level(self) -> int:
        """Attachment level for the classification head; ``levels`` for latent."""
        if self.attach == "latent":
            return self.levels
        if self.attach.startswith("spatial:"):
            try:
                l = int(self.attach.split(":", 1)[1])
            except ValueError:
                raise InvalidSpec(f"bad attach {self.attach!r}") from None
            if not 1 <= l <= self.levels:
                raise InvalidSpec(f"spatial level {l} outside 1..{self.levels}")
            return l
        raise InvalidSpec(f"bad attach {self.attach!r}")

    def channels(self, level: int) -> int:
        return min(self.base_channels << (level - 1), self.channel_cap)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "levels": self.levels,
            "base_channels": self.base_channels,
            "channel_cap": self.channel_cap,
            "block": self.block,
            "attach": self.attach,
            "pyramid_levels": list(self.pyramid_levels),
            "fc_hidden": self.fc_hidden,
            "in_channels": self.in_channels,
            "patch_size": self.patch_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        d = dict(d)
        if "pyramid_levels" in d:
            d["pyramid_levels"] = tuple(d["pyramid_levels"])
        return cls(**d)


def _norm(channels: int, dim: int) -> nn.Module:
    return nn.GroupNorm(math.gcd(8, channels), channels)


def _conv(in_ch: int, out_ch: int, dim: int, kernel: int = 3, stride: int = 1) -> nn.Module:
    cls = nn.Conv2d if dim == 2 else nn.Conv3d
    return cls(in_ch, out_ch, kernel, stride=stride, padding=kernel // 2)


class ConvBlock(nn.Module):
    """Two 3x3 convolutions with normalization and a smooth nonlinearity;
    the residual variant adds an identity shortcut (1x1 projection when the
    channel count or resolution changes). ``stride=2`` on the first
    convolution downsamples ResNet-style, keeping the whole graph smooth
    (an analytic/finite-difference gradient comparison stays meaningful)."""

    def __init__(self, in_ch: int, out_ch: int, dim: int, residual: bool,
                 stride: int = 1):
        super().__init__()
        self.conv1 = _conv(in_ch, out_ch, dim, stride=stride)
        self.norm1 = _norm(out_ch, dim)
        self.conv2 = _conv(out_ch, out_ch, dim)
        self.norm2 = _norm(out_ch, dim)
        self.act = nn.SiLU()
        self.residual = residual
        if residual and (in_ch != out_ch or stride != 1):
            self.proj = _conv(in_ch, out_ch, dim, kernel=1, stride=stride)
        else:
            self.proj = None

    def forward(self, x):
        y = self.act(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        if self.residual:
            y = y + (self.proj(x) if self.proj is not None else x)
        return self.act(y)


def pad_to_multiple(x: torch.Tensor, multiple: int) -> tuple[torch.Tensor, tuple[int, ...]]:
    """Reflect-pad the trailing spatial dims up to the next multiple
    (replicate when the dim is too small to reflect). Returns (padded, pads)."""
    spatial = x.shape[2:]
    pads = [(-s) % multiple for s in spatial]
    if not any(pads):
        return x, tuple(pads)
    # F.pad wants (last-dim lo, hi, ..., first-dim lo, hi)
    flat = []
    for p in reversed(pads):
        flat.extend([0, p])
    mode = "reflect" if all(p < s for p, s in zip(pads, spatial)) else "replicate"
    return F.pad(x, flat, mode=mode), tuple(pads)


def unpad(x: torch.Tensor, pads: tuple[int, ...]) -> torch.Tensor:
    slices = [slice(None), slice(None)]
    for p, s in zip(pads, x.shape[2:]):
        slices.append(slice(0, s - p))
    return x[tuple(slices)]


class UNet(nn.Module):
    """Encoder-decoder with skip connections; 2D (slice-wise) or 3D."""

    def __init__(self, spec: NetworkSpec, dim: int):
        super().__init__()
        self.spec = spec
        self.dim = dim
        residual = spec.block == "residual"
        L = spec.levels
        self.enc = nn.ModuleList()
        in_ch = spec.in_channels
        for l in range(1, L + 1):
            # levels below the first downsample by stride 2 inside the block
            self.enc.append(ConvBlock(in_ch, spec.channels(l), dim, residual,
                                      stride=1 if l == 1 else 2))
            in_ch = spec.channels(l)
        self.up = nn.ModuleList()
        self.dec = nn.ModuleList()
        up_cls = nn.ConvTranspose2d if dim == 2 else nn.ConvTranspose3d
        for l in range(L - 1, 0, -1):
            self.up.append(up_cls(spec.channels(l + 1), spec.channels(l), 2, stride=2))
            self.dec.append(ConvBlock(2 * spec.channels(l), spec.channels(l), dim, residual))
        self.head = _conv(spec.channels(1), 1, dim, kernel=1)

    def forward_features(self, x: torch.Tensor):
        """Returns (seg logits, {level: feature map}); level ``levels`` is the
        encoder bottleneck, level 1 the full-resolution decoder output."""
        L = self.spec.levels
        skips = []
        h = x
        for l in range(L):
            h = self.enc[l](h)
            if l < L - 1:
                skips.append(h)
        feats = {L: h}
        for i, l in enumerate(range(L - 1, 0, -1)):
            h = self.up[i](h)
            h = torch.cat([h, skips[l - 1]], dim=1)
            h = self.dec[i](h)
            feats[l] = h
        return self.head(h), feats

    def forward(self, x):
        return self.forward_features(x)[0]


def pyramid_pool(features, levels=(1, 2, 4)):
    """Max-pool per-slice feature vectors over a pyramid of slice-axis bins.

    ``features`` is (S, C) or (S, C, H, W); spatial dims are reduced by a
    global max first. For level k, bin b covers slices
    [ceil(b*S/k), ceil((b+1)*S/k)); a bin left empty by that rule (S < k)
    falls back to the last slice. Output length is C * sum(levels),
    independent of S for every S >= 1.
    """
    was_numpy = isinstance(features, np.ndarray)
    t = torch.as_tensor(features) if was_numpy else features
    if t.ndim == 4:
        t = t.amax(dim=(2, 3))
    elif t.ndim != 2:
        raise EmptyInput(f"expected (S, C) or (S, C, H, W), got shape {tuple(t.shape)}")
    S = t.shape[0]
    if S == 0:
        raise EmptyInput("pyramid pooling needs at least one slice")
    parts = []
    for k in levels:
        for b in range(k):
            start = -(-b * S // k)  # ceil
            end = -(-(b + 1) * S // k)
            start = min(start, S - 1)
            end = max(end, start + 1)
            parts.append(t[start:end].amax(dim=0))
    out = torch.cat(parts)
    return out.numpy() if was_numpy else out


class ClsHead(nn.Module):
    """Pyramid pooling over slices followed by two fully connected layers."""

    def __init__(self, in_channels: int, pyramid_levels, fc_hidden: int):
        super().__init__()
        self.pyramid_levels = tuple(pyramid_levels)
        in_dim = in_channels * sum(self.pyramid_levels)
        self.fc1 = nn.Linear(in_dim, fc_hidden)
        self.fc2 = nn.Linear(fc_hidden, 1)
        self.act = nn.SiLU()

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        vec = pyramid_pool(feats, self.pyramid_levels)
        return self.fc2(self.act(self.fc1(vec))).squeeze(-1)


class Multitask(nn.Module):
    """Slice-wise U-Net with a classification head sharing its features."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        self.unet = UNet(spec, dim=2)
        self.cls_head = ClsHead(spec.channels(spec.attach_level),
                                spec.pyramid_levels, spec.fc_hidden)

    def shared_features(self, x: torch.Tensor) -> torch.Tensor:
        """The attach-point feature map, (S, C, H/2^(l-1), W/2^(l-1))."""
        _, feats = self.unet.forward_features(x)
        return feats[self.spec.attach_level]

    def forward(self, x: torch.Tensor, slice_mask=None):
        """``x`` is (S, 1, H, W) with H, W already divisible; returns
        (seg logits (S, 1, H, W), study classification logit).

        ``slice_mask`` is a boolean per-slice vector; excluded slices do not
        reach the classification head (used to ignore padded slices)."""
        seg, feats = self.unet.forward_features(x)
        f = feats[self.spec.attach_level]
        if slice_mask is not None:
            f = f[torch.as_tensor(slice_mask, dtype=torch.bool)]
        return seg, self.cls_head(f)


class ResNetCls(nn.Module):
    """Per-slice residual backbone, then the same pyramid + FC head."""

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec
        blocks = [ConvBlock(spec.in_channels, spec.channels(1), 2, residual=True)]
        for l in range(2, spec.levels + 1):
            blocks.append(ConvBlock(spec.channels(l - 1), spec.channels(l), 2,
                                    residual=True, stride=2))
        self.backbone = nn.Sequential(*blocks)
        self.cls_head = ClsHead(spec.channels(spec.levels),
                                spec.pyramid_levels, spec.fc_hidden)

    def forward(self, x: torch.Tensor, slice_mask=None) -> torch.Tensor:
        f = self.backbone(x)
        if slice_mask is not None:
            f = f[torch.as_tensor(slice_mask, dtype=torch.bool)]
        return self.cls_head(f)


def _build_module(spec: NetworkSpec) -> nn.Module:
    if spec.kind in ("unet2d", "lung_unet2d"):
        return UNet(spec, dim=2)
    if spec.kind == "unet3d":
        return UNet(spec, dim=3)
    if spec.kind == "multitask":
        return Multitask(spec)
    if spec.kind == "resnet_cls":
        return ResNetCls(spec)
    raise InvalidSpec(f"unknown kind {spec.kind!r}")


class Model:
    """A built network plus its spec, with numpy-in/numpy-out inference."""

    def __init__(self, spec: NetworkSpec, module: nn.Module):
        self.spec = spec
        self.module = module

    @property
    def stride(self) -> int:
        return 1 << (self.spec.levels - 1)

    def _prep(self, volume: np.ndarray) -> torch.Tensor:
        x = torch.from_numpy(np.ascontiguousarray(volume, dtype=np.float32))
        return x.unsqueeze(1)  # (S, 1, H, W)

    @torch.no_grad()
    def predict_volume(self, volume: np.ndarray, slice_chunk: int = 64) -> np.ndarray:
        """Per-voxel probabilities with the same shape as ``volume``."""
        self.module.eval()
        if self.spec.kind == "unet3d":
            return self._predict_patched(volume)
        x, pads = pad_to_multiple(self._prep(volume), self.stride)
        outs = [torch.sigmoid(self.module(x[i : i + slice_chunk]))
                for i in range(0, x.shape[0], slice_chunk)]
        probs = unpad(torch.cat(outs), pads)
        return probs.squeeze(1).numpy().astype(np.float32)

    @torch.no_grad()
    def predict_multitask(self, volume: np.ndarray) -> tuple[np.ndarray, float]:
        """(segmentation probabilities, study COVID probability)."""
        self.module.eval()
        x, pads = pad_to_multiple(self._prep(volume), self.stride)
        seg, cls = self.module(x)
        seg = unpad(torch.sigmoid(seg), pads).squeeze(1).numpy().astype(np.float32)
        return seg, float(torch.sigmoid(cls))

    @torch.no_grad()
    def predict_proba(self, volume: np.ndarray) -> float:
        self.module.eval()
        x, pads = pad_to_multiple(self._prep(volume), self.stride)
        return float(torch.sigmoid(self.module(x)))

    def _predict_patched(self, volume: np.ndarray) -> np.ndarray:
        """Tile into patch-sized sub-volumes, pad edge patches up to the
        network stride, and stitch predictions without overlap."""
        p = self.spec.patch_size
        out = np.empty(volume.shape, dtype=np.float32)
        nz, ny, nx = volume.shape
        for z0 in range(0, nz, p):
            for y0 in range(0, ny, p):
                for x0 in range(0, nx, p):
                    sub = volume[z0 : z0 + p, y0 : y0 + p, x0 : x0 + p]
                    t = torch.from_numpy(np.ascontiguousarray(sub, dtype=np.float32))
                    t = t[None, None]  # (1, 1, z, y, x)
                    t, pads = pad_to_multiple(t, self.stride)
                    probs = unpad(torch.sigmoid(self.module(t)), pads)
                    out[z0 : z0 + p, y0 : y0 + p, x0 : x0 + p] = probs[0, 0].numpy()
        return out

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {k: v.detach().cpu().numpy() for k, v in self.module.state_dict().items()}


def build(spec: NetworkSpec, seed: int | None = None) -> Model:
    """Instantiate a forward graph for the spec; seeded init when given."""
    if seed is not None:
        torch.manual_seed(seed)
    return Model(spec, _build_module(spec))


# --- weights container ---

def save_weights(path, models: dict[str, Model]) -> None:
    """Write one or more named models into a single self-describing file."""
    manifest = {"format_version": WEIGHTS_FORMAT_VERSION, "models": {}}
    arrays: dict[str, np.ndarray] = {}
    for name, model in models.items():
        state = model.state_arrays()
        manifest["models"][name] = {
            "spec": model.spec.to_dict(),
            "keys": sorted(state),
        }
        for key, arr in state.items():
            if not np.isfinite(arr).all():
                raise ValueError(f"{name}/{key}: non-finite parameter values")
            arrays[f"{name}/{key}"] = arr
    arrays[MANIFEST_KEY] = np.frombuffer(
        json.dumps(manifest).encode("utf-8"), dtype=np.uint8
    ).copy()
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def _read_container(path) -> tuple[dict, "np.lib.npyio.NpzFile"]:
    try:
        npz = np.load(path, allow_pickle=False)
    except (OSError, ValueError, zipfile.BadZipFile) as e:
        raise UnreadableFile(f"{path}: {e}") from e
    if MANIFEST_KEY not in npz:
        raise VersionMismatch(f"{path}: no manifest; not a weights container")
    try:
        manifest = json.loads(bytes(npz[MANIFEST_KEY]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise VersionMismatch(f"{path}: manifest unreadable: {e}") from e
    version = manifest.get("format_version")
    if version != WEIGHTS_FORMAT_VERSION:
        raise VersionMismatch(
            f"{path}: format version {version}, expected {WEIGHTS_FORMAT_VERSION}"
        )
    return manifest, npz


def load_weights(path) -> dict[str, Model]:
    """Rebuild every model in a weights file from its stored spec."""
    manifest, npz = _read_container(path)
    models = {}
    for name, entry in manifest["models"].items():
        spec = NetworkSpec.from_dict(entry["spec"])
        model = build(spec)
        _load_arrays(model, npz, name, entry["keys"], path)
        models[name] = model
    return models


def load_model(path, name: str) -> Model:
    models = load_weights(path)
    if name not in models:
        raise KeyMismatch(f"{path}: no model named {name!r}; has {sorted(models)}")
    return models[name]


def load_state(model: Model, path, name: str) -> None:
    """Load stored arrays into an existing model; the stored parameter names
    and shapes must match the model exactly."""
    manifest, npz = _read_container(path)
    entry = manifest["models"].get(name)
    if entry is None:
        raise KeyMismatch(f"{path}: no model named {name!r}")
    _load_arrays(model, npz, name, entry["keys"], path)


def _load_arrays(model: Model, npz, name: str, keys: list[str], path) -> None:
    expected = set(model.module.state_dict().keys())
    stored = set(keys)
    if stored != expected:
        missing = sorted(expected - stored)[:5]
        extra = sorted(stored - expected)[:5]
        raise KeyMismatch(f"{path}[{name}]: missing={missing} unexpected={extra}")
    state = {}
    for key in keys:
        arr = npz[f"{name}/{key}"]
        want = model.module.state_dict()[key].shape
        if tuple(arr.shape) != tuple(want):
            raise KeyMismatch(f"{path}[{name}]: {key} shape {arr.shape} != {tuple(want)}")
        state[key] = torch.from_numpy(np.array(arr))
    model.module.load_state_dict(state)
