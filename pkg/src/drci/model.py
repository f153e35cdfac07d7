"""Siamese tracking network with task-specific necks, identity encoders,
depthwise-correlation coupling, anchor-free heads and a projection head.

Data flow for one task (``cls`` or ``reg``)::

    f_task = E2_z,task(psi_z,task(phi(Z)))  xcorr  E2_x,task(psi_x,task(phi(X)))

``phi`` is the shared backbone. The classification tower feeds both the
foreground/background logits and the quality logit; the regression tower
feeds the four side distances. The projection head maps ``phi(Z)`` to a unit
vector used only by the contrastive loss.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import tensor as T
from .tensor import Tensor

TASKS = ("cls", "reg")
BRANCHES = ("z", "x")


@dataclass(frozen=True)
class NetConfig:
    template_size: int = 64
    search_size: int = 128
    total_stride: int = 8
    channels: tuple[int, ...] = (16, 32, 32, 48)
    # wider than the backbone so that no non-negative pooled feature can
    # switch off every projection unit at once
    embed_dim: int = 128
    in_channels: int = 3
    # pad=False drops all zero padding, used to check translation invariance
    pad: bool = True

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        if self.search_size <= self.template_size:
            raise ValueError("search_size must exceed template_size")
        n_down = int(round(math.log2(self.total_stride))) if self.total_stride > 0 else -1
        if n_down < 0 or 2**n_down != self.total_stride or n_down > len(self.channels):
            raise ValueError(
                f"total_stride={self.total_stride} must be a power of two reachable "
                f"with {len(self.channels)} stages"
            )
        if self.template_size % self.total_stride or self.search_size % self.total_stride:
            raise ValueError("template_size and search_size must be divisible by total_stride")
        if self.embed_dim < 1 or any(c < 1 for c in self.channels):
            raise ValueError("channel widths and embed_dim must be positive")

    @property
    def stage_strides(self) -> tuple[int, ...]:
        n_down = int(round(math.log2(self.total_stride)))
        return tuple(2 if k < n_down else 1 for k in range(len(self.channels)))

    @property
    def padding(self) -> int:
        return 1 if self.pad else 0

    @property
    def feat_channels(self) -> int:
        return self.channels[-1]

    def backbone_size(self, size: int) -> int:
        for s in self.stage_strides:
            size = (size + 2 * self.padding - 3) // s + 1
        return size

    def template_feat_size(self) -> int:
        return self.backbone_size(self.template_size)

    def search_feat_size(self) -> int:
        return self.backbone_size(self.search_size)

    def score_size(self) -> int:
        # neck and E2 shrink both branches equally, so only the tower conv matters
        size = self.search_feat_size() - self.template_feat_size() + 1
        return size if self.pad else size - 2

    def grid_coords(self) -> np.ndarray:
        """Search-crop pixel coordinate of each score-grid cell (same for x and y)."""
        n = self.score_size()
        return self.search_size / 2.0 + (np.arange(n) - (n - 1) / 2.0) * self.total_stride

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown NetConfig keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class ModelParams:
    """All learnable tensors, keyed by dotted name.

    The template and search branches both read ``backbone.*``; there is no
    second copy of the backbone.
    """

    config: NetConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def names(self) -> list[str]:
        return list(self.tensors)

    def leaves(self) -> list[Tensor]:
        return list(self.tensors.values())

    def group(self, prefix: str) -> dict[str, Tensor]:
        return {k: v for k, v in self.tensors.items() if k.startswith(prefix)}

    @property
    def backbone_phi(self) -> dict[str, Tensor]:
        return self.group("backbone.")

    @property
    def neck_psi(self) -> dict[str, Tensor]:
        return self.group("neck.")

    @property
    def encoder_e2(self) -> dict[str, Tensor]:
        return self.group("e2.")

    @property
    def heads(self) -> dict[str, Tensor]:
        return self.group("head.")

    @property
    def proj(self) -> dict[str, Tensor]:
        return self.group("proj.")

    def num_parameters(self) -> int:
        return sum(t.size for t in self.tensors.values())

    def copy(self, requires_grad: bool = True) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: Tensor(v.data.copy(), requires_grad=requires_grad, name=k) for k, v in self.tensors.items()},
        )

    def zero_grad(self) -> None:
        for t in self.tensors.values():
            t.grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.data for k, v in self.tensors.items()}


@dataclass
class HeadOutputs:
    """Per-location head outputs on the shared ``h x w`` grid.

    ``cls`` holds (foreground, background) logits, ``reg`` the decoded
    positive (l, t, r, b) distances in search-crop pixels, ``qs`` the quality
    logit. A leading batch axis is present when the inputs were batched.
    """

    cls: Tensor
    reg: Tensor
    qs: Tensor


def _param_shapes(cfg: NetConfig) -> list[tuple[str, tuple[int, ...]]]:
    shapes = []
    c_in = cfg.in_channels
    for k, c_out in enumerate(cfg.channels):
        shapes += [(f"backbone.{k}.weight", (c_out, c_in, 3, 3)), (f"backbone.{k}.bias", (c_out,))]
        c_in = c_out
    c = cfg.feat_channels
    for prefix in ("neck", "e2"):
        for branch in BRANCHES:
            for task in TASKS:
                name = f"{prefix}.{branch}_{task}"
                shapes += [(f"{name}.weight", (c, c, 3, 3)), (f"{name}.bias", (c,))]
    shapes += [
        ("head.cls_tower.weight", (c, c, 3, 3)),
        ("head.cls_tower.bias", (c,)),
        ("head.reg_tower.weight", (c, c, 3, 3)),
        ("head.reg_tower.bias", (c,)),
        ("head.cls.weight", (2, c, 1, 1)),
        ("head.cls.bias", (2,)),
        ("head.qs.weight", (1, c, 1, 1)),
        ("head.qs.bias", (1,)),
        ("head.reg.weight", (4, c, 1, 1)),
        ("head.reg.bias", (4,)),
        ("proj.weight", (c, cfg.embed_dim)),
        ("proj.bias", (cfg.embed_dim,)),
    ]
    return shapes


def init_params(cfg: NetConfig, seed: int = 0, fg_prior: float = 0.01, proj_bias: float = 0.5) -> ModelParams:
    """He-uniform weights, zero biases, with three bias offsets.

    The foreground logit starts at ``log(fg_prior / (1 - fg_prior))`` relative
    to background, the regression bias makes the initial decoded distances
    equal half the template size, and the projection bias starts positive so
    every projection unit is active on the first step.
    """
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in _param_shapes(cfg):
        if name.endswith(".bias"):
            data = np.zeros(shape)
        else:
            fan_in = shape[1] * shape[2] * shape[3] if len(shape) == 4 else shape[0]
            bound = math.sqrt(6.0 / fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        tensors[name] = Tensor(data, requires_grad=True, name=name)
    tensors["head.cls.bias"].data[0] = math.log(fg_prior / (1.0 - fg_prior))
    tensors["head.reg.bias"].data[:] = math.log(cfg.template_size / (2.0 * cfg.total_stride))
    tensors["proj.bias"].data[:] = proj_bias
    return ModelParams(cfg, tensors)


def _conv(params: ModelParams, name: str, x, stride: int = 1, padding: int = 0) -> Tensor:
    return T.conv2d(x, params[f"{name}.weight"], params[f"{name}.bias"], stride=stride, padding=padding)


def _check_image(img: Tensor, size: int, what: str) -> None:
    if img.ndim not in (3, 4) or img.shape[-1] != size or img.shape[-2] != size:
        raise ValueError(f"{what} must be [(B,) C, {size}, {size}], got shape {img.shape}")


def backbone(params: ModelParams, img) -> Tensor:
    cfg = params.config
    x = T.as_tensor(img)
    for k, s in enumerate(cfg.stage_strides):
        x = T.relu(_conv(params, f"backbone.{k}", x, stride=s, padding=cfg.padding))
    return x


def embed_template(params: ModelParams, Z) -> Tensor:
    """Backbone feature of a template crop: ``C x 8 x 8`` at default sizes."""
    Z = T.as_tensor(Z)
    _check_image(Z, params.config.template_size, "template")
    return backbone(params, Z)


def embed_search(params: ModelParams, X) -> Tensor:
    X = T.as_tensor(X)
    _check_image(X, params.config.search_size, "search")
    return backbone(params, X)


def couple(params: ModelParams, zfeat, xfeat, task: str) -> Tensor:
    if task not in TASKS:
        raise ValueError(f"task must be one of {TASKS}, got {task!r}")
    pad = params.config.padding
    z = T.relu(_conv(params, f"neck.z_{task}", zfeat, padding=pad))
    x = T.relu(_conv(params, f"neck.x_{task}", xfeat, padding=pad))
    z = _conv(params, f"e2.z_{task}", z, padding=pad)
    x = _conv(params, f"e2.x_{task}", x, padding=pad)
    return T.xcorr_depthwise(x, z)


def heads_from_features(params: ModelParams, zfeat, xfeat) -> HeadOutputs:
    cfg = params.config
    zfeat, xfeat = T.as_tensor(zfeat), T.as_tensor(xfeat)
    # raw correlation sums over the whole template window
    scale = 1.0 / (zfeat.shape[-1] * zfeat.shape[-2])
    f_cls = T.mul(couple(params, zfeat, xfeat, "cls"), scale)
    f_reg = T.mul(couple(params, zfeat, xfeat, "reg"), scale)

    cls_feat = T.relu(_conv(params, "head.cls_tower", f_cls, padding=cfg.padding))
    reg_feat = T.relu(_conv(params, "head.reg_tower", f_reg, padding=cfg.padding))
    cls = _conv(params, "head.cls", cls_feat)
    qs = _conv(params, "head.qs", cls_feat)
    reg = T.mul(T.exp(_conv(params, "head.reg", reg_feat)), float(cfg.total_stride))

    # channels last: [.., h, w, k]
    axes = (0, 2, 3, 1) if cls.ndim == 4 else (1, 2, 0)
    return HeadOutputs(T.transpose(cls, axes), T.transpose(reg, axes), T.transpose(qs, axes))


def forward_heads(params: ModelParams, Z, X) -> HeadOutputs:
    return heads_from_features(params, embed_template(params, Z), embed_search(params, X))


def project(params: ModelParams, zfeat) -> Tensor:
    """Unit-norm contrastive embedding of a template backbone feature.

    Raises ``ValueError`` when the ReLU output is all zeros.
    """
    pooled = T.global_avg_pool(zfeat)
    hidden = T.relu(T.add(T.matmul(pooled, params["proj.weight"]), params["proj.bias"]))
    return T.l2_normalize(hidden, axis=-1)


# checkpoint file ------------------------------------------------------------
#
# little-endian layout:
#   magic      8 bytes  b"DRCICKPT"
#   version    uint32   (1)
#   hdr_len    uint32   length of the header
#   header     hdr_len bytes of UTF-8 "key=value" lines (NetConfig fields;
#              channels as comma-separated ints, pad as 0/1)
#   n_params   uint32
#   then per parameter, in insertion order:
#     name_len uint16, name (UTF-8), ndim uint8, dims ndim x uint32,
#     data     prod(dims) x float64

CKPT_MAGIC = b"DRCICKPT"
CKPT_VERSION = 1


def _encode_header(cfg: NetConfig) -> bytes:
    lines = []
    for key, value in cfg.to_dict().items():
        if isinstance(value, list):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = int(value)
        lines.append(f"{key}={value}")
    return "\n".join(lines).encode()


def _decode_header(raw: bytes) -> NetConfig:
    d = {}
    for line in raw.decode().splitlines():
        key, _, value = line.partition("=")
        if key == "channels":
            d[key] = tuple(int(v) for v in value.split(","))
        elif key == "pad":
            d[key] = bool(int(value))
        else:
            d[key] = int(value)
    return NetConfig.from_dict(d)


def checkpoint_bytes(params: ModelParams) -> bytes:
    buf = io.BytesIO()
    header = _encode_header(params.config)
    buf.write(CKPT_MAGIC)
    buf.write(struct.pack("<II", CKPT_VERSION, len(header)))
    buf.write(header)
    buf.write(struct.pack("<I", len(params.tensors)))
    for name, t in params.tensors.items():
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(t.data.astype("<f8").tobytes())
    return buf.getvalue()


def save_checkpoint(path, params: ModelParams) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(checkpoint_bytes(params))
    return path


def load_checkpoint(path) -> ModelParams:
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hdr_len = struct.unpack_from("<II", raw, 8)
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    pos = 16
    cfg = _decode_header(raw[pos : pos + hdr_len])
    pos += hdr_len
    (n,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    tensors = {}
    for _ in range(n):
        (name_len,) = struct.unpack_from("<H", raw, pos)
        pos += 2
        name = raw[pos : pos + name_len].decode()
        pos += name_len
        (ndim,) = struct.unpack_from("<B", raw, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        data = np.frombuffer(raw, dtype="<f8", count=count, offset=pos).reshape(shape)
        pos += 8 * count
        tensors[name] = Tensor(data.copy(), requires_grad=True, name=name)
    expected = [name for name, _ in _param_shapes(cfg)]
    if list(tensors) != expected:
        raise ValueError(f"{path}: parameter names do not match the network layout")
    return ModelParams(cfg, tensors)
