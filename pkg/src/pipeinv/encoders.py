"""Declarative convolutional encoders, heads, and activation capture."""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import torch
from torch import nn

from .errors import InvalidInputError, SpecError

NONLINEARITIES = ("relu", "leaky_relu", "none")
NORMALIZATIONS = ("batch", None)
HEAD_KINDS = ("identity", "linear", "mlp_1", "mlp_2", "mlp_3")


def _tuple(value, rank: int) -> tuple[int, ...]:
    if isinstance(value, int):
        return (value,) * rank
    value = tuple(int(v) for v in value)
    if len(value) != rank:
        raise ValueError(f"expected {rank} entries, got {value}")
    return value


@dataclass(frozen=True)
class ConvLayerSpec:
    out_units: int
    kernel: int | tuple[int, ...]
    stride: int | tuple[int, ...] = 1
    padding: int | tuple[int, ...] = 0
    nonlinearity: str = "relu"
    normalization: str | None = "batch"
    # max-pool (kernel == stride) applied to this layer's input
    pre_pool: int | None = None
    # expected spatial output dims; checked during shape propagation
    output_dims: tuple[int, ...] | None = None


@dataclass(frozen=True)
class EncoderSpec:
    name: str
    input_shape: tuple[int, ...]  # (channels, *spatial)
    layers: tuple[ConvLayerSpec, ...]
    pool: str | None = None  # "avg": global average pool after the last layer
    representation_dim: int | None = None
    init_std: float = 0.02

    @property
    def spatial_rank(self) -> int:
        return len(self.input_shape) - 1

    @property
    def layer_ids(self) -> list[str]:
        ids = [f"conv{i + 1}" for i in range(len(self.layers))]
        return ids + (["pool"] if self.pool else [])

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "EncoderSpec":
        d = dict(d)
        layers = []
        for layer in d.pop("layers"):
            layer = dict(layer)
            for key in ("kernel", "stride", "padding", "output_dims"):
                if isinstance(layer.get(key), list):
                    layer[key] = tuple(layer[key])
            layers.append(ConvLayerSpec(**layer))
        d["input_shape"] = tuple(d["input_shape"])
        return cls(layers=tuple(layers), **d)


def propagate_shapes(spec: EncoderSpec) -> list[tuple[int, ...]]:
    """Output shape ``(channels, *spatial)`` of every conv layer.

    Raises :class:`SpecError` naming the first layer whose computed output is
    empty or disagrees with its declared ``output_dims``.
    """
    rank = spec.spatial_rank
    if rank not in (1, 2, 3):
        raise SpecError(None, f"unsupported spatial rank {rank}")
    if not spec.layers:
        raise SpecError(None, "encoder needs at least one layer")
    channels, dims = spec.input_shape[0], tuple(spec.input_shape[1:])
    shapes = []
    for i, layer in enumerate(spec.layers):
        if layer.nonlinearity not in NONLINEARITIES:
            raise SpecError(i, f"unknown nonlinearity {layer.nonlinearity!r}")
        if layer.normalization not in NORMALIZATIONS:
            raise SpecError(i, f"unknown normalization {layer.normalization!r}")
        try:
            k, s, p = (_tuple(v, rank) for v in (layer.kernel, layer.stride, layer.padding))
        except ValueError as exc:
            raise SpecError(i, str(exc)) from None
        if layer.pre_pool:
            dims = tuple((d - layer.pre_pool) // layer.pre_pool + 1 for d in dims)
        dims = tuple((d + 2 * pp - kk) // ss + 1 for d, kk, ss, pp in zip(dims, k, s, p))
        if min(dims) < 1:
            raise SpecError(i, f"output spatial dims {dims} are empty")
        if layer.output_dims is not None and tuple(layer.output_dims) != dims:
            raise SpecError(i, f"declared output dims {tuple(layer.output_dims)} but computed {dims}")
        channels = layer.out_units
        shapes.append((channels, *dims))
    rep = shapes[-1][0] if spec.pool else math.prod(shapes[-1])
    if spec.representation_dim is not None and spec.representation_dim != rep:
        raise SpecError(
            len(spec.layers) - 1,
            f"declared representation_dim {spec.representation_dim} but computed {rep}",
        )
    return shapes


def activation_shapes(spec: EncoderSpec) -> dict[str, tuple[int, ...]]:
    shapes = propagate_shapes(spec)
    out = {f"conv{i + 1}": s for i, s in enumerate(shapes)}
    if spec.pool:
        out["pool"] = (shapes[-1][0],) + (1,) * spec.spatial_rank
    return out


def representation_dim(spec: EncoderSpec) -> int:
    shapes = propagate_shapes(spec)
    return shapes[-1][0] if spec.pool else math.prod(shapes[-1])


def dcgan_spec(channels: int = 1, size: int = 32) -> EncoderSpec:
    """Four-layer DCGAN-style encoder for 32x32 images (32, 64, 128, 64 units)."""
    if size != 32:
        raise SpecError(None, "the reference DCGAN encoder expects 32x32 inputs")
    return EncoderSpec(
        name="dcgan",
        input_shape=(channels, size, size),
        layers=(
            ConvLayerSpec(32, 4, 2, 1, output_dims=(16, 16)),
            ConvLayerSpec(64, 4, 2, 1, output_dims=(8, 8)),
            ConvLayerSpec(128, 4, 2, 1, output_dims=(4, 4)),
            ConvLayerSpec(64, 4, 1, 0, output_dims=(1, 1)),
        ),
        representation_dim=64,
    )


def alexnet3d_spec(input_dims: tuple[int, int, int] = (91, 109, 91)) -> EncoderSpec:
    """Five-layer 3D AlexNet-style encoder for 91x109x91 gray-matter volumes.

    Kernel, stride, padding and pooling placement are not canonical; they were
    chosen so the conv outputs come out at 62^3, 18^3, 6^3, 6^3, 6^3 with 64,
    128, 192, 192 and 64 units, followed by a global average pool.
    """
    return EncoderSpec(
        name="alexnet3d",
        input_shape=(1, *input_dims),
        layers=(
            ConvLayerSpec(64, 5, 2, (18, 9, 18), output_dims=(62, 62, 62)),
            ConvLayerSpec(128, 3, 1, 0, pre_pool=3, output_dims=(18, 18, 18)),
            ConvLayerSpec(192, 3, 1, 1, pre_pool=3, output_dims=(6, 6, 6)),
            ConvLayerSpec(192, 3, 1, 1, output_dims=(6, 6, 6)),
            ConvLayerSpec(64, 3, 1, 1, output_dims=(6, 6, 6)),
        ),
        pool="avg",
        representation_dim=64,
    )


REFERENCE_SPECS = {"dcgan": dcgan_spec, "alexnet3d": lambda channels=1: alexnet3d_spec()}


class Encoder(nn.Module):
    def __init__(self, spec: EncoderSpec):
        super().__init__()
        propagate_shapes(spec)
        self.spec = spec
        rank = spec.spatial_rank
        conv = {1: nn.Conv1d, 2: nn.Conv2d, 3: nn.Conv3d}[rank]
        norm = {1: nn.BatchNorm1d, 2: nn.BatchNorm2d, 3: nn.BatchNorm3d}[rank]
        pool = {1: nn.MaxPool1d, 2: nn.MaxPool2d, 3: nn.MaxPool3d}[rank]
        blocks = []
        in_ch = spec.input_shape[0]
        for layer in spec.layers:
            mods: list[nn.Module] = []
            if layer.pre_pool:
                mods.append(pool(layer.pre_pool))
            mods.append(
                conv(
                    in_ch,
                    layer.out_units,
                    _tuple(layer.kernel, rank),
                    _tuple(layer.stride, rank),
                    _tuple(layer.padding, rank),
                    bias=layer.normalization is None,
                )
            )
            if layer.normalization == "batch":
                mods.append(norm(layer.out_units))
            if layer.nonlinearity == "relu":
                mods.append(nn.ReLU())
            elif layer.nonlinearity == "leaky_relu":
                mods.append(nn.LeakyReLU(0.2))
            blocks.append(nn.Sequential(*mods))
            in_ch = layer.out_units
        self.blocks = nn.ModuleList(blocks)
        self.representation_dim = representation_dim(spec)

    def forward(self, x: torch.Tensor, capture: Sequence[str] | bool = False):
        """Return ``(z, activations)``; activations maps layer id -> tensor."""
        wanted = set(self.spec.layer_ids) if capture is True else set(capture or ())
        acts = {}
        for i, block in enumerate(self.blocks):
            x = block(x)
            if f"conv{i + 1}" in wanted:
                acts[f"conv{i + 1}"] = x
        if self.spec.pool:
            x = x.mean(dim=tuple(range(2, x.ndim)), keepdim=True)
            if "pool" in wanted:
                acts["pool"] = x
        return x.flatten(1), acts


def init_parameters(module: nn.Module, seed: int, std: float = 0.02) -> None:
    """DCGAN-style init: conv/linear weights ~ N(0, std), norm scales ~ N(1, std), biases 0."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, (nn.Conv1d, nn.Conv2d, nn.Conv3d, nn.Linear)):
                m.weight.copy_(torch.randn(m.weight.shape, generator=gen) * std)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.modules.batchnorm._BatchNorm):
                m.weight.copy_(1 + torch.randn(m.weight.shape, generator=gen) * std)
                m.bias.zero_()


def build_encoder(spec: EncoderSpec, seed: int = 0) -> Encoder:
    enc = Encoder(spec)
    init_parameters(enc, seed, spec.init_std)
    return enc


@dataclass(frozen=True)
class ProjectionHeadSpec:
    kind: str = "identity"
    width: int | None = None  # defaults to the representation dim

    def __post_init__(self):
        if self.kind not in HEAD_KINDS:
            raise SpecError(None, f"unknown projection head {self.kind!r}")


def build_projection_head(spec: ProjectionHeadSpec, rep_dim: int) -> nn.Module:
    width = spec.width or rep_dim
    if spec.kind == "identity":
        return nn.Identity()
    if spec.kind == "linear":
        return nn.Linear(rep_dim, width)
    hidden = int(spec.kind.split("_")[1])
    mods: list[nn.Module] = []
    d = rep_dim
    for _ in range(hidden):
        mods += [nn.Linear(d, rep_dim), nn.ReLU()]
        d = rep_dim
    mods.append(nn.Linear(d, width))
    return nn.Sequential(*mods)


@dataclass
class ForwardOutput:
    z: torch.Tensor
    logits: torch.Tensor
    activations: dict[str, torch.Tensor] = field(default_factory=dict)


class ViewModel(nn.Module):
    """Encoder E with classification head g and projection head h."""

    def __init__(
        self,
        spec: EncoderSpec,
        class_count: int,
        projection: ProjectionHeadSpec = ProjectionHeadSpec(),
        seed: int = 0,
        metadata: dict[str, Any] | None = None,
    ):
        super().__init__()
        self.spec = spec
        self.class_count = class_count
        self.projection_spec = projection
        self.encoder = Encoder(spec)
        d = self.encoder.representation_dim
        self.classifier = nn.Linear(d, class_count)
        self.projection = build_projection_head(projection, d)
        self.metadata = dict(metadata or {})
        gen = torch.Generator().manual_seed(seed)
        init_parameters(self.encoder, seed, spec.init_std)
        # heads keep torch's default (fan-in scaled) init, but seeded
        for head in (self.classifier, self.projection):
            for m in head.modules():
                if isinstance(m, nn.Linear):
                    bound = 1 / math.sqrt(m.in_features)
                    with torch.no_grad():
                        m.weight.copy_((torch.rand(m.weight.shape, generator=gen) * 2 - 1) * bound)
                        m.bias.copy_((torch.rand(m.bias.shape, generator=gen) * 2 - 1) * bound)

    @property
    def representation_dim(self) -> int:
        return self.encoder.representation_dim

    def forward(self, x: torch.Tensor, capture: Sequence[str] | bool = False) -> ForwardOutput:
        z, acts = self.encoder(x, capture)
        return ForwardOutput(z, self.classifier(z), acts)

    def project(self, z: torch.Tensor) -> torch.Tensor:
        return self.projection(z)


def as_batch(images, spec: EncoderSpec) -> torch.Tensor:
    """Convert channel-last numpy images or a channel-first tensor to a model batch."""
    if isinstance(images, np.ndarray):
        t = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32))
        t = t.movedim(-1, 1) if t.ndim == len(spec.input_shape) + 1 else t
    else:
        t = images.float()
    if tuple(t.shape[1:]) != tuple(spec.input_shape):
        raise InvalidInputError(
            f"batch shape {tuple(t.shape[1:])} does not match encoder input {tuple(spec.input_shape)}"
        )
    return t


def forward(model: ViewModel, batch, capture: Sequence[str] | bool = False) -> ForwardOutput:
    """Inference-mode forward pass (no gradient, model mode untouched)."""
    x = as_batch(batch, model.spec)
    with torch.no_grad():
        return model(x, capture)


@dataclass
class ActivationMatrix:
    values: np.ndarray  # m x u
    layer_id: str
    sample_ids: np.ndarray
    block_shape: tuple[int, ...]  # (channels, *spatial)

    def unflatten(self) -> np.ndarray:
        return self.values.reshape((len(self.values), *self.block_shape))


def extract_activations(
    model: ViewModel,
    images,
    sample_ids,
    layer_ids: Sequence[str],
    batch_size: int = 256,
) -> list[ActivationMatrix]:
    """Flattened post-nonlinearity activations, rows sorted by ascending sample id."""
    from .evaluation import flatten_activations

    known = set(model.spec.layer_ids)
    for lid in layer_ids:
        if lid not in known:
            raise InvalidInputError(f"unknown layer id {lid!r}; known: {sorted(known)}")
    sample_ids = np.asarray(sample_ids)
    order = np.argsort(sample_ids, kind="stable")
    images = images[order]
    was_training = model.training
    model.eval()
    chunks: dict[str, list[np.ndarray]] = {lid: [] for lid in layer_ids}
    shapes = {}
    try:
        for start in range(0, len(images), batch_size):
            out = forward(model, images[start : start + batch_size], capture=list(layer_ids))
            for lid in layer_ids:
                a = out.activations[lid]
                shapes[lid] = tuple(a.shape[1:])
                chunks[lid].append(flatten_activations(a.numpy()))
    finally:
        model.train(was_training)
    return [
        ActivationMatrix(np.concatenate(chunks[lid]), lid, sample_ids[order], shapes[lid])
        for lid in layer_ids
    ]


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def parameter_hash(model: nn.Module) -> str:
    h = hashlib.sha256()
    for key, tensor in sorted(model.state_dict().items()):
        h.update(key.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def save_model(model: ViewModel, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(
        {
            "spec": model.spec.to_dict(),
            "class_count": model.class_count,
            "projection": asdict(model.projection_spec),
            "state_dict": model.state_dict(),
            "metadata": model.metadata,
            "parameter_count": parameter_count(model),
        },
        path,
    )
    return path


def load_model(path: str | Path) -> ViewModel:
    blob = torch.load(path, map_location="cpu", weights_only=False)
    model = ViewModel(
        EncoderSpec.from_dict(blob["spec"]),
        blob["class_count"],
        ProjectionHeadSpec(**blob["projection"]),
        metadata=blob["metadata"],
    )
    model.load_state_dict(blob["state_dict"])
    if parameter_count(model) != blob["parameter_count"]:
        raise SpecError(None, "checkpoint parameter count does not match its spec")
    return model
