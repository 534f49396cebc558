"""Residual modules and network assembly.

The building block is a binarized 3x3 convolution wrapped with a
full-precision shortcut (RPReLU on the 1-bit output, add the pre-activation,
batch-normalize). Four dimension-matching variants cover spatial
downscaling, channel fusion up/down, and combined downsampling; a per-block
1x1 shortcut (full-precision or binarized) closes the dual-residual block.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import ops
from .autograd import Parameter, Var, as_var
from .binary import BinaryConv2dParams
from .errors import ConfigError, DimensionError
from .tensor import BatchNormParams


@dataclass
class RPReLUParams:
    gamma: Parameter
    zeta: Parameter
    beta: Parameter

    @classmethod
    def create(cls, channels: int, dtype=np.float32) -> "RPReLUParams":
        # beta follows the PReLU convention; gamma/zeta start as no-ops
        return cls(gamma=Parameter(np.zeros(channels), dtype=dtype),
                   zeta=Parameter(np.zeros(channels), dtype=dtype),
                   beta=Parameter(np.full(channels, 0.25), dtype=dtype))

    @property
    def channels(self) -> int:
        return self.gamma.data.shape[0]


@dataclass
class LcrLayer:
    """One binarized conv plus its shortcut machinery."""

    conv: BinaryConv2dParams
    rprelu: RPReLUParams
    bn: BatchNormParams

    @classmethod
    def create(cls, channels: int, stride: int = 1,
               rng: np.random.Generator | None = None, dtype=np.float32) -> "LcrLayer":
        return cls(
            conv=BinaryConv2dParams.create(channels, channels, 3, stride=stride,
                                           padding=1, rng=rng, dtype=dtype),
            rprelu=RPReLUParams.create(channels, dtype=dtype),
            bn=BatchNormParams.create(channels, dtype=dtype),
        )

    def params(self) -> dict:
        return {
            "conv.latent": self.conv.latent_weights,
            "rprelu.gamma": self.rprelu.gamma,
            "rprelu.zeta": self.rprelu.zeta,
            "rprelu.beta": self.rprelu.beta,
            "bn.scale": self.bn.scale,
            "bn.shift": self.bn.shift,
        }

    def buffers(self) -> dict:
        return {"bn.running_mean": self.bn.running_mean,
                "bn.running_var": self.bn.running_var}


class ModuleKind(str, enum.Enum):
    BASE_LCR = "base_lcr"
    DOWN_SCALE = "down_scale"
    FUSION_UP = "fusion_up"
    FUSION_DOWN = "fusion_down"
    DOWN_SAMPLE = "down_sample"


class BlockResidualMode(str, enum.Enum):
    NONE = "none"
    FULL_PRECISION_1X1 = "fp1x1"
    BINARIZED_1X1 = "bin1x1"


@dataclass
class ModuleSpec:
    kind: ModuleKind
    in_channels: int
    out_channels: int
    spatial_stride: int = 1
    branches: int = 2  # down_sample fan-out (2 or 4)

    def validate(self):
        k = self.kind
        ci, co, s = self.in_channels, self.out_channels, self.spatial_stride
        ok = {
            ModuleKind.BASE_LCR: co == ci and s == 1,
            ModuleKind.DOWN_SCALE: co == ci and s == 2,
            ModuleKind.FUSION_UP: co == 2 * ci and s == 1,
            ModuleKind.FUSION_DOWN: ci % 2 == 0 and co == ci // 2 and s == 1,
            ModuleKind.DOWN_SAMPLE: co == self.branches * ci and s == 2,
        }[k]
        if not ok:
            raise ConfigError(
                f"{k.value}: invalid geometry in={ci} out={co} stride={s} "
                f"branches={self.branches}"
            )
        if k is ModuleKind.DOWN_SAMPLE and self.branches not in (2, 4):
            raise ConfigError(f"down_sample supports 2 or 4 branches, got {self.branches}")


@dataclass
class BlockResidualSpec:
    mode: BlockResidualMode = BlockResidualMode.NONE


def preact_fn(name: str):
    try:
        return ops.PREACT[name]
    except KeyError:
        raise ConfigError(f"unknown pre-activation {name!r}") from None


def lcr_forward(x, layer: LcrLayer, preact: str = "hardtanh",
                training: bool = False) -> Var:
    """Base local-convolution residual: BN(RPReLU(binconv(a)) + a)."""
    a = preact_fn(preact)(as_var(x))
    o = ops.binary_conv2d(a, layer.conv)
    return ops.batch_norm(ops.add(ops.rprelu(o, layer.rprelu), a), layer.bn, training)


def down_scale_residual_forward(x, layer: LcrLayer, preact: str = "hardtanh",
                                training: bool = False) -> Var:
    x = as_var(x)
    _, _, h, w = x.data.shape
    if h % 2 or w % 2:
        raise DimensionError(f"down scale requires even spatial extent, got {h}x{w}")
    a = preact_fn(preact)(x)
    o = ops.binary_conv2d(a, layer.conv)
    shortcut = ops.avg_pool(a, 2, 2)
    return ops.batch_norm(ops.add(ops.rprelu(o, layer.rprelu), shortcut),
                          layer.bn, training)


@dataclass
class BaseLcrModule:
    layer: LcrLayer

    def forward(self, x, preact, training):
        return lcr_forward(x, self.layer, preact, training)

    def params(self):
        return {f"lcr.{k}": v for k, v in self.layer.params().items()}

    def buffers(self):
        return {f"lcr.{k}": v for k, v in self.layer.buffers().items()}


@dataclass
class DownScaleModule:
    layer: LcrLayer

    def forward(self, x, preact, training):
        return down_scale_residual_forward(x, self.layer, preact, training)

    def params(self):
        return {f"lcr.{k}": v for k, v in self.layer.params().items()}

    def buffers(self):
        return {f"lcr.{k}": v for k, v in self.layer.buffers().items()}


@dataclass
class FusionUpModule:
    branch_a: LcrLayer
    branch_b: LcrLayer
    out_bn: BatchNormParams

    def forward(self, x, preact, training):
        return fusion_up_residual_forward(x, self.branch_a, self.branch_b,
                                          self.out_bn, preact, training)

    def params(self):
        d = {f"a.{k}": v for k, v in self.branch_a.params().items()}
        d.update({f"b.{k}": v for k, v in self.branch_b.params().items()})
        d["out_bn.scale"] = self.out_bn.scale
        d["out_bn.shift"] = self.out_bn.shift
        return d

    def buffers(self):
        d = {f"a.{k}": v for k, v in self.branch_a.buffers().items()}
        d.update({f"b.{k}": v for k, v in self.branch_b.buffers().items()})
        d["out_bn.running_mean"] = self.out_bn.running_mean
        d["out_bn.running_var"] = self.out_bn.running_var
        return d


@dataclass
class FusionDownModule:
    branch_a: LcrLayer
    branch_b: LcrLayer
    out_bn: BatchNormParams

    def forward(self, x, preact, training):
        return fusion_down_residual_forward(x, self.branch_a, self.branch_b,
                                            self.out_bn, preact, training)

    params = FusionUpModule.params
    buffers = FusionUpModule.buffers


@dataclass
class DownSampleModule:
    branches: list
    out_bn: BatchNormParams

    def forward(self, x, preact, training):
        return down_sample_residual_forward(x, self.branches, self.out_bn,
                                            preact, training)

    def params(self):
        d = {}
        for i, br in enumerate(self.branches):
            d.update({f"br{i}.{k}": v for k, v in br.params().items()})
        d["out_bn.scale"] = self.out_bn.scale
        d["out_bn.shift"] = self.out_bn.shift
        return d

    def buffers(self):
        d = {}
        for i, br in enumerate(self.branches):
            d.update({f"br{i}.{k}": v for k, v in br.buffers().items()})
        d["out_bn.running_mean"] = self.out_bn.running_mean
        d["out_bn.running_var"] = self.out_bn.running_var
        return d


def fusion_up_residual_forward(x, a: LcrLayer, b: LcrLayer,
                               out_bn: BatchNormParams | None = None,
                               preact: str = "hardtanh", training: bool = False) -> Var:
    """Two shape-preserving LCR branches on the same input, channel-concatenated."""
    x = as_var(x)
    oa = lcr_forward(x, a, preact, training)
    ob = lcr_forward(x, b, preact, training)
    out = ops.concat(oa, ob)
    if out_bn is not None:
        out = ops.batch_norm(out, out_bn, training)
    return out


def fusion_down_residual_forward(x, a: LcrLayer, b: LcrLayer,
                                 out_bn: BatchNormParams | None = None,
                                 preact: str = "hardtanh", training: bool = False) -> Var:
    x = as_var(x)
    c = x.data.shape[1]
    if c % 2:
        raise DimensionError(f"fusion down requires an even channel count, got {c}")
    x1, x2 = ops.split(x, c // 2)
    out = ops.add(lcr_forward(x1, a, preact, training),
                  lcr_forward(x2, b, preact, training))
    if out_bn is not None:
        out = ops.batch_norm(out, out_bn, training)
    return out


def down_sample_residual_forward(x, branches, out_bn: BatchNormParams | None = None,
                                 preact: str = "hardtanh", training: bool = False) -> Var:
    """k stride-2 LCR branches with pooled shortcuts, channel-concatenated."""
    x = as_var(x)
    outs = [down_scale_residual_forward(x, br, preact, training) for br in branches]
    out = ops.concat_many(outs)
    if out_bn is not None:
        out = ops.batch_norm(out, out_bn, training)
    return out


@dataclass
class BlockResidual:
    """Per-block 1x1 shortcut; pools first when spatial stride is needed."""

    mode: BlockResidualMode
    stride: int = 1
    fp_weights: Parameter | None = None
    bin_conv: BinaryConv2dParams | None = None

    @classmethod
    def create(cls, mode: BlockResidualMode, in_channels: int, out_channels: int,
               stride: int, rng: np.random.Generator | None = None,
               dtype=np.float32) -> "BlockResidual | None":
        if mode is BlockResidualMode.NONE:
            return None
        rng = rng or np.random.default_rng(0)
        if mode is BlockResidualMode.FULL_PRECISION_1X1:
            bound = np.sqrt(6.0 / in_channels)
            w = rng.uniform(-bound, bound, size=(out_channels, in_channels, 1, 1))
            return cls(mode=mode, stride=stride, fp_weights=Parameter(w, dtype=dtype))
        return cls(mode=mode, stride=stride,
                   bin_conv=BinaryConv2dParams.create(out_channels, in_channels, 1,
                                                      rng=rng, dtype=dtype))

    def forward(self, x, training: bool = False) -> Var:
        x = as_var(x)
        if self.stride > 1:
            x = ops.avg_pool(x, self.stride, self.stride)
        if self.mode is BlockResidualMode.FULL_PRECISION_1X1:
            return ops.conv2d(x, self.fp_weights)
        return ops.binary_conv2d(x, self.bin_conv)

    def params(self):
        if self.mode is BlockResidualMode.FULL_PRECISION_1X1:
            return {"fp1x1": self.fp_weights}
        return {"bin1x1.latent": self.bin_conv.latent_weights}

    def buffers(self):
        return {}


def block_residual_forward(x, br: BlockResidual, training: bool = False) -> Var:
    return br.forward(x, training)


@dataclass
class BidrbBlock:
    """Main path of residual modules plus an optional block shortcut."""

    specs: list
    modules: list
    residual: BlockResidual | None

    def forward(self, x, preact: str = "hardtanh", training: bool = False) -> Var:
        x = as_var(x)
        main = x
        for mod in self.modules:
            main = mod.forward(main, preact, training)
        if self.residual is None:
            return main
        return ops.add(main, self.residual.forward(x, training))

    def params(self):
        d = {}
        for i, mod in enumerate(self.modules):
            d.update({f"m{i}.{k}": v for k, v in mod.params().items()})
        if self.residual is not None:
            d.update({f"br.{k}": v for k, v in self.residual.params().items()})
        return d

    def buffers(self):
        d = {}
        for i, mod in enumerate(self.modules):
            d.update({f"m{i}.{k}": v for k, v in mod.buffers().items()})
        return d


def build_module(spec: ModuleSpec, rng: np.random.Generator, dtype=np.float32):
    spec.validate()
    k = spec.kind
    if k is ModuleKind.BASE_LCR:
        return BaseLcrModule(LcrLayer.create(spec.in_channels, 1, rng, dtype))
    if k is ModuleKind.DOWN_SCALE:
        return DownScaleModule(LcrLayer.create(spec.in_channels, 2, rng, dtype))
    if k is ModuleKind.FUSION_UP:
        return FusionUpModule(LcrLayer.create(spec.in_channels, 1, rng, dtype),
                              LcrLayer.create(spec.in_channels, 1, rng, dtype),
                              BatchNormParams.create(spec.out_channels, dtype))
    if k is ModuleKind.FUSION_DOWN:
        half = spec.in_channels // 2
        return FusionDownModule(LcrLayer.create(half, 1, rng, dtype),
                                LcrLayer.create(half, 1, rng, dtype),
                                BatchNormParams.create(spec.out_channels, dtype))
    branches = [LcrLayer.create(spec.in_channels, 2, rng, dtype)
                for _ in range(spec.branches)]
    return DownSampleModule(branches, BatchNormParams.create(spec.out_channels, dtype))


def module_out_shape(spec: ModuleSpec, in_shape):
    """(C, H, W) -> (C, H, W) after the module; raises on a broken chain."""
    c, h, w = in_shape
    if c != spec.in_channels:
        raise ConfigError(
            f"{spec.kind.value}: expects {spec.in_channels} channels, chain has {c}"
        )
    if spec.spatial_stride == 2 and (h % 2 or w % 2):
        raise ConfigError(
            f"{spec.kind.value}: stride 2 needs even spatial extent, chain has {h}x{w}"
        )
    return (spec.out_channels, h // spec.spatial_stride, w // spec.spatial_stride)


@dataclass
class NetworkConfig:
    input_shape: tuple  # (C, H, W)
    blocks: list  # list of (ModuleSpec, BlockResidualSpec)
    preact: str = "hardtanh"
    seed: int = 0
    head_out: int = 14

    def validate(self):
        shape = tuple(self.input_shape)
        if len(shape) != 3 or min(shape) < 1:
            raise ConfigError(f"input_shape must be (C, H, W) >= 1, got {shape}")
        if self.preact not in ops.PREACT:
            raise ConfigError(f"unknown pre-activation {self.preact!r}")
        for i, (spec, _) in enumerate(self.blocks):
            try:
                spec.validate()
                shape = module_out_shape(spec, shape)
            except ConfigError as e:
                raise ConfigError(f"block {i}: {e}") from None
        return shape


@dataclass
class Network:
    config: NetworkConfig
    blocks: list  # BidrbBlock
    head_w: Parameter
    head_b: Parameter

    def forward(self, x, training: bool = False) -> Var:
        out = as_var(x)
        for block in self.blocks:
            out = block.forward(out, self.config.preact, training)
        pooled = ops.global_avg_pool(out)
        return ops.linear(pooled, self.head_w, self.head_b)

    def named_parameters(self) -> dict:
        d = {}
        for i, block in enumerate(self.blocks):
            d.update({f"block{i}.{k}": v for k, v in block.params().items()})
        d["head.weight"] = self.head_w
        d["head.bias"] = self.head_b
        return d

    def named_buffers(self) -> dict:
        d = {}
        for i, block in enumerate(self.blocks):
            d.update({f"block{i}.{k}": v for k, v in block.buffers().items()})
        return d

    def zero_grad(self):
        for p in self.named_parameters().values():
            p.zero_grad()


def build_network(cfg: NetworkConfig, dtype=np.float32) -> Network:
    final_shape = cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    blocks = []
    for spec, br_spec in cfg.blocks:
        module = build_module(spec, rng, dtype)
        residual = BlockResidual.create(br_spec.mode, spec.in_channels,
                                        spec.out_channels, spec.spatial_stride,
                                        rng, dtype)
        blocks.append(BidrbBlock(specs=[spec], modules=[module], residual=residual))
    c_last = final_shape[0]
    bound = np.sqrt(6.0 / c_last)
    head_w = Parameter(rng.uniform(-bound, bound, size=(cfg.head_out, c_last)), dtype=dtype)
    head_b = Parameter(np.zeros(cfg.head_out), dtype=dtype)
    return Network(config=cfg, blocks=blocks, head_w=head_w, head_b=head_b)


def bidrn_forward(net: Network, x, training: bool = False) -> Var:
    return net.forward(x, training)
