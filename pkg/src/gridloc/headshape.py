"""Shape propagation and MAC accounting for grid heads.

Two heads are modeled: the light head (stride-2 entry conv, 7x7 trunk,
depthwise 5x5 fusion, two grouped 2x deconvs to 28x28) and the original head
(14x14 trunk, three 5x5 fusion convs, two dense 2x deconvs to 56x56).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class ConstraintError(ValueError):
    """Channel widths violate the grouping constraints of the head."""


class LayerKind(str, enum.Enum):
    CONV = "conv"
    DECONV = "deconv"
    DEPTHWISE = "depthwise"


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    kernel: tuple[int, int]
    stride: int
    in_channels: int
    out_channels: int
    groups: int = 1
    name: str = ""
    stage: str = ""

    def __post_init__(self):
        object.__setattr__(self, "kind", LayerKind(self.kind))
        if self.stride < 1 or self.groups < 1:
            raise ValueError("stride and groups must be >= 1")
        if self.in_channels % self.groups or self.out_channels % self.groups:
            raise ConstraintError(
                f"{self.name or self.kind.value}: channels "
                f"{self.in_channels}->{self.out_channels} not divisible by groups {self.groups}"
            )
        if self.kind is LayerKind.DEPTHWISE and not (
            self.groups == self.in_channels == self.out_channels
        ):
            raise ConstraintError("depthwise layer needs groups == in == out channels")

    def output_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel
        if self.kind is LayerKind.DECONV:
            # padding (k - s) / 2 gives an exact stride-times upsampling
            ph, pw = (kh - self.stride) // 2, (kw - self.stride) // 2
            return (
                (h - 1) * self.stride - 2 * ph + kh,
                (w - 1) * self.stride - 2 * pw + kw,
            )
        ph, pw = kh // 2, kw // 2
        return (
            (h + 2 * ph - kh) // self.stride + 1,
            (w + 2 * pw - kw) // self.stride + 1,
        )

    @property
    def params(self) -> int:
        kh, kw = self.kernel
        return self.out_channels * (self.in_channels // self.groups) * kh * kw


@dataclass(frozen=True)
class HeadSpec:
    name: str
    input_resolution: tuple[int, int]
    input_channels: int
    layers: tuple[LayerSpec, ...]
    n_points: int
    conv_channels: int = 0

    def shapes(self) -> list[tuple[int, int, int]]:
        """Output (C, H, W) after every layer; raises on a channel mismatch."""
        c = self.input_channels
        h, w = self.input_resolution
        out = []
        for layer in self.layers:
            if layer.in_channels != c:
                raise ConstraintError(
                    f"{layer.name}: expects {layer.in_channels} channels, got {c}"
                )
            h, w = layer.output_hw(h, w)
            if h < 1 or w < 1:
                raise ConstraintError(f"{layer.name}: spatial size collapsed")
            c = layer.out_channels
            out.append((c, h, w))
        return out

    @property
    def output_shape(self) -> tuple[int, int, int]:
        return self.shapes()[-1]


@dataclass
class LedgerRow:
    name: str
    kind: str
    output_shape: tuple[int, int, int]
    params: int
    macs: int


@dataclass
class Ledger:
    head: str
    rows: list[LedgerRow] = field(default_factory=list)

    @property
    def total_macs(self) -> int:
        return sum(r.macs for r in self.rows)

    @property
    def total_params(self) -> int:
        return sum(r.params for r in self.rows)

    def to_dict(self) -> dict:
        return {
            "head": self.head,
            "layers": [
                {
                    "name": r.name,
                    "kind": r.kind,
                    "output_shape": list(r.output_shape),
                    "params": r.params,
                    "macs": r.macs,
                }
                for r in self.rows
            ],
            "total_params": self.total_params,
            "total_macs": self.total_macs,
        }


def _check_channels(channels: int, n_points: int, conv_norm_groups: int) -> None:
    if channels < 1 or n_points < 1:
        raise ConstraintError("channels and n_points must be positive")
    if channels % conv_norm_groups:
        raise ConstraintError(
            f"channels={channels} is not divisible by the conv norm group count "
            f"{conv_norm_groups}; group counts must be multiples of the number of "
            f"grid points and divide the layer width"
        )
    if channels % n_points:
        raise ConstraintError(
            f"channels={channels} is not divisible by n_points={n_points}"
        )


def build_plus_head(
    channels: int = 576,
    n_points: int = 9,
    in_channels: int = 256,
    conv_norm_groups: int = 36,
    fusion_before_deconv: bool = True,
    deconv_kernel: int = 4,
) -> HeadSpec:
    _check_channels(channels, n_points, conv_norm_groups)
    C = channels
    layers = [LayerSpec(LayerKind.CONV, (3, 3), 2, in_channels, C, name="conv0", stage="trunk")]
    layers += [
        LayerSpec(LayerKind.CONV, (3, 3), 1, C, C, name=f"conv{i}", stage="trunk")
        for i in range(1, 8)
    ]
    fusion = LayerSpec(LayerKind.DEPTHWISE, (5, 5), 1, C, C, groups=C, name="fusion_dw", stage="fusion")
    k = (deconv_kernel, deconv_kernel)
    deconvs = [
        LayerSpec(LayerKind.DECONV, k, 2, C, C, groups=n_points, name="deconv1", stage="upsample"),
        LayerSpec(LayerKind.DECONV, k, 2, C, n_points, groups=n_points, name="deconv2", stage="upsample"),
    ]
    if fusion_before_deconv:
        layers += [fusion] + deconvs
    else:
        layers += deconvs + [
            LayerSpec(
                LayerKind.DEPTHWISE, (5, 5), 1, n_points, n_points,
                groups=n_points, name="fusion_dw", stage="fusion",
            )
        ]
    return HeadSpec("plus", (14, 14), in_channels, tuple(layers), n_points, C)


def build_original_head(
    channels: int = 576,
    n_points: int = 9,
    in_channels: int = 256,
    conv_norm_groups: int = 36,
    deconv_kernel: int = 4,
) -> HeadSpec:
    _check_channels(channels, n_points, conv_norm_groups)
    C = channels
    layers = [LayerSpec(LayerKind.CONV, (3, 3), 1, in_channels, C, name="conv0", stage="trunk")]
    layers += [
        LayerSpec(LayerKind.CONV, (3, 3), 1, C, C, name=f"conv{i}", stage="trunk")
        for i in range(1, 8)
    ]
    # each grid point's channel slice is fused by its own 5x5 stack
    layers += [
        LayerSpec(LayerKind.CONV, (5, 5), 1, C, C, groups=n_points, name=f"fusion{i}", stage="fusion")
        for i in range(3)
    ]
    k = (deconv_kernel, deconv_kernel)
    layers += [
        LayerSpec(LayerKind.DECONV, k, 2, C, C, name="deconv1", stage="upsample"),
        LayerSpec(LayerKind.DECONV, k, 2, C, n_points, name="deconv2", stage="upsample"),
    ]
    return HeadSpec("original", (14, 14), in_channels, tuple(layers), n_points, C)


def layer_macs(layer: LayerSpec, out_hw: tuple[int, int]) -> int:
    kh, kw = layer.kernel
    return out_hw[0] * out_hw[1] * layer.out_channels * (layer.in_channels // layer.groups) * kh * kw


def ledger(head: HeadSpec) -> Ledger:
    """Per-layer output shapes, parameter counts and MACs (no bias/norm/act).

    Transposed convolutions are counted at their output resolution.
    """
    out = Ledger(head.name)
    for layer, shape in zip(head.layers, head.shapes()):
        out.rows.append(
            LedgerRow(layer.name, layer.kind.value, shape, layer.params, layer_macs(layer, shape[1:]))
        )
    return out


def flops(head: HeadSpec) -> int:
    """Multiply-accumulate count of the whole head."""
    return ledger(head).total_macs


def validate_groups(
    head: HeadSpec,
    n_points: int | None = None,
    conv_norm_groups: int = 36,
    deconv_norm_groups: int = 9,
) -> list[str]:
    """Check the group-normalization layout; returns violations (empty = ok).

    Norm group counts must be multiples of the number of grid points and
    divide the output width of every normalized layer. The final layer emits
    heatmap logits and carries no normalization.
    """
    n = head.n_points if n_points is None else n_points
    problems = []
    for label, g in (("conv", conv_norm_groups), ("deconv", deconv_norm_groups)):
        if g < 1:
            problems.append(f"{label} norm groups must be >= 1, got {g}")
        elif g % n:
            problems.append(f"{label} norm groups {g} is not a multiple of n_points={n}")
    normalized = head.layers[:-1]
    for layer in normalized:
        g = deconv_norm_groups if layer.kind is LayerKind.DECONV else conv_norm_groups
        if g >= 1 and layer.out_channels % g:
            problems.append(
                f"{layer.name}: {layer.out_channels} channels not divisible by {g} norm groups"
            )
    return problems
