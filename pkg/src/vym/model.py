"""The four-input multi-task network.

Four weight-independent convolutional encoders (one per view) each feed
their own transposed-convolution decoder, reconstructing that view; the
four top feature maps are concatenated channel-wise and drive a yield
regression head of two stride-2 convolutions plus a fully connected
block. With the default 150x150 input the encoder spatial chain is
150 -> 75 -> 38 -> 19 -> 10 and each decoder walks it back up.

The single-task (STL) variant drops the decoders and their loss terms;
single-view runs duplicate one view's tensor into all four channels.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, replace

import numpy as np

from . import tensor as T
from .dataset import VIEW_ORDER
from .tensor import Parameter, Tensor


@dataclass(frozen=True)
class ModelConfig:
    encoder_widths: tuple[int, ...] = (16, 32, 64, 128)
    kernel_size: int = 3
    strides: tuple[int, ...] = (2, 2, 2, 2)
    decoder_output_pads: tuple[int, ...] | None = (0, 1, 0, 1)
    head_conv_widths: tuple[int, ...] = (256, 64)
    fc_hidden: int = 128
    hidden_activation: str = "relu"    # reconstructions use sigmoid, yield is linear
    yield_weight: float = 1.0          # loss weight of the yield task
    recon_weight: float = 0.25         # loss weight per reconstruction task
    target_scale_g: float = 1000.0     # grams represented by 1.0 of network output
    input_side: int = 150
    input_channels: int = 3
    use_decoders: bool = True
    share_encoder_weights: bool = False

    def __post_init__(self):
        if len(self.encoder_widths) != 4:
            raise ValueError(f"encoder depth must be exactly 4, got {len(self.encoder_widths)}")
        if len(self.strides) != len(self.encoder_widths):
            raise ValueError("strides must match encoder depth")
        if len(self.head_conv_widths) != 2:
            raise ValueError(f"yield head must have exactly 2 conv layers, got {len(self.head_conv_widths)}")
        if self.hidden_activation not in ("relu", "sigmoid"):
            raise ValueError(f"unsupported activation {self.hidden_activation!r}")
        if self.target_scale_g <= 0:
            raise ValueError("target_scale_g must be positive")


@dataclass
class ForwardOutput:
    reconstructions: list[Tensor] | None
    yield_scaled: Tensor


def stl_variant(config: ModelConfig) -> ModelConfig:
    """Single-task config: no decoders, no reconstruction loss."""
    return replace(config, use_decoders=False, recon_weight=0.0)


def encoder_sizes(config: ModelConfig) -> list[int]:
    """Spatial side after the input and each encoder conv."""
    k, pad = config.kernel_size, config.kernel_size // 2
    sizes = [config.input_side]
    for st in config.strides:
        sizes.append((sizes[-1] + 2 * pad - k) // st + 1)
    return sizes


def resolve_output_pads(config: ModelConfig) -> tuple[int, ...]:
    """Output paddings that walk the decoder back up the encoder chain exactly."""
    k, pad = config.kernel_size, config.kernel_size // 2
    sizes = encoder_sizes(config)
    targets = list(reversed(sizes[:-1]))          # e.g. [19, 38, 75, 150]
    cur = sizes[-1]
    pads = []
    for j, (target, st) in enumerate(zip(targets, reversed(config.strides))):
        base = (cur - 1) * st - 2 * pad + k
        op = target - base
        if not 0 <= op < st:
            raise ValueError(
                f"decoder layer {j} cannot reach size {target} from {cur} "
                f"(needs output_pad {op}, stride {st})"
            )
        pads.append(op)
        cur = target
    if config.decoder_output_pads is not None:
        given = tuple(config.decoder_output_pads)
        if given != tuple(pads):
            # honor explicit pads but verify they close the chain
            cur = sizes[-1]
            for j, (op, st) in enumerate(zip(given, reversed(config.strides))):
                cur = (cur - 1) * st - 2 * pad + k + op
            if cur != config.input_side:
                raise ValueError(
                    f"decoder_output_pads {given} reach size {cur}, not {config.input_side}"
                )
            return given
    return tuple(pads)


def _init_array(seed: int, name: str, shape: tuple[int, ...], fan_in: int,
                gain: float) -> np.ndarray:
    rng = np.random.default_rng(
        np.random.SeedSequence([seed, zlib.crc32(name.encode("utf-8"))])
    )
    limit = np.sqrt(gain / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class MtlModel:
    """Named parameters plus the forward graph of the four-channel network."""

    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        self.seed = seed
        self.params: dict[str, Parameter] = {}
        self.output_pads = resolve_output_pads(config)
        self._build()

    # -- construction -----------------------------------------------------

    def _add(self, name: str, shape: tuple[int, ...], fan_in: int, gain: float) -> None:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self.params[name] = Parameter(name, _init_array(self.seed, name, shape, fan_in, gain))

    def _add_conv(self, name: str, c_out: int, c_in: int, gain: float = 6.0) -> None:
        k = self.config.kernel_size
        self._add(f"{name}.kernel", (c_out, c_in, k, k), c_in * k * k, gain)
        self.params[f"{name}.bias"] = Parameter(f"{name}.bias", np.zeros(c_out))

    def _add_deconv(self, name: str, c_in: int, c_out: int, gain: float = 6.0) -> None:
        k = self.config.kernel_size
        self._add(f"{name}.kernel", (c_in, c_out, k, k), c_in * k * k, gain)
        self.params[f"{name}.bias"] = Parameter(f"{name}.bias", np.zeros(c_out))

    def _add_dense(self, name: str, m: int, n: int, gain: float = 6.0) -> None:
        self._add(f"{name}.weight", (m, n), n, gain)
        self.params[f"{name}.bias"] = Parameter(f"{name}.bias", np.zeros(m))

    def _encoder_name(self, channel: int) -> str:
        return "encoder" if self.config.share_encoder_weights else f"encoder{channel}"

    def _build(self) -> None:
        cfg = self.config
        widths = cfg.encoder_widths
        enc_channels = range(1) if cfg.share_encoder_weights else range(4)
        for i in enc_channels:
            c_in = cfg.input_channels
            for j, c_out in enumerate(widths):
                self._add_conv(f"{self._encoder_name(i)}.conv{j}", c_out, c_in)
                c_in = c_out
        if cfg.use_decoders:
            dec_widths = list(reversed(widths))[1:] + [widths[0]]
            for i in range(4):
                c_in = widths[-1]
                for j, c_out in enumerate(dec_widths):
                    self._add_deconv(f"decoder{i}.deconv{j}", c_in, c_out)
                    c_in = c_out
                self._add_deconv(f"decoder{i}.deconv{len(dec_widths)}", c_in,
                                 cfg.input_channels, gain=3.0)
        merged = 4 * widths[-1]
        c_in = merged
        for j, c_out in enumerate(cfg.head_conv_widths):
            self._add_conv(f"head.conv{j}", c_out, c_in)
            c_in = c_out
        side = encoder_sizes(cfg)[-1]
        for st in (2,) * len(cfg.head_conv_widths):
            side = (side + 2 * (cfg.kernel_size // 2) - cfg.kernel_size) // st + 1
        self._head_flat = c_in * side * side
        self._add_dense("head.fc", cfg.fc_hidden, self._head_flat)
        self._add_dense("head.out", 1, cfg.fc_hidden, gain=3.0)

    # -- parameter access --------------------------------------------------

    def parameters(self) -> list[Parameter]:
        return list(self.params.values())

    def parameter_names(self) -> list[str]:
        return list(self.params.keys())

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, values: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            if name not in values:
                raise KeyError(f"state is missing parameter {name!r}")
            if values[name].shape != p.shape:
                raise ValueError(f"state shape {values[name].shape} != {name!r} {p.shape}")
            p.data[...] = values[name]

    # -- forward ------------------------------------------------------------

    def _act(self, x: Tensor) -> Tensor:
        return T.relu(x) if self.config.hidden_activation == "relu" else T.sigmoid(x)

    def _p(self, name: str) -> Tensor:
        return self.params[name].tensor

    def _check_input(self, x: Tensor, idx: int) -> None:
        cfg = self.config
        want = (cfg.input_channels, cfg.input_side, cfg.input_side)
        shape = x.shape if x.ndim == 3 else x.shape[1:]
        if x.ndim not in (3, 4) or shape != want:
            raise ValueError(f"input {idx}: shape {x.shape} does not end in {want}")

    def _encode(self, x: Tensor, channel: int) -> Tensor:
        cfg = self.config
        pad = cfg.kernel_size // 2
        name = self._encoder_name(channel)
        for j, st in enumerate(cfg.strides):
            x = self._act(T.conv2d(x, self._p(f"{name}.conv{j}.kernel"),
                                   self._p(f"{name}.conv{j}.bias"), stride=st, pad=pad))
        return x

    def _decode(self, feat: Tensor, channel: int) -> Tensor:
        cfg = self.config
        pad = cfg.kernel_size // 2
        h = feat
        n_up = len(cfg.strides)
        for j, (st, op) in enumerate(zip(reversed(cfg.strides), self.output_pads)):
            h = self._act(T.transposed_conv2d(
                h, self._p(f"decoder{channel}.deconv{j}.kernel"),
                self._p(f"decoder{channel}.deconv{j}.bias"),
                stride=st, pad=pad, output_pad=op))
        return T.sigmoid(T.transposed_conv2d(
            h, self._p(f"decoder{channel}.deconv{n_up}.kernel"),
            self._p(f"decoder{channel}.deconv{n_up}.bias"), stride=1, pad=pad))

    def forward(self, inputs: list[Tensor], with_reconstructions: bool = True) -> ForwardOutput:
        """Run the network; inputs are the four views in (E,1),(E,2),(W,1),(W,2) order."""
        cfg = self.config
        if len(inputs) != 4:
            raise ValueError(f"forward expects exactly 4 inputs, got {len(inputs)}")
        for idx, x in enumerate(inputs):
            self._check_input(x, idx)
        feats = [self._encode(x, i) for i, x in enumerate(inputs)]
        recons = None
        if cfg.use_decoders and with_reconstructions:
            recons = [self._decode(f, i) for i, f in enumerate(feats)]
        merged = T.concat_channels(feats)
        pad = cfg.kernel_size // 2
        h = merged
        for j in range(len(cfg.head_conv_widths)):
            h = self._act(T.conv2d(h, self._p(f"head.conv{j}.kernel"),
                                   self._p(f"head.conv{j}.bias"), stride=2, pad=pad))
        h = T.flatten(h)
        h = self._act(T.dense(h, self._p("head.fc.weight"), self._p("head.fc.bias")))
        y = T.dense(h, self._p("head.out.weight"), self._p("head.out.bias"))
        return ForwardOutput(reconstructions=recons, yield_scaled=T.squeeze_last(y))


def build_model(config: ModelConfig, seed: int) -> MtlModel:
    """Construct the network with deterministic fan-in-scaled uniform init."""
    return MtlModel(config, seed)


def mtl_loss(output: ForwardOutput, inputs: list[Tensor], weight_g,
             config: ModelConfig) -> Tensor:
    """yield_weight * (yield - weight/scale)^2 + recon_weight * sum of recon MSEs.

    For batched outputs the yield term is the mean over the batch.
    """
    target = np.asarray(weight_g, dtype=np.float64)
    if np.any(target < 0):
        raise ValueError(f"weight_g must be non-negative, got {weight_g}")
    target = target / config.target_scale_g
    if target.shape != output.yield_scaled.shape:
        raise ValueError(
            f"weight_g shape {target.shape} != yield shape {output.yield_scaled.shape}"
        )
    loss = T.scale(T.mse_loss(output.yield_scaled, Tensor(target)), config.yield_weight)
    if config.recon_weight > 0.0:
        if output.reconstructions is None:
            raise ValueError("recon_weight > 0 but the forward pass produced no reconstructions")
        for recon, x in zip(output.reconstructions, inputs):
            loss = T.add(loss, T.scale(T.mse_loss(recon, x), config.recon_weight))
    return loss


def four_view_inputs(tensors: dict[tuple[str, int], np.ndarray]) -> list[Tensor]:
    """Assemble the four views in the fixed (E,1),(E,2),(W,1),(W,2) order."""
    missing = [v for v in VIEW_ORDER if v not in tensors]
    if missing:
        raise ValueError(f"missing views: {missing}")
    return [Tensor(tensors[v]) for v in VIEW_ORDER]


def single_view_inputs(tensors: dict[tuple[str, int], np.ndarray],
                       view: tuple[str, int]) -> list[Tensor]:
    """Duplicate one view's tensor into all four channels."""
    if view not in tensors:
        raise ValueError(f"view {view} not present; have {sorted(tensors)}")
    return [Tensor(tensors[view]) for _ in VIEW_ORDER]


def predict_yield(model: MtlModel, inputs: list[Tensor]):
    """Predicted grams, clamped at zero. Scalar for single examples,
    an array for batched inputs."""
    out = model.forward(inputs, with_reconstructions=False)
    scaled = np.maximum(out.yield_scaled.data, 0.0) * model.config.target_scale_g
    if scaled.ndim == 0:
        return float(scaled)
    return scaled
