"""Generators, patch discriminators, and adversarial objectives.

Two generator families cover the two training regimes: an encoder to
decoder net with skip connections for the paired (conditional) setting,
and a residual-block net for the unpaired cycle-consistent setting. The
discriminator classifies overlapping patches, emitting a logit map
rather than a single score.

Losses come in a log form (the printed minimax/conditional objectives)
and a least-squares form behind the ``adv_loss`` flag; the generator
side of the log form uses the non-saturating surrogate. All probability
terms are epsilon-clamped so every loss stays finite.
"""

from __future__ import annotations

import numpy as np

from .engine import tensor as T
from .engine.layers import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Dropout,
    InstanceNorm2d,
    Module,
    ResidualBlock,
)
from .engine.rng import seeded_rng
from .engine.tensor import Tensor
from .errors import BadConfig, MissingPart, NonFinite, ShapeMismatch

VALID_IMAGE_SIZES = (32, 64, 128)
ADV_MODES = ("log", "least_squares")
EPSILON_PROB = 1e-7
LAMBDA_L1_DEFAULT = 100.0
LAMBDA_CYC_DEFAULT = 10.0
LAMBDA_IDENTITY_DEFAULT = 0.0

DEFAULT_WEIGHTS = {
    "lambda_l1": LAMBDA_L1_DEFAULT,
    "lambda_cyc": LAMBDA_CYC_DEFAULT,
    "lambda_identity": LAMBDA_IDENTITY_DEFAULT,
}


def _check_image_size(image_size: int) -> None:
    if image_size not in VALID_IMAGE_SIZES:
        raise BadConfig(
            f"image_size must be one of {VALID_IMAGE_SIZES}, got {image_size}"
        )


def _check_input(x: Tensor, channels: int, side: int) -> None:
    if x.data.ndim != 4 or x.shape[1] != channels or x.shape[2] != side or x.shape[3] != side:
        raise ShapeMismatch(
            f"expected (N, {channels}, {side}, {side}), got {tuple(x.shape)}"
        )


def _remap_tanh(h: Tensor) -> Tensor:
    """tanh squashed onto [0, 1] to match image pixel bounds."""
    return T.mul_scalar(T.add(T.tanh(h), 1.0), 0.5)


class UNetGenerator(Module):
    """Downsampling/upsampling generator with channel-concat skips.

    Each encoder level halves the side with a stride-2 convolution; each
    decoder level doubles it back and concatenates the mirror encoder
    activation. Dropout on the three innermost decoder levels is the
    model's only noise source, so it stays active at inference unless
    switched off via ``set_deterministic``.
    """

    kind = "unet"

    def __init__(self, image_size=128, base_channels=64, depth=None,
                 dropout_p=0.5, rng=None):
        _check_image_size(image_size)
        max_depth = int(np.log2(image_size))
        if depth is None:
            depth = max_depth
        if not 1 <= depth <= max_depth:
            raise BadConfig(f"unet depth must lie in [1, {max_depth}], got {depth}")
        if base_channels < 1:
            raise BadConfig("base_channels must be >= 1")
        if not 0.0 <= dropout_p < 1.0:
            raise BadConfig(f"dropout_p must lie in [0, 1), got {dropout_p}")
        if rng is None:
            rng = seeded_rng(0)
        self.image_size = image_size
        self.base_channels = base_channels
        self.depth = depth
        self.dropout_p = dropout_p

        chans = [min(base_channels * 2 ** k, base_channels * 8) for k in range(depth)]
        self.encoders = []
        self.enc_norms = []
        c_in = 1
        side = image_size
        for k, c_out in enumerate(chans):
            self.encoders.append(Conv2d(c_in, c_out, 4, stride=2, pad=1, rng=rng))
            side //= 2
            # no norm on the outermost level or on a 1x1 bottleneck
            self.enc_norms.append(BatchNorm2d(c_out) if k > 0 and side > 1 else None)
            c_in = c_out

        self.decoders = []
        self.dec_norms = []
        self.dec_drops = []
        c_prev = chans[-1]
        for j in range(depth - 1, 0, -1):
            c_out = chans[j - 1]
            self.decoders.append(ConvTranspose2d(c_prev, c_out, 4, stride=2, pad=1, rng=rng))
            self.dec_norms.append(BatchNorm2d(c_out))
            innermost = (depth - 1 - j) < 3
            self.dec_drops.append(Dropout(dropout_p) if innermost and dropout_p > 0 else None)
            c_prev = c_out * 2
        self.final = ConvTranspose2d(c_prev, 1, 4, stride=2, pad=1, rng=rng)

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "image_size": self.image_size,
            "base_channels": self.base_channels,
            "depth": self.depth,
            "dropout_p": self.dropout_p,
        }

    def forward(self, x, rng=None):
        _check_input(x, 1, self.image_size)
        acts = []
        h = x
        for conv, norm in zip(self.encoders, self.enc_norms):
            h = conv(h)
            if norm is not None:
                h = norm(h)
            h = T.leaky_relu(h, 0.2)
            acts.append(h)
        for i, (deconv, norm, drop) in enumerate(
            zip(self.decoders, self.dec_norms, self.dec_drops)
        ):
            h = deconv(h)
            h = norm(h)
            if drop is not None:
                h = drop(h, rng=rng)
            h = T.relu(h)
            h = T.concat(h, acts[len(self.encoders) - 2 - i], axis=1)
        return _remap_tanh(self.final(h))


class ResnetGenerator(Module):
    """Residual-block generator for the unpaired regime.

    A wide stem, two stride-2 downsampling stages, a stack of identity
    residual blocks at quarter resolution, and two mirrored upsampling
    stages. Instance normalization throughout.
    """

    kind = "resnet"

    def __init__(self, image_size=128, base_channels=64, n_residual_blocks=6,
                 dropout_p=0.0, rng=None):
        _check_image_size(image_size)
        if n_residual_blocks < 1:
            raise BadConfig("n_residual_blocks must be >= 1")
        if base_channels < 1:
            raise BadConfig("base_channels must be >= 1")
        if not 0.0 <= dropout_p < 1.0:
            raise BadConfig(f"dropout_p must lie in [0, 1), got {dropout_p}")
        if rng is None:
            rng = seeded_rng(0)
        self.image_size = image_size
        self.base_channels = base_channels
        self.n_residual_blocks = n_residual_blocks
        self.dropout_p = dropout_p

        b = base_channels
        self.stem = Conv2d(1, b, 7, stride=1, pad=3, rng=rng)
        self.stem_norm = InstanceNorm2d(b)
        self.down1 = Conv2d(b, 2 * b, 3, stride=2, pad=1, rng=rng)
        self.down1_norm = InstanceNorm2d(2 * b)
        self.down2 = Conv2d(2 * b, 4 * b, 3, stride=2, pad=1, rng=rng)
        self.down2_norm = InstanceNorm2d(4 * b)
        self.blocks = [
            ResidualBlock(4 * b, norm="instance", rng=rng)
            for _ in range(n_residual_blocks)
        ]
        self.drop = Dropout(dropout_p) if dropout_p > 0 else None
        self.up1 = ConvTranspose2d(4 * b, 2 * b, 3, stride=2, pad=1, out_pad=1, rng=rng)
        self.up1_norm = InstanceNorm2d(2 * b)
        self.up2 = ConvTranspose2d(2 * b, b, 3, stride=2, pad=1, out_pad=1, rng=rng)
        self.up2_norm = InstanceNorm2d(b)
        self.head = Conv2d(b, 1, 7, stride=1, pad=3, rng=rng)

    def config(self) -> dict:
        return {
            "kind": self.kind,
            "image_size": self.image_size,
            "base_channels": self.base_channels,
            "n_residual_blocks": self.n_residual_blocks,
            "dropout_p": self.dropout_p,
        }

    def forward(self, x, rng=None):
        _check_input(x, 1, self.image_size)
        h = T.relu(self.stem_norm(self.stem(x)))
        h = T.relu(self.down1_norm(self.down1(h)))
        h = T.relu(self.down2_norm(self.down2(h)))
        for block in self.blocks:
            h = block(h)
        if self.drop is not None:
            h = self.drop(h, rng=rng)
        h = T.relu(self.up1_norm(self.up1(h)))
        h = T.relu(self.up2_norm(self.up2(h)))
        return _remap_tanh(self.head(h))


class PatchDiscriminator(Module):
    """Stride-2 conv stack ending in an N x N patch logit map.

    ``in_channels`` is 1 for the unpaired regime and 2 for the
    conditional one, where the condition is concatenated channel-wise
    with the candidate before the call. Outputs are raw logits; the
    losses apply the sigmoid.
    """

    def __init__(self, image_size=128, n_downsample=3, in_channels=1,
                 base_channels=64, norm="batch", rng=None):
        _check_image_size(image_size)
        if in_channels not in (1, 2):
            raise BadConfig(f"in_channels must be 1 or 2, got {in_channels}")
        if n_downsample < 1:
            raise BadConfig("n_downsample must be >= 1")
        if base_channels < 1:
            raise BadConfig("base_channels must be >= 1")
        if norm not in ("batch", "instance"):
            raise BadConfig(f"norm must be 'batch' or 'instance', got {norm!r}")
        if rng is None:
            rng = seeded_rng(0)
        self.image_size = image_size
        self.n_downsample = n_downsample
        self.in_channels = in_channels
        self.base_channels = base_channels
        self.norm = norm

        def make_norm(channels):
            return BatchNorm2d(channels) if norm == "batch" else InstanceNorm2d(channels)

        side = image_size
        c_in = in_channels
        self.convs = []
        self.norms = []
        for k in range(n_downsample):
            c_out = min(base_channels * 2 ** k, base_channels * 8)
            self.convs.append(Conv2d(c_in, c_out, 4, stride=2, pad=1, rng=rng))
            self.norms.append(make_norm(c_out) if k > 0 else None)
            side = T.conv_out_side(side, 4, 2, 1)
            c_in = c_out
        c_out = min(base_channels * 2 ** n_downsample, base_channels * 8)
        self.pre = Conv2d(c_in, c_out, 4, stride=1, pad=1, rng=rng)
        self.pre_norm = make_norm(c_out)
        side = T.conv_out_side(side, 4, 1, 1)
        self.head = Conv2d(c_out, 1, 4, stride=1, pad=1, rng=rng)
        side = T.conv_out_side(side, 4, 1, 1)
        if side < 1:
            raise BadConfig(
                f"n_downsample {n_downsample} collapses a {image_size} px image"
            )
        self.patch_side = side

    def config(self) -> dict:
        return {
            "image_size": self.image_size,
            "n_downsample": self.n_downsample,
            "in_channels": self.in_channels,
            "base_channels": self.base_channels,
            "norm": self.norm,
        }

    def forward(self, x, rng=None):
        _check_input(x, self.in_channels, self.image_size)
        h = x
        for conv, norm in zip(self.convs, self.norms):
            h = conv(h)
            if norm is not None:
                h = norm(h)
            h = T.leaky_relu(h, 0.2)
        h = T.leaky_relu(self.pre_norm(self.pre(h)), 0.2)
        return self.head(h)


_GENERATOR_KEYS = {
    "kind", "image_size", "base_channels", "depth", "n_residual_blocks",
    "dropout_p", "seed",
}
_DISCRIMINATOR_KEYS = {
    "image_size", "n_downsample", "in_channels", "base_channels", "norm", "seed",
}


def build_generator(config: dict) -> Module:
    """Construct a generator from a config dict with seeded init."""
    unknown = config.keys() - _GENERATOR_KEYS
    if unknown:
        raise BadConfig(f"unknown generator config keys {sorted(unknown)}")
    kind = config.get("kind", "unet")
    rng = seeded_rng(config.get("seed", 0))
    common = dict(
        image_size=config.get("image_size", 128),
        base_channels=config.get("base_channels", 64),
        rng=rng,
    )
    if kind == "unet":
        if "n_residual_blocks" in config:
            raise BadConfig("unet generators take 'depth', not 'n_residual_blocks'")
        return UNetGenerator(depth=config.get("depth"),
                             dropout_p=config.get("dropout_p", 0.5), **common)
    if kind == "resnet":
        if "depth" in config:
            raise BadConfig("resnet generators take 'n_residual_blocks', not 'depth'")
        return ResnetGenerator(n_residual_blocks=config.get("n_residual_blocks", 6),
                               dropout_p=config.get("dropout_p", 0.0), **common)
    raise BadConfig(f"unknown generator kind {kind!r}")


def build_discriminator(config: dict) -> PatchDiscriminator:
    """Construct a patch discriminator from a config dict with seeded init."""
    unknown = config.keys() - _DISCRIMINATOR_KEYS
    if unknown:
        raise BadConfig(f"unknown discriminator config keys {sorted(unknown)}")
    return PatchDiscriminator(
        image_size=config.get("image_size", 128),
        n_downsample=config.get("n_downsample", 3),
        in_channels=config.get("in_channels", 1),
        base_channels=config.get("base_channels", 64),
        norm=config.get("norm", "batch"),
        rng=seeded_rng(config.get("seed", 0)),
    )


def set_deterministic(net: Module, deterministic: bool = True) -> None:
    """Toggle generator noise: disables (or re-enables) every dropout."""
    for module in [net, *net.submodules()]:
        if isinstance(module, Dropout):
            module.enabled = not deterministic


# -- losses ---------------------------------------------------------------

def _check_adv_mode(adv_loss: str) -> None:
    if adv_loss not in ADV_MODES:
        raise BadConfig(f"adv_loss must be one of {ADV_MODES}, got {adv_loss!r}")


def _probabilities(logits: Tensor) -> Tensor:
    return T.clamp(T.sigmoid(logits), EPSILON_PROB, 1.0 - EPSILON_PROB)


def adversarial_value(d_real, d_fake) -> float:
    """The minimax value: mean log D(real) + mean log(1 - D(fake)).

    A diagnostic over probability maps; zero for a perfect discriminator
    on clamped inputs, 2 ln(1/2) at the indifference point.
    """
    r = d_real.data if isinstance(d_real, Tensor) else np.asarray(d_real, dtype=np.float64)
    f = d_fake.data if isinstance(d_fake, Tensor) else np.asarray(d_fake, dtype=np.float64)
    r = np.clip(r, EPSILON_PROB, 1.0 - EPSILON_PROB)
    f = np.clip(f, EPSILON_PROB, 1.0 - EPSILON_PROB)
    return float(np.mean(np.log(r)) + np.mean(np.log1p(-f)))


def _d_loss_from_logits(real_logits: Tensor, fake_logits: Tensor,
                        adv_loss: str) -> Tensor:
    if adv_loss == "log":
        p_real = _probabilities(real_logits)
        p_fake = _probabilities(fake_logits)
        return -(T.tmean(T.log(p_real)) + T.tmean(T.log(1.0 - p_fake)))
    real_term = T.tmean(T.square(real_logits - 1.0))
    fake_term = T.tmean(T.square(fake_logits))
    return T.mul_scalar(real_term + fake_term, 0.5)


def discriminator_loss(d: PatchDiscriminator, real: Tensor, fake: Tensor,
                       condition: Tensor | None = None,
                       adv_loss: str = "log") -> Tensor:
    """Discriminator objective on a real batch and a (detached) fake batch."""
    _check_adv_mode(adv_loss)
    fake = fake.detach()
    if condition is not None:
        if d.in_channels != 2:
            raise ShapeMismatch("conditional pass needs a 2-channel discriminator")
        real = T.concat(condition, real, axis=1)
        fake = T.concat(condition, fake, axis=1)
    elif d.in_channels != 1:
        raise ShapeMismatch("unconditional pass needs a 1-channel discriminator")
    return _d_loss_from_logits(d(real), d(fake), adv_loss)


def cgan_discriminator_loss(d: PatchDiscriminator, x: Tensor, y: Tensor,
                            g_out: Tensor, adv_loss: str = "log") -> Tensor:
    """Conditional discriminator loss: input concatenated with each candidate."""
    return discriminator_loss(d, y, g_out, condition=x, adv_loss=adv_loss)


def generator_adv_loss(d: PatchDiscriminator, x: Tensor | None, g_out: Tensor,
                       adv_loss: str = "log") -> Tensor:
    """Adversarial term driving the generator; non-saturating in log mode."""
    _check_adv_mode(adv_loss)
    if x is not None:
        if d.in_channels != 2:
            raise ShapeMismatch("conditional pass needs a 2-channel discriminator")
        inp = T.concat(x, g_out, axis=1)
    else:
        if d.in_channels != 1:
            raise ShapeMismatch("unconditional pass needs a 1-channel discriminator")
        inp = g_out
    logits = d(inp)
    if adv_loss == "log":
        return -T.tmean(T.log(_probabilities(logits)))
    return T.tmean(T.square(logits - 1.0))


def l1_loss(g_out: Tensor, target: Tensor) -> Tensor:
    """Mean absolute elementwise difference."""
    if tuple(g_out.shape) != tuple(target.shape):
        raise ShapeMismatch(f"l1_loss: {tuple(g_out.shape)} vs {tuple(target.shape)}")
    return T.tmean(T.absolute(g_out - target))


def cycle_loss(g: Module, f: Module, batch_x: Tensor, batch_y: Tensor,
               rng=None) -> Tensor:
    """Forward and backward cycle-consistency: mean L1 of both round trips."""
    if getattr(g, "image_size", None) != getattr(f, "image_size", None):
        raise ShapeMismatch("cycle generators must share an image size")
    if batch_x.data.ndim != 4 or batch_y.data.ndim != 4 \
            or batch_x.shape[0] < 1 or batch_y.shape[0] < 1:
        raise ShapeMismatch("cycle_loss needs non-empty (N,1,H,W) batches")
    forward_term = T.tmean(T.absolute(f(g(batch_x, rng=rng), rng=rng) - batch_x))
    backward_term = T.tmean(T.absolute(g(f(batch_y, rng=rng), rng=rng) - batch_y))
    return forward_term + backward_term


class LossReport:
    """One training step's loss components, all finite floats.

    In unpaired mode ``g_adv_loss`` holds the sum of both generators'
    adversarial terms.
    """

    __slots__ = ("d_loss", "g_adv_loss", "l1_loss", "cycle_loss", "total_g_loss")

    def __init__(self, d_loss: float, g_adv_loss: float, l1_loss=None,
                 cycle_loss=None, total_g_loss: float = 0.0):
        self.d_loss = float(d_loss)
        self.g_adv_loss = float(g_adv_loss)
        self.l1_loss = None if l1_loss is None else float(l1_loss)
        self.cycle_loss = None if cycle_loss is None else float(cycle_loss)
        self.total_g_loss = float(total_g_loss)
        for name in self.__slots__:
            value = getattr(self, name)
            if value is not None and not np.isfinite(value):
                raise NonFinite(f"LossReport.{name} is not finite")

    def as_row(self) -> dict:
        blank = lambda v: "" if v is None else repr(v)
        return {
            "d_loss": repr(self.d_loss),
            "g_adv": repr(self.g_adv_loss),
            "l1": blank(self.l1_loss),
            "cycle": blank(self.cycle_loss),
            "total": repr(self.total_g_loss),
        }


def total_generator_objective(mode: str, parts: LossReport,
                              weights: dict | None = None) -> float:
    """Weighted generator total for a regime; weights are config-injected."""
    merged = dict(DEFAULT_WEIGHTS)
    merged.update(weights or {})
    if mode == "paired":
        if parts.l1_loss is None:
            raise MissingPart("paired objective needs l1_loss")
        return parts.g_adv_loss + merged["lambda_l1"] * parts.l1_loss
    if mode == "unpaired":
        if parts.cycle_loss is None:
            raise MissingPart("unpaired objective needs cycle_loss")
        return parts.g_adv_loss + merged["lambda_cyc"] * parts.cycle_loss
    raise BadConfig(f"mode must be 'paired' or 'unpaired', got {mode!r}")
