"""Training loops for the two regimes, with checkpoints and snapshots.

The paired loop feeds concatenated (input, candidate) pairs to a
conditional discriminator and drives the generator with an adversarial
term plus a weighted L1 term; the unpaired loop trains two generators
and two discriminators under a cycle-consistency penalty, with a replay
buffer of recent fakes steadying the discriminator updates.

Every stochastic choice derives from the config seed: weight init and
per-epoch batch order come from tagged child streams, while dropout,
flips, and replay decisions draw sequentially from one training stream
whose position is checkpointed. Runs are therefore bit-reproducible and
resumable from any step boundary (under the float32 training dtype,
which is also what checkpoints store).
"""

from __future__ import annotations

import csv
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import dsp, figures
from .corpus import pool_pixels
from .engine import tensor as T
from .engine.layers import Dropout, Module
from .engine.optim import Adam
from .engine.rng import derive_rng, restore_rng, rng_state
from .engine.serialize import parse_tensor_blob, tensor_blob
from .engine.tensor import Tensor
from .errors import (
    BadConfig,
    CorruptCheckpoint,
    EmptyCorpus,
    IoFailure,
    NonFinite,
    ShapeMismatch,
)
from .gan import (
    ADV_MODES,
    LAMBDA_CYC_DEFAULT,
    LAMBDA_L1_DEFAULT,
    VALID_IMAGE_SIZES,
    LossReport,
    PatchDiscriminator,
    ResnetGenerator,
    UNetGenerator,
    build_discriminator,
    build_generator,
    cgan_discriminator_loss,
    discriminator_loss,
    generator_adv_loss,
    l1_loss,
)

MODES = ("paired", "unpaired")
REPLAY_BUFFER_SIZE = 50
CHECKPOINT_MAGIC = b"SECK"
CHECKPOINT_VERSION = 1
CHECKPOINT_NAME = "state.ckpt"
LOSS_LOG_NAME = "loss_log.csv"
SNAPSHOT_DIR_NAME = "snapshots"
SNAPSHOT_GL_ITERATIONS = 50
LOSS_LOG_COLUMNS = ("step", "epoch", "d_loss", "g_adv", "l1", "cycle", "total")

# child-stream tags; kept clear of the tags the corpus generator uses
_TAG_INIT = 201
_TAG_TRAIN = 202
_TAG_ORDER = 203


@dataclass
class TrainConfig:
    """Hyperparameters and plumbing for one training run."""

    mode: str = "paired"
    batch_size: int = 4
    epochs: int = 1
    learning_rate: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    lambda_l1: float = LAMBDA_L1_DEFAULT
    lambda_cyc: float = LAMBDA_CYC_DEFAULT
    adv_loss: str = "log"
    image_size: int = 128
    seed: int = 0
    flip_augmentation: bool = False
    snapshot_every: int = 0
    output_dir: str | None = None
    base_channels: int = 64
    unet_depth: int | None = None
    n_residual_blocks: int = 6
    n_downsample: int = 3
    dropout: float = 0.5
    replay_buffer: bool = True

    def validate(self) -> "TrainConfig":
        if self.mode not in MODES:
            raise BadConfig(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.batch_size < 1:
            raise BadConfig(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise BadConfig(f"epochs must be >= 0, got {self.epochs}")
        if self.learning_rate <= 0.0:
            raise BadConfig(f"learning_rate must be positive, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise BadConfig(f"{name} must lie in [0, 1), got {value}")
        if self.lambda_l1 < 0.0 or self.lambda_cyc < 0.0:
            raise BadConfig("loss weights must be nonnegative")
        if self.adv_loss not in ADV_MODES:
            raise BadConfig(f"adv_loss must be one of {ADV_MODES}, got {self.adv_loss!r}")
        if self.image_size not in VALID_IMAGE_SIZES:
            raise BadConfig(
                f"image_size must be one of {VALID_IMAGE_SIZES}, got {self.image_size}"
            )
        if self.seed < 0:
            raise BadConfig("seed must be nonnegative")
        if self.snapshot_every < 0:
            raise BadConfig("snapshot_every must be >= 0 (0 disables snapshots)")
        if min(self.base_channels, self.n_residual_blocks, self.n_downsample) < 1:
            raise BadConfig("network size fields must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise BadConfig(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.output_dir is not None:
            self.output_dir = str(self.output_dir)
        return self


@dataclass
class TrainState:
    """Everything a run needs to continue: nets, optimizers, rng, history.

    ``loss_history`` holds (epoch, LossReport) tuples, one per completed
    optimizer step.
    """

    config: TrainConfig
    nets: dict[str, Module]
    optims: dict[str, Adam]
    rng: np.random.Generator
    epoch: int = 0
    global_step: int = 0
    loss_history: list = field(default_factory=list)
    replay: dict[str, list] = field(default_factory=dict)


def make_state(cfg: TrainConfig) -> TrainState:
    """Fresh nets and optimizers for a config, seeded per network."""
    cfg.validate()
    nets: dict[str, Module] = {}
    if cfg.mode == "paired":
        nets["G"] = UNetGenerator(
            cfg.image_size,
            cfg.base_channels,
            depth=cfg.unet_depth,
            dropout_p=cfg.dropout,
            rng=derive_rng(cfg.seed, _TAG_INIT, 0),
        )
        nets["D"] = PatchDiscriminator(
            cfg.image_size,
            n_downsample=cfg.n_downsample,
            in_channels=2,
            base_channels=cfg.base_channels,
            norm="batch",
            rng=derive_rng(cfg.seed, _TAG_INIT, 1),
        )
    else:
        for tag, name in ((2, "G"), (3, "F")):
            nets[name] = ResnetGenerator(
                cfg.image_size,
                cfg.base_channels,
                cfg.n_residual_blocks,
                rng=derive_rng(cfg.seed, _TAG_INIT, tag),
            )
        for tag, name in ((4, "D_X"), (5, "D_Y")):
            nets[name] = PatchDiscriminator(
                cfg.image_size,
                n_downsample=cfg.n_downsample,
                in_channels=1,
                base_channels=cfg.base_channels,
                norm="instance",
                rng=derive_rng(cfg.seed, _TAG_INIT, tag),
            )
    optims = {
        name: Adam(net.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2)
        for name, net in nets.items()
    }
    replay = {"X": [], "Y": []} if cfg.mode == "unpaired" else {}
    return TrainState(cfg, nets, optims, derive_rng(cfg.seed, _TAG_TRAIN), replay=replay)


# -- data marshalling -------------------------------------------------------

def _to_pixels(item, image_size: int) -> np.ndarray:
    """Pixels of an image-like object, pooled down to the training size."""
    if isinstance(item, dsp.SpectrogramImage):
        pixels = item.pixels
    else:
        pixels = np.asarray(item, dtype=np.float64)
    if pixels.ndim != 2 or pixels.shape[0] != pixels.shape[1]:
        raise ShapeMismatch(f"expected a square image, got shape {pixels.shape}")
    if pixels.shape[0] != image_size:
        if pixels.shape[0] % image_size != 0:
            raise ShapeMismatch(
                f"cannot pool a {pixels.shape[0]} px image to {image_size} px"
            )
        pixels = pool_pixels(pixels, image_size)
    return pixels


def image_batch(items, image_size: int) -> np.ndarray:
    """Stack image-like objects into an (N, 1, S, S) network batch."""
    if not items:
        raise EmptyCorpus("no images supplied")
    stacked = np.stack([_to_pixels(item, image_size) for item in items])
    return stacked[:, None, :, :].astype(T.default_dtype())


def _stack_images(items, image_size: int) -> np.ndarray:
    if not items:
        raise EmptyCorpus("image corpus is empty")
    return np.stack([_to_pixels(item, image_size) for item in items]).astype(
        T.default_dtype()
    )


def _stack_pairs(samples, image_size: int) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        raise EmptyCorpus("paired corpus is empty")
    xs = np.stack([_to_pixels(s.x, image_size) for s in samples])
    ys = np.stack([_to_pixels(s.y, image_size) for s in samples])
    return xs.astype(T.default_dtype()), ys.astype(T.default_dtype())


def assert_no_leakage(train_ids, holdout_ids) -> None:
    """Reject a split whose held-out ids appear in the training set."""
    overlap = set(train_ids) & set(holdout_ids)
    if overlap:
        shown = ", ".join(sorted(overlap)[:3])
        raise BadConfig(
            f"{len(overlap)} held-out ids leak into the training set (e.g. {shown})"
        )


def _paired_batch(xs, ys, idx, flip: bool, rng) -> tuple[np.ndarray, np.ndarray]:
    """Slice one batch; a flip decision applies to both sides of a pair."""
    bx = xs[idx][:, None, :, :].copy()
    by = ys[idx][:, None, :, :].copy()
    if flip:
        for i in range(bx.shape[0]):
            if rng.random() < 0.5:
                bx[i, 0] = bx[i, 0, :, ::-1]
                by[i, 0] = by[i, 0, :, ::-1]
    return bx, by


def _single_batch(stack, idx, flip: bool, rng) -> np.ndarray:
    batch = stack[idx][:, None, :, :].copy()
    if flip:
        for i in range(batch.shape[0]):
            if rng.random() < 0.5:
                batch[i, 0] = batch[i, 0, :, ::-1]
    return batch


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return derive_rng(seed, _TAG_ORDER, epoch)


# -- optimizer steps --------------------------------------------------------

def _paired_step(state: TrainState, bx: np.ndarray, by: np.ndarray) -> LossReport:
    cfg = state.config
    g, d = state.nets["G"], state.nets["D"]
    tx, ty = Tensor(bx), Tensor(by)
    fake = g(tx, rng=state.rng)

    d.zero_grad()
    d_loss = cgan_discriminator_loss(d, tx, ty, fake, adv_loss=cfg.adv_loss)
    d_loss.backward()
    state.optims["D"].step()

    g.zero_grad()
    g_adv = generator_adv_loss(d, tx, fake, adv_loss=cfg.adv_loss)
    l1 = l1_loss(fake, ty)
    total = T.add(g_adv, T.mul_scalar(l1, cfg.lambda_l1))
    total.backward()
    state.optims["G"].step()

    return LossReport(
        d_loss.item(), g_adv.item(), l1_loss=l1.item(), total_g_loss=total.item()
    )


def _through_replay(buffer: list, fakes: np.ndarray, rng, enabled: bool) -> np.ndarray:
    """History-mixing pool: returns the fakes the discriminator should see."""
    if not enabled:
        return fakes
    out = np.empty_like(fakes)
    for i in range(fakes.shape[0]):
        image = fakes[i].copy()
        if len(buffer) < REPLAY_BUFFER_SIZE:
            buffer.append(image)
            out[i] = image
        elif rng.random() < 0.5:
            slot = int(rng.integers(len(buffer)))
            out[i] = buffer[slot]
            buffer[slot] = image
        else:
            out[i] = image
    return out


def _unpaired_step(state: TrainState, bx: np.ndarray, by: np.ndarray) -> LossReport:
    cfg = state.config
    g, f = state.nets["G"], state.nets["F"]
    d_x, d_y = state.nets["D_X"], state.nets["D_Y"]
    tx, ty = Tensor(bx), Tensor(by)
    fake_y = g(tx, rng=state.rng)
    fake_x = f(ty, rng=state.rng)

    seen_y = _through_replay(state.replay["Y"], fake_y.data, state.rng, cfg.replay_buffer)
    seen_x = _through_replay(state.replay["X"], fake_x.data, state.rng, cfg.replay_buffer)

    d_y.zero_grad()
    dy_loss = discriminator_loss(d_y, ty, Tensor(seen_y), adv_loss=cfg.adv_loss)
    dy_loss.backward()
    state.optims["D_Y"].step()

    d_x.zero_grad()
    dx_loss = discriminator_loss(d_x, tx, Tensor(seen_x), adv_loss=cfg.adv_loss)
    dx_loss.backward()
    state.optims["D_X"].step()

    g.zero_grad()
    f.zero_grad()
    g_adv = T.add(
        generator_adv_loss(d_y, None, fake_y, adv_loss=cfg.adv_loss),
        generator_adv_loss(d_x, None, fake_x, adv_loss=cfg.adv_loss),
    )
    cyc = T.add(
        T.tmean(T.absolute(f(fake_y, rng=state.rng) - tx)),
        T.tmean(T.absolute(g(fake_x, rng=state.rng) - ty)),
    )
    # at weight zero the cycle term is logged but kept off the tape walk,
    # so neither generator receives gradient from it
    if cfg.lambda_cyc > 0.0:
        total = T.add(g_adv, T.mul_scalar(cyc, cfg.lambda_cyc))
    else:
        total = g_adv
    total.backward()
    state.optims["G"].step()
    state.optims["F"].step()

    return LossReport(
        dy_loss.item() + dx_loss.item(),
        g_adv.item(),
        cycle_loss=cyc.item(),
        total_g_loss=total.item(),
    )


def _check_params_finite(nets: dict[str, Module], step: int) -> None:
    for net_name, net in nets.items():
        for param_name, param in net.named_parameters():
            if not np.all(np.isfinite(param.data)):
                raise NonFinite(
                    f"{net_name}.{param_name} went non-finite during step {step}"
                )


# -- checkpoint container ----------------------------------------------------

def _snapshot_payload(state: TrainState) -> tuple[dict[str, np.ndarray], dict]:
    """Copies of every array plus JSON metadata describing the run."""
    arrays: dict[str, np.ndarray] = {}
    for name, net in state.nets.items():
        for key, value in net.state_arrays().items():
            arrays[f"net/{name}/{key}"] = value.copy()
    for name, opt in state.optims.items():
        for i, moment in enumerate(opt.state.first_moment):
            arrays[f"adam/{name}/m/{i}"] = moment.copy()
        for i, moment in enumerate(opt.state.second_moment):
            arrays[f"adam/{name}/v/{i}"] = moment.copy()
    for domain, buffer in state.replay.items():
        if buffer:
            arrays[f"replay/{domain}"] = np.stack(buffer)
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(state.config),
        "net_configs": {name: net.config() for name, net in state.nets.items()},
        "epoch": state.epoch,
        "global_step": state.global_step,
        "adam_steps": {name: opt.state.step_count for name, opt in state.optims.items()},
        "rng": rng_state(state.rng),
        "loss_history": [
            [e, r.d_loss, r.g_adv_loss, r.l1_loss, r.cycle_loss, r.total_g_loss]
            for e, r in state.loss_history
        ],
        "replay_sizes": {domain: len(buffer) for domain, buffer in state.replay.items()},
    }
    return arrays, meta


def _write_checkpoint(arrays: dict, meta: dict, path: Path) -> None:
    encoded = json.dumps(meta, sort_keys=True).encode("utf-8")
    header = CHECKPOINT_MAGIC + struct.pack("<BQ", CHECKPOINT_VERSION, len(encoded))
    blob = header + encoded + tensor_blob(arrays)
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(blob)
        tmp.replace(path)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def save_state(state: TrainState, path) -> None:
    """Write a resumable checkpoint: parameters, optimizer moments, rng,
    loss history, and replay buffers in one container file."""
    arrays, meta = _snapshot_payload(state)
    _write_checkpoint(arrays, meta, Path(path))


def load_state(path) -> TrainState:
    """Rebuild a TrainState exactly as saved."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read checkpoint {path}: {exc}") from exc
    header_size = len(CHECKPOINT_MAGIC) + struct.calcsize("<BQ")
    if len(blob) < header_size:
        raise CorruptCheckpoint(f"{path}: truncated before the header ends")
    if blob[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic; not a training checkpoint")
    version, json_len = struct.unpack(
        "<BQ", blob[len(CHECKPOINT_MAGIC):header_size]
    )
    if version != CHECKPOINT_VERSION:
        raise CorruptCheckpoint(
            f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )
    if header_size + json_len > len(blob):
        raise CorruptCheckpoint(f"{path}: truncated inside the metadata block")
    try:
        meta = json.loads(blob[header_size:header_size + json_len])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable metadata: {exc}") from exc
    arrays = parse_tensor_blob(blob[header_size + json_len:], origin=str(path))

    cfg = TrainConfig(**meta["config"]).validate()
    dtype = T.default_dtype()
    nets: dict[str, Module] = {}
    optims: dict[str, Adam] = {}
    for name, net_config in meta["net_configs"].items():
        net = (
            build_generator(net_config)
            if "kind" in net_config
            else build_discriminator(net_config)
        )
        prefix = f"net/{name}/"
        net.load_state_arrays(
            {k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)}
        )
        opt = Adam(net.parameters(), cfg.learning_rate, cfg.beta1, cfg.beta2)
        opt.state.step_count = int(meta["adam_steps"][name])
        if opt.state.step_count > 0:
            n_params = len(opt.params)
            for kind, target in (("m", []), ("v", [])):
                for i in range(n_params):
                    key = f"adam/{name}/{kind}/{i}"
                    if key not in arrays:
                        raise CorruptCheckpoint(f"{path}: missing optimizer array {key}")
                    target.append(arrays[key].astype(dtype))
                if kind == "m":
                    opt.state.first_moment = target
                else:
                    opt.state.second_moment = target
        nets[name] = net
        optims[name] = opt

    replay: dict[str, list] = {}
    for domain, size in meta.get("replay_sizes", {}).items():
        if size:
            stacked = arrays[f"replay/{domain}"].astype(dtype)
            replay[domain] = [stacked[i].copy() for i in range(size)]
        else:
            replay[domain] = []

    history = [
        (int(e), LossReport(d, g, l1_loss=l1, cycle_loss=cyc, total_g_loss=tot))
        for e, d, g, l1, cyc, tot in meta["loss_history"]
    ]
    return TrainState(
        cfg,
        nets,
        optims,
        restore_rng(meta["rng"]),
        epoch=int(meta["epoch"]),
        global_step=int(meta["global_step"]),
        loss_history=history,
        replay=replay,
    )


def write_loss_log(loss_history, path) -> None:
    """CSV of per-step losses; blank cells where a term does not apply."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(LOSS_LOG_COLUMNS)
            for step, (epoch, report) in enumerate(loss_history):
                row = report.as_row()
                writer.writerow(
                    [step, epoch, row["d_loss"], row["g_adv"], row["l1"],
                     row["cycle"], row["total"]]
                )
    except OSError as exc:
        raise IoFailure(f"cannot write loss log {path}: {exc}") from exc


# -- epoch snapshots ---------------------------------------------------------

def _probe_parts(probe):
    if hasattr(probe, "x"):
        return probe.x, probe.y
    return probe, None


def _probe_name(probe, index: int) -> str:
    name = getattr(probe, "utterance_id", None)
    return str(name) if name else f"{index:02d}"


def _full_scale_image(pixels: np.ndarray, meta: dsp.ImageMeta) -> dsp.SpectrogramImage:
    """Lift generated pixels back to the 128 px container for export."""
    side = pixels.shape[0]
    if side != dsp.IMAGE_SIZE:
        factor = dsp.IMAGE_SIZE // side
        pixels = np.kron(pixels, np.ones((factor, factor)))
    return dsp.SpectrogramImage(np.clip(pixels, 0.0, 1.0), replace(meta))


def snapshot_epoch(state: TrainState, probes, directory) -> list[Path]:
    """Progress dump for fixed probe inputs.

    Per probe: a panel PNG (input | generated | reference when the probe
    is a pair), the generated image as a SPEC1 file, and its phase
    reconstruction as a WAV. Generation runs in eval mode with dropout
    off, so consecutive snapshots differ only through parameter movement.
    """
    directory = Path(directory)
    cfg = state.config
    g = state.nets["G"]
    dropouts = [m for m in [g, *g.submodules()] if isinstance(m, Dropout)]
    saved_flags = [(m, m.enabled) for m in dropouts]
    was_training = g.training
    written: list[Path] = []
    try:
        directory.mkdir(parents=True, exist_ok=True)
        g.eval()
        for module in dropouts:
            module.enabled = False
        for index, probe in enumerate(probes):
            x_item, y_item = _probe_parts(probe)
            pixels = _to_pixels(x_item, cfg.image_size)
            batch = pixels[None, None, :, :].astype(T.default_dtype())
            generated = np.asarray(g(Tensor(batch)).data[0, 0], dtype=np.float64)
            generated = np.clip(generated, 0.0, 1.0)

            meta = (
                x_item.meta
                if isinstance(x_item, dsp.SpectrogramImage)
                else dsp.ImageMeta()
            )
            stem = f"epoch{state.epoch:04d}_probe{_probe_name(probe, index)}"
            image = _full_scale_image(generated, meta)
            spec_path = directory / f"{stem}_generated.spec"
            dsp.save_spec(image, spec_path)
            wav_path = directory / f"{stem}_generated.wav"
            dsp.save_wav(dsp.griffin_lim(image, iterations=SNAPSHOT_GL_ITERATIONS), wav_path)

            panels = [pixels, generated]
            titles = ["input", "generated"]
            if y_item is not None:
                panels.append(_to_pixels(y_item, cfg.image_size))
                titles.append("reference")
            png_path = directory / f"{stem}_panel.png"
            figures.render_panels(panels, titles, png_path)
            written.extend([spec_path, wav_path, png_path])
    except OSError as exc:
        raise IoFailure(f"snapshot write failed in {directory}: {exc}") from exc
    finally:
        for module, flag in saved_flags:
            module.enabled = flag
        g.train(was_training)
    return written


# -- the shared loop ---------------------------------------------------------

def _resolve_state(cfg, state, expected_mode: str) -> TrainState:
    if state is None:
        if cfg is None:
            raise BadConfig("pass a TrainConfig or a resumed TrainState")
        cfg.validate()
        if cfg.mode != expected_mode:
            raise BadConfig(f"this entry point trains mode {expected_mode!r}, "
                            f"config says {cfg.mode!r}")
        return make_state(cfg)
    if cfg is not None and cfg is not state.config:
        raise BadConfig("a resumed run takes its config from the checkpoint")
    if state.config.mode != expected_mode:
        raise BadConfig(f"checkpoint was trained in mode {state.config.mode!r}")
    return state


def _run(state: TrainState, n_items: int, batch_fn, step_fn, steps, probes) -> TrainState:
    cfg = state.config
    steps_per_epoch = n_items // cfg.batch_size
    if steps_per_epoch == 0:
        raise EmptyCorpus(
            f"{n_items} items cannot fill one batch of {cfg.batch_size}"
        )
    if steps is not None:
        target = state.global_step + int(steps)
    else:
        target = cfg.epochs * steps_per_epoch
    out_dir = Path(cfg.output_dir) if cfg.output_dir else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    while state.global_step < target:
        step = state.global_step
        epoch, position = divmod(step, steps_per_epoch)
        backup = _snapshot_payload(state) if out_dir is not None else None
        try:
            batches = batch_fn(epoch, position, state.rng)
            report = step_fn(state, *batches)
            _check_params_finite(state.nets, step)
        except NonFinite:
            if out_dir is not None:
                if backup is not None:
                    _write_checkpoint(*backup, out_dir / CHECKPOINT_NAME)
                write_loss_log(state.loss_history, out_dir / LOSS_LOG_NAME)
            raise
        state.loss_history.append((epoch, report))
        state.global_step = step + 1
        state.epoch = state.global_step // steps_per_epoch
        finished_epoch = state.global_step % steps_per_epoch == 0
        if finished_epoch and out_dir is not None:
            save_state(state, out_dir / CHECKPOINT_NAME)
            if cfg.snapshot_every and probes and state.epoch % cfg.snapshot_every == 0:
                snapshot_epoch(state, probes, out_dir / SNAPSHOT_DIR_NAME)
    if out_dir is not None:
        save_state(state, out_dir / CHECKPOINT_NAME)
        write_loss_log(state.loss_history, out_dir / LOSS_LOG_NAME)
    return state


def train_paired(
    samples,
    cfg: TrainConfig | None = None,
    *,
    state: TrainState | None = None,
    steps: int | None = None,
    train_ids=None,
    holdout_ids=None,
    snapshot_probes=None,
) -> TrainState:
    """Conditional training on (non-native, native) pairs.

    Runs ``cfg.epochs`` passes (partial final batches dropped), or
    exactly ``steps`` additional optimizer steps when given. Pass a
    ``state`` from ``load_state`` to resume. Providing ``train_ids`` and
    ``holdout_ids`` asserts the split is leak-free before any batch is
    drawn.
    """
    state = _resolve_state(cfg, state, "paired")
    cfg = state.config
    if train_ids is not None and holdout_ids is not None:
        assert_no_leakage(train_ids, holdout_ids)
    xs, ys = _stack_pairs(samples, cfg.image_size)

    orders: dict[int, np.ndarray] = {}

    def batch_fn(epoch, position, rng):
        if epoch not in orders:
            orders.clear()
            orders[epoch] = _epoch_rng(cfg.seed, epoch).permutation(len(samples))
        idx = orders[epoch][position * cfg.batch_size:(position + 1) * cfg.batch_size]
        return _paired_batch(xs, ys, idx, cfg.flip_augmentation, rng)

    return _run(state, len(samples), batch_fn, _paired_step, steps, snapshot_probes)


def train_unpaired(
    corpus_x,
    corpus_y,
    cfg: TrainConfig | None = None,
    *,
    state: TrainState | None = None,
    steps: int | None = None,
    train_ids=None,
    holdout_ids=None,
    snapshot_probes=None,
) -> TrainState:
    """Cycle-consistent training on two unrelated image collections.

    ``corpus_x`` holds non-native images, ``corpus_y`` native ones; no
    pairing metadata is consulted. An epoch is one pass over the smaller
    corpus; the larger one is re-shuffled and truncated each epoch.
    """
    state = _resolve_state(cfg, state, "unpaired")
    cfg = state.config
    if train_ids is not None and holdout_ids is not None:
        assert_no_leakage(train_ids, holdout_ids)
    xs = _stack_images(corpus_x, cfg.image_size)
    ys = _stack_images(corpus_y, cfg.image_size)

    orders: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def batch_fn(epoch, position, rng):
        if epoch not in orders:
            orders.clear()
            epoch_rng = _epoch_rng(cfg.seed, epoch)
            orders[epoch] = (
                epoch_rng.permutation(len(xs)),
                epoch_rng.permutation(len(ys)),
            )
        order_x, order_y = orders[epoch]
        lo, hi = position * cfg.batch_size, (position + 1) * cfg.batch_size
        bx = _single_batch(xs, order_x[lo:hi], cfg.flip_augmentation, rng)
        by = _single_batch(ys, order_y[lo:hi], cfg.flip_augmentation, rng)
        return bx, by

    n_items = min(len(xs), len(ys))
    return _run(state, n_items, batch_fn, _unpaired_step, steps, snapshot_probes)
