"""Adversarial training loops, loss assembly, and state checkpointing.

Two regimes share machinery here.  The unpaired cycle-consistent setup
trains generators G: X->Y and F: Y->X against per-domain discriminators
with adversarial + cycle (+ optional identity) losses.  The paired setup
trains a single U-Net against a conditional discriminator with adversarial
+ L1 losses.  Discriminators see generated images through a replay pool
that returns a previously stored fake instead of the current one with
probability 1/2 once warm.

Loss conventions (lsgan mode): real target 1, fake target 0, squared error;
discriminator losses carry the usual 1/2.  cross_entropy mode swaps squared
error for softplus-based binary cross-entropy on logits.
"""

from __future__ import annotations

import itertools
import logging
import os
from dataclasses import dataclass

import numpy as np

from ..autograd import Adam, Tensor, concat, read_checkpoint, write_checkpoint
from ..autograd import tensor as T
from ..config import RunConfig
from . import nets

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    """A loss went non-finite; a diagnostic checkpoint may have been saved."""


class ImagePool:
    """Replay buffer of generated images.

    Until `size` images are stored, incoming images pass through and are
    kept.  Once full, each incoming image either passes through (p = 1/2)
    or is swapped with a random stored one, which is returned instead.
    size 0 disables the pool entirely.
    """

    def __init__(self, size: int, rng: np.random.Generator):
        if size < 0:
            raise ValueError("pool size must be nonnegative")
        self.size = size
        self.rng = rng
        self.images: list[np.ndarray] = []

    def query(self, batch: np.ndarray) -> np.ndarray:
        if self.size == 0:
            return batch
        out = []
        for img in batch:
            img = img[None]  # keep the leading batch axis
            if len(self.images) < self.size:
                self.images.append(img.copy())
                out.append(img)
            elif self.rng.random() < 0.5:
                i = int(self.rng.integers(self.size))
                out.append(self.images[i].copy())
                self.images[i] = img.copy()
            else:
                out.append(img)
        return np.concatenate(out, axis=0)


def _gan_real_loss(pred: Tensor, mode: str) -> Tensor:
    if mode == "lsgan":
        return T.mean(T.square(T.sub(pred, 1.0)))
    return T.mean(T.softplus(T.neg(pred)))


def _gan_fake_loss(pred: Tensor, mode: str) -> Tensor:
    if mode == "lsgan":
        return T.mean(T.square(pred))
    return T.mean(T.softplus(pred))


def l1_loss(a: Tensor, b: Tensor) -> Tensor:
    return T.mean(T.abs_(T.sub(a, b)))


def cyclegan_losses(x: Tensor, y: Tensor, G, F, D_X, D_Y, *,
                    lambda_cycle: float = 10.0, lambda_identity: float = 0.0,
                    gan_mode: str = "lsgan",
                    pool_x: ImagePool | None = None,
                    pool_y: ImagePool | None = None):
    """Build generator and discriminator losses for one unpaired batch.

    Returns (loss_G, loss_D_X, loss_D_Y, diagnostics).  The generator loss
    graph is built with discriminators frozen, so backward through it never
    writes discriminator gradients; discriminator losses see generated
    images detached (optionally routed through the replay pools).
    """
    # generator side: adversarial + cycle (+ identity), D params frozen
    D_X.set_trainable(False)
    D_Y.set_trainable(False)
    fake_y = G(x)
    fake_x = F(y)
    rec_x = F(fake_y)
    rec_y = G(fake_x)
    adv_g = _gan_real_loss(D_Y(fake_y), gan_mode)
    adv_f = _gan_real_loss(D_X(fake_x), gan_mode)
    cycle_x = l1_loss(rec_x, x)
    cycle_y = l1_loss(rec_y, y)
    loss_G = T.add(T.add(adv_g, adv_f),
                   T.mul(T.add(cycle_x, cycle_y), lambda_cycle))
    idt_g = idt_f = None
    if lambda_identity > 0.0:
        idt_g = l1_loss(G(y), y)
        idt_f = l1_loss(F(x), x)
        loss_G = T.add(loss_G, T.mul(T.add(idt_g, idt_f), lambda_identity))
    D_X.set_trainable(True)
    D_Y.set_trainable(True)

    # discriminator side: real vs detached (pooled) fake
    fake_y_d = pool_y.query(fake_y.data) if pool_y is not None else fake_y.data.copy()
    fake_x_d = pool_x.query(fake_x.data) if pool_x is not None else fake_x.data.copy()
    loss_D_Y = T.mul(T.add(_gan_real_loss(D_Y(y), gan_mode),
                           _gan_fake_loss(D_Y(Tensor(fake_y_d)), gan_mode)), 0.5)
    loss_D_X = T.mul(T.add(_gan_real_loss(D_X(x), gan_mode),
                           _gan_fake_loss(D_X(Tensor(fake_x_d)), gan_mode)), 0.5)

    diagnostics = {
        "adv_G": adv_g.item(), "adv_F": adv_f.item(),
        "cycle_X": cycle_x.item(), "cycle_Y": cycle_y.item(),
        "idt_G": idt_g.item() if idt_g is not None else 0.0,
        "idt_F": idt_f.item() if idt_f is not None else 0.0,
    }
    return loss_G, loss_D_X, loss_D_Y, diagnostics


def pix2pix_losses(x: Tensor, y: Tensor, G, D, *, lambda_l1: float = 100.0,
                   gan_mode: str = "lsgan", pool: ImagePool | None = None):
    """Paired conditional losses: (loss_G, loss_D, diagnostics).

    The discriminator scores (input, output) channel pairs; its fake branch
    sees G(x) detached, optionally through a replay pool.
    """
    D.set_trainable(False)
    fake = G(x)
    adv = _gan_real_loss(D(concat([x, fake], axis=1)), gan_mode)
    recon = l1_loss(fake, y)
    loss_G = T.add(adv, T.mul(recon, lambda_l1))
    D.set_trainable(True)

    fake_pair = np.concatenate([x.data, fake.data], axis=1)
    if pool is not None:
        fake_pair = pool.query(fake_pair)
    real_pair = concat([x, y], axis=1)
    loss_D = T.mul(T.add(_gan_real_loss(D(real_pair), gan_mode),
                         _gan_fake_loss(D(Tensor(fake_pair)), gan_mode)), 0.5)
    diagnostics = {"adv_G": adv.item(), "l1": recon.item()}
    return loss_G, loss_D, diagnostics


# ---------------------------------------------------------------------------
# Train states


@dataclass
class CycleTrainState:
    G: nets.ResnetGenerator
    F: nets.ResnetGenerator
    D_X: nets.PatchDiscriminator
    D_Y: nets.PatchDiscriminator
    opt_G: Adam
    opt_D: Adam
    pool_x: ImagePool
    pool_y: ImagePool
    run: RunConfig
    epoch: int = 0
    step: int = 0


@dataclass
class Pix2PixTrainState:
    G: nets.UNetGenerator
    D: nets.PatchDiscriminator
    opt_G: Adam
    opt_D: Adam
    pool: ImagePool
    run: RunConfig
    epoch: int = 0
    step: int = 0


@dataclass
class TrainLogRecord:
    step: int
    epoch: int
    loss_G: float
    loss_D_X: float
    loss_D_Y: float
    cycle_X: float
    cycle_Y: float


def init_cyclegan(run: RunConfig) -> CycleTrainState:
    """Fresh networks, optimizers and pools, all seeded from run.seed."""
    gen_cfg = nets.generator_config_from(run)
    disc_cfg = nets.discriminator_config_from(run)
    G = nets.ResnetGenerator(gen_cfg, np.random.default_rng((run.seed, 0)))
    F = nets.ResnetGenerator(gen_cfg, np.random.default_rng((run.seed, 1)))
    D_X = nets.PatchDiscriminator(disc_cfg, np.random.default_rng((run.seed, 2)))
    D_Y = nets.PatchDiscriminator(disc_cfg, np.random.default_rng((run.seed, 3)))
    opt_G = Adam({**_prefixed("G.", G), **_prefixed("F.", F)},
                 lr=run.lr, beta1=run.beta1, beta2=run.beta2)
    opt_D = Adam({**_prefixed("D_X.", D_X), **_prefixed("D_Y.", D_Y)},
                 lr=run.lr, beta1=run.beta1, beta2=run.beta2)
    pool_x = ImagePool(run.pool_size, np.random.default_rng((run.seed, 4)))
    pool_y = ImagePool(run.pool_size, np.random.default_rng((run.seed, 5)))
    return CycleTrainState(G, F, D_X, D_Y, opt_G, opt_D, pool_x, pool_y, run)


def init_pix2pix(run: RunConfig) -> Pix2PixTrainState:
    unet_cfg = nets.unet_config_from(run)
    disc_cfg = nets.discriminator_config_from(run, in_channels=2)
    G = nets.UNetGenerator(unet_cfg, np.random.default_rng((run.seed, 0)))
    D = nets.PatchDiscriminator(disc_cfg, np.random.default_rng((run.seed, 1)))
    opt_G = Adam(_prefixed("G.", G), lr=run.lr, beta1=run.beta1, beta2=run.beta2)
    opt_D = Adam(_prefixed("D.", D), lr=run.lr, beta1=run.beta1, beta2=run.beta2)
    # paired training defaults to no replay pool
    pool = ImagePool(0, np.random.default_rng((run.seed, 2)))
    return Pix2PixTrainState(G, D, opt_G, opt_D, pool, run)


def _prefixed(prefix: str, module: nets.Module) -> dict[str, Tensor]:
    return {prefix + name: t for name, t in module.params_dict().items()}


def _check_finite(step: int, losses: dict[str, float], state, out_dir: str | None) -> None:
    if all(np.isfinite(v) for v in losses.values()):
        return
    path = None
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, f"diverged_step{step}.ckpt")
        save_state(state, path)
    raise TrainingDivergedError(
        f"non-finite loss at step {step}: {losses}"
        + (f" (diagnostic checkpoint: {path})" if path else "")
    )


def _epochs_to_run(start: int, run: RunConfig):
    """max_steps > 0 is a total step budget and keeps cycling epochs until
    it is spent; otherwise exactly run.epochs epochs are run."""
    if run.max_steps:
        return itertools.count(start)
    return range(start, run.epochs)


def train_cyclegan(source, run: RunConfig, out_dir: str | None = None,
                   state: CycleTrainState | None = None
                   ) -> tuple[CycleTrainState, list[TrainLogRecord]]:
    """Run unpaired adversarial training over a ChunkSource-like object.

    source must expose epoch(i) yielding (x, y) ndarray batch pairs.  Runs
    run.epochs epochs, or exactly run.max_steps steps when that is nonzero.
    Returns the final state plus one log record per step.
    """
    state = state or init_cyclegan(run)
    records: list[TrainLogRecord] = []
    for epoch in _epochs_to_run(state.epoch, run):
        state.epoch = epoch
        for batch in source.epoch(epoch):
            x_np, y_np = batch
            x = Tensor(x_np)
            y = Tensor(y_np)
            loss_G, loss_D_X, loss_D_Y, diag = cyclegan_losses(
                x, y, state.G, state.F, state.D_X, state.D_Y,
                lambda_cycle=run.lambda_cycle,
                lambda_identity=run.lambda_identity,
                gan_mode=run.gan_mode,
                pool_x=state.pool_x, pool_y=state.pool_y,
            )
            values = {"loss_G": loss_G.item(), "loss_D_X": loss_D_X.item(),
                      "loss_D_Y": loss_D_Y.item()}
            _check_finite(state.step, values, state, out_dir)

            state.opt_G.zero_grad()
            loss_G.backward()
            state.opt_G.step()
            state.opt_D.zero_grad()
            loss_D_X.backward()
            loss_D_Y.backward()
            state.opt_D.step()

            state.step += 1
            records.append(TrainLogRecord(
                step=state.step, epoch=epoch,
                loss_G=values["loss_G"], loss_D_X=values["loss_D_X"],
                loss_D_Y=values["loss_D_Y"],
                cycle_X=diag["cycle_X"], cycle_Y=diag["cycle_Y"],
            ))
            if run.log_every and state.step % run.log_every == 0:
                log.info("step %d: G %.4f D_X %.4f D_Y %.4f cycle %.4f/%.4f",
                         state.step, values["loss_G"], values["loss_D_X"],
                         values["loss_D_Y"], diag["cycle_X"], diag["cycle_Y"])
            if run.max_steps and state.step >= run.max_steps:
                state.epoch = epoch + 1
                return state, records
        state.epoch = epoch + 1
    return state, records


def train_pix2pix(source, run: RunConfig, out_dir: str | None = None,
                  state: Pix2PixTrainState | None = None
                  ) -> tuple[Pix2PixTrainState, list[TrainLogRecord]]:
    """Run paired conditional training; source.epoch(i) yields aligned (x, y)."""
    state = state or init_pix2pix(run)
    records: list[TrainLogRecord] = []
    for epoch in _epochs_to_run(state.epoch, run):
        state.epoch = epoch
        for x_np, y_np in source.epoch(epoch):
            x = Tensor(x_np)
            y = Tensor(y_np)
            loss_G, loss_D, diag = pix2pix_losses(
                x, y, state.G, state.D, lambda_l1=run.lambda_l1,
                gan_mode=run.gan_mode, pool=state.pool,
            )
            values = {"loss_G": loss_G.item(), "loss_D": loss_D.item()}
            _check_finite(state.step, values, state, out_dir)

            state.opt_G.zero_grad()
            loss_G.backward()
            state.opt_G.step()
            state.opt_D.zero_grad()
            loss_D.backward()
            state.opt_D.step()

            state.step += 1
            records.append(TrainLogRecord(
                step=state.step, epoch=epoch, loss_G=values["loss_G"],
                loss_D_X=values["loss_D"], loss_D_Y=0.0,
                cycle_X=diag["l1"], cycle_Y=0.0,
            ))
            if run.log_every and state.step % run.log_every == 0:
                log.info("step %d: G %.4f D %.4f l1 %.4f",
                         state.step, values["loss_G"], values["loss_D"], diag["l1"])
            if run.max_steps and state.step >= run.max_steps:
                state.epoch = epoch + 1
                return state, records
        state.epoch = epoch + 1
    return state, records


# ---------------------------------------------------------------------------
# Inference and persistence


def translate(G, chunks, target_domain: str = "drums"):
    """Map chunks through a generator one at a time, preserving identity
    metadata but switching the domain label."""
    from ..dataset import Chunk, chunk_to_unit, unit_to_chunk

    out = []
    for c in chunks:
        x = Tensor(chunk_to_unit(c.pixels)[None, None, :, :])
        y = G(x)
        out.append(Chunk(pixels=unit_to_chunk(y.data[0, 0]),
                         song_id=c.song_id, offset=c.offset,
                         domain=target_domain))
    return out


def _pool_arrays(prefix: str, pool: ImagePool) -> dict[str, np.ndarray]:
    if pool.images:
        stacked = np.concatenate(pool.images, axis=0).astype(np.float32)
    else:
        stacked = np.zeros((0, 1, 1, 1), dtype=np.float32)
    return {f"{prefix}images": stacked}


def _load_pool(pool: ImagePool, arrays: dict[str, np.ndarray], prefix: str) -> None:
    stacked = arrays[f"{prefix}images"]
    pool.images = [stacked[i : i + 1].copy() for i in range(stacked.shape[0])]


def save_state(state: CycleTrainState | Pix2PixTrainState, path: str) -> None:
    """Serialize a train state (weights, optimizer moments, pools, counters)."""
    from ..config import serialize_config

    arrays: dict[str, np.ndarray] = {}
    if isinstance(state, CycleTrainState):
        kind = "cyclegan"
        for prefix, module in (("G.", state.G), ("F.", state.F),
                               ("D_X.", state.D_X), ("D_Y.", state.D_Y)):
            for name, t in module.params_dict().items():
                arrays[prefix + name] = t.data
        arrays.update(state.opt_G.state_arrays("opt_G."))
        arrays.update(state.opt_D.state_arrays("opt_D."))
        arrays.update(_pool_arrays("pool_x.", state.pool_x))
        arrays.update(_pool_arrays("pool_y.", state.pool_y))
    else:
        kind = "pix2pix"
        for prefix, module in (("G.", state.G), ("D.", state.D)):
            for name, t in module.params_dict().items():
                arrays[prefix + name] = t.data
        arrays.update(state.opt_G.state_arrays("opt_G."))
        arrays.update(state.opt_D.state_arrays("opt_D."))
        arrays.update(_pool_arrays("pool.", state.pool))

    meta = {
        "kind": kind,
        "epoch": state.epoch,
        "step": state.step,
        "config": serialize_config(state.run),
    }
    write_checkpoint(path, meta, arrays)


def load_state(path: str) -> CycleTrainState | Pix2PixTrainState:
    """Rebuild a train state from a checkpoint written by save_state."""
    from ..config import build_config, parse_config_text

    meta, arrays = read_checkpoint(path)
    run = build_config(parse_config_text(meta["config"]))
    if meta["kind"] == "cyclegan":
        state = init_cyclegan(run)
        state.G.load_arrays(arrays, "G.")
        state.F.load_arrays(arrays, "F.")
        state.D_X.load_arrays(arrays, "D_X.")
        state.D_Y.load_arrays(arrays, "D_Y.")
        state.opt_G.load_state_arrays(arrays, "opt_G.")
        state.opt_D.load_state_arrays(arrays, "opt_D.")
        _load_pool(state.pool_x, arrays, "pool_x.")
        _load_pool(state.pool_y, arrays, "pool_y.")
    elif meta["kind"] == "pix2pix":
        state = init_pix2pix(run)
        state.G.load_arrays(arrays, "G.")
        state.D.load_arrays(arrays, "D.")
        state.opt_G.load_state_arrays(arrays, "opt_G.")
        state.opt_D.load_state_arrays(arrays, "opt_D.")
        _load_pool(state.pool, arrays, "pool.")
    else:
        raise ValueError(f"{path}: unknown train state kind {meta['kind']!r}")
    state.epoch = int(meta["epoch"])
    state.step = int(meta["step"])
    return state


def write_loss_log(records: list[TrainLogRecord], path: str) -> None:
    """Append-style TSV loss log: one record per training step."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step\tepoch\tloss_G\tloss_D_X\tloss_D_Y\tcycle_X\tcycle_Y\n")
        for r in records:
            fh.write(f"{r.step}\t{r.epoch}\t{r.loss_G!r}\t{r.loss_D_X!r}\t"
                     f"{r.loss_D_Y!r}\t{r.cycle_X!r}\t{r.cycle_Y!r}\n")


def read_loss_log(path: str) -> list[TrainLogRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("step\t"):
            raise ValueError(f"{path}: not a loss log")
        for line in fh:
            parts = line.rstrip("\n").split("\t")
            records.append(TrainLogRecord(
                step=int(parts[0]), epoch=int(parts[1]), loss_G=float(parts[2]),
                loss_D_X=float(parts[3]), loss_D_Y=float(parts[4]),
                cycle_X=float(parts[5]), cycle_Y=float(parts[6]),
            ))
    return records
