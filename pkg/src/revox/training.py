"""Least-squares GAN training loop.

The discriminator minimizes ``E[(D(clean)-1)^2] + E[D(G(noisy))^2]`` and
the generator ``E[(D(G(noisy))-1)^2]`` plus a weighted L1 term against
the clean magnitude, applied to the final stage only. Batches are built
at the utterance level with zero padding and binary frame masks; all
losses ignore padded frames. The learning-rate schedule halves both
rates after every 3 consecutive validation-loss increases and stops
after 10.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from .discriminator import Discriminator, DiscriminatorConfig
from .errors import DivergenceError, InvalidInputError
from .generator import Generator, GeneratorConfig
from .nnutil import save_checkpoint


@dataclass(frozen=True)
class GanTrainConfig:
    lambda_g: float = 1.0
    lr_g: float = 0.0005
    lr_d: float = 0.0001
    epochs: int = 100
    batch: int = 4
    halve_patience: int = 3
    stop_patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.lambda_g <= 0:
            raise InvalidInputError(f"lambda_g must be > 0, got {self.lambda_g}")
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise InvalidInputError("learning rates must be > 0")
        if not self.halve_patience < self.stop_patience:
            raise InvalidInputError("halve_patience must be < stop_patience")
        if self.epochs < 1 or self.batch < 1:
            raise InvalidInputError("epochs and batch must be >= 1")


@dataclass
class LrScheduleState:
    lr_g: float
    lr_d: float
    best_val: float = math.inf
    prev_val: float | None = None
    consec_increments: int = 0
    halve_patience: int = 3
    stop_patience: int = 10


def lr_schedule_update(state: LrScheduleState, new_val_loss: float):
    """Advance the validation-driven schedule by one epoch.

    The counter tracks strictly increasing validation losses relative to
    the immediately preceding epoch; any non-increase resets it. Returns
    ``(new_state, action)`` with action in {"continue", "halve", "stop"};
    a halve multiplies both learning rates by exactly 0.5.
    """
    st = replace_dataclass(state)
    if st.prev_val is not None and new_val_loss > st.prev_val:
        st.consec_increments += 1
    else:
        st.consec_increments = 0
    st.prev_val = new_val_loss
    st.best_val = min(st.best_val, new_val_loss)
    if st.consec_increments >= st.stop_patience:
        return st, "stop"
    if st.consec_increments > 0 and st.consec_increments % st.halve_patience == 0:
        st.lr_g *= 0.5
        st.lr_d *= 0.5
        return st, "halve"
    return st, "continue"


def replace_dataclass(state: LrScheduleState) -> LrScheduleState:
    return LrScheduleState(**vars(state))


@dataclass
class PaddedBatch:
    """Zero-padded utterance batch with validity masks.

    mags/targets: (B, T_max, F); mask: (B, T_max) with 1 on real frames.
    """

    mags: torch.Tensor
    targets: torch.Tensor
    mask: torch.Tensor
    lengths: list = field(default_factory=list)


def pad_and_mask(utterances) -> PaddedBatch:
    """Batch (noisy_mag, clean_mag) pairs to the longest utterance."""
    if not utterances:
        raise InvalidInputError("cannot batch an empty utterance list")
    f_bins = {np.shape(pair[0])[1] for pair in utterances}
    if len(f_bins) != 1:
        raise InvalidInputError(f"inconsistent frequency bins across batch: {f_bins}")
    lengths = [np.shape(pair[0])[0] for pair in utterances]
    t_max = max(lengths)
    b = len(utterances)
    f = f_bins.pop()
    mags = torch.zeros(b, t_max, f)
    targets = torch.zeros(b, t_max, f)
    mask = torch.zeros(b, t_max)
    for i, (noisy, clean) in enumerate(utterances):
        if np.shape(noisy) != np.shape(clean):
            raise InvalidInputError(
                f"utterance {i}: noisy {np.shape(noisy)} vs clean {np.shape(clean)}"
            )
        t = lengths[i]
        mags[i, :t] = torch.as_tensor(np.asarray(noisy, dtype=np.float32))
        targets[i, :t] = torch.as_tensor(np.asarray(clean, dtype=np.float32))
        mask[i, :t] = 1.0
    return PaddedBatch(mags, targets, mask, lengths)


def d_loss(d_real, d_fake) -> torch.Tensor:
    """Mean of (D(real) - 1)^2 plus mean of D(fake)^2."""
    real = torch.as_tensor(d_real, dtype=torch.get_default_dtype()) \
        if not isinstance(d_real, torch.Tensor) else d_real
    fake = torch.as_tensor(d_fake, dtype=real.dtype) \
        if not isinstance(d_fake, torch.Tensor) else d_fake
    if real.numel() == 0 or fake.numel() == 0:
        raise InvalidInputError("empty score batch")
    if real.numel() != fake.numel():
        raise InvalidInputError(
            f"score batches differ in size: {real.numel()} vs {fake.numel()}"
        )
    return ((real - 1.0) ** 2).mean() + (fake ** 2).mean()


def g_loss(d_fake, est, target, mask, lambda_g):
    """Adversarial term plus weighted masked L1; returns (total, adv, l1).

    The L1 part is the mean absolute error over real frames only, so
    padded regions never contribute.
    """
    fake = torch.as_tensor(d_fake, dtype=torch.get_default_dtype()) \
        if not isinstance(d_fake, torch.Tensor) else d_fake
    est_t = torch.as_tensor(np.asarray(est, dtype=np.float32)) \
        if not isinstance(est, torch.Tensor) else est
    tgt_t = torch.as_tensor(np.asarray(target, dtype=np.float32)) \
        if not isinstance(target, torch.Tensor) else target
    mask_t = torch.as_tensor(np.asarray(mask, dtype=np.float32)) \
        if not isinstance(mask, torch.Tensor) else mask
    if fake.numel() == 0:
        raise InvalidInputError("empty score batch")
    if mask_t.sum() == 0:
        raise InvalidInputError("mask selects no frames")
    adv = ((fake - 1.0) ** 2).mean()
    diff = (est_t - tgt_t).abs() * mask_t[..., None]
    l1 = diff.sum() / (mask_t.sum() * est_t.shape[-1])
    return adv + lambda_g * l1, adv, l1


def masked_l1(est, target, mask) -> torch.Tensor:
    diff = (est - target).abs() * mask[..., None]
    return diff.sum() / (mask.sum() * est.shape[-1])


@dataclass
class TrainResult:
    generator: Generator
    discriminator: Discriminator
    log: list
    best_epoch: int
    best_val: float


def _validate(gen: Generator, val_set, batch_size: int) -> float:
    gen.eval()
    total, frames = 0.0, 0
    with torch.no_grad():
        for i in range(0, len(val_set), batch_size):
            batch = pad_and_mask(val_set[i : i + batch_size])
            est = gen(batch.mags[:, None])[-1][:, 0]
            diff = (est - batch.targets).abs() * batch.mask[..., None]
            total += float(diff.sum())
            frames += int(batch.mask.sum()) * batch.targets.shape[-1]
    gen.train()
    return total / frames


def train_gan(train_set, val_set, gan_cfg: GanTrainConfig,
              gen_cfg: GeneratorConfig, disc_cfg: DiscriminatorConfig,
              run_dir=None, resume=None) -> TrainResult:
    """Alternating one-D-step/one-G-step optimization over epochs.

    ``train_set``/``val_set`` are lists of (noisy_mag, clean_mag) arrays
    of shape (T, 161). Checkpoints and a JSONL log are written under
    ``run_dir`` when given; the returned generator carries the weights
    of the epoch with the lowest validation loss.
    """
    if not train_set or not val_set:
        raise InvalidInputError("training and validation sets must be non-empty")
    torch.set_num_threads(max(1, torch.get_num_threads()))
    torch.manual_seed(gan_cfg.seed)

    gen = Generator(gen_cfg)
    disc = Discriminator(disc_cfg)
    opt_g = torch.optim.Adam(gen.parameters(), lr=gan_cfg.lr_g,
                             betas=(0.9, 0.999), eps=1e-8)
    opt_d = torch.optim.Adam(disc.parameters(), lr=gan_cfg.lr_d,
                             betas=(0.9, 0.999), eps=1e-8)
    sched = LrScheduleState(lr_g=gan_cfg.lr_g, lr_d=gan_cfg.lr_d,
                            halve_patience=gan_cfg.halve_patience,
                            stop_patience=gan_cfg.stop_patience)
    rng = np.random.default_rng(gan_cfg.seed)
    start_epoch = 1
    log = []
    best_epoch, best_val = 0, math.inf
    best_state = copy.deepcopy(gen.state_dict())

    if resume is not None:
        gen.load_state_dict(resume["generator"])
        disc.load_state_dict(resume["discriminator"])
        opt_g.load_state_dict(resume["opt_g"])
        opt_d.load_state_dict(resume["opt_d"])
        sched = LrScheduleState(**resume["schedule"])
        rng.bit_generator.state = resume["rng_state"]
        torch.set_rng_state(torch.tensor(resume["torch_rng"], dtype=torch.uint8))
        start_epoch = resume["epoch"] + 1
        best_epoch, best_val = resume["best_epoch"], resume["best_val"]
        best_state = resume["best_state"]

    ckpt_dir = None
    if run_dir is not None:
        ckpt_dir = Path(run_dir) / "checkpoints"
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    gen.train()
    disc.train()
    global_step = resume["global_step"] if resume else 0
    for epoch in range(start_epoch, gan_cfg.epochs + 1):
        order = rng.permutation(len(train_set))
        for lo in range(0, len(order), gan_cfg.batch):
            batch = pad_and_mask([train_set[i] for i in order[lo : lo + gan_cfg.batch]])
            global_step += 1
            ests = gen(batch.mags[:, None])
            final = ests[-1][:, 0]

            d_real = disc(batch.targets, lengths=batch.lengths)
            d_fake = disc(final.detach(), lengths=batch.lengths)
            loss_d = d_loss(d_real, d_fake)
            opt_d.zero_grad()
            loss_d.backward()
            opt_d.step()

            d_fake_g = disc(final, lengths=batch.lengths)
            total, adv, l1 = g_loss(d_fake_g, final, batch.targets,
                                    batch.mask, gan_cfg.lambda_g)
            opt_g.zero_grad()
            total.backward()
            opt_g.step()

            vals = {"d_loss": float(loss_d), "g_adv": float(adv), "g_l1": float(l1)}
            if not all(math.isfinite(v) for v in vals.values()):
                raise DivergenceError(
                    f"non-finite loss at epoch {epoch} step {global_step}: {vals}"
                )
            log.append({"kind": "step", "epoch": epoch, "step": global_step,
                        **vals, "lr_g": sched.lr_g, "lr_d": sched.lr_d})

        val_loss = _validate(gen, val_set, gan_cfg.batch)
        if not math.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        sched, action = lr_schedule_update(sched, val_loss)
        if action == "halve":
            for group in opt_g.param_groups:
                group["lr"] = sched.lr_g
            for group in opt_d.param_groups:
                group["lr"] = sched.lr_d
        if val_loss < best_val:
            best_val, best_epoch = val_loss, epoch
            best_state = copy.deepcopy(gen.state_dict())
        log.append({"kind": "epoch", "epoch": epoch, "val_loss": val_loss,
                    "action": action, "lr_g": sched.lr_g, "lr_d": sched.lr_d})

        if ckpt_dir is not None:
            save_checkpoint(ckpt_dir / f"generator_epoch_{epoch:04d}.npz",
                            gen, "generator", gen_cfg)
            save_checkpoint(ckpt_dir / f"discriminator_epoch_{epoch:04d}.npz",
                            disc, "discriminator", disc_cfg)
            _write_best_pointer(Path(run_dir), best_epoch, best_val)
            _write_log(Path(run_dir) / "train_gan.log", log)
            torch.save({
                "generator": gen.state_dict(),
                "discriminator": disc.state_dict(),
                "opt_g": opt_g.state_dict(), "opt_d": opt_d.state_dict(),
                "schedule": vars(sched), "rng_state": rng.bit_generator.state,
                "torch_rng": torch.get_rng_state().tolist(),
                "epoch": epoch, "global_step": global_step,
                "best_epoch": best_epoch, "best_val": best_val,
                "best_state": best_state,
            }, Path(run_dir) / "resume.pt")
        if action == "stop":
            break

    gen.load_state_dict(best_state)
    gen.eval()
    disc.eval()
    return TrainResult(gen, disc, log, best_epoch, best_val)


def _write_best_pointer(run_dir: Path, best_epoch: int, best_val: float) -> None:
    pointer = {
        "best_epoch": best_epoch,
        "val_loss": best_val,
        "checkpoint": f"checkpoints/generator_epoch_{best_epoch:04d}.npz",
    }
    (run_dir / "best.json").write_text(json.dumps(pointer, indent=2) + "\n")


def _write_log(path: Path, records) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def load_resume(run_dir) -> dict | None:
    path = Path(run_dir) / "resume.pt"
    if not path.exists():
        return None
    return torch.load(path, weights_only=False)
