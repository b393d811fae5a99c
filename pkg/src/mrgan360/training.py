"""Pretraining, adversarial fine-tuning, and full-pipeline evaluation."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import tensor as T
from .data import Sample
from .errors import ConfigError, NonFiniteError
from .geometry import EquirectImage, cube_faces, dense_assemble
from .metrics import FixationMap, SaliencyMap, auc_judd, cc, kl_div, nss
from .model import (DiscriminatorConfig, GeneratorConfig, content_loss,
                    discriminator_forward, gan_losses, init_discriminator,
                    init_generator, multi_stage_forward)
from .optim import AdamState, adam_step
from .tensor import Tensor


@dataclass
class TrainConfig:
    stages: int = 6
    channels: int = 24
    se_reduction: int = 4
    width: int = 256
    height: int = 192
    lr: float = 5e-6
    batch: int = 6
    epochs: int = 100
    weight_decay: float = 1e-4
    seed: int = 0
    per_stage_content: bool = True
    generator_objective: str = "minimax"  # or "nonsaturating"
    sigma: float = 0.0  # ground-truth smoothing width; 0 = auto

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.stages < 1:
            raise ConfigError(f"stages must be >= 1, got {self.stages}")
        if self.batch < 1:
            raise ConfigError(f"batch must be >= 1, got {self.batch}")
        # lr 0 is a valid no-op configuration, useful for dry runs
        if not (isinstance(self.lr, (int, float)) and math.isfinite(self.lr)
                and self.lr >= 0):
            raise ConfigError(f"lr must be a finite nonnegative number, "
                              f"got {self.lr}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.generator_objective not in ("minimax", "nonsaturating"):
            raise ConfigError(f"unknown generator objective "
                              f"{self.generator_objective!r}")

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(channels=self.channels,
                               se_reduction=self.se_reduction)

    @classmethod
    def from_json_file(cls, path) -> "TrainConfig":
        with open(path) as fh:
            raw = json.load(fh)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def to_json_file(self, path):
        with open(path, "w") as fh:
            json.dump(dataclasses.asdict(self), fh, indent=2)
            fh.write("\n")


def _batches(n: int, batch: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch):
        yield order[start:start + batch]


def _sample_content(sample: Sample, params, config: TrainConfig) -> Tensor:
    outs = multi_stage_forward(Tensor(sample.image), params, config.stages,
                               config.generator_config())
    if config.per_stage_content:
        terms = [content_loss(o, sample.gt_density.values,
                              sample.gt_fixations) for o in outs]
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        return total
    return content_loss(outs[-1], sample.gt_density.values,
                        sample.gt_fixations)


def pretrain(dataset: Sequence[Sample], config: TrainConfig,
             params: Optional[Dict[str, Tensor]] = None,
             on_epoch: Optional[Callable[[int, Dict[str, Tensor]], None]] = None
             ) -> Tuple[Dict[str, Tensor], List[dict]]:
    """Content-loss-only training of the generator; no discriminator.

    Returns the parameters and a per-step loss log.  Aborts with
    NonFiniteError the moment the loss stops being finite.
    """
    if not dataset:
        raise ConfigError("pretrain needs a nonempty dataset")
    rng = np.random.default_rng(config.seed)
    if params is None:
        params = init_generator(config.generator_config(), rng)
    state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    log: List[dict] = []
    step = 0
    for epoch in range(config.epochs):
        for batch_idx in _batches(len(dataset), config.batch, rng):
            T.zero_grads(params.values())
            total = None
            for i in batch_idx:
                term = _sample_content(dataset[i], params, config)
                total = term if total is None else total + term
            loss = total * (1.0 / len(batch_idx))
            value = float(loss.data)
            if not math.isfinite(value):
                raise NonFiniteError(
                    f"pretraining diverged at epoch {epoch} step {step}")
            T.backward(loss)
            adam_step(params, state)
            step += 1
            log.append({"epoch": epoch, "step": step, "loss_D": "",
                        "loss_G": "", "content": value, "D_acc": ""})
        if on_epoch is not None:
            on_epoch(epoch, params)
    return params, log


def adversarial_finetune(dataset: Sequence[Sample],
                         gen_params: Dict[str, Tensor],
                         config: TrainConfig,
                         disc_params: Optional[Dict[str, Tensor]] = None,
                         on_epoch: Optional[Callable] = None
                         ) -> Tuple[Dict[str, Tensor], Dict[str, Tensor],
                                    List[dict]]:
    """Alternating GAN training: one discriminator step then one generator
    step per batch.  A single shared discriminator scores every stage."""
    if not dataset:
        raise ConfigError("fine-tuning needs a nonempty dataset")
    h, w = dataset[0].image.shape[1:]
    disc_config = DiscriminatorConfig(height=h, width=w)
    rng = np.random.default_rng(config.seed + 1)
    if disc_params is None:
        disc_params = init_discriminator(disc_config, rng)
    gen_state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    disc_state = AdamState(lr=config.lr, weight_decay=config.weight_decay)
    gen_config = config.generator_config()
    log: List[dict] = []
    step = 0
    for epoch in range(config.epochs):
        for batch_idx in _batches(len(dataset), config.batch, rng):
            batch = [dataset[i] for i in batch_idx]

            # D step: generator frozen, fakes detached
            _set_requires_grad(gen_params, False)
            T.zero_grads(disc_params.values())
            d_total = None
            correct = 0
            judged = 0
            for sample in batch:
                image = Tensor(sample.image)
                gt = Tensor(sample.gt_density.values[None]
                            / max(sample.gt_density.values.max(), 1e-12))
                outs = multi_stage_forward(image, gen_params, config.stages,
                                           gen_config)
                d_real = discriminator_forward(image, gt, disc_params,
                                               disc_config)
                correct += int(float(d_real.data) > 0.5)
                judged += 1
                for out in outs:
                    d_fake = discriminator_forward(image, out.detach(),
                                                   disc_params, disc_config)
                    loss_d, _ = gan_losses(d_real, d_fake, Tensor(0.0),
                                           config.generator_objective)
                    d_total = loss_d if d_total is None else d_total + loss_d
                    correct += int(float(d_fake.data) < 0.5)
                    judged += 1
            d_loss = d_total * (1.0 / len(batch))
            d_value = float(d_loss.data)
            if not math.isfinite(d_value):
                raise NonFiniteError(f"discriminator diverged at step {step}")
            T.backward(d_loss)
            adam_step(disc_params, disc_state)
            _set_requires_grad(gen_params, True)

            # G step: discriminator frozen
            _set_requires_grad(disc_params, False)
            T.zero_grads(gen_params.values())
            g_total = None
            content_total = 0.0
            for sample in batch:
                image = Tensor(sample.image)
                outs = multi_stage_forward(image, gen_params, config.stages,
                                           gen_config)
                for s, out in enumerate(outs):
                    if config.per_stage_content or s == len(outs) - 1:
                        content = content_loss(out, sample.gt_density.values,
                                               sample.gt_fixations)
                    else:
                        content = Tensor(0.0)
                    d_fake = discriminator_forward(image, out, disc_params,
                                                   disc_config)
                    _, loss_g = gan_losses(Tensor(0.5), d_fake, content,
                                           config.generator_objective)
                    content_total += float(content.data)
                    g_total = loss_g if g_total is None else g_total + loss_g
            g_loss = g_total * (1.0 / len(batch))
            g_value = float(g_loss.data)
            if not math.isfinite(g_value):
                raise NonFiniteError(f"generator diverged at step {step}")
            T.backward(g_loss)
            adam_step(gen_params, gen_state)
            _set_requires_grad(disc_params, True)

            step += 1
            log.append({"epoch": epoch, "step": step,
                        "loss_D": d_value, "loss_G": g_value,
                        "content": content_total / len(batch),
                        "D_acc": correct / judged})
        if on_epoch is not None:
            on_epoch(epoch, gen_params, disc_params)
    return gen_params, disc_params, log


def _set_requires_grad(params: Dict[str, Tensor], flag: bool):
    for p in params.values():
        p.requires_grad = flag


def predict_erp(erp: EquirectImage, params: Dict[str, Tensor], stages: int,
                face_size: int = 128, lon_step: float = 10.0,
                lat_step: float = 10.0, stage: Optional[int] = None
                ) -> np.ndarray:
    """Full pipeline: sample viewports, run the generator on each, assemble.

    ``stage`` selects which stage output to assemble (default: the last).
    """
    from .geometry import FaceImage, dense_view_grid, extract_view

    views = dense_view_grid(lon_step=lon_step, lat_step=lat_step, fov=90.0,
                            out_width=face_size, out_height=face_size)
    pixels = erp.pixels if erp.channels == 3 else \
        np.repeat(erp.pixels, 3, axis=0)
    rgb = EquirectImage(pixels)
    maps = []
    pick = stages - 1 if stage is None else stage - 1
    for view in views:
        face = extract_view(rgb, view)
        outs = multi_stage_forward(Tensor(face.pixels), params, stages)
        maps.append(FaceImage(view=view,
                              pixels=np.asarray(outs[pick].data,
                                                dtype=np.float64)))
    return dense_assemble(maps, (erp.width, erp.height))


def evaluate(params: Dict[str, Tensor],
             odis: Sequence[Tuple[EquirectImage, SaliencyMap, FixationMap]],
             stages: int, face_size: int = 64,
             lon_step: float = 90.0, lat_step: float = 90.0,
             stage: Optional[int] = None) -> List[dict]:
    """KL/CC/NSS/AUC per panorama plus a final mean row."""
    rows: List[dict] = []
    for i, (erp, gt, fix) in enumerate(odis):
        pred = predict_erp(erp, params, stages, face_size=face_size,
                           lon_step=lon_step, lat_step=lat_step, stage=stage)
        rows.append({
            "image": f"odi{i}",
            "KL": kl_div(gt, pred),
            "CC": cc(gt, pred),
            "NSS": nss(pred, fix),
            "AUC": auc_judd(pred, fix),
        })
    if rows:
        mean = {"image": "mean"}
        for key in ("KL", "CC", "NSS", "AUC"):
            mean[key] = float(np.mean([r[key] for r in rows]))
        rows.append(mean)
    return rows


def write_log_csv(path, rows: Sequence[dict]):
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(
            fh, fieldnames=["epoch", "step", "loss_D", "loss_G", "content",
                            "D_acc"])
        writer.writeheader()
        writer.writerows(rows)
