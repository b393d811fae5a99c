#!/usr/bin/env python3
"""Train a small saliency model on the bundled synthetic panoramas.

Writes generator.mrgw (and discriminator.mrgw with --adversarial) plus a
losses.csv training log into --outdir.
"""

import argparse
import os
import sys

from mrgan360.checkpoint import save_checkpoint
from mrgan360.data import build_dataset, make_synthetic_odis, split_dataset
from mrgan360.training import (TrainConfig, adversarial_finetune, pretrain,
                               write_log_csv)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--outdir", required=True)
    parser.add_argument("--odis", type=int, default=6,
                        help="number of synthetic panoramas")
    parser.add_argument("--face-size", type=int, default=32)
    parser.add_argument("--channels", type=int, default=8)
    parser.add_argument("--stages", type=int, default=2)
    parser.add_argument("--epochs", type=int, default=20)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--adversarial", action="store_true")
    args = parser.parse_args()

    config = TrainConfig(stages=args.stages, channels=args.channels,
                         se_reduction=4, lr=args.lr, batch=6,
                         epochs=args.epochs, weight_decay=0.0,
                         seed=args.seed)
    odis = make_synthetic_odis(args.odis, width=128, seed=args.seed)
    dataset = build_dataset(odis, rotations=(0.0, 30.0),
                            face_size=args.face_size)
    train_set, val_set = split_dataset(dataset)
    if not train_set:
        train_set = dataset
    print(f"{len(train_set)} train / {len(val_set)} validation samples")

    os.makedirs(args.outdir, exist_ok=True)
    params, log = pretrain(train_set, config)
    print(f"pretrain content: {log[0]['content']:.4f} -> "
          f"{log[-1]['content']:.4f}")
    if args.adversarial:
        params, disc, adv_log = adversarial_finetune(train_set, params,
                                                     config)
        log.extend(adv_log)
        save_checkpoint(os.path.join(args.outdir, "discriminator.mrgw"),
                        disc)
        print(f"fine-tune loss_G: {adv_log[0]['loss_G']:.4f} -> "
              f"{adv_log[-1]['loss_G']:.4f}")
    save_checkpoint(os.path.join(args.outdir, "generator.mrgw"), params)
    write_log_csv(os.path.join(args.outdir, "losses.csv"), log)
    print(f"checkpoints and log written to {args.outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
