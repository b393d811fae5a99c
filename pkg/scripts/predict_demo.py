#!/usr/bin/env python3
"""End-to-end prediction demo on a synthetic panorama.

Renders a panorama, runs the generator over a dense viewport grid,
assembles the per-viewport maps back onto the sphere, and writes the
panorama PNG, the saliency SMAP, and a grayscale preview PNG.
"""

import argparse
import os
import sys

import numpy as np

from mrgan360 import fileio
from mrgan360.checkpoint import load_checkpoint
from mrgan360.data import make_synthetic_odis
from mrgan360.model import GeneratorConfig, init_generator
from mrgan360.tensor import Tensor
from mrgan360.training import predict_erp


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--outdir", required=True)
    parser.add_argument("--checkpoint",
                        help="generator .mrgw; fresh random weights if "
                             "omitted")
    parser.add_argument("--channels", type=int, default=8,
                        help="generator width when no checkpoint is given")
    parser.add_argument("--stages", type=int, default=2)
    parser.add_argument("--width", type=int, default=128,
                        help="panorama width (height is width/2)")
    parser.add_argument("--viewport-stride", type=float, default=45.0)
    parser.add_argument("--face-size", type=int, default=32)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if args.checkpoint:
        arrays = load_checkpoint(args.checkpoint)
        params = {name: Tensor(value, requires_grad=True)
                  for name, value in arrays.items()
                  if name.startswith("gen.")}
    else:
        params = init_generator(
            GeneratorConfig(channels=args.channels, se_reduction=4),
            np.random.default_rng(args.seed))

    erp, _ = make_synthetic_odis(1, width=args.width, seed=args.seed)[0]
    saliency = predict_erp(erp, params, args.stages,
                           face_size=args.face_size,
                           lon_step=args.viewport_stride,
                           lat_step=args.viewport_stride)

    os.makedirs(args.outdir, exist_ok=True)
    fileio.write_image(os.path.join(args.outdir, "panorama.png"), erp.pixels)
    fileio.write_smap(os.path.join(args.outdir, "saliency.smap"), saliency)
    fileio.write_image(os.path.join(args.outdir, "saliency.png"), saliency)
    print(f"panorama, SMAP, and preview written to {args.outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
