"""Coupling the spaces with the mapper, then refining the starting code.

Run after the full pipeline has trained a bundle:
    shapexplore gen-data --config demos/fullscale.json
    shapexplore train spaces --config demos/fullscale.json
    shapexplore train mapper --config demos/fullscale.json
    python demos/03_mapper_and_refinement.py --data data --bundle bundle

For a handful of held-out shapes this prints the reconstruction IoU of
sketch -> embedding code -> mapped shape code -> decoded grid, and then
what code refinement buys: the squared code distance drops and the
decoded shape moves toward the ground truth. A sketch is a single view,
so the depth extent of the furniture is genuinely ambiguous; refinement
against the directly encoded shape recovers most of it.
"""

import argparse

import numpy as np

from shapexplore.coopt import co_optimize
from shapexplore.dataset import DataStore
from shapexplore.mapper import map_code
from shapexplore.metrics import iou
from shapexplore.spaces import SpaceBundle, decode_shape, encode_image, encode_shape


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", default="data")
    ap.add_argument("--bundle", default="bundle")
    args = ap.parse_args()

    try:
        bundle = SpaceBundle.load(args.bundle, require_mapper=True)
        store = DataStore(args.data)
    except Exception as e:
        raise SystemExit(
            f"{e}\nTrain a bundle first (see the module docstring for the commands)."
        )

    test = store.split("test")[:8]
    print(f"{'shape':<14}{'mapped IoU':>11}{'refined IoU':>12}{'loss before':>12}{'loss after':>12}")
    for rec in test:
        grid = store.voxels(rec.id)
        sketch = store.sketch(rec.id)
        start = encode_image(bundle.image_encoder, sketch)
        z_bar = encode_shape(bundle.shape_encoder, grid)

        mapped = decode_shape(bundle.shape_decoder, map_code(bundle.mapper, start), bundle.resolution)
        res = co_optimize(bundle.mapper, start, z_bar)
        refined = decode_shape(bundle.shape_decoder, res.shape_code, bundle.resolution)

        print(
            f"{rec.id:<14}{iou(mapped, grid):>11.3f}{iou(refined, grid):>12.3f}"
            f"{res.initial_loss:>12.4f}{res.final_loss:>12.4f}"
        )
    print("\nthe refined code starts every exploration; directions are traced from it.")


if __name__ == "__main__":
    main()
