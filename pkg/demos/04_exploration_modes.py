"""The three exploration modes on a trained bundle.

Run: python demos/04_exploration_modes.py --data data --bundle bundle

(i)  binary attribute: a linear SVM on embedding codes of chairs with
     and without armrests gives a unit direction; stepping a refined
     chair code along it grows armrests, measured by the oracle.
(ii) text: the difference between two caption embeddings is a direction;
     here "a plain table" -> "a table with a shelf".
(iii) sketch: erase the stretchers from a table's rendering; the
     difference of sketch embeddings is a direction, and the step size
     is picked automatically by re-rendering candidates and matching
     them against the edited sketch.
"""

import argparse

import numpy as np

from shapexplore.config import RunConfig
from shapexplore.coopt import co_optimize
from shapexplore.dataset import DataStore
from shapexplore.explore import (
    direction_from_sketch,
    direction_from_text,
    explore_trajectory,
    select_alpha_by_sketch,
    uniform_alphas,
)
from shapexplore.metrics import DirectionCache
from shapexplore.procgen import (
    apply_sketch_edit,
    attribute_label,
    attribute_score,
    region_pixel_rect,
)
from shapexplore.spaces import SpaceBundle, encode_image, encode_shape


def refined_code(bundle, store, rec, config):
    grid = store.voxels(rec.id)
    sketch = store.sketch(rec.id)
    start = encode_image(bundle.image_encoder, sketch)
    z_bar = encode_shape(bundle.shape_encoder, grid)
    return co_optimize(bundle.mapper, start, z_bar, config.coopt.iters, config.coopt.lr).code


def score_along(bundle, code, direction, alphas, category, attr, config):
    cands = explore_trajectory(
        bundle.mapper, bundle.shape_decoder, code, direction, alphas,
        bundle.resolution, bundle.sketch_width,
    )
    label = attribute_label(category, attr)
    return cands, [attribute_score(c.grid.binarized(), label) for c in cands]


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--data", default="data")
    ap.add_argument("--bundle", default="bundle")
    args = ap.parse_args()
    config = RunConfig()
    config.paths.data_dir, config.paths.bundle_dir = args.data, args.bundle

    try:
        bundle = SpaceBundle.load(args.bundle, require_mapper=True)
        store = DataStore(args.data)
    except Exception as e:
        raise SystemExit(f"{e}\nTrain a bundle first (see demos/03 docstring).")

    alphas = uniform_alphas(0.0, 3.0, 7)
    directions = DirectionCache(bundle, store, config)

    # (i) binary: add armrests to a chair that has none
    chair = next(
        r for r in store.split("test")
        if r.category == "chair" and not r.attributes["armrest"]
    )
    print(f"binary mode on {chair.id} ({chair.caption!r}), target +armrest")
    d = directions.binary_direction("chair", "armrest")
    print(f"  svm train accuracy: {d.metadata['train_accuracy']:.3f}")
    code = refined_code(bundle, store, chair, config)
    _, scores = score_along(bundle, code, d, alphas, "chair", "armrest", config)
    for a, s in zip(alphas, scores):
        marker = " <- crosses the presence threshold" if s >= 0.15 and max(
            scores[: alphas.index(a) + 1][:-1] or [0]
        ) < 0.15 else ""
        print(f"  alpha={a:>4.1f}  armrest score={s:.3f}{marker}")

    # (ii) text: give a plain table a shelf
    table = next(
        r for r in store.split("test")
        if r.category == "table" and not r.attributes["shelf"]
    )
    print(f"\ntext mode on {table.id} ({table.caption!r})")
    d = direction_from_text(
        bundle.text_encoder, bundle.vocab, "a plain table", "a table with a shelf"
    )
    code = refined_code(bundle, store, table, config)
    _, scores = score_along(bundle, code, d, alphas, "table", "shelf", config)
    print("  shelf score along the trajectory:",
          " ".join(f"{s:.2f}" for s in scores))

    # (iii) sketch: erase the stretchers and let similarity pick alpha
    table2 = next(
        r for r in store.split("test")
        if r.category == "table" and r.attributes["stretcher"]
    )
    print(f"\nsketch mode on {table2.id} ({table2.caption!r}), erase stretchers")
    sketch = store.sketch(table2.id)
    x, y, w, h = region_pixel_rect(attribute_label("table", "stretcher"), bundle.sketch_width)
    edited = apply_sketch_edit(sketch, {"op": "erase_rect", "x": x, "y": y, "width": w, "height": h})
    d = direction_from_sketch(bundle.image_encoder, sketch, edited)
    code = refined_code(bundle, store, table2, config)
    cands, scores = score_along(bundle, code, d, alphas, "table", "stretcher", config)
    chosen = select_alpha_by_sketch(
        bundle.image_encoder, cands, encode_image(bundle.image_encoder, edited)
    )
    before = attribute_score(store.voxels(table2.id), attribute_label("table", "stretcher"))
    print(f"  stretcher score before: {before:.3f}")
    for c, s in zip(cands, scores):
        pick = "  <- selected (closest to the edited sketch)" if c.alpha == chosen.alpha else ""
        print(f"  alpha={c.alpha:>4.1f}  similarity={c.similarity:.4f}  stretcher={s:.3f}{pick}")


if __name__ == "__main__":
    main()
