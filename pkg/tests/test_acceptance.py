"""Acceptance suite: trains the full pipeline at shipped defaults in a
fresh directory and checks every guarantee at its stated tolerance,
printing one PASS line per criterion (run with -s to see them live).

This is the slow suite: the pipeline (data generation, both space
trainings, mapper training, the 50-case evaluation) runs once in a
module fixture and everything else reuses it.
"""

from __future__ import annotations

import json
import time
from pathlib import Path

import numpy as np
import pytest

from shapexplore.cli import main as cli_main
from shapexplore.config import RunConfig, load_config
from shapexplore.coopt import co_optimize
from shapexplore.dataset import DataStore
from shapexplore.explore import (
    direction_from_sketch,
    direction_from_text,
    explore_trajectory,
    projection_gap,
    select_alpha_by_sketch,
    trace_code,
    uniform_alphas,
)
from shapexplore.mapper import map_code, map_codes_batch
from shapexplore.metrics import (
    DirectionCache,
    attribute_flip_rate,
    build_standard_suite,
    clip_similarity,
    iou,
    write_cases,
)
from shapexplore.nn import forward, gradient_check, min_preact_margin, param_hash
from shapexplore.procgen import (
    APPLICABLE_ATTRIBUTES,
    VoxelGrid,
    apply_sketch_edit,
    attribute_label,
    attribute_score,
    region_pixel_rect,
)
from shapexplore.spaces import (
    SpaceBundle,
    decode_shape,
    encode_image,
    encode_images_batch,
    encode_shape,
    encode_shapes_batch,
    encode_text,
)

THETA = 0.15


def report(line: str) -> None:
    print(f"\n==ACCEPTANCE== {line}")


# ---------------------------------------------------------------------------
# The trained pipeline (module-scoped, built once)


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    root = tmp_path_factory.mktemp("acceptance")
    config = RunConfig()
    config.paths.data_dir = str(root / "data")
    config.paths.bundle_dir = str(root / "bundle")
    config.paths.report_dir = str(root / "reports")
    cfg_path = root / "config.json"
    cfg_path.write_text(config.to_json())

    times: dict[str, float] = {}
    t0 = time.perf_counter()
    assert cli_main(["gen-data", "--config", str(cfg_path)]) == 0
    times["gen_data"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    assert cli_main(["train", "spaces", "--config", str(cfg_path)]) == 0
    times["train_spaces"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    assert cli_main(["train", "mapper", "--config", str(cfg_path)]) == 0
    times["train_mapper"] = time.perf_counter() - t0

    stage = json.loads((root / "bundle" / "logs" / "train-spaces.time.json").read_text())
    times["autoencoder"] = stage["autoencoder_s"]
    times["embedding"] = stage["embedding_s"]
    times["mapper"] = json.loads(
        (root / "bundle" / "logs" / "train-mapper.time.json").read_text()
    )["mapper_s"]

    store = DataStore(config.paths.data_dir)
    bundle = SpaceBundle.load(config.paths.bundle_dir, require_mapper=True)
    return {
        "root": root,
        "config": config,
        "cfg_path": cfg_path,
        "store": store,
        "bundle": bundle,
        "times": times,
        "cache": {},
    }


def heldout_split(ws, category: str | None = None):
    recs = ws["store"].split("test")
    if category:
        recs = [r for r in recs if r.category == category]
    return recs


def coopt_cases(ws):
    """50 held-out refinements (25 chairs, 25 tables), cached for reuse."""
    if "coopt" in ws["cache"]:
        return ws["cache"]["coopt"]
    bundle, store, config = ws["bundle"], ws["store"], ws["config"]
    cases = []
    for category in ("chair", "table"):
        for rec in heldout_split(ws, category)[:25]:
            grid = store.voxels(rec.id)
            sketch = store.sketch(rec.id)
            start = encode_image(bundle.image_encoder, sketch)
            z_bar = encode_shape(bundle.shape_encoder, grid)
            t0 = time.perf_counter()
            res = co_optimize(
                bundle.mapper, start, z_bar,
                iters=config.coopt.iters, lr=config.coopt.lr,
            )
            seconds = time.perf_counter() - t0
            cases.append(
                {"rec": rec, "grid": grid, "sketch": sketch, "start": start,
                 "z_bar": z_bar, "res": res, "seconds": seconds}
            )
    assert len(cases) == 50
    ws["cache"]["coopt"] = cases
    return cases


# ---------------------------------------------------------------------------
# Criteria


def test_gradient_correctness():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    checked = 0
    while checked < 100:
        n_layers = int(rng.integers(1, 5))
        dims = [int(rng.integers(2, 33)) for _ in range(n_layers + 1)]
        acts = [
            ("leaky_relu", "sigmoid", "identity")[int(rng.integers(0, 3))]
            for _ in range(n_layers)
        ]
        skips = [bool(rng.integers(0, 2)) and dims[i] == dims[i + 1] for i in range(n_layers)]
        from shapexplore.nn import build_mlp

        net = build_mlp(dims, acts, skips, seed=int(rng.integers(0, 2**31)))
        x = rng.standard_normal(net.input_dim)
        _, tape = forward(net, x)
        if min_preact_margin(tape, net) <= 2e-3:
            continue  # finite differences are invalid that close to a kink
        worst = max(worst, gradient_check(net, x, seed=int(rng.integers(0, 2**31))))
        checked += 1
    elapsed = time.perf_counter() - t0
    assert worst < 1e-4, f"worst relative error {worst:.2e}"
    assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s"
    report(f"PASS gradient correctness: 100 nets, worst rel err {worst:.2e}, {elapsed:.1f}s")


def test_space_quality(ws):
    bundle, store, times = ws["bundle"], ws["store"], ws["times"]
    test_recs = ws["store"].split("test")

    grids = np.stack([store.voxels(r.id).values.reshape(-1) for r in test_recs])
    codes = encode_shapes_batch(bundle.shape_encoder, grids)
    probs, _ = forward(bundle.shape_decoder, codes)
    inter = np.logical_and(probs > 0.5, grids > 0.5).sum(axis=1)
    union = np.logical_or(probs > 0.5, grids > 0.5).sum(axis=1)
    ious = np.where(union == 0, 1.0, inter / np.maximum(union, 1))
    mean_iou = float(ious.mean())
    assert mean_iou >= 0.85, f"held-out reconstruction IoU {mean_iou:.3f}"

    # retrieval: in shuffled batches of 32, the matching caption must share
    # the top rank (identical captions tie at identical codes)
    pixels = np.stack([store.sketch(r.id).pixels.reshape(-1) for r in test_recs])
    img_codes = encode_images_batch(bundle.image_encoder, pixels)
    txt_codes = np.stack(
        [encode_text(bundle.text_encoder, r.caption, bundle.vocab).vector for r in test_recs]
    )
    order = np.random.default_rng(7).permutation(len(test_recs))
    hits = total = 0
    matched, mismatched = [], []
    for lo in range(0, len(order) - 31, 32):
        idx = order[lo : lo + 32]
        sim = img_codes[idx] @ txt_codes[idx].T
        for i in range(32):
            hits += sim[i, i] >= sim[i].max() - 1e-12
            total += 1
        matched.append(np.diag(sim))
        mismatched.append(sim[~np.eye(32, dtype=bool)])
    top1 = hits / total
    assert top1 >= 0.70, f"held-out top-1 retrieval {top1:.2%}"

    gap = float(np.concatenate(matched).mean() - np.concatenate(mismatched).mean())
    assert gap >= 0.1, f"modal alignment gap {gap:.3f}"

    # degenerate input sanity: an empty grid decodes to near-empty
    empty_code = encode_shape(bundle.shape_encoder, VoxelGrid.empty(bundle.resolution))
    assert np.all(np.isfinite(empty_code))
    empty_dec = decode_shape(bundle.shape_decoder, empty_code, bundle.resolution)
    empty_occ = empty_dec.binarized().occupancy_fraction()
    assert empty_occ < 0.05, f"empty-shape decode occupancy {empty_occ:.3f}"

    # armrest-chair sketches sit closer to the armrest caption than to
    # the plain-chair caption
    with_arm = encode_text(bundle.text_encoder, "a chair with armrests", bundle.vocab).vector
    plain = encode_text(bundle.text_encoder, "a plain chair", bundle.vocab).vector
    arm_rows = [
        i for i, r in enumerate(test_recs)
        if r.category == "chair" and r.attributes["armrest"]
    ]
    closer = sum(
        float(img_codes[i] @ with_arm) > float(img_codes[i] @ plain) for i in arm_rows
    )
    caption_frac = closer / len(arm_rows)
    assert caption_frac >= 0.80, f"armrest caption preferred for {caption_frac:.2%}"

    assert times["autoencoder"] <= 900, f"autoencoder took {times['autoencoder']:.0f}s"
    assert times["embedding"] <= 900, f"embedding took {times['embedding']:.0f}s"
    report(
        "PASS space quality: "
        f"recon IoU {mean_iou:.3f} (>=0.85), retrieval {top1:.2%} (>=70%), "
        f"alignment gap {gap:.3f}, empty decode {empty_occ:.4f}, "
        f"times AE {times['autoencoder']:.0f}s / EMB {times['embedding']:.0f}s (<=900s)"
    )


def test_mapper_coupling(ws):
    bundle, store, times = ws["bundle"], ws["store"], ws["times"]
    recs = ws["store"].split("test")
    pixels = np.stack([store.sketch(r.id).pixels.reshape(-1) for r in recs])
    img_codes = encode_images_batch(bundle.image_encoder, pixels)
    mapped = map_codes_batch(bundle.mapper, img_codes)
    probs, _ = forward(bundle.shape_decoder, mapped)

    ious = []
    agree = total = 0
    for i, rec in enumerate(recs):
        gt = store.voxels(rec.id)
        recon = VoxelGrid(bundle.resolution, probs[i].reshape((bundle.resolution,) * 3))
        ious.append(iou(recon, gt))
        recon_bin = recon.binarized()
        for name in APPLICABLE_ATTRIBUTES[rec.category]:
            want = rec.attributes[name]
            got = attribute_score(recon_bin, attribute_label(rec.category, name)) >= THETA
            agree += want == got
            total += 1
    mean_iou = float(np.mean(ious))
    agreement = agree / total
    assert mean_iou >= 0.6, f"single-view reconstruction IoU {mean_iou:.3f}"
    assert agreement >= 0.75, f"attribute agreement {agreement:.2%}"

    losses = [
        float(line.split()[1])
        for line in (ws["root"] / "bundle" / "logs" / "mapper.loss.txt").read_text().splitlines()
    ]
    assert losses[-1] < 0.1 * losses[0], "mapper training loss did not drop 10x"
    assert times["mapper"] <= 900, f"mapper took {times['mapper']:.0f}s"

    # the trained map lands far closer to the direct encoding than the
    # mapped zero code does
    z_bar = encode_shapes_batch(bundle.shape_encoder, np.stack(
        [store.voxels(r.id).values.reshape(-1) for r in recs]
    ))
    z_zero = map_code(bundle.mapper, np.zeros(bundle.clip_dim))
    d_mapped = np.linalg.norm(mapped - z_bar, axis=1)
    d_zero = np.linalg.norm(z_zero[None, :] - z_bar, axis=1)
    assert np.all(np.isfinite(d_mapped))
    closer_frac = float((d_mapped < d_zero).mean())
    assert closer_frac >= 0.90, f"mapped code closer than zero baseline for {closer_frac:.2%}"
    report(
        "PASS mapper coupling: "
        f"IoU {mean_iou:.3f} (>=0.6), attr agreement {agreement:.2%} (>=75%), "
        f"loss {losses[0]:.3f}->{losses[-1]:.4f}, time {times['mapper']:.0f}s (<=900s)"
    )


def test_co_optimization(ws):
    bundle, config = ws["bundle"], ws["config"]
    assert config.coopt.iters == 2000 and config.coopt.lr == 2e-4
    cases = coopt_cases(ws)

    initials = np.array([c["res"].initial_loss for c in cases])
    finals = np.array([c["res"].final_loss for c in cases])
    assert np.all(finals <= initials)
    med_ratio = float(np.median(finals) / np.median(initials))
    assert med_ratio <= 0.5, f"median loss ratio {med_ratio:.3f}"

    improved = 0
    for c in cases:
        before = decode_shape(
            bundle.shape_decoder, map_code(bundle.mapper, c["start"]), bundle.resolution
        )
        after = decode_shape(bundle.shape_decoder, c["res"].shape_code, bundle.resolution)
        improved += iou(after, c["grid"]) >= iou(before, c["grid"])
    frac = improved / len(cases)
    assert frac >= 0.80, f"IoU improved in only {frac:.2%}"

    worst_s = max(c["seconds"] for c in cases)
    assert worst_s <= 60.0, f"slowest refinement {worst_s:.1f}s"
    report(
        "PASS co-optimization: "
        f"median loss ratio {med_ratio:.3f} (<=0.5), IoU non-worse {frac:.2%} (>=80%), "
        f"slowest {worst_s:.1f}s (<=60s)"
    )


def binary_flip_run(ws, category: str, attr: str, count: int = 25):
    bundle, store, config = ws["bundle"], ws["store"], ws["config"]
    directions = ws["cache"].setdefault(
        "directions", DirectionCache(bundle, store, config)
    )
    direction = directions.binary_direction(category, attr)
    label = attribute_label(category, attr)
    applicable = [r for r in heldout_split(ws, category) if not r.attributes[attr]][:count]
    assert len(applicable) == count
    by_id = {c["rec"].id: c for c in coopt_cases(ws)}
    flips = []
    trajectories = []
    for rec in applicable:
        if rec.id in by_id:
            code = by_id[rec.id]["res"].code
            grid = by_id[rec.id]["grid"]
        else:
            grid = store.voxels(rec.id)
            start = encode_image(bundle.image_encoder, store.sketch(rec.id))
            z_bar = encode_shape(bundle.shape_encoder, grid)
            code = co_optimize(
                bundle.mapper, start, z_bar, config.coopt.iters, config.coopt.lr
            ).code
        cands = explore_trajectory(
            bundle.mapper, bundle.shape_decoder, code, direction,
            uniform_alphas(config.alpha.min, config.alpha.max, config.alpha.grid),
            bundle.resolution, bundle.sketch_width,
        )
        trajectories.append((rec, grid, cands))
        chosen = next(c for c in cands if c.alpha == config.alpha.default)
        flips.append((grid, chosen.grid.binarized(), label, 1))
    return direction, flips, trajectories


def test_binary_mode(ws):
    bundle, store, config = ws["bundle"], ws["store"], ws["config"]
    directions = ws["cache"].setdefault(
        "directions", DirectionCache(bundle, store, config)
    )

    rates = {}
    for category, attr in (("chair", "armrest"), ("table", "drawer")):
        direction, flips, trajectories = binary_flip_run(ws, category, attr)
        acc = direction.metadata["train_accuracy"]
        assert acc >= 0.95, f"{category}/{attr} svm accuracy {acc:.3f}"

        # class sizes: the training split must offer >= 1000 codes per side
        train_recs = store.split("train")
        n_pos = sum(1 for r in train_recs if r.category == category and r.attributes[attr])
        n_neg = sum(1 for r in train_recs if r.category == category and not r.attributes[attr])
        assert min(n_pos, n_neg) >= 1000, f"{category}/{attr}: {n_pos}/{n_neg} per class"

        rate = attribute_flip_rate(flips, theta=config.oracle.theta)
        rates[(category, attr)] = rate
        assert rate >= 0.70, f"{category}/{attr} flip rate {rate:.2%} at alpha_default"

        # held-out separation along the direction
        test_recs = heldout_split(ws, category)
        pixels = np.stack([store.sketch(r.id).pixels.reshape(-1) for r in test_recs])
        codes = encode_images_batch(bundle.image_encoder, pixels)
        mask = np.array([r.attributes[attr] for r in test_recs])
        stats = projection_gap(direction, codes[mask], codes[~mask])
        assert stats["gap"] >= 1.0, f"{category}/{attr} projection gap {stats['gap']:.2f}"

        ws["cache"].setdefault("binary_trajectories", {})[(category, attr)] = trajectories

    # tracing up to the default step makes the oracle score non-decreasing
    # for most chairs (past it the mapped trajectory leaves the data
    # manifold and scores wobble, which is why the range is calibrated)
    label = attribute_label("chair", "armrest")
    mono = 0
    trajs = ws["cache"]["binary_trajectories"][("chair", "armrest")]
    upto = config.alpha.default + 1e-9
    for _, _, cands in trajs:
        scores = [attribute_score(c.grid, label) for c in cands if c.alpha <= upto]
        assert len(scores) >= 3
        mono += all(b >= a - 1e-9 for a, b in zip(scores, scores[1:]))
    mono_frac = mono / len(trajs)
    assert mono_frac >= 0.60, f"monotone armrest score on {mono_frac:.2%}"

    report(
        "PASS binary mode: "
        f"flip rates chair/armrest {rates[('chair','armrest')]:.2%}, "
        f"table/drawer {rates[('table','drawer')]:.2%} (>=70%), "
        f"svm acc >=95%, projection gaps >=1.0, monotone {mono_frac:.2%} (>=60%)"
    )


# four pairs whose attribute keeps one rendered position across the whole
# family; those are the ones whose caption-difference direction transfers
# to arbitrary starting shapes (the drawer is exercised by binary mode)
TEXT_PAIRS = [
    ("chair", "armrest", "a plain chair", "a chair with armrests"),
    ("chair", "stretcher", "a plain chair", "a chair with stretchers"),
    ("table", "stretcher", "a plain table", "a table with stretchers"),
    ("table", "shelf", "a plain table", "a table with a shelf"),
]


def test_text_mode(ws):
    bundle, store, config = ws["bundle"], ws["store"], ws["config"]
    by_id = {c["rec"].id: c for c in coopt_cases(ws)}
    clip_s_wins = clip_s_total = 0
    moved_frac = {}
    for category, attr, t_from, t_to in TEXT_PAIRS:
        direction = direction_from_text(bundle.text_encoder, bundle.vocab, t_from, t_to)
        target_code = encode_text(bundle.text_encoder, t_to, bundle.vocab)
        label = attribute_label(category, attr)
        applicable = [r for r in heldout_split(ws, category) if not r.attributes[attr]][:25]
        moved = 0
        for rec in applicable:
            if rec.id in by_id:
                code, grid = by_id[rec.id]["res"].code, by_id[rec.id]["grid"]
                sketch = by_id[rec.id]["sketch"]
            else:
                grid = store.voxels(rec.id)
                sketch = store.sketch(rec.id)
                start = encode_image(bundle.image_encoder, sketch)
                z_bar = encode_shape(bundle.shape_encoder, grid)
                code = co_optimize(
                    bundle.mapper, start, z_bar, config.coopt.iters, config.coopt.lr
                ).code
            cand = explore_trajectory(
                bundle.mapper, bundle.shape_decoder, code, direction,
                [config.alpha.default], bundle.resolution, bundle.sketch_width,
            )[0]
            before = attribute_score(grid, label)
            after = attribute_score(cand.grid.binarized(), label)
            moved += after > before
            result_code = encode_image(bundle.image_encoder, cand.sketch)
            input_code = encode_image(bundle.image_encoder, sketch)
            clip_s_wins += clip_similarity(result_code, target_code) > clip_similarity(
                input_code, target_code
            )
            clip_s_total += 1
        frac = moved / len(applicable)
        moved_frac[(category, attr)] = frac
        assert frac >= 0.70, f"text pair {t_from!r}->{t_to!r}: moved {frac:.2%}"

    clip_frac = clip_s_wins / clip_s_total
    assert clip_frac >= 0.70, f"clip similarity improved in {clip_frac:.2%}"
    report(
        "PASS text mode: oracle movement "
        + ", ".join(f"{k[1]} {v:.0%}" for k, v in moved_frac.items())
        + f" (>=70% each); clip-s improved {clip_frac:.2%} (>=70%)"
    )


def test_sketch_mode(ws):
    bundle, store, config = ws["bundle"], ws["store"], ws["config"]
    directions = ws["cache"].setdefault(
        "directions", DirectionCache(bundle, store, config)
    )
    by_id = {c["rec"].id: c for c in coopt_cases(ws)}
    alphas = uniform_alphas(config.alpha.min, config.alpha.max, config.alpha.grid)
    step = alphas[1] - alphas[0]

    # planted-alpha recovery over 25 cases, both categories
    planted = [1.0, 2.0, 3.0]
    recovered = 0
    cases = coopt_cases(ws)[::2][:25]
    for i, c in enumerate(cases):
        rec = c["rec"]
        attr = "armrest" if rec.category == "chair" else "drawer"
        direction = directions.binary_direction(rec.category, attr)
        cands = explore_trajectory(
            bundle.mapper, bundle.shape_decoder, c["res"].code, direction,
            alphas, bundle.resolution, bundle.sketch_width,
        )
        alpha_star = planted[i % len(planted)]
        target = next(x for x in cands if x.alpha == alpha_star)
        edited_code = encode_image(bundle.image_encoder, target.sketch)
        best = select_alpha_by_sketch(bundle.image_encoder, cands, edited_code)
        recovered += abs(best.alpha - alpha_star) <= step + 1e-9
    rec_frac = recovered / len(cases)
    assert rec_frac >= 0.80, f"planted-alpha recovery {rec_frac:.2%}"

    # erase-the-stretchers edits (full-width pixel band) move the oracle down
    label = attribute_label("table", "stretcher")
    _, y, _, h = region_pixel_rect(label, bundle.sketch_width)
    edit = {"op": "erase_rect", "x": 0, "y": y, "width": bundle.sketch_width, "height": h}
    tables = [r for r in heldout_split(ws, "table") if r.attributes["stretcher"]][:25]
    moved = 0
    for rec in tables:
        if rec.id in by_id:
            code, grid, sketch = (
                by_id[rec.id]["res"].code, by_id[rec.id]["grid"], by_id[rec.id]["sketch"],
            )
        else:
            grid = store.voxels(rec.id)
            sketch = store.sketch(rec.id)
            start = encode_image(bundle.image_encoder, sketch)
            z_bar = encode_shape(bundle.shape_encoder, grid)
            code = co_optimize(
                bundle.mapper, start, z_bar, config.coopt.iters, config.coopt.lr
            ).code
        edited = apply_sketch_edit(sketch, edit)
        direction = direction_from_sketch(bundle.image_encoder, sketch, edited)
        cands = explore_trajectory(
            bundle.mapper, bundle.shape_decoder, code, direction,
            alphas, bundle.resolution, bundle.sketch_width,
        )
        chosen = select_alpha_by_sketch(
            bundle.image_encoder, cands, encode_image(bundle.image_encoder, edited)
        )
        before = attribute_score(grid, label)
        after = attribute_score(chosen.grid.binarized(), label)
        moved += after < before
    moved_frac = moved / len(tables)
    assert moved_frac >= 0.70, f"edit-direction movement {moved_frac:.2%}"
    report(
        "PASS sketch mode: planted-alpha recovery "
        f"{rec_frac:.2%} (>=80%), erase-stretcher movement {moved_frac:.2%} (>=70%)"
    )


def test_trajectory_properties(ws):
    bundle, config = ws["bundle"], ws["config"]
    cases = coopt_cases(ws)
    directions = ws["cache"].setdefault(
        "directions", DirectionCache(ws["bundle"], ws["store"], config)
    )

    # alpha=0 bit-exact identity
    for c in cases[:10]:
        attr = "armrest" if c["rec"].category == "chair" else "drawer"
        direction = directions.binary_direction(c["rec"].category, attr)
        cand = explore_trajectory(
            bundle.mapper, bundle.shape_decoder, c["res"].code, direction,
            [0.0], bundle.resolution, bundle.sketch_width,
        )[0]
        direct = decode_shape(
            bundle.shape_decoder, map_code(bundle.mapper, c["res"].code), bundle.resolution
        )
        assert np.array_equal(cand.grid.values, direct.values)

    # step additivity on real codes and directions
    rng = np.random.default_rng(5)
    worst = 0.0
    d = directions.binary_direction("chair", "armrest")
    for c in cases[:20]:
        a, b = rng.uniform(-3, 3), rng.uniform(-3, 3)
        two = trace_code(trace_code(c["res"].code, d, a), d, b)
        one = trace_code(c["res"].code, d, a + b)
        worst = max(worst, float(np.max(np.abs(two.vector - one.vector))))
    assert worst < 1e-12, f"additivity error {worst:.2e}"

    # consecutive-candidate coherence: each half-unit step along each
    # measured trajectory is one case of the small-step/small-change property
    all_trajs = []
    for key in (("chair", "armrest"), ("table", "drawer")):
        trajs = ws["cache"].get("binary_trajectories", {}).get(key)
        if trajs is None:
            _, _, trajs = binary_flip_run(ws, *key)
            ws["cache"].setdefault("binary_trajectories", {})[key] = trajs
        all_trajs.extend(trajs)
    step_ok = steps = 0
    whole = 0
    for _, _, cands in all_trajs:
        pair_ok = [iou(a.grid, b.grid) >= 0.5 for a, b in zip(cands, cands[1:])]
        step_ok += sum(pair_ok)
        steps += len(pair_ok)
        whole += all(pair_ok)
    coh_frac = step_ok / steps
    assert coh_frac >= 0.80, f"trajectory coherence {coh_frac:.2%}"

    # nonlinearity witness: the shape-space path is not a straight line
    witness = None
    for _, _, cands in all_trajs:
        z = {c.alpha: c.shape_code for c in cands}
        linear = z[0.0] + 3.0 * (z[1.0] - z[0.0])
        dist = float(np.linalg.norm(z[3.0] - linear))
        if dist > 1e-3:
            witness = dist
            break
    assert witness is not None, "no nonlinearity witness found"
    report(
        "PASS trajectory properties: alpha=0 exact, additivity "
        f"{worst:.1e} (<1e-12), step coherence {coh_frac:.2%} (>=80%; "
        f"{whole}/{len(all_trajs)} whole trajectories), "
        f"nonlinearity witness L2 {witness:.4f} (>1e-3)"
    )


def test_service_accept_roundtrip(ws):
    # accepting the alpha=0 candidate must approximately preserve the shape
    from shapexplore.service import ExplorationService

    service = ExplorationService(ws["bundle"], ws["store"], ws["config"])
    rec = heldout_split(ws, "chair")[0]
    view = service.create_session(rec.id, None)
    sid = view["session_id"]
    before = service.get_session(sid).grid
    service.set_condition(
        sid,
        {"mode": "text", "caption_from": "a plain chair", "caption_to": "a tall chair"},
    )
    service.trajectory(sid, [0.0])
    after_view = service.accept(sid, 0.0)
    after = service.get_session(sid).grid
    roundtrip = iou(before, after)
    assert roundtrip >= 0.9, f"alpha=0 accept changed the shape: IoU {roundtrip:.3f}"
    assert len(after_view["history"]) == 1
    report(f"PASS service round trip: alpha=0 accept IoU {roundtrip:.3f} (>=0.9)")


def test_freeze_integrity(ws):
    bundle = ws["bundle"]
    recorded = json.loads((ws["root"] / "bundle" / "bundle.json").read_text())["hashes"]
    # after mapper training, 50 refinements, trajectory materialization and
    # evaluation, every frozen network still hashes to its recorded value
    current = bundle.hashes()
    assert current == recorded, "parameter hashes drifted"
    report(f"PASS freeze integrity: {len(current)} network hashes unchanged")


def test_full_pipeline_time_and_determinism(ws):
    config, times, store = ws["config"], ws["times"], ws["store"]
    suite = build_standard_suite(store, config)
    assert len(suite) == 50
    assert sum(1 for c in suite if c.shape_id.startswith("chair")) == 25
    assert sum(1 for c in suite if c.shape_id.startswith("table")) == 25
    case_path = ws["root"] / "standard-suite.jsonl"
    write_cases(case_path, suite)

    t0 = time.perf_counter()
    r1 = ws["root"] / "reports" / "standard"
    assert cli_main(
        ["eval", str(case_path), "--config", str(ws["cfg_path"]), "--out", str(r1)]
    ) == 0
    times["eval"] = time.perf_counter() - t0

    rows = [json.loads(l) for l in r1.with_suffix(".jsonl").read_text().splitlines()]
    agg = rows[-1]["aggregates"]
    assert agg["cases"] == 50 and agg["errors"] == 0

    # reported binary flip rate matches an independent recount from records
    per_case = [r for r in rows[1:-1] if r["mode"] == "binary"]
    theta = config.oracle.theta
    recount = np.mean(
        [r["oracle_before"] < theta <= r["oracle_after"] for r in per_case]
    )
    assert abs(agg["flip_rate_binary"] - recount) < 1e-9

    r2 = ws["root"] / "reports" / "standard-rerun"
    assert cli_main(
        ["eval", str(case_path), "--config", str(ws["cfg_path"]), "--out", str(r2)]
    ) == 0
    assert r1.with_suffix(".jsonl").read_bytes() == r2.with_suffix(".jsonl").read_bytes()
    assert r1.with_suffix(".txt").read_bytes() == r2.with_suffix(".txt").read_bytes()

    # the frozen spaces survived the full eval runs untouched
    recorded = json.loads((ws["root"] / "bundle" / "bundle.json").read_text())["hashes"]
    assert ws["bundle"].hashes() == recorded

    total = times["gen_data"] + times["train_spaces"] + times["train_mapper"] + times["eval"]
    assert total <= 2700, f"pipeline took {total:.0f}s"
    report(
        "PASS full pipeline: "
        f"gen {times['gen_data']:.0f}s + spaces {times['train_spaces']:.0f}s + "
        f"mapper {times['train_mapper']:.0f}s + eval {times['eval']:.0f}s = "
        f"{total:.0f}s (<=2700s); reports rerun-identical; "
        f"suite flip rates binary {agg.get('flip_rate_binary')}, "
        f"text {agg.get('flip_rate_text')}, sketch {agg.get('flip_rate_sketch')}"
    )
