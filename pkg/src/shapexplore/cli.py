"""Command-line entry point.

Subcommands: gen-data, train, explore, eval, serve. Configuration comes
from an optional JSON file (--config) with flag overrides winning; every
command writes its resolved configuration next to its outputs and is
safe to rerun (all outputs are written atomically).

Exit codes: 0 ok, 1 usage, 2 data/state/config, 3 numeric.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .coopt import co_optimize
from .dataset import DataStore, generate_dataset, write_pgm, write_voxel_file
from .errors import (
    ConfigError,
    DataError,
    NumericError,
    ShapeXploreError,
    StateError,
    UsageError,
)
from .mapper import train_mapper
from .metrics import DirectionCache, load_cases, run_eval
from .spaces import (
    SpaceBundle,
    Vocabulary,
    encode_image,
    encode_images_batch,
    encode_shape,
    encode_shapes_batch,
    train_joint_embedding,
    train_shape_autoencoder,
)
from .util import atomic_write_text

log = logging.getLogger("shapexplore")


def _echo_config(config: RunConfig, out_dir: Path, command: str) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out_dir / f"{command}.resolved-config.json", config.to_json() + "\n")


def _write_loss_log(path: Path, losses: list[float]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    atomic_write_text(path, "".join(f"{i} {v:.10e}\n" for i, v in enumerate(losses)))


# ---------------------------------------------------------------------------
# Commands


def cmd_gen_data(config: RunConfig) -> int:
    data_dir = Path(config.paths.data_dir)
    _echo_config(config, data_dir, "gen-data")
    n = config.dataset.num_shapes
    if n == 0:
        log.warning("num_shapes is 0; writing an empty manifest")
    t0 = time.perf_counter()
    records = generate_dataset(
        data_dir, n, config.dims.resolution, config.dims.sketch_width
    )
    log.info("wrote %d shapes to %s in %.1fs", len(records), data_dir, time.perf_counter() - t0)
    return 0


def _load_split_arrays(store: DataStore, split: str) -> tuple[list, np.ndarray, np.ndarray]:
    recs = store.split(split)
    grids = np.stack([store.voxels(r.id).values.reshape(-1) for r in recs])
    pixels = np.stack([store.sketch(r.id).pixels.reshape(-1) for r in recs])
    return recs, grids, pixels


def cmd_train(config: RunConfig, stage: str) -> int:
    bundle_dir = Path(config.paths.bundle_dir)
    _echo_config(config, bundle_dir, f"train-{stage}")
    store = DataStore(config.paths.data_dir)

    if stage == "spaces":
        recs, grids, pixels = _load_split_arrays(store, "train")
        vocab = Vocabulary()

        t0 = time.perf_counter()
        enc, dec, ae_losses = train_shape_autoencoder(
            grids,
            shape_dim=config.dims.shape_dim,
            hidden=config.autoencoder.hidden,
            epochs=config.autoencoder.epochs,
            batch_size=config.autoencoder.batch_size,
            lr=config.autoencoder.lr,
            seed=config.stage_seed("autoencoder"),
        )
        ae_seconds = time.perf_counter() - t0
        log.info("autoencoder trained in %.1fs (final loss %.5f)", ae_seconds, ae_losses[-1])

        t0 = time.perf_counter()
        img, txt, em_losses = train_joint_embedding(
            pixels,
            [r.caption for r in recs],
            vocab,
            clip_dim=config.dims.clip_dim,
            image_hidden=config.embedding.image_hidden,
            text_embed=config.embedding.text_embed,
            epochs=config.embedding.epochs,
            batch_size=config.embedding.batch_size,
            lr=config.embedding.lr,
            temperature=config.embedding.temperature,
            seed=config.stage_seed("embedding"),
        )
        em_seconds = time.perf_counter() - t0
        log.info("joint embedding trained in %.1fs (final loss %.5f)", em_seconds, em_losses[-1])

        bundle = SpaceBundle(
            shape_encoder=enc,
            shape_decoder=dec,
            image_encoder=img,
            text_encoder=txt,
            vocab=vocab,
            clip_dim=config.dims.clip_dim,
            shape_dim=config.dims.shape_dim,
            resolution=config.dims.resolution,
            sketch_width=config.dims.sketch_width,
            seeds={
                "autoencoder": config.stage_seed("autoencoder"),
                "embedding": config.stage_seed("embedding"),
            },
        )
        bundle.save(bundle_dir)
        _write_loss_log(bundle_dir / "logs" / "autoencoder.loss.txt", ae_losses)
        _write_loss_log(bundle_dir / "logs" / "embedding.loss.txt", em_losses)
        atomic_write_text(
            bundle_dir / "logs" / "train-spaces.time.json",
            json.dumps({"autoencoder_s": round(ae_seconds, 3), "embedding_s": round(em_seconds, 3)}) + "\n",
        )
        return 0

    if stage == "mapper":
        bundle = SpaceBundle.load(bundle_dir)  # raises StateError if spaces missing
        recs, grids, pixels = _load_split_arrays(store, "train")
        clip_codes = encode_images_batch(bundle.image_encoder, pixels)
        shape_codes = encode_shapes_batch(bundle.shape_encoder, grids)
        t0 = time.perf_counter()
        net, losses = train_mapper(
            clip_codes,
            shape_codes,
            bundle.image_encoder,
            bundle.shape_encoder,
            hidden=config.mapper.hidden,
            epochs=config.mapper.epochs,
            batch_size=config.mapper.batch_size,
            lr=config.mapper.lr,
            seed=config.stage_seed("mapper"),
        )
        mapper_seconds = time.perf_counter() - t0
        log.info("mapper trained in %.1fs (final loss %.5f)", mapper_seconds, losses[-1])
        bundle.mapper = net
        bundle.seeds["mapper"] = config.stage_seed("mapper")
        bundle.save(bundle_dir)
        _write_loss_log(bundle_dir / "logs" / "mapper.loss.txt", losses)
        atomic_write_text(
            bundle_dir / "logs" / "train-mapper.time.json",
            json.dumps({"mapper_s": round(mapper_seconds, 3)}) + "\n",
        )
        return 0

    raise UsageError(f"unknown train stage {stage!r} (expected spaces|mapper)")


def cmd_explore(config: RunConfig, case_path: str, out_dir: str) -> int:
    from .metrics import run_case

    bundle = SpaceBundle.load(config.paths.bundle_dir, require_mapper=True)
    store = DataStore(config.paths.data_dir)
    out = Path(out_dir)
    _echo_config(config, out, "explore")
    cases = load_cases(case_path)
    directions = DirectionCache(bundle, store, config)

    from .explore import (
        direction_from_sketch,
        explore_trajectory,
        select_alpha_by_sketch,
        uniform_alphas,
    )
    from .metrics import clip_similarity
    from .procgen import apply_sketch_edit, attribute_label, attribute_score

    failures = 0
    for case in cases:
        case_dir = out / case.id
        case_dir.mkdir(parents=True, exist_ok=True)
        try:
            rec = store.record(case.shape_id)
            grid = store.voxels(case.shape_id)
            sketch = store.sketch(case.shape_id)
            start = encode_image(bundle.image_encoder, sketch)
            z_bar = encode_shape(bundle.shape_encoder, grid)
            co = co_optimize(
                bundle.require_mapper(), start, z_bar,
                iters=config.coopt.iters, lr=config.coopt.lr,
            )

            edited_code = None
            if case.mode == "binary":
                direction = directions.binary_direction(rec.category, case.attribute)
                if case.sign < 0:
                    direction = direction.negated()
            elif case.mode == "text":
                from .explore import direction_from_text

                direction = direction_from_text(
                    bundle.text_encoder, bundle.vocab, case.caption_from, case.caption_to
                )
            elif case.mode == "sketch":
                edited = apply_sketch_edit(sketch, case.edit)
                direction = direction_from_sketch(bundle.image_encoder, sketch, edited)
                edited_code = encode_image(bundle.image_encoder, edited)
                write_pgm(edited, case_dir / "edited.pgm")
            else:
                raise DataError(f"unknown mode {case.mode!r}")

            if case.alpha_policy.get("kind") == "sketch_select":
                alphas = uniform_alphas(config.alpha.min, config.alpha.max, config.alpha.grid)
            else:
                alphas = [float(case.alpha_policy.get("alpha", config.alpha.default))]
            cands = explore_trajectory(
                bundle.require_mapper(), bundle.shape_decoder, co.code, direction,
                alphas, bundle.resolution, bundle.sketch_width,
            )
            if case.alpha_policy.get("kind") == "sketch_select":
                chosen = select_alpha_by_sketch(bundle.image_encoder, cands, edited_code)
            else:
                chosen = cands[0]

            target_attr = case.target_attribute or case.attribute
            lines = []
            for cand in cands:
                stem = f"alpha_{cand.alpha:05.2f}"
                write_voxel_file(cand.grid.binarized(), case_dir / f"{stem}.lxv")
                write_pgm(cand.sketch, case_dir / f"{stem}.pgm")
                sim = cand.similarity
                if sim is None and edited_code is not None:
                    sim = clip_similarity(
                        encode_image(bundle.image_encoder, cand.sketch), edited_code
                    )
                parts = [f"alpha={cand.alpha:.4f}", f"norm={cand.clip_code.norm():.4f}"]
                if sim is not None:
                    parts.append(f"similarity={sim:.6f}")
                if target_attr:
                    score = attribute_score(
                        cand.grid.binarized(), attribute_label(rec.category, target_attr)
                    )
                    parts.append(f"oracle:{target_attr}={score:.4f}")
                lines.append(" ".join(parts))
            lines.append(f"selected alpha={chosen.alpha:.4f}")
            atomic_write_text(case_dir / "summary.txt", "\n".join(lines) + "\n")
        except Exception as e:
            failures += 1
            log.warning("case %s failed: %s", case.id, e)
            atomic_write_text(case_dir / "error.txt", f"{e}\n")
    return 2 if failures else 0


def cmd_eval(config: RunConfig, case_path: str, report_path: str) -> int:
    bundle = SpaceBundle.load(config.paths.bundle_dir, require_mapper=True)
    store = DataStore(config.paths.data_dir)
    report_dir = Path(report_path).parent
    _echo_config(config, report_dir if str(report_dir) else Path("."), "eval")
    report = run_eval(case_path, bundle, store, config, report_path)
    log.info("evaluated %d cases (%d errors)", len(report.records), report.aggregates["errors"])
    return 0


def cmd_serve(config: RunConfig, port: int) -> int:
    from .service import serve_forever

    return serve_forever(config, port)


# ---------------------------------------------------------------------------
# Argument parsing


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # usage errors must exit 1, not argparse's 2
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="shapexplore", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, help="global seed override")
        sp.add_argument("--data-dir", help="dataset directory override")
        sp.add_argument("--bundle-dir", help="model bundle directory override")

    sp = sub.add_parser("gen-data", help="sample shapes, voxelize, render, write manifest")
    common(sp)

    sp = sub.add_parser("train", help="train a stage: spaces (autoencoder+embedding) or mapper")
    common(sp)
    sp.add_argument("stage", choices=["spaces", "mapper"])

    sp = sub.add_parser("explore", help="run exploration cases and export trajectories")
    common(sp)
    sp.add_argument("cases", help="exploration case file (JSON lines)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--alpha", type=float, help="fixed step size override")
    sp.add_argument("--mode", help="restrict to one mode (binary|text|sketch)")

    sp = sub.add_parser("eval", help="run the evaluation harness over a case file")
    common(sp)
    sp.add_argument("cases", help="exploration case file (JSON lines)")
    sp.add_argument("--out", required=True, help="report path stem (.txt/.jsonl added)")

    sp = sub.add_parser("serve", help="start the HTTP exploration service")
    common(sp)
    sp.add_argument("--port", type=int, default=8732)
    return p


def resolve_config(args: argparse.Namespace) -> RunConfig:
    config = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    if getattr(args, "data_dir", None):
        config.paths.data_dir = args.data_dir
    if getattr(args, "bundle_dir", None):
        config.paths.bundle_dir = args.bundle_dir
    if getattr(args, "alpha", None) is not None:
        config.alpha.default = args.alpha
    return config


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        config = resolve_config(args)
        if args.command == "gen-data":
            return cmd_gen_data(config)
        if args.command == "train":
            return cmd_train(config, args.stage)
        if args.command == "explore":
            cases = args.cases
            if args.mode:
                kept = [c for c in load_cases(cases) if c.mode == args.mode]
                from .metrics import write_cases

                tmp = Path(args.out) / "filtered-cases.jsonl"
                tmp.parent.mkdir(parents=True, exist_ok=True)
                write_cases(tmp, kept)
                cases = str(tmp)
            return cmd_explore(config, cases, args.out)
        if args.command == "eval":
            return cmd_eval(config, args.cases, args.out)
        if args.command == "serve":
            return cmd_serve(config, args.port)
        raise UsageError(f"unknown command {args.command!r}")
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return 3
    except ShapeXploreError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"io error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
