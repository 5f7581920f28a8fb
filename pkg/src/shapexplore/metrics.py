"""Metrics and the end-to-end evaluation harness.

Geometric fidelity is voxel IoU against ground truth, embedding
consistency is cosine similarity between a result's rendering and its
condition, and exploration success is measured by the procedural
attribute oracle (did the explored shape cross the regional-occupancy
threshold in the intended direction).

``run_eval`` executes a case file end to end (encode, refine, find the
direction, trace, decode, score) and writes a deterministic report:
a human-readable table plus machine-readable JSON lines, both written
atomically so a rerun with the same inputs is byte-identical.
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .coopt import co_optimize
from .dataset import DataStore
from .errors import ArgumentError, DataError
from .explore import (
    Direction,
    direction_from_binary,
    direction_from_sketch,
    direction_from_text,
    explore_trajectory,
    select_alpha_by_sketch,
    svm_train,
    uniform_alphas,
)
from .mapper import map_code
from .procgen import (
    AttributeLabel,
    VoxelGrid,
    apply_sketch_edit,
    attribute_label,
    attribute_score,
)
from .spaces import ClipCode, SpaceBundle, decode_shape, encode_image, encode_shape, encode_text
from .util import derive_seed

log = logging.getLogger(__name__)


def iou(a: VoxelGrid, b: VoxelGrid, threshold: float = 0.5) -> float:
    """Intersection over union of the binarized grids; empty/empty is 1."""
    if a.resolution != b.resolution:
        raise ArgumentError(f"resolution mismatch {a.resolution} != {b.resolution}")
    av = a.values > threshold
    bv = b.values > threshold
    union = np.logical_or(av, bv).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(av, bv).sum() / union)


def clip_similarity(a: ClipCode | np.ndarray, b: ClipCode | np.ndarray) -> float:
    va = a.vector if isinstance(a, ClipCode) else np.asarray(a, dtype=np.float64)
    vb = b.vector if isinstance(b, ClipCode) else np.asarray(b, dtype=np.float64)
    if va.shape != vb.shape:
        raise ArgumentError("dimension mismatch")
    na, nb = np.linalg.norm(va), np.linalg.norm(vb)
    if na == 0.0 or nb == 0.0:
        raise ArgumentError("cosine similarity of a zero vector is undefined")
    return float(va @ vb / (na * nb))


def attribute_flip_rate(
    cases: list[tuple[VoxelGrid, VoxelGrid, AttributeLabel, int]],
    theta: float = 0.15,
) -> float:
    """Fraction of (input, explored, label, sign) cases where the explored
    grid crossed to the intended side of theta and the input had not."""
    if not cases:
        raise ArgumentError("no cases")
    hits = 0
    for input_grid, explored_grid, label, sign in cases:
        if sign not in (1, -1):
            raise ArgumentError("sign must be +1 or -1")
        before = attribute_score(input_grid, label)
        after = attribute_score(explored_grid, label)
        if sign > 0:
            hits += before < theta <= after
        else:
            hits += before >= theta > after
    return hits / len(cases)


# ---------------------------------------------------------------------------
# Case files


@dataclass(frozen=True)
class ExplorationCase:
    id: str
    mode: str  # binary | text | sketch
    shape_id: str
    alpha_policy: dict  # {"kind": "fixed", "alpha": x} | {"kind": "sketch_select"}
    attribute: str | None = None  # binary mode: SVM attribute
    sign: int = 1
    caption_from: str | None = None
    caption_to: str | None = None
    edit: dict | None = None  # sketch mode edit descriptor
    target_attribute: str | None = None  # oracle scoring target

    @classmethod
    def from_json(cls, line: str) -> "ExplorationCase":
        try:
            d = json.loads(line)
            return cls(
                id=d["id"],
                mode=d["mode"],
                shape_id=d["shape_id"],
                alpha_policy=d["alpha_policy"],
                attribute=d.get("attribute"),
                sign=int(d.get("sign", 1)),
                caption_from=d.get("caption_from"),
                caption_to=d.get("caption_to"),
                edit=d.get("edit"),
                target_attribute=d.get("target_attribute"),
            )
        except (ValueError, KeyError, TypeError) as e:
            raise DataError(f"bad case record: {e}") from e

    def to_json(self) -> str:
        d = {
            "id": self.id,
            "mode": self.mode,
            "shape_id": self.shape_id,
            "alpha_policy": self.alpha_policy,
            "sign": self.sign,
        }
        for key in ("attribute", "caption_from", "caption_to", "edit", "target_attribute"):
            value = getattr(self, key)
            if value is not None:
                d[key] = value
        return json.dumps(d, sort_keys=True, separators=(",", ":"))


def load_cases(path: str | os.PathLike) -> list[ExplorationCase]:
    cases = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                cases.append(ExplorationCase.from_json(line))
    return cases


def write_cases(path: str | os.PathLike, cases: list[ExplorationCase]) -> None:
    from .util import atomic_write_text

    atomic_write_text(path, "".join(c.to_json() + "\n" for c in cases))


def build_standard_suite(store: DataStore, config: RunConfig) -> list[ExplorationCase]:
    """The 50-case evaluation suite: 25 chairs and 25 tables from the test
    split, mixing all three modes (9 binary, 8 text, 8 sketch per category).

    Binary and text cases add an attribute the input lacks; sketch cases
    erase an attribute's projected pixel band from the rendering of a
    shape that has it. Selection is deterministic (manifest order).
    """
    from .procgen import region_pixel_rect

    plans = {
        "chair": {
            "binary_attr": "armrest",
            "text": ("a plain chair", "a chair with stretchers", "stretcher"),
            "sketch_attr": "stretcher",
        },
        "table": {
            "binary_attr": "drawer",
            "text": ("a plain table", "a table with a shelf", "shelf"),
            "sketch_attr": "stretcher",
        },
    }
    cases: list[ExplorationCase] = []
    for category, plan in plans.items():
        recs = [r for r in store.split("test") if r.category == category]
        lacking_binary = [r for r in recs if not r.attributes[plan["binary_attr"]]]
        t_from, t_to, text_attr = plan["text"]
        lacking_text = [r for r in recs if not r.attributes[text_attr]]
        having_sketch = [r for r in recs if r.attributes[plan["sketch_attr"]]]

        used: set[str] = set()

        def take(pool, count):
            out = []
            for r in pool:
                if r.id not in used:
                    used.add(r.id)
                    out.append(r)
                if len(out) == count:
                    break
            if len(out) < count:
                raise DataError(
                    f"test split too small to build the standard suite for {category}"
                )
            return out

        for i, r in enumerate(take(lacking_binary, 9)):
            cases.append(
                ExplorationCase(
                    id=f"{category}-bin-{i:02d}",
                    mode="binary",
                    shape_id=r.id,
                    attribute=plan["binary_attr"],
                    sign=1,
                    alpha_policy={"kind": "fixed", "alpha": config.alpha.default},
                )
            )
        for i, r in enumerate(take(lacking_text, 8)):
            cases.append(
                ExplorationCase(
                    id=f"{category}-txt-{i:02d}",
                    mode="text",
                    shape_id=r.id,
                    caption_from=t_from,
                    caption_to=t_to,
                    target_attribute=text_attr,
                    sign=1,
                    alpha_policy={"kind": "fixed", "alpha": config.alpha.default},
                )
            )
        label = attribute_label(category, plan["sketch_attr"])
        # erase the attribute's full-width pixel band: a clean "remove it"
        # edit regardless of where the bars start and end horizontally
        _, y, _, h = region_pixel_rect(label, config.dims.sketch_width)
        w = config.dims.sketch_width
        for i, r in enumerate(take(having_sketch, 8)):
            cases.append(
                ExplorationCase(
                    id=f"{category}-skt-{i:02d}",
                    mode="sketch",
                    shape_id=r.id,
                    edit={"op": "erase_rect", "x": 0, "y": y, "width": w, "height": h},
                    target_attribute=plan["sketch_attr"],
                    sign=-1,
                    alpha_policy={"kind": "sketch_select"},
                )
            )
    return cases


# ---------------------------------------------------------------------------
# Report


@dataclass
class CaseRecord:
    case_id: str
    mode: str
    shape_id: str
    alpha: float | None = None
    iou_vs_input: float | None = None
    recon_iou: float | None = None
    clip_s: float | None = None
    oracle_before: float | None = None
    oracle_after: float | None = None
    flipped: bool | None = None
    coopt_initial: float | None = None
    coopt_final: float | None = None
    error: str | None = None

    def to_dict(self) -> dict:
        out = {"case_id": self.case_id, "mode": self.mode, "shape_id": self.shape_id}
        for k in (
            "alpha",
            "iou_vs_input",
            "recon_iou",
            "clip_s",
            "oracle_before",
            "oracle_after",
            "flipped",
            "coopt_initial",
            "coopt_final",
            "error",
        ):
            v = getattr(self, k)
            if v is not None:
                out[k] = round(v, 9) if isinstance(v, float) else v
        return out


@dataclass
class EvalReport:
    fingerprint: dict
    records: list[CaseRecord] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)

    def compute_aggregates(self) -> dict:
        ok = [r for r in self.records if r.error is None]
        agg: dict = {
            "cases": len(self.records),
            "errors": len(self.records) - len(ok),
        }

        def mean_of(key: str, rows: list[CaseRecord]) -> float | None:
            vals = [getattr(r, key) for r in rows if getattr(r, key) is not None]
            return round(float(np.mean(vals)), 9) if vals else None

        agg["mean_iou_vs_input"] = mean_of("iou_vs_input", ok)
        agg["mean_recon_iou"] = mean_of("recon_iou", ok)
        agg["mean_clip_s"] = mean_of("clip_s", ok)
        for mode in ("binary", "text", "sketch"):
            rows = [r for r in ok if r.mode == mode and r.flipped is not None]
            if rows:
                agg[f"flip_rate_{mode}"] = round(
                    float(np.mean([r.flipped for r in rows])), 9
                )
        self.aggregates = agg
        return agg


def _format_table(report: EvalReport) -> str:
    cols = ("case_id", "mode", "alpha", "iou_vs_input", "clip_s", "oracle_before", "oracle_after", "flipped")
    lines = []
    lines.append("evaluation report")
    for k in sorted(report.fingerprint):
        lines.append(f"# {k}: {report.fingerprint[k]}")
    header = f"{'case':<14}{'mode':<8}{'alpha':>7}{'iou':>8}{'clip_s':>9}{'orc_pre':>9}{'orc_post':>9}  flip"
    lines.append(header)
    lines.append("-" * len(header))
    for r in report.records:
        if r.error is not None:
            lines.append(f"{r.case_id:<14}{r.mode:<8}  ERROR {r.error}")
            continue

        def fmt(v, width, nd=3):
            return f"{v:>{width}.{nd}f}" if v is not None else " " * (width - 1) + "-"

        flip = {True: "yes", False: "no", None: "-"}[r.flipped]
        lines.append(
            f"{r.case_id:<14}{r.mode:<8}"
            f"{fmt(r.alpha, 7, 2)}{fmt(r.iou_vs_input, 8)}{fmt(r.clip_s, 9)}"
            f"{fmt(r.oracle_before, 9)}{fmt(r.oracle_after, 9)}  {flip}"
        )
    lines.append("-" * len(header))
    for k in sorted(report.aggregates):
        lines.append(f"{k}: {report.aggregates[k]}")
    return "\n".join(lines) + "\n"


def write_report(report: EvalReport, report_path: str | os.PathLike) -> None:
    """Write <path>.txt (table) and <path>.jsonl (machine lines), atomically."""
    from .util import atomic_write_text

    report_path = Path(report_path)
    body = [json.dumps({"fingerprint": report.fingerprint}, sort_keys=True)]
    body += [json.dumps(r.to_dict(), sort_keys=True) for r in report.records]
    body.append(json.dumps({"aggregates": report.aggregates}, sort_keys=True))
    atomic_write_text(report_path.with_suffix(".jsonl"), "\n".join(body) + "\n")
    atomic_write_text(report_path.with_suffix(".txt"), _format_table(report))


# ---------------------------------------------------------------------------
# End-to-end harness


class DirectionCache:
    """Per-run cache of binary-mode SVM directions keyed by (category, attr)."""

    def __init__(self, bundle: SpaceBundle, store: DataStore, config: RunConfig):
        self.bundle = bundle
        self.store = store
        self.config = config
        self._recs: list | None = None
        self._code_matrix: np.ndarray | None = None
        self._directions: dict[tuple[str, str], Direction] = {}

    def _ensure_train_codes(self) -> None:
        if self._recs is None:
            from .spaces import encode_images_batch

            recs = self.store.split("train")
            pixels = np.stack([self.store.sketch(r.id).pixels.reshape(-1) for r in recs])
            self._recs = recs
            self._code_matrix = encode_images_batch(self.bundle.image_encoder, pixels)

    def binary_direction(self, category: str, attribute: str) -> Direction:
        key = (category, attribute)
        if key not in self._directions:
            self._ensure_train_codes()
            recs, codes = self._recs, self._code_matrix
            attribute_label(category, attribute)  # validates the pair
            mask_cat = np.array([r.category == category for r in recs])
            mask_pos = np.array([r.attributes.get(attribute, False) for r in recs])
            pos = codes[mask_cat & mask_pos]
            neg = codes[mask_cat & ~mask_pos]
            model = svm_train(
                pos,
                neg,
                lam=self.config.svm.lam,
                epochs=self.config.svm.epochs,
                seed=derive_seed("svm", self.config.seed, category, attribute),
            )
            self._directions[key] = direction_from_binary(
                model,
                metadata={
                    "category": category,
                    "attribute": attribute,
                    "train_accuracy": model.train_accuracy,
                },
            )
        return self._directions[key]

    def binary_stats(self, category: str, attribute: str) -> dict:
        """Separation of the training codes along the binary direction."""
        from .explore import projection_gap

        direction = self.binary_direction(category, attribute)
        self._ensure_train_codes()
        recs, codes = self._recs, self._code_matrix
        mask_cat = np.array([r.category == category for r in recs])
        mask_pos = np.array([r.attributes.get(attribute, False) for r in recs])
        stats = projection_gap(direction, codes[mask_cat & mask_pos], codes[mask_cat & ~mask_pos])
        stats["train_accuracy"] = direction.metadata.get("train_accuracy")
        return {k: (round(v, 6) if isinstance(v, float) else v) for k, v in stats.items()}


def run_case(
    case: ExplorationCase,
    bundle: SpaceBundle,
    store: DataStore,
    config: RunConfig,
    directions: DirectionCache,
) -> CaseRecord:
    rec = CaseRecord(case_id=case.id, mode=case.mode, shape_id=case.shape_id)
    manifest_rec = store.record(case.shape_id)
    grid = store.voxels(case.shape_id)
    sketch = store.sketch(case.shape_id)
    mapper_net = bundle.require_mapper()

    start = encode_image(bundle.image_encoder, sketch)
    z_bar = encode_shape(bundle.shape_encoder, grid)
    co = co_optimize(
        mapper_net, start, z_bar, iters=config.coopt.iters, lr=config.coopt.lr
    )
    rec.coopt_initial = co.initial_loss
    rec.coopt_final = co.final_loss
    rec.recon_iou = iou(
        decode_shape(bundle.shape_decoder, co.shape_code, bundle.resolution), grid
    )

    edited_code = None
    if case.mode == "binary":
        if not case.attribute:
            raise DataError(f"{case.id}: binary case needs an attribute")
        direction = directions.binary_direction(manifest_rec.category, case.attribute)
        if case.sign < 0:
            direction = direction.negated()
    elif case.mode == "text":
        if not (case.caption_from and case.caption_to):
            raise DataError(f"{case.id}: text case needs caption_from/caption_to")
        direction = direction_from_text(
            bundle.text_encoder, bundle.vocab, case.caption_from, case.caption_to
        )
    elif case.mode == "sketch":
        if case.edit is None:
            raise DataError(f"{case.id}: sketch case needs an edit")
        edited = apply_sketch_edit(sketch, case.edit)
        direction = direction_from_sketch(bundle.image_encoder, sketch, edited)
        edited_code = encode_image(bundle.image_encoder, edited)
    else:
        raise DataError(f"{case.id}: unknown mode {case.mode!r}")

    policy = case.alpha_policy
    if policy.get("kind") == "fixed":
        alpha = float(policy.get("alpha", config.alpha.default))
        cands = explore_trajectory(
            mapper_net, bundle.shape_decoder, co.code, direction, [alpha],
            bundle.resolution, bundle.sketch_width,
        )
        chosen = cands[0]
    elif policy.get("kind") == "sketch_select":
        if edited_code is None:
            raise DataError(f"{case.id}: sketch_select policy requires sketch mode")
        alphas = uniform_alphas(config.alpha.min, config.alpha.max, config.alpha.grid)
        cands = explore_trajectory(
            mapper_net, bundle.shape_decoder, co.code, direction, alphas,
            bundle.resolution, bundle.sketch_width,
        )
        chosen = select_alpha_by_sketch(bundle.image_encoder, cands, edited_code)
    else:
        raise DataError(f"{case.id}: unknown alpha policy {policy!r}")

    explored = chosen.grid.binarized()
    rec.alpha = chosen.alpha
    rec.iou_vs_input = iou(explored, grid)
    if case.mode == "text":
        target = encode_text(bundle.text_encoder, case.caption_to, bundle.vocab)
        rec.clip_s = clip_similarity(encode_image(bundle.image_encoder, chosen.sketch), target)
    elif case.mode == "sketch":
        rec.clip_s = clip_similarity(
            encode_image(bundle.image_encoder, chosen.sketch), edited_code
        )

    target_attr = case.target_attribute or case.attribute
    if target_attr:
        label = attribute_label(manifest_rec.category, target_attr)
        theta = config.oracle.theta
        rec.oracle_before = attribute_score(grid, label)
        rec.oracle_after = attribute_score(explored, label)
        if case.sign > 0:
            rec.flipped = bool(rec.oracle_before < theta <= rec.oracle_after)
        else:
            rec.flipped = bool(rec.oracle_before >= theta > rec.oracle_after)
    return rec


def run_eval(
    case_path: str | os.PathLike,
    bundle: SpaceBundle,
    store: DataStore,
    config: RunConfig,
    report_path: str | os.PathLike,
) -> EvalReport:
    """Run every case end to end; per-case failures are recorded and the
    harness continues. The report is written atomically."""
    cases = load_cases(case_path)
    fingerprint = {
        "hashes": bundle.hashes(),
        "seed": config.seed,
        "alpha_default": config.alpha.default,
        "coopt_iters": config.coopt.iters,
        "coopt_lr": config.coopt.lr,
    }
    report = EvalReport(fingerprint=fingerprint)
    directions = DirectionCache(bundle, store, config)
    for case in cases:
        try:
            report.records.append(run_case(case, bundle, store, config, directions))
        except Exception as e:  # per-case isolation is the contract
            log.warning("case %s failed: %s", case.id, e)
            report.records.append(
                CaseRecord(case_id=case.id, mode=case.mode, shape_id=case.shape_id, error=str(e))
            )
    report.compute_aggregates()
    write_report(report, report_path)
    return report
