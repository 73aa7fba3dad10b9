"""Batch orchestration: filtering, metrics, reporting, corpus synthesis.

Work items are independent pairs. Parallel runs use a process pool
with an order-preserving map and reassemble results by input index, so
output files are byte-identical for any worker count.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from pathlib import Path
from typing import Optional

import numpy as np

from .core import (
    ConfigError,
    FILTER_NAMES,
    FilterConfig,
    ForgeError,
    ImageBuffer,
    PairRecord,
    REGION_NAMES,
    load_image,
    load_region_masks,
    save_image,
    save_mask,
)
from .filters import run_all_filters
from .manifest import manifest_base_dir, read_manifest, write_manifest
from .metrics import (
    MetricsRow,
    PassRateReport,
    clip_i,
    embedding_path_for,
    l2m,
    pass_rate,
    read_embedding,
    ssim,
)

CORPUS_CLASSES = ("clean", "misaligned", "nomakeup", "bgshift")

# Constructed defect magnitudes; chosen to clear the default FilterConfig
# thresholds with wide margin (asserted in _build_pair).
_TINT = 70
_BG_OFFSET = 60
_SHIFT_FRACTION = 0.15


@dataclass(frozen=True)
class PipelineConfig:
    """Execution settings shared by the batch commands."""

    filter_config: FilterConfig = FilterConfig()
    workers: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


def _resolve(path: str, base_dir: Optional[Path]) -> Path:
    p = Path(path)
    if base_dir is not None and not p.is_absolute():
        return base_dir / p
    return p


def annotate_record(record: PairRecord, filter_config: FilterConfig,
                    base_dir: Optional[Path]) -> PairRecord:
    """Run all three filters on one pair; failures to load become errors."""
    try:
        source = load_image(_resolve(record.source_path, base_dir))
        generated = load_image(_resolve(record.generated_path, base_dir))
        if source.channels != generated.channels:
            raise ForgeError(
                f"channel mismatch: source has {source.channels}, "
                f"generated has {generated.channels}"
            )
        source_masks = load_region_masks(
            {r: record.mask_paths[f"source_{r}"] for r in REGION_NAMES},
            (source.height, source.width), base_dir,
        )
        generated_masks = load_region_masks(
            {r: record.mask_paths[f"generated_{r}"] for r in REGION_NAMES},
            (generated.height, generated.width), base_dir,
        )
        verdicts = run_all_filters(
            source, generated, source_masks, generated_masks, filter_config
        )
    except (ForgeError, ValueError) as exc:
        return replace(record, verdicts=None, passed=None, error=str(exc))
    return replace(
        record,
        verdicts=verdicts,
        passed=all(v.passed for v in verdicts),
        error=None,
    )


def _map_records(fn, records: list[PairRecord], workers: int) -> list[PairRecord]:
    if workers <= 1 or len(records) < 2:
        return [fn(r) for r in records]
    chunk = max(1, len(records) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, records, chunksize=chunk))


def summarize(records: list[PairRecord]) -> PassRateReport:
    """Pass-rate report; an empty record list yields an all-zero report."""
    if not records:
        return PassRateReport(
            total=0, valid=0, passed=0, errors=0, pass_rate=0.0,
            rejections={name: 0 for name in FILTER_NAMES},
        )
    return pass_rate(records)


def run_filter_pipeline(manifest_path, out_path, rejected_path,
                        config: PipelineConfig) -> PassRateReport:
    """Annotate every record with verdicts; write full and rejected manifests.

    Output order equals input order for any worker count. Rejected
    output holds only records that failed a filter; records with load
    errors appear solely in the full output, flagged via `error`.
    """
    records = read_manifest(manifest_path)
    base_dir = manifest_base_dir(manifest_path)
    fn = partial(annotate_record, filter_config=config.filter_config,
                 base_dir=base_dir)
    annotated = _map_records(fn, records, config.workers)
    write_manifest(out_path, annotated)
    write_manifest(rejected_path, [r for r in annotated if r.passed is False])
    return summarize(annotated)


@dataclass(frozen=True)
class MetricsReport:
    """Aggregate means over the records that evaluated cleanly."""

    total: int
    evaluated: int
    errors: int
    missing_embeddings: int
    mean_ssim: Optional[float]
    mean_l2m: Optional[float]
    mean_clip_i: Optional[float]


def measure_record(record: PairRecord, base_dir: Optional[Path],
                   with_embeddings: bool) -> PairRecord:
    """Attach a MetricsRow to one record; load failures become errors."""
    try:
        source = load_image(_resolve(record.source_path, base_dir))
        generated = load_image(_resolve(record.generated_path, base_dir))
        face = load_region_masks(
            {r: record.mask_paths[f"source_{r}"] for r in REGION_NAMES},
            (source.height, source.width), base_dir,
        ).face
        row_ssim = ssim(source, generated)
        row_l2m = l2m(source, generated, face)
        clip = None
        if with_embeddings:
            emb_src = embedding_path_for(_resolve(record.source_path, base_dir))
            emb_gen = embedding_path_for(_resolve(record.generated_path, base_dir))
            if emb_src.is_file() and emb_gen.is_file():
                clip = clip_i(read_embedding(emb_src), read_embedding(emb_gen))
    except (ForgeError, ValueError) as exc:
        return replace(record, metrics=None, error=str(exc))
    return replace(
        record, metrics=MetricsRow(ssim=row_ssim, l2m=row_l2m, clip_i=clip)
    )


def run_metrics(manifest_path, out_path, with_embeddings: bool = False
                ) -> tuple[list[PairRecord], MetricsReport]:
    records = read_manifest(manifest_path)
    base_dir = manifest_base_dir(manifest_path)
    measured = [measure_record(r, base_dir, with_embeddings) for r in records]
    write_manifest(out_path, measured)
    return measured, aggregate_metrics(measured, with_embeddings)


def aggregate_metrics(records: list[PairRecord],
                      with_embeddings: bool = False) -> MetricsReport:
    rows = [r.metrics for r in records if r.metrics is not None]
    errors = sum(1 for r in records if r.error is not None)
    clips = [row.clip_i for row in rows if row.clip_i is not None]
    missing = len(rows) - len(clips) if with_embeddings else 0
    def mean(values):
        return math.fsum(values) / len(values) if values else None
    return MetricsReport(
        total=len(records),
        evaluated=len(rows),
        errors=errors,
        missing_embeddings=missing,
        mean_ssim=mean([row.ssim for row in rows]),
        mean_l2m=mean([row.l2m for row in rows]),
        mean_clip_i=mean(clips),
    )


def format_metrics_table(report: MetricsReport) -> str:
    """One aggregate row: CLIP-I, SSIM, L2-M column layout."""
    def cell(value, digits=4):
        return "-" if value is None else f"{value:.{digits}f}"
    header = f"{'pairs':>6}  {'errors':>6}  {'CLIP-I':>8}  {'SSIM':>8}  {'L2-M':>10}"
    row = (
        f"{report.evaluated:>6}  {report.errors:>6}  "
        f"{cell(report.mean_clip_i):>8}  {cell(report.mean_ssim):>8}  "
        f"{cell(report.mean_l2m, 2):>10}"
    )
    lines = [header, row]
    if report.missing_embeddings:
        lines.append(
            f"warning: {report.missing_embeddings} pair(s) lack embedding files"
        )
    return "\n".join(lines)


def report_to_dict(report: PassRateReport) -> dict:
    return {
        "total": report.total,
        "valid": report.valid,
        "passed": report.passed,
        "errors": report.errors,
        "pass_rate": report.pass_rate,
        "pass_rate_percent": round(report.pass_rate * 100.0, 1),
        "rejections": dict(report.rejections),
    }


def format_report_text(report: PassRateReport) -> str:
    if report.total == 0:
        return "0 pairs"
    lines = [
        f"pairs:     {report.total}",
        f"valid:     {report.valid}",
        f"errors:    {report.errors}",
        f"passed:    {report.passed}",
        f"pass rate: {report.pass_rate * 100.0:.1f}%",
        "rejections:",
    ]
    for name in FILTER_NAMES:
        lines.append(f"  {name}: {report.rejections[name]}")
    return "\n".join(lines)


# --- synthetic corpus -------------------------------------------------------

def _rect_mask(height: int, width: int, x0: int, y0: int, w: int, h: int
               ) -> np.ndarray:
    mask = np.zeros((height, width), dtype=np.uint8)
    mask[y0:y0 + h, x0:x0 + w] = 1
    return mask


def _region_masks(height: int, width: int, x0: int, y0: int,
                  face_w: int, face_h: int) -> dict[str, np.ndarray]:
    face = _rect_mask(height, width, x0, y0, face_w, face_h)
    thick = max(2, min(face_w, face_h) // 16)
    inner = _rect_mask(height, width, x0 + thick, y0 + thick,
                       face_w - 2 * thick, face_h - 2 * thick)
    contour = (face & (1 - inner)).astype(np.uint8)
    eye_w = max(3, face_w // 5)
    eye_h = max(2, face_h // 8)
    eye_y = y0 + face_h // 4
    eyes = _rect_mask(height, width, x0 + face_w // 6, eye_y, eye_w, eye_h)
    eyes |= _rect_mask(height, width, x0 + face_w - face_w // 6 - eye_w,
                       eye_y, eye_w, eye_h)
    teeth_w = max(4, face_w // 4)
    teeth_h = max(4, face_h // 8)
    teeth = _rect_mask(height, width, x0 + (face_w - teeth_w) // 2,
                       y0 + (2 * face_h) // 3, teeth_w, teeth_h)
    return {"face": face, "eyes": eyes, "teeth": teeth, "contour": contour}


def _tint_face(src: np.ndarray, face: np.ndarray) -> np.ndarray:
    out = src.copy()
    sel = face.astype(bool)
    shifted = src[sel][:, 0].astype(np.int16) + _TINT
    assert int(shifted.max(initial=0)) <= 255
    out[sel, 0] = shifted.astype(np.uint8)
    return out


def _build_pair(rng: np.random.Generator, defect: str, width: int, height: int):
    """One synthetic pair; returns (src, gen, src_masks, gen_masks, fails)."""
    jitter_x = int(rng.integers(-width // 16, width // 16 + 1))
    jitter_y = int(rng.integers(-height // 16, height // 16 + 1))
    x0 = width // 4 + jitter_x
    y0 = height // 4 + jitter_y
    face_w, face_h = width // 2, height // 2
    src_masks = _region_masks(height, width, x0, y0, face_w, face_h)
    src = rng.integers(20, 180, size=(height, width, 3), dtype=np.uint8)

    if defect == "clean":
        gen = _tint_face(src, src_masks["face"])
        gen_masks = src_masks
        fails: list[str] = []
    elif defect == "misaligned":
        dx = max(1, round(_SHIFT_FRACTION * face_w))
        assert 2 * dx / face_w > 0.10 * 1.5  # past default face_thresh with margin
        gen = _tint_face(src, src_masks["face"])
        gen_masks = _region_masks(height, width, x0 + dx, y0, face_w, face_h)
        fails = ["misalignment"]
    elif defect == "nomakeup":
        gen = src.copy()
        gen_masks = src_masks
        fails = ["makeup_failed"]
    elif defect == "bgshift":
        gen = _tint_face(src, src_masks["face"])
        gen_masks = src_masks
        band = max(2, height // 8)
        assert band <= y0  # band stays strictly above the face
        shifted = src[:band].astype(np.int16) + _BG_OFFSET
        assert int(shifted.max()) <= 255
        gen[:band] = shifted.astype(np.uint8)
        background = width * height - int(src_masks["face"].sum())
        assert band * width / background > 0.02 * 2
        fails = ["background"]
    else:
        raise ValueError(f"unknown defect class: {defect}")
    assert _TINT > 20 and _BG_OFFSET > 25
    return src, gen, src_masks, gen_masks, fails


def gen_synthetic_corpus(out_dir, seed: int, counts: dict[str, int],
                         dims: tuple[int, int]) -> Path:
    """Write a labeled corpus; returns the manifest path.

    ``dims`` is (width, height), each >= 64. ``counts`` maps defect
    class to pair count. Ground-truth expected failures go to
    truth.json beside the manifest (not into manifest records).
    Constructed margins assume the default FilterConfig.
    """
    width, height = dims
    if width < 64 or height < 64:
        raise ConfigError(f"corpus dims must be at least 64x64, got {width}x{height}")
    unknown = [c for c in counts if c not in CORPUS_CLASSES]
    if unknown:
        raise ConfigError(f"unknown defect class(es): {unknown}")
    if any(v < 0 for v in counts.values()):
        raise ConfigError("counts must be non-negative")

    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    records = []
    truth = {}
    for defect in CORPUS_CLASSES:
        for i in range(counts.get(defect, 0)):
            pid = f"{defect}_{i:04d}"
            src, gen, src_masks, gen_masks, fails = _build_pair(
                rng, defect, width, height
            )
            source_path = f"images/{pid}.src.png"
            generated_path = f"images/{pid}.gen.png"
            save_image(ImageBuffer.from_array(src), out / source_path)
            save_image(ImageBuffer.from_array(gen), out / generated_path)
            mask_paths = {}
            for side, masks in (("source", src_masks), ("generated", gen_masks)):
                for region in REGION_NAMES:
                    rel = f"masks/{pid}.{side}.{region}.png"
                    save_mask(masks[region], out / rel)
                    mask_paths[f"{side}_{region}"] = rel
            records.append(PairRecord(
                id=pid,
                source_path=source_path,
                generated_path=generated_path,
                prompt_tag=f"synthetic/{defect}",
                mask_paths=mask_paths,
            ))
            truth[pid] = {"defect": defect, "expected_fail": fails}
    manifest_path = out / "manifest.jsonl"
    write_manifest(manifest_path, records)
    (out / "truth.json").write_text(
        json.dumps(truth, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return manifest_path


def load_truth(corpus_dir) -> dict:
    """Read the ground-truth sidecar written by gen_synthetic_corpus."""
    return json.loads((Path(corpus_dir) / "truth.json").read_text(encoding="utf-8"))
