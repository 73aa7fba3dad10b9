"""Line-delimited manifest reading and writing.

One JSON object per line. Required fields: id, source_path,
generated_path, prompt_tag, and the eight mask paths (source_face,
source_eyes, source_teeth, source_contour plus the generated_*
analogues). The pipeline adds verdicts, passed, error, and metrics.
Anything else is rejected, as are duplicate ids.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional

from .core import (
    FILTER_NAMES,
    FilterVerdict,
    ManifestError,
    MASK_KEYS,
    PairRecord,
)
from .metrics import MetricsRow

_REQUIRED_FIELDS = ("id", "source_path", "generated_path", "prompt_tag") + MASK_KEYS
_OPTIONAL_FIELDS = ("verdicts", "passed", "error", "metrics")
_VERDICT_FIELDS = ("filter_name", "passed", "statistic", "threshold_used", "reason")
_METRIC_FIELDS = ("ssim", "l2m", "clip_i")


def record_to_dict(record: PairRecord) -> dict:
    """Serialize a record with a fixed key order (stable output bytes)."""
    out: dict = {
        "id": record.id,
        "source_path": record.source_path,
        "generated_path": record.generated_path,
        "prompt_tag": record.prompt_tag,
    }
    for key in MASK_KEYS:
        out[key] = record.mask_paths[key]
    if record.verdicts is not None:
        out["verdicts"] = [
            {
                "filter_name": v.filter_name,
                "passed": v.passed,
                "statistic": v.statistic,
                "threshold_used": v.threshold_used,
                "reason": v.reason,
            }
            for v in record.verdicts
        ]
    if record.passed is not None:
        out["passed"] = record.passed
    if record.error is not None:
        out["error"] = record.error
    if record.metrics is not None:
        out["metrics"] = {
            "ssim": record.metrics.ssim,
            "l2m": record.metrics.l2m,
            "clip_i": record.metrics.clip_i,
        }
    return out


def record_from_dict(obj: dict, where: str = "<record>") -> PairRecord:
    if not isinstance(obj, dict):
        raise ManifestError(f"{where}: record must be an object, got {type(obj).__name__}")
    unknown = [k for k in obj if k not in _REQUIRED_FIELDS + _OPTIONAL_FIELDS]
    if unknown:
        raise ManifestError(f"{where}: unknown field(s) {unknown}")
    missing = [k for k in _REQUIRED_FIELDS if k not in obj]
    if missing:
        raise ManifestError(f"{where}: missing field(s) {missing}")
    for key in _REQUIRED_FIELDS:
        if not isinstance(obj[key], str):
            raise ManifestError(f"{where}: field {key!r} must be a string")

    verdicts = None
    if obj.get("verdicts") is not None:
        verdicts = [_verdict_from_dict(v, where) for v in obj["verdicts"]]
    passed = obj.get("passed")
    if passed is not None and not isinstance(passed, bool):
        raise ManifestError(f"{where}: field 'passed' must be a boolean")
    error = obj.get("error")
    if error is not None and not isinstance(error, str):
        raise ManifestError(f"{where}: field 'error' must be a string")
    metrics = None
    if obj.get("metrics") is not None:
        metrics = _metrics_from_dict(obj["metrics"], where)

    try:
        return PairRecord(
            id=obj["id"],
            source_path=obj["source_path"],
            generated_path=obj["generated_path"],
            prompt_tag=obj["prompt_tag"],
            mask_paths={key: obj[key] for key in MASK_KEYS},
            verdicts=verdicts,
            passed=passed,
            error=error,
            metrics=metrics,
        )
    except ValueError as exc:
        raise ManifestError(f"{where}: {exc}") from exc


def _verdict_from_dict(obj: dict, where: str) -> FilterVerdict:
    if not isinstance(obj, dict):
        raise ManifestError(f"{where}: verdict must be an object")
    unknown = [k for k in obj if k not in _VERDICT_FIELDS]
    if unknown:
        raise ManifestError(f"{where}: unknown verdict field(s) {unknown}")
    missing = [k for k in _VERDICT_FIELDS if k not in obj]
    if missing:
        raise ManifestError(f"{where}: verdict missing field(s) {missing}")
    if obj["filter_name"] not in FILTER_NAMES:
        raise ManifestError(f"{where}: unknown filter name {obj['filter_name']!r}")
    if not isinstance(obj["passed"], bool):
        raise ManifestError(f"{where}: verdict 'passed' must be a boolean")
    try:
        return FilterVerdict(
            filter_name=obj["filter_name"],
            passed=obj["passed"],
            statistic=float(obj["statistic"]),
            threshold_used=float(obj["threshold_used"]),
            reason=str(obj["reason"]),
        )
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"{where}: bad verdict: {exc}") from exc


def _metrics_from_dict(obj: dict, where: str) -> MetricsRow:
    if not isinstance(obj, dict):
        raise ManifestError(f"{where}: metrics must be an object")
    unknown = [k for k in obj if k not in _METRIC_FIELDS]
    if unknown:
        raise ManifestError(f"{where}: unknown metrics field(s) {unknown}")
    for key in ("ssim", "l2m"):
        if key not in obj:
            raise ManifestError(f"{where}: metrics missing field {key!r}")
    clip = obj.get("clip_i")
    try:
        return MetricsRow(
            ssim=float(obj["ssim"]),
            l2m=float(obj["l2m"]),
            clip_i=None if clip is None else float(clip),
        )
    except (TypeError, ValueError) as exc:
        raise ManifestError(f"{where}: bad metrics: {exc}") from exc


def parse_manifest(text: str, source: str = "<manifest>") -> list[PairRecord]:
    records = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        where = f"{source}:{lineno}"
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{where}: invalid record: {exc}") from exc
        record = record_from_dict(obj, where)
        if record.id in seen:
            raise ManifestError(f"{where}: duplicate id {record.id!r}")
        seen.add(record.id)
        records.append(record)
    return records


def read_manifest(path) -> list[PairRecord]:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {p}: {exc}") from exc
    return parse_manifest(text, source=str(p))


def format_record(record: PairRecord) -> str:
    return json.dumps(record_to_dict(record), ensure_ascii=True, separators=(",", ":"))


def write_manifest(path, records: list[PairRecord]) -> None:
    p = Path(path)
    lines = [format_record(r) for r in records]
    body = "\n".join(lines)
    if lines:
        body += "\n"
    p.write_text(body, encoding="utf-8")


def manifest_base_dir(path) -> Optional[Path]:
    """Directory that relative resource paths inside a manifest resolve against."""
    parent = Path(path).resolve().parent
    return parent
