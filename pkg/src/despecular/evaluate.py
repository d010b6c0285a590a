"""Batch scoring of restored images against ground truth."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .imageio import ImageFormatError, load_image
from .manifest import IMAGE_EXTENSIONS, Manifest, ManifestError, PairRecord
from .network import Model, forward
from .quality import WINDOWED_SSIM, psnr, report_psnr, ssim


@dataclass
class EvalReport:
    pairs: list[dict] = field(default_factory=list)
    aggregates: dict = field(default_factory=dict)
    config_hash: str = "none"
    tool_version: str = __version__
    lpips: str = "n/a"

    def to_dict(self) -> dict:
        return {
            "tool_version": self.tool_version,
            "config_hash": self.config_hash,
            "lpips": self.lpips,
            "aggregates": self.aggregates,
            "pairs": self.pairs,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        lines = [f"{'source':<8} {'pairs':>6} {'PSNR(dB)':>9} {'SSIM':>7} {'LPIPS':>6}"]
        for source, agg in self.aggregates.items():
            lines.append(
                f"{source:<8} {agg['pairs']:>6} {agg['mean_psnr_db']:>9.4f} {agg['mean_ssim']:>7.4f} {'n/a':>6}"
            )
        errors = sum(1 for p in self.pairs if p.get("error"))
        if errors:
            lines.append(f"{errors} pair(s) failed; see report")
        return "\n".join(lines)


def _aggregate(pairs: list[dict]) -> dict:
    groups: dict[str, list[dict]] = {}
    for p in pairs:
        if p.get("error") is None:
            groups.setdefault(p["source"], []).append(p)
            groups.setdefault("all", []).append(p)
    out = {}
    for source in sorted(k for k in groups if k != "all") + (["all"] if "all" in groups else []):
        items = groups[source]
        out[source] = {
            "pairs": len(items),
            "mean_psnr_db": float(np.mean([p["psnr_db"] for p in items])),
            "mean_ssim": float(np.mean([p["ssim"] for p in items])),
        }
    return out


def score_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Report-ready (PSNR dB, windowed SSIM); PSNR is capped for identical pairs."""
    return report_psnr(psnr(pred, gt, 1.0)), ssim(pred, gt, WINDOWED_SSIM)


def evaluate_records(records: list[PairRecord], model: Model | None = None) -> EvalReport:
    """Score each record's prediction against its ground truth.

    With a model, the prediction is the model output on the input image
    (clipped to [0, 1]); without one the input image itself is scored.
    """
    pairs = []
    for r in records:
        entry = {"source": r.source, "split": r.split, "input_path": r.input_path, "gt_path": r.gt_path, "error": None}
        try:
            pred = load_image(r.input_path)
            gt = load_image(r.gt_path)
            if model is not None:
                pred = np.clip(forward(model, pred), 0.0, 1.0)
            if pred.shape != gt.shape:
                raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
            p, s = score_pair(pred, gt)
            entry.update(psnr_db=p, ssim=s, height=int(gt.shape[1]), width=int(gt.shape[2]))
        except (OSError, ValueError, ImageFormatError) as exc:
            entry["error"] = str(exc)
        pairs.append(entry)
    report = EvalReport(pairs=pairs, aggregates=_aggregate(pairs))
    if model is not None:
        report.config_hash = model.config.digest()
    return report


def evaluate_manifest(manifest: Manifest, model: Model | None = None, split: str | None = None) -> EvalReport:
    records = [r for r in manifest.records if split is None or r.split == split]
    return evaluate_records(records, model)


def pair_directories(pred_dir, gt_dir) -> list[PairRecord]:
    """Match prediction and ground-truth files by stem."""

    def stems(d):
        return {p.stem: p for p in sorted(Path(d).iterdir()) if p.suffix.lower() in IMAGE_EXTENSIONS}

    preds, gts = stems(pred_dir), stems(gt_dir)
    missing = sorted(set(preds) ^ set(gts))
    if missing:
        raise ManifestError(f"unpaired stems between {pred_dir} and {gt_dir}: {missing[:10]}")
    return [PairRecord("test", "other", str(preds[s]), str(gts[s])) for s in sorted(preds)]


def evaluate_directories(pred_dir, gt_dir) -> EvalReport:
    return evaluate_records(pair_directories(pred_dir, gt_dir))


def write_report(report: EvalReport, path) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
