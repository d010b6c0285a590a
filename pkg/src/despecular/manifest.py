"""Paired-image dataset manifests.

Expected directory layout::

    ROOT/<split>/<source>/input/<stem>.<ext>
    ROOT/<split>/<source>/gt/<stem>.<ext>

``split`` is ``train`` or ``test``. ``source`` is PSD, SHIQ or SSHR (case
insensitive); any other directory name is recorded as ``other``.
"""

from __future__ import annotations

import json
import os
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

SPLITS = ("train", "test")
SOURCES = ("PSD", "SHIQ", "SSHR")
IMAGE_EXTENSIONS = {".png", ".ppm"}

# pairs per source in the hybrid highlight-removal benchmark
BENCHMARK_COUNTS = {
    "train": {"PSD": 9481, "SHIQ": 9825, "SSHR": 10000},
    "test": {"PSD": 947, "SHIQ": 1000, "SSHR": 1000},
}
BENCHMARK_TOTALS = {split: sum(c.values()) for split, c in BENCHMARK_COUNTS.items()}


class ManifestError(ValueError):
    """Unpairable, duplicated or missing dataset files."""


@dataclass(frozen=True)
class PairRecord:
    split: str
    source: str
    input_path: str
    gt_path: str


@dataclass
class Manifest:
    records: list[PairRecord] = field(default_factory=list)

    def counts(self) -> dict[str, dict[str, int]]:
        tally = Counter((r.split, r.source) for r in self.records)
        out: dict[str, dict[str, int]] = {}
        for (split, source), n in sorted(tally.items()):
            out.setdefault(split, {})[source] = n
        return out

    def sources(self) -> set[str]:
        return {r.source for r in self.records}

    def to_dict(self) -> dict:
        return {"records": [asdict(r) for r in self.records], "summary": self.counts()}

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        try:
            records = [PairRecord(**r) for r in data["records"]]
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"{path}: malformed manifest ({exc})") from exc
        manifest = cls(records)
        manifest.validate()
        return manifest

    def validate(self, check_files: bool = True) -> None:
        seen = set()
        for r in self.records:
            if r.split not in SPLITS:
                raise ManifestError(f"unknown split {r.split!r} for {r.input_path}")
            key = (r.split, r.input_path)
            if key in seen:
                raise ManifestError(f"duplicate input_path {r.input_path} in split {r.split}")
            seen.add(key)
            if check_files:
                for p in (r.input_path, r.gt_path):
                    if not os.path.isfile(p):
                        raise ManifestError(f"missing file {p}")


def _normalise_source(name: str) -> str:
    upper = name.upper()
    return upper if upper in SOURCES else "other"


def _stems(directory: Path) -> dict[str, Path]:
    found: dict[str, Path] = {}
    for p in sorted(directory.iterdir()):
        if not p.is_file() or p.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        if p.stem in found:
            raise ManifestError(f"stem collision in {directory}: {found[p.stem].name} and {p.name}")
        found[p.stem] = p
    return found


def build_manifest(root, out_path=None) -> Manifest:
    """Pair ``input/`` and ``gt/`` files by stem under every split/source directory."""
    root = Path(root)
    if not root.is_dir():
        raise ManifestError(f"{root} is not a directory")
    records = []
    for split in SPLITS:
        split_dir = root / split
        if not split_dir.is_dir():
            continue
        for source_dir in sorted(p for p in split_dir.iterdir() if p.is_dir()):
            inputs_dir, gt_dir = source_dir / "input", source_dir / "gt"
            if not inputs_dir.is_dir() or not gt_dir.is_dir():
                raise ManifestError(f"{source_dir} must contain input/ and gt/ subdirectories")
            inputs, gts = _stems(inputs_dir), _stems(gt_dir)
            missing_gt = sorted(set(inputs) - set(gts))
            missing_in = sorted(set(gts) - set(inputs))
            if missing_gt or missing_in:
                raise ManifestError(
                    f"{source_dir}: unpaired stems; no gt for {missing_gt[:10]}, no input for {missing_in[:10]}"
                )
            source = _normalise_source(source_dir.name)
            for stem in sorted(inputs):
                records.append(PairRecord(split, source, str(inputs[stem]), str(gts[stem])))
    if not records:
        raise ManifestError(f"no image pairs found under {root}")
    manifest = Manifest(records)
    manifest.validate()
    if out_path is not None:
        manifest.save(out_path)
    return manifest


def check_benchmark_counts(manifest: Manifest) -> dict:
    """Compare per-source counts with the hybrid benchmark split.

    The comparison only applies when all three benchmark sources are present;
    otherwise the counts are returned with ``checked`` set to False.
    Raises :class:`ManifestError` on a mismatch.
    """
    counts = manifest.counts()
    totals = {split: sum(counts.get(split, {}).values()) for split in SPLITS}
    summary = {"counts": counts, "totals": totals, "checked": False}
    if not set(SOURCES) <= manifest.sources():
        return summary
    problems = []
    for split, expected in BENCHMARK_COUNTS.items():
        for source, n in expected.items():
            got = counts.get(split, {}).get(source, 0)
            if got != n:
                problems.append(f"{split}/{source}: expected {n}, found {got}")
        if totals[split] != BENCHMARK_TOTALS[split]:
            problems.append(f"{split} total: expected {BENCHMARK_TOTALS[split]}, found {totals[split]}")
    if problems:
        raise ManifestError("benchmark split mismatch: " + "; ".join(problems))
    summary["checked"] = True
    return summary


def format_counts(summary: dict) -> str:
    lines = [f"{'split':<6} {'source':<6} {'pairs':>7}"]
    for split in SPLITS:
        for source, n in summary["counts"].get(split, {}).items():
            lines.append(f"{split:<6} {source:<6} {n:>7}")
        lines.append(f"{split:<6} {'total':<6} {summary['totals'][split]:>7}")
    if summary["checked"]:
        lines.append("benchmark split verified")
    return "\n".join(lines)
