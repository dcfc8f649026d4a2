"""Manifest ingestion, image naming, example assembly and leakage-safe folds.

Image ids concatenate plant number, cordon (N/S), vine side (E/W) and
camera (1/2), e.g. ``33NE1``. A cordon example bundles the four views
(E,1),(E,2),(W,1),(W,2) with the harvest weight in grams. Folds are
dealt at the plant level so both cordons of one vine (which come from
the same four photographs) always share a fold.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .imageops import image_size

CORDONS = ("N", "S")
SIDES = ("E", "W")
CAMERAS = (1, 2)
VIEW_ORDER: tuple[tuple[str, int], ...] = (("E", 1), ("E", 2), ("W", 1), ("W", 2))

MANIFEST_COLUMNS = ("plant", "cordon", "img_E1", "img_E2", "img_W1", "img_W2", "weight_g")


class ManifestError(ValueError):
    """Base class for dataset ingestion problems."""


class MissingImageError(ManifestError):
    pass


class DuplicateExampleError(ManifestError):
    pass


class IncompleteExampleError(ManifestError):
    pass


class NegativeWeightError(ManifestError):
    pass


@dataclass(frozen=True)
class ImageId:
    plant: int
    cordon: str
    side: str
    camera: int

    def __str__(self) -> str:
        return f"{self.plant}{self.cordon}{self.side}{self.camera}"


def parse_image_id(text: str) -> ImageId:
    """Parse ids like ``33NE1``; errors name every offending field."""
    digits = 0
    while digits < len(text) and text[digits].isdigit():
        digits += 1
    rest = text[digits:]
    problems = []
    if digits == 0:
        problems.append(f"plant: expected leading digits in {text!r}")
    if len(rest) != 3:
        problems.append(f"expected 3 trailing code characters in {text!r}, got {len(rest)}")
        raise ValueError("invalid image id: " + "; ".join(problems))
    cordon, side, camera = rest[0], rest[1], rest[2]
    if cordon not in CORDONS:
        problems.append(f"cordon: {cordon!r} is not one of {CORDONS}")
    if side not in SIDES:
        problems.append(f"side: {side!r} is not one of {SIDES}")
    if camera not in ("1", "2"):
        problems.append(f"camera: {camera!r} is not 1 or 2")
    if problems:
        raise ValueError("invalid image id: " + "; ".join(problems))
    return ImageId(int(text[:digits]), cordon, side, int(camera))


@dataclass
class CordonExample:
    plant: int
    cordon: str
    images: dict[tuple[str, int], Path]
    weight_g: float

    @property
    def key(self) -> tuple[int, str]:
        return (self.plant, self.cordon)

    def __post_init__(self):
        if set(self.images) != set(VIEW_ORDER):
            raise IncompleteExampleError(
                f"example plant {self.plant} cordon {self.cordon}: views "
                f"{sorted(self.images)} != required {sorted(VIEW_ORDER)}"
            )
        if self.weight_g < 0:
            raise NegativeWeightError(
                f"example plant {self.plant} cordon {self.cordon}: negative weight {self.weight_g}"
            )


def load_manifest(path: str | Path) -> tuple[list[CordonExample], tuple[int, int]]:
    """Read the manifest CSV; returns examples plus the dataset canvas
    (max crop width, max crop height) over all referenced images."""
    path = Path(path)
    base = path.parent
    examples: list[CordonExample] = []
    seen: set[tuple[int, str]] = set()
    max_w = max_h = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_COLUMNS:
            raise ManifestError(
                f"manifest header {reader.fieldnames} != expected {list(MANIFEST_COLUMNS)}"
            )
        for row_num, row in enumerate(reader, start=2):
            plant = int(row["plant"])
            cordon = row["cordon"].strip()
            if cordon not in CORDONS:
                raise ManifestError(f"row {row_num}: cordon {cordon!r} is not one of {CORDONS}")
            key = (plant, cordon)
            if key in seen:
                raise DuplicateExampleError(f"duplicate example plant {plant} cordon {cordon}")
            seen.add(key)
            images: dict[tuple[str, int], Path] = {}
            for side, cam in VIEW_ORDER:
                cell = row[f"img_{side}{cam}"].strip()
                if not cell:
                    raise IncompleteExampleError(
                        f"incomplete example plant {plant} cordon {cordon}: missing view ({side},{cam})"
                    )
                img_path = base / cell
                if not img_path.is_file():
                    raise MissingImageError(f"missing image file: {img_path}")
                images[(side, cam)] = img_path
            try:
                weight = float(row["weight_g"])
            except ValueError as exc:
                raise ManifestError(f"row {row_num}: weight_g {row['weight_g']!r} is not a number") from exc
            if weight < 0:
                raise NegativeWeightError(
                    f"example plant {plant} cordon {cordon}: negative weight {weight}"
                )
            examples.append(CordonExample(plant, cordon, images, weight))
            for img_path in images.values():
                w, h = image_size(img_path)
                max_w = max(max_w, w)
                max_h = max(max_h, h)
    return examples, (max_w, max_h)


@dataclass
class FoldPlan:
    k: int
    assignments: dict[tuple[int, str], int] = field(default_factory=dict)

    def fold_of(self, example: CordonExample) -> int:
        return self.assignments[example.key]

    def to_json_obj(self) -> dict:
        return {
            "k": self.k,
            "assignments": [
                {"plant": p, "cordon": c, "fold": f}
                for (p, c), f in sorted(self.assignments.items())
            ],
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "FoldPlan":
        plan = cls(k=int(obj["k"]))
        for a in obj["assignments"]:
            plan.assignments[(int(a["plant"]), a["cordon"])] = int(a["fold"])
        return plan

    def to_json(self) -> str:
        return json.dumps(self.to_json_obj(), sort_keys=True)


def make_folds(examples: list[CordonExample], k: int, seed: int) -> FoldPlan:
    """Shuffle plants by seed and deal them round-robin to k folds."""
    if k < 2:
        raise ValueError(f"fold count must be >= 2, got {k}")
    plants = sorted({e.plant for e in examples})
    if len(plants) < k:
        raise ValueError(f"need at least {k} distinct plants, got {len(plants)}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(plants))
    fold_of_plant = {plants[idx]: i % k for i, idx in enumerate(order)}
    plan = FoldPlan(k=k)
    for e in examples:
        plan.assignments[e.key] = fold_of_plant[e.plant]
    return plan


def split_validation(train_examples: list[CordonExample], fraction: float,
                     seed: int) -> tuple[list[CordonExample], list[CordonExample]]:
    """Plant-level split; validation receives round(fraction * n_plants) plants."""
    if not 0.0 < fraction < 0.5:
        raise ValueError(f"validation fraction must be in (0, 0.5), got {fraction}")
    plants = sorted({e.plant for e in train_examples})
    n_val = round(fraction * len(plants))
    if n_val < 1:
        raise ValueError(
            f"{len(plants)} plants at fraction {fraction} leave an empty validation set"
        )
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(plants))
    val_plants = {plants[i] for i in order[:n_val]}
    train = [e for e in train_examples if e.plant not in val_plants]
    val = [e for e in train_examples if e.plant in val_plants]
    return train, val
