"""The fixed 14-category label vocabulary shared by the classifier, the
report assembler, and the report labeler."""

from __future__ import annotations

CATEGORIES = (
    "atelectasis",
    "cardiomegaly",
    "consolidation",
    "edema",
    "enlarged cardiomediastinum",
    "fracture",
    "lung lesion",
    "lung opacity",
    "no finding",
    "pleural effusion",
    "pleural other",
    "pneumonia",
    "pneumothorax",
    "support devices",
)

NUM_CATEGORIES = len(CATEGORIES)

_INDEX = {name: i for i, name in enumerate(CATEGORIES)}


def category_index(name: str) -> int:
    return _INDEX[name]


def category_for_disease(disease_id: str) -> str | None:
    """Map a graph disease id (snake_case) onto a label category, if any."""
    name = disease_id.replace("_", " ").lower()
    return name if name in _INDEX else None
