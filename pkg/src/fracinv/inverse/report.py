"""Result container shared by the recovery procedures."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def relative_l2(estimate: np.ndarray, truth: np.ndarray, mask: np.ndarray | None = None) -> float:
    """``||estimate - truth|| / ||truth||`` over ``mask`` (absolute error when the truth vanishes)."""
    est = np.asarray(estimate, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if mask is not None:
        est, tru = est[mask], tru[mask]
    den = np.linalg.norm(tru)
    num = np.linalg.norm(est - tru)
    return float(num / den) if den > 0 else float(num)


@dataclass
class ReconstructionReport:
    """Recovered fields with error metrics and the division-guard mask."""

    fields: dict[str, np.ndarray]
    errors: dict[str, float] = field(default_factory=dict)
    residuals: dict[str, float] = field(default_factory=dict)
    guard_mask: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.errors.items():
            if not v >= 0:
                raise ValueError(f"error metric {k} must be nonnegative")

    @property
    def masked_fraction(self) -> float:
        if self.guard_mask is None or self.guard_mask.size == 0:
            return 0.0
        return float(np.mean(self.guard_mask))

    def to_json(self, directory: str | Path, stem: str = "report") -> Path:
        """Write ``<stem>.json`` plus one CSV side file per recovered array."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        files = {}
        arrays = dict(self.fields)
        if self.guard_mask is not None:
            arrays["guard_mask"] = self.guard_mask.astype(float)
        for name, arr in arrays.items():
            path = directory / f"{stem}_{name}.csv"
            np.savetxt(path, np.atleast_2d(np.asarray(arr, dtype=float)), delimiter=",", fmt="%.17g")
            files[name] = path.name
        doc = {
            "fields": files,
            "errors": self.errors,
            "residuals": self.residuals,
            "masked_fraction": self.masked_fraction,
            "meta": _jsonable(self.meta),
        }
        out = directory / f"{stem}.json"
        out.write_text(json.dumps(doc, indent=2, sort_keys=True))
        return out


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj
