"""Evaluation records and their JSONL persistence.

One EvalRecord per (clip x condition x defense x CoC arm). The JSONL schema is
flat so rows stay greppable; `condition` is the stable label and the kind plus
parameters are repeated alongside it so every row is self-describing.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .metrics import normalize_text
from .types import PerturbationSpec, ValidationError


class RecordError(ValueError):
    """A record file or row is malformed."""


@dataclass(frozen=True)
class EvalRecord:
    """One evaluated cell of the campaign grid."""

    clip_id: str
    condition: str
    kind: str
    defense: str
    with_coc: bool
    ade_m: float
    fde_m: float
    delta_ade_m: float
    l2_deviation_m: float
    coc_clean: str
    coc_perturbed: str
    coc_changed: bool
    word_similarity: float
    seed: int
    latency_ms: float
    sigma: float | None = None
    brightness_factor: float | None = None
    alpha: float | None = None

    def __post_init__(self) -> None:
        if not self.clip_id:
            raise ValidationError("record clip_id must be non-empty")
        expected = normalize_text(self.coc_clean) != normalize_text(self.coc_perturbed)
        if self.coc_changed != expected:
            raise ValidationError(
                f"record {self.clip_id}/{self.condition}: coc_changed={self.coc_changed} "
                f"inconsistent with CoC texts"
            )
        if not 0.0 <= self.word_similarity <= 1.0:
            raise ValidationError(
                f"record {self.clip_id}/{self.condition}: word_similarity out of [0, 1]"
            )
        for name in ("ade_m", "fde_m", "l2_deviation_m"):
            v = getattr(self, name)
            if not v >= 0.0:
                raise ValidationError(f"record {self.clip_id}/{self.condition}: {name} < 0")

    @property
    def key(self) -> tuple[str, str, str, bool]:
        return (self.clip_id, self.condition, self.defense, self.with_coc)

    def perturbation(self) -> PerturbationSpec:
        return PerturbationSpec(
            kind=self.kind, sigma=self.sigma,
            brightness_factor=self.brightness_factor, alpha=self.alpha,
        )

    def to_dict(self) -> dict:
        d = {
            "clip_id": self.clip_id,
            "condition": self.condition,
            "kind": self.kind,
            "defense": self.defense,
            "with_coc": self.with_coc,
            "ade_m": self.ade_m,
            "fde_m": self.fde_m,
            "delta_ade_m": self.delta_ade_m,
            "l2_deviation_m": self.l2_deviation_m,
            "coc_clean": self.coc_clean,
            "coc_perturbed": self.coc_perturbed,
            "coc_changed": self.coc_changed,
            "word_similarity": self.word_similarity,
            "seed": self.seed,
            "latency_ms": self.latency_ms,
        }
        if self.sigma is not None:
            d["sigma"] = self.sigma
        if self.brightness_factor is not None:
            d["brightness_factor"] = self.brightness_factor
        if self.alpha is not None:
            d["alpha"] = self.alpha
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EvalRecord":
        try:
            return cls(
                clip_id=d["clip_id"],
                condition=d["condition"],
                kind=d["kind"],
                defense=d.get("defense", "none"),
                with_coc=bool(d["with_coc"]),
                ade_m=float(d["ade_m"]),
                fde_m=float(d["fde_m"]),
                delta_ade_m=float(d["delta_ade_m"]),
                l2_deviation_m=float(d["l2_deviation_m"]),
                coc_clean=d["coc_clean"],
                coc_perturbed=d["coc_perturbed"],
                coc_changed=bool(d["coc_changed"]),
                word_similarity=float(d["word_similarity"]),
                seed=int(d["seed"]),
                latency_ms=float(d["latency_ms"]),
                sigma=d.get("sigma"),
                brightness_factor=d.get("brightness_factor"),
                alpha=d.get("alpha"),
            )
        except KeyError as exc:
            raise RecordError(f"record missing field {exc.args[0]!r}") from exc
        except (TypeError, ValueError, ValidationError) as exc:
            raise RecordError(f"record invalid: {exc}") from exc


def write_records(records: list[EvalRecord], path: str | Path, append: bool = False) -> int:
    """Write records as JSONL; returns the number written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_dict()) + "\n")
    return len(records)


def read_records(path: str | Path, strict: bool = True) -> list[EvalRecord]:
    """Read a JSONL record file.

    strict=True raises RecordError naming the first corrupt line; strict=False
    skips corrupt lines.
    """
    path = Path(path)
    if not path.is_file():
        raise RecordError(f"record file not found: {path}")
    records: list[EvalRecord] = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(EvalRecord.from_dict(json.loads(line)))
            except (json.JSONDecodeError, RecordError) as exc:
                if strict:
                    raise RecordError(f"{path}:{lineno}: {exc}") from exc
    return records
