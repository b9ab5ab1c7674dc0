"""Effective-g Zeeman transition frequencies and field-sweep spectra."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from erspin.constants import MU_B_OVER_H
from erspin.errors import DomainError

SITES = ("site1", "site2")
SUBGROUPS = ("A", "B")
STATES = ("ground", "excited")


@dataclass(frozen=True)
class GEntry:
    site: str
    subgroup: str
    state: str
    g_eff: float

    def __post_init__(self):
        if self.site not in SITES:
            raise DomainError(f"unknown site {self.site!r}")
        if self.subgroup not in SUBGROUPS:
            raise DomainError(f"unknown subgroup {self.subgroup!r}")
        if self.state not in STATES:
            raise DomainError(f"unknown state {self.state!r}")
        if not (math.isfinite(self.g_eff) and self.g_eff > 0):
            raise DomainError(f"g_eff must be finite and positive, got {self.g_eff}")

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.site, self.subgroup, self.state)

    @property
    def branch_id(self) -> str:
        return f"{self.site}-{self.subgroup}-{self.state}"


@dataclass(frozen=True)
class GTensorSet:
    """Scalar effective g values, one per (site, subgroup, state)."""

    entries: tuple[GEntry, ...] = field(default_factory=tuple)

    def __post_init__(self):
        keys = [e.key for e in self.entries]
        if len(keys) != len(set(keys)):
            raise DomainError("duplicate (site, subgroup, state) entry in g-tensor set")

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    @classmethod
    def default(cls) -> "GTensorSet":
        """Site-1 Er3+:Y2SiO5 values for the field along D1 (two sub-groups)."""
        return cls(
            (
                GEntry("site1", "A", "ground", 4.75),
                GEntry("site1", "B", "ground", 3.85),
                GEntry("site1", "A", "excited", 4.35),
                GEntry("site1", "B", "excited", 3.27),
            )
        )

    @classmethod
    def from_dict(cls, doc: dict) -> "GTensorSet":
        try:
            items = doc["entries"]
            return cls(
                tuple(
                    GEntry(str(e["site"]), str(e["subgroup"]), str(e["state"]), float(e["g_eff"]))
                    for e in items
                )
            )
        except (KeyError, TypeError) as exc:
            raise DomainError(f"malformed g-tensor document: {exc}") from exc

    def to_dict(self) -> dict:
        return {
            "entries": [
                {"site": e.site, "subgroup": e.subgroup, "state": e.state, "g_eff": e.g_eff}
                for e in self.entries
            ]
        }

    @classmethod
    def load(cls, path: str | Path) -> "GTensorSet":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class FieldConfig:
    magnitude: float
    label: str = ""

    def __post_init__(self):
        if not (math.isfinite(self.magnitude) and self.magnitude >= 0):
            raise DomainError(f"field magnitude must be finite and >= 0, got {self.magnitude}")


def transition_frequency(g_eff: float, B: float) -> float:
    """Zeeman splitting g mu_B B / h in Hz for field ``B`` in tesla."""
    if not (math.isfinite(g_eff) and g_eff > 0):
        raise DomainError(f"g_eff must be finite and positive, got {g_eff}")
    if not (math.isfinite(B) and B >= 0):
        raise DomainError(f"B must be finite and non-negative, got {B}")
    return g_eff * MU_B_OVER_H * B


@dataclass(frozen=True)
class SpectrumPoint:
    B: float
    branch: str
    frequency: float


def sweep_spectrum(gset: GTensorSet, B_range: Sequence[float], f_max: float) -> list[SpectrumPoint]:
    """Transition frequencies of every g entry at every field, keeping those <= f_max."""
    B_values = [float(b) for b in B_range]
    if not B_values:
        raise DomainError("empty field range")
    if any(b2 < b1 for b1, b2 in zip(B_values, B_values[1:])):
        raise DomainError("field range must be sorted ascending")
    if not f_max > 0:
        raise DomainError(f"f_max must be positive, got {f_max}")
    out = []
    for b in B_values:
        for entry in gset:
            f = transition_frequency(entry.g_eff, b)
            if f <= f_max:
                out.append(SpectrumPoint(b, entry.branch_id, f))
    return out


def write_spectrum_csv(points: Iterable[SpectrumPoint], fh) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["B_T", "branch", "freq_Hz"])
    for p in points:
        writer.writerow([f"{p.B:.12g}", p.branch, f"{p.frequency:.12g}"])


def read_spectrum_csv(fh) -> list[SpectrumPoint]:
    reader = csv.DictReader(fh)
    return [SpectrumPoint(float(r["B_T"]), r["branch"], float(r["freq_Hz"])) for r in reader]
