"""Flat parameter vectors with named, contiguous segments.

Segments let callers restrict norm computations to a tail of the model
(for example the last layer's weights and biases) without reshaping.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericError

Segment = tuple[str, int, int]  # (name, start, length)


@dataclass
class ParamVector:
    """A float64 parameter array plus segment metadata covering it exactly."""

    values: np.ndarray
    segments: list[Segment] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ConfigurationError("parameter values must be one-dimensional")
        if not self.segments:
            self.segments = [("w", 0, self.values.size)]
        _check_segments(self.segments, self.values.size)
        if not np.all(np.isfinite(self.values)):
            raise NumericError("parameter vector contains non-finite values")

    @property
    def size(self) -> int:
        return self.values.size

    def segment_names(self) -> list[str]:
        return [name for name, _, _ in self.segments]

    def segment_slice(self, name: str) -> slice:
        for seg_name, start, length in self.segments:
            if seg_name == name:
                return slice(start, start + length)
        raise ConfigurationError(f"unknown segment {name!r}")

    def with_values(self, values: np.ndarray) -> "ParamVector":
        """A new vector sharing this one's segment layout."""
        return ParamVector(values, list(self.segments))

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), list(self.segments))

    def to_dict(self) -> dict:
        return {
            "values": [float(v) for v in self.values],
            "segments": [[name, int(start), int(length)] for name, start, length in self.segments],
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "ParamVector":
        segments = [(str(n), int(s), int(l)) for n, s, l in payload["segments"]]
        return cls(np.asarray(payload["values"], dtype=np.float64), segments)


def subset_norm(values: np.ndarray, pv: ParamVector, names) -> float:
    """Euclidean norm of ``values`` restricted to the named segments of ``pv``."""
    mask = np.zeros(pv.size, dtype=bool)
    for name in names:
        mask[pv.segment_slice(name)] = True
    return float(np.linalg.norm(values[mask]))


def default_subset(pv: ParamVector) -> list[str]:
    """Last two segments (or all of them when fewer exist)."""
    names = pv.segment_names()
    return names[-2:] if len(names) >= 2 else names


def _check_segments(segments, total):
    covered = 0
    seen = set()
    for name, start, length in segments:
        if start != covered:
            raise ConfigurationError(
                f"segment {name!r} starts at {start}, expected {covered}: "
                "segments must be contiguous and ordered"
            )
        if length < 0:
            raise ConfigurationError(f"segment {name!r} has negative length")
        if name in seen:
            raise ConfigurationError(f"duplicate segment name {name!r}")
        seen.add(name)
        covered += length
    if covered != total:
        raise ConfigurationError(
            f"segments cover {covered} values but the array holds {total}"
        )
