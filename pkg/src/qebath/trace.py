"""Containers for sampled amplitudes shared by the analytic and exact solvers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = ["TimeTrace", "Breakdown"]


@dataclass
class TimeTrace:
    """Complex amplitudes sampled on a time grid.

    Attributes
    ----------
    times : ndarray, shape (n_t,)
        Times in units of 1/J.
    amplitudes : ndarray, shape (n_t, n_states)
        One column per tracked state (emitters or collective states).
    labels : list of str
        Column names of ``amplitudes``.
    contributions : dict
        Optional per-contribution series (label -> shape (n_t,)), used by
        the resolvent decomposition.
    """

    times: np.ndarray
    amplitudes: np.ndarray
    labels: list[str]
    contributions: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.ndim == 1:
            amps = amps[:, None]
        if amps.shape != (len(self.times), len(self.labels)):
            raise ValueError("amplitudes must have shape (n_times, n_labels)")
        self.amplitudes = amps

    def __getitem__(self, label: str) -> np.ndarray:
        if label in self.labels:
            return self.amplitudes[:, self.labels.index(label)]
        return self.contributions[label]

    def population(self, label: str | None = None) -> np.ndarray:
        """``|C(t)|^2`` of one column (the first if ``label`` is None)."""
        col = self.amplitudes[:, 0] if label is None else self[label]
        return np.abs(col) ** 2


@dataclass
class Breakdown:
    """Weights at t = 0 of each contribution to an amplitude.

    ``entries`` holds ``(label, complex weight)`` pairs.  For an initially
    excited emitter the weights add up to 1.
    """

    entries: list[tuple[str, complex]]

    @property
    def total(self) -> complex:
        return complex(sum(w for _, w in self.entries))

    def as_dict(self) -> dict[str, complex]:
        return dict(self.entries)

    def __iter__(self):
        return iter(self.entries)
