"""Correlation functions sampled on a symmetric lag grid."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._csv import read_columns, write_columns
from .exceptions import AlignmentError, ValidationError

KINDS = ("g2", "g1", "connected", "bound", "ratio")


@dataclass
class CoherenceSeries:
    """Values of g2, g1 or C on a lag grid in picoseconds.

    ``stderr`` is NaN where no error estimate is available.  ``replicates``
    optionally keeps the bootstrap draws (one row per resample) so derived
    quantities can be given consistent errors.
    """

    tau_ps: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    kind: str = "g2"
    replicates: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.tau_ps = np.asarray(self.tau_ps, dtype=np.int64)
        self.values = np.asarray(self.values)
        if self.stderr is None:
            self.stderr = np.full(len(self.tau_ps), np.nan)
        self.stderr = np.asarray(self.stderr, dtype=float)
        if self.kind not in KINDS:
            raise ValidationError(f"unknown series kind {self.kind!r}")
        if not (len(self.tau_ps) == len(self.values) == len(self.stderr)):
            raise ValidationError("tau, values and stderr differ in length")
        if np.any(self.stderr < 0):
            raise ValidationError("negative standard error")

    def __len__(self):
        return len(self.tau_ps)

    @property
    def is_symmetric_grid(self) -> bool:
        return np.array_equal(self.tau_ps, -self.tau_ps[::-1])

    @property
    def has_errors(self) -> bool:
        return bool(np.isfinite(self.stderr).any())

    def at(self, tau_ps: int):
        idx = np.flatnonzero(self.tau_ps == tau_ps)
        if not len(idx):
            raise KeyError(tau_ps)
        return self.values[idx[0]]

    def select(self, mask) -> "CoherenceSeries":
        reps = None if self.replicates is None else self.replicates[:, mask]
        return CoherenceSeries(self.tau_ps[mask], self.values[mask], self.stderr[mask], self.kind, reps)

    def aligned_to(self, tau_ps) -> "CoherenceSeries":
        """Restrict to the lags in ``tau_ps``; every lag must be present."""
        tau_ps = np.asarray(tau_ps, dtype=np.int64)
        pos = {t: i for i, t in enumerate(self.tau_ps.tolist())}
        try:
            idx = np.array([pos[t] for t in tau_ps.tolist()], dtype=np.int64)
        except KeyError as exc:
            raise AlignmentError(f"lag {exc.args[0]} ps missing from {self.kind} series") from None
        return self.select(idx)

    def to_csv(self, path, value_name=None) -> None:
        name = value_name or self.kind
        vals = self.values.real if np.iscomplexobj(self.values) else self.values
        write_columns(path, ["tau_ps", name, "stderr"], [self.tau_ps, vals, self.stderr])

    @classmethod
    def from_csv(cls, path, kind="g2", value_name=None) -> "CoherenceSeries":
        cols = read_columns(path)
        name = value_name or next(k for k in cols if k not in ("tau_ps", "stderr"))
        stderr = cols.get("stderr", np.full(len(cols["tau_ps"]), np.nan))
        return cls(np.rint(cols["tau_ps"]).astype(np.int64), cols[name], stderr, kind)


def symmetric_lags(tau_max_ps: int, step_ps: int) -> np.ndarray:
    k = int(tau_max_ps) // int(step_ps)
    return np.arange(-k, k + 1, dtype=np.int64) * int(step_ps)
