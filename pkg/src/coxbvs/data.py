"""Survival datasets with predefined patient subgroups.

Loading, validation, standardization, stratified splitting and the
interval grouping used by the grouped-data Cox likelihood.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np
import pandas as pd

__all__ = [
    "DataError",
    "SurvivalRecord",
    "Dataset",
    "GroupedData",
    "StandardizationParams",
    "load_dataset",
    "save_dataset",
    "standardize",
    "apply_standardization",
    "build_grouped_data",
    "stratified_split",
    "TERMINAL_FACTOR",
]

# terminal boundary sits just beyond the largest observed time
TERMINAL_FACTOR = 1.0 + 1e-6


class DataError(ValueError):
    """Invalid survival data, with row/column context where available."""


@dataclass(frozen=True)
class SurvivalRecord:
    observed_time: float
    event: int
    covariates: np.ndarray
    subgroup: int


@dataclass
class Dataset:
    """Column-oriented survival data.

    Parameters
    ----------
    time : ndarray (n,)
        Observed times, strictly positive.
    event : ndarray (n,)
        1 for an observed event, 0 for right censoring.
    X : ndarray (n, p)
        Covariate matrix.
    subgroup : ndarray (n,)
        Integer subgroup labels in ``1..n_subgroups``.
    n_subgroups : int, optional
        Number of subgroups; inferred from the labels when omitted.
    covariate_names : list of str, optional
    """

    time: np.ndarray
    event: np.ndarray
    X: np.ndarray
    subgroup: np.ndarray
    n_subgroups: int | None = None
    covariate_names: list[str] | None = None
    require_all_subgroups: bool = field(default=True, repr=False)

    def __post_init__(self):
        self.time = np.asarray(self.time, dtype=float).reshape(-1)
        self.event = np.asarray(self.event).astype(np.int64).reshape(-1)
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X.reshape(len(self.time), -1)
        self.subgroup = np.asarray(self.subgroup).astype(np.int64).reshape(-1)
        n = self.time.shape[0]
        if not (self.event.shape[0] == n and self.X.shape[0] == n and self.subgroup.shape[0] == n):
            raise DataError(
                f"length mismatch: time {n}, event {self.event.shape[0]}, "
                f"X {self.X.shape[0]}, subgroup {self.subgroup.shape[0]}"
            )
        bad = np.flatnonzero(~(self.time > 0))
        if bad.size:
            raise DataError(f"row {bad[0]}: observed time must be positive, got {self.time[bad[0]]}")
        bad = np.flatnonzero((self.event != 0) & (self.event != 1))
        if bad.size:
            raise DataError(f"row {bad[0]}: event indicator must be 0 or 1, got {self.event[bad[0]]}")
        if not np.all(np.isfinite(self.X)):
            r, c = np.argwhere(~np.isfinite(self.X))[0]
            raise DataError(f"row {r}, column {self._name(c)}: missing or non-finite covariate")
        if self.n_subgroups is None:
            self.n_subgroups = int(self.subgroup.max()) if n else 0
        bad = np.flatnonzero((self.subgroup < 1) | (self.subgroup > self.n_subgroups))
        if bad.size:
            raise DataError(f"row {bad[0]}: subgroup label {self.subgroup[bad[0]]} outside 1..{self.n_subgroups}")
        if self.require_all_subgroups:
            for s in range(1, self.n_subgroups + 1):
                if not np.any(self.subgroup == s):
                    raise DataError(f"subgroup {s} has no records")
        if self.covariate_names is None:
            self.covariate_names = [f"x{j + 1}" for j in range(self.p)]
        elif len(self.covariate_names) != self.p:
            raise DataError(f"{len(self.covariate_names)} covariate names for {self.p} columns")

    def _name(self, j: int) -> str:
        if self.covariate_names is not None and j < len(self.covariate_names):
            return repr(self.covariate_names[j])
        return str(j)

    @property
    def n(self) -> int:
        return self.time.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def S(self) -> int:
        return int(self.n_subgroups)

    @property
    def n_s(self) -> tuple[int, ...]:
        return tuple(int(np.sum(self.subgroup == s)) for s in range(1, self.S + 1))

    @classmethod
    def from_records(cls, records: Sequence[SurvivalRecord], **kwargs) -> "Dataset":
        if not records:
            raise DataError("no records")
        widths = {len(np.atleast_1d(r.covariates)) for r in records}
        if len(widths) != 1:
            raise DataError(f"records disagree on covariate count: {sorted(widths)}")
        return cls(
            time=[r.observed_time for r in records],
            event=[r.event for r in records],
            X=np.vstack([np.atleast_1d(np.asarray(r.covariates, dtype=float)) for r in records]),
            subgroup=[r.subgroup for r in records],
            **kwargs,
        )

    def records(self) -> Iterator[SurvivalRecord]:
        for k in range(self.n):
            yield SurvivalRecord(float(self.time[k]), int(self.event[k]), self.X[k].copy(), int(self.subgroup[k]))

    def take(self, index) -> "Dataset":
        """Row subset keeping the subgroup count and names."""
        index = np.asarray(index)
        return Dataset(
            self.time[index], self.event[index], self.X[index], self.subgroup[index],
            n_subgroups=self.S, covariate_names=list(self.covariate_names),
            require_all_subgroups=False,
        )

    def subgroup_data(self, s: int) -> "Dataset":
        """Records of subgroup ``s`` (1-based) relabelled as a one-subgroup dataset."""
        idx = np.flatnonzero(self.subgroup == s)
        return Dataset(
            self.time[idx], self.event[idx], self.X[idx], np.ones(idx.size, dtype=np.int64),
            n_subgroups=1, covariate_names=list(self.covariate_names), require_all_subgroups=False,
        )

    def pooled(self) -> "Dataset":
        """All records as a single subgroup."""
        return Dataset(
            self.time, self.event, self.X, np.ones(self.n, dtype=np.int64),
            n_subgroups=1, covariate_names=list(self.covariate_names),
        )

    def with_X(self, X: np.ndarray) -> "Dataset":
        return Dataset(
            self.time, self.event, X, self.subgroup, n_subgroups=self.S,
            covariate_names=list(self.covariate_names), require_all_subgroups=False,
        )


def load_dataset(path, schema: Mapping[str, object] | None = None) -> Dataset:
    """Read a CSV survival file.

    The default schema expects columns ``time``, ``status`` and ``subgroup``;
    every other column is a numeric covariate. ``schema`` may rename these
    (keys ``time``, ``status``, ``subgroup``) and restrict the covariates
    (key ``covariates``: list of column names).
    """
    schema = dict(schema or {})
    path = Path(path)
    if not path.exists():
        raise DataError(f"{path}: file not found")
    try:
        frame = pd.read_csv(path, comment="#", float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise DataError(f"{path}: cannot parse CSV ({exc})") from exc
    tcol = schema.get("time", "time")
    scol = schema.get("status", "status")
    gcol = schema.get("subgroup", "subgroup")
    for col in (tcol, scol, gcol):
        if col not in frame.columns:
            raise DataError(f"{path}: required column {col!r} missing (have {list(frame.columns)})")
    covs = schema.get("covariates")
    if covs is None:
        covs = [c for c in frame.columns if c not in (tcol, scol, gcol)]
    else:
        missing = [c for c in covs if c not in frame.columns]
        if missing:
            raise DataError(f"{path}: covariate columns {missing} missing")
    if not covs:
        raise DataError(f"{path}: no covariate columns")
    if frame.empty:
        raise DataError(f"{path}: no data rows")
    for col in [tcol, scol, gcol, *covs]:
        values = pd.to_numeric(frame[col], errors="coerce")
        bad = np.flatnonzero(values.isna().to_numpy())
        if bad.size:
            raise DataError(f"{path}: row {bad[0] + 1}, column {col!r}: missing or non-numeric value")
    time = frame[tcol].to_numpy(dtype=float)
    bad = np.flatnonzero(~(time > 0))
    if bad.size:
        raise DataError(f"{path}: row {bad[0] + 1}, column {tcol!r}: non-positive time {time[bad[0]]}")
    status = frame[scol].to_numpy(dtype=float)
    bad = np.flatnonzero((status != 0) & (status != 1))
    if bad.size:
        raise DataError(f"{path}: row {bad[0] + 1}, column {scol!r}: status must be 0 or 1")
    groups = frame[gcol].to_numpy(dtype=float)
    if np.any(groups != np.round(groups)) or np.any(groups < 1):
        raise DataError(f"{path}: column {gcol!r} must hold integer labels 1..S")
    S = schema.get("n_subgroups")
    try:
        return Dataset(
            time, status.astype(int), frame[list(covs)].to_numpy(dtype=float), groups.astype(int),
            n_subgroups=S, covariate_names=[str(c) for c in covs],
        )
    except DataError as exc:
        raise DataError(f"{path}: {exc}") from exc


def save_dataset(dataset: Dataset, path, header: str | None = None) -> None:
    """Write ``dataset`` in the CSV layout read by :func:`load_dataset`."""
    frame = pd.DataFrame(dataset.X, columns=dataset.covariate_names)
    frame.insert(0, "subgroup", dataset.subgroup)
    frame.insert(0, "status", dataset.event)
    frame.insert(0, "time", dataset.time)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(f"# {header}\n")
        frame.to_csv(fh, index=False, float_format="%.17g", lineterminator="\n")


@dataclass
class StandardizationParams:
    """Column means and sample SDs; one row per scope unit.

    ``means``/``sds`` have shape (S, p) for per-subgroup scope and (1, p)
    for pooled scope.
    """

    means: np.ndarray
    sds: np.ndarray
    scope: str

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, dtype=float))
        self.sds = np.atleast_2d(np.asarray(self.sds, dtype=float))
        if self.scope not in ("per-subgroup", "pooled"):
            raise ValueError(f"unknown scope {self.scope!r}")
        if np.any(~(self.sds > 0)):
            raise DataError("standard deviations must be strictly positive")

    def unit_of(self, subgroup: np.ndarray) -> np.ndarray:
        subgroup = np.asarray(subgroup)
        if self.scope == "pooled":
            return np.zeros_like(subgroup)
        return subgroup - 1

    def transform(self, X: np.ndarray, subgroup: np.ndarray) -> np.ndarray:
        unit = self.unit_of(subgroup)
        return (np.asarray(X, dtype=float) - self.means[unit]) / self.sds[unit]

    def to_dict(self) -> dict:
        return {"scope": self.scope, "means": self.means.tolist(), "sds": self.sds.tolist()}

    @classmethod
    def from_dict(cls, d: Mapping) -> "StandardizationParams":
        return cls(np.array(d["means"]), np.array(d["sds"]), d["scope"])


def standardize(train: Dataset, test: Dataset | None, scope: str = "per-subgroup"):
    """Center and scale covariates with training-set means and sample SDs.

    Returns ``(train_std, test_std, params)``; ``test_std`` is None when no
    test set is given.
    """
    if scope not in ("per-subgroup", "pooled"):
        raise ValueError(f"scope must be 'per-subgroup' or 'pooled', got {scope!r}")
    units = [np.arange(train.n)] if scope == "pooled" else [
        np.flatnonzero(train.subgroup == s) for s in range(1, train.S + 1)
    ]
    means, sds = [], []
    for u, idx in enumerate(units):
        label = "pooled data" if scope == "pooled" else f"subgroup {u + 1}"
        if idx.size < 2:
            raise DataError(f"{label}: need at least 2 training records to standardize")
        block = train.X[idx]
        mu = block.mean(axis=0)
        sd = block.std(axis=0, ddof=1)
        const = np.flatnonzero(~(sd > 1e-12 * np.maximum(1.0, np.abs(mu))))
        if const.size:
            raise DataError(f"{label}: covariate {train._name(const[0])} is constant in the training data")
        means.append(mu)
        sds.append(sd)
    params = StandardizationParams(np.array(means), np.array(sds), scope)
    train_std = train.with_X(params.transform(train.X, train.subgroup))
    test_std = None if test is None else apply_standardization(test, params)
    return train_std, test_std, params


def apply_standardization(data: Dataset, params: StandardizationParams) -> Dataset:
    return data.with_X(params.transform(data.X, data.subgroup))


@dataclass
class GroupedData:
    """Interval grouping of one subgroup's observed times.

    ``boundaries`` holds ``c_0 = 0 < c_1 < ... < c_J``; interval ``g``
    (0-based here) is ``(c_g, c_{g+1}]``.  ``interval`` gives each
    patient's containing interval and ``event`` its indicator, from which
    the risk and failure sets are derived.
    """

    boundaries: np.ndarray
    interval: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        self.boundaries = np.asarray(self.boundaries, dtype=float)
        self.interval = np.asarray(self.interval, dtype=np.int64)
        self.event = np.asarray(self.event, dtype=np.int64)
        if self.boundaries[0] != 0 or np.any(np.diff(self.boundaries) <= 0):
            raise DataError("boundaries must start at 0 and increase strictly")

    @property
    def J(self) -> int:
        return self.boundaries.size - 1

    @property
    def n(self) -> int:
        return self.interval.size

    @property
    def risk_sets(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.interval >= g) for g in range(self.J)]

    @property
    def failure_sets(self) -> list[np.ndarray]:
        return [np.flatnonzero((self.interval == g) & (self.event == 1)) for g in range(self.J)]

    @property
    def event_counts(self) -> np.ndarray:
        return np.bincount(self.interval[self.event == 1], minlength=self.J).astype(np.int64)

    @classmethod
    def empty(cls, boundaries) -> "GroupedData":
        """A partition with no patients (the data-free sampler hook)."""
        return cls(boundaries, np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))


def build_grouped_data(time, event, boundaries=None) -> GroupedData:
    """Group observed times into intervals ending at the distinct event times.

    A final interval closes just beyond the largest observed time, so a
    censored patient tied with an event time stays at risk for the
    interval ending there, and patients censored after the last event fall
    in the terminal interval.
    """
    time = np.asarray(time, dtype=float)
    event = np.asarray(event, dtype=np.int64)
    if boundaries is None:
        if not np.any(event == 1):
            raise DataError("subgroup has no events; the Cox model is unidentifiable")
        cuts = np.unique(time[event == 1])
        terminal = time.max() * TERMINAL_FACTOR
        boundaries = np.concatenate([[0.0], cuts, [terminal]])
    boundaries = np.asarray(boundaries, dtype=float)
    if time.size and time.max() >= boundaries[-1]:
        raise DataError("last boundary must exceed every observed time")
    # interval g holds times in (c_g, c_{g+1}]
    interval = np.searchsorted(boundaries, time, side="left") - 1
    return GroupedData(boundaries, interval, event)


def _round_half_up(x: float) -> int:
    return int(np.floor(x + 0.5))


def stratified_split(dataset: Dataset, train_fraction: float, seed) -> tuple[Dataset, Dataset]:
    """Random train/test split within every (subgroup, event) stratum."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for s in range(1, dataset.S + 1):
        for d in (0, 1):
            idx = np.flatnonzero((dataset.subgroup == s) & (dataset.event == d))
            if idx.size == 0:
                continue
            if idx.size < 2:
                raise DataError(f"stratum (subgroup={s}, event={d}) has {idx.size} record; need at least 2")
            k = _round_half_up(train_fraction * idx.size)
            perm = rng.permutation(idx)
            train_idx.append(perm[:k])
            test_idx.append(perm[k:])
    train_idx = np.sort(np.concatenate(train_idx))
    test_idx = np.sort(np.concatenate(test_idx))
    return dataset.take(train_idx), dataset.take(test_idx)
