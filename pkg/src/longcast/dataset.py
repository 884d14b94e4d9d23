"""Longitudinal data container, CSV ingestion, partitioning, design matrices.

Data are held as a balanced panel: N subjects observed on a common time
grid, k binary responses per occasion (missing cells allowed, marked NaN),
plus named real-valued covariates that are flagged time-invariant or
time-varying.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataError, FormulaError, InvalidArgumentError, SplitError

RESERVED_COLUMNS = ("subject", "time", "resp_id", "y")
MISSING_TOKEN = "NA"

__all__ = [
    "LongitudinalDataset",
    "SplitSpec",
    "ModelFormula",
    "DesignMatrix",
    "load_csv",
    "write_csv",
    "split",
    "design_matrix",
    "concat_times",
]


@dataclass(frozen=True)
class LongitudinalDataset:
    """Balanced multivariate longitudinal panel.

    responses has shape (N, T, k) with values in {0, 1} or NaN for missing
    cells; each covariate array has shape (N, T).
    """

    subjects: tuple
    times: np.ndarray
    response_names: tuple
    responses: np.ndarray
    covariates: dict = field(default_factory=dict)
    time_invariant: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "times", np.asarray(self.times, dtype=float))
        resp = np.asarray(self.responses, dtype=float)
        n, t, k = len(self.subjects), len(self.times), len(self.response_names)
        if resp.shape != (n, t, k):
            raise InvalidArgumentError(
                f"responses shape {resp.shape} does not match "
                f"(N={n}, T={t}, k={k})"
            )
        observed = ~np.isnan(resp)
        vals = resp[observed]
        if not np.all((vals == 0.0) | (vals == 1.0)):
            raise DataError("observed responses must be 0 or 1")
        object.__setattr__(self, "responses", resp)
        for name, arr in self.covariates.items():
            arr = np.asarray(arr, dtype=float)
            if arr.shape != (n, t):
                raise InvalidArgumentError(
                    f"covariate {name!r} has shape {arr.shape}, expected {(n, t)}"
                )
            self.covariates[name] = arr
            if name in self.time_invariant and t > 1:
                if np.nanmax(np.abs(arr - arr[:, :1]), initial=0.0) > 0.0:
                    raise DataError(
                        f"covariate {name!r} is flagged time-invariant but varies over time"
                    )

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    @property
    def n_times(self) -> int:
        return len(self.times)

    @property
    def n_responses(self) -> int:
        return len(self.response_names)

    @property
    def observed(self) -> np.ndarray:
        """Boolean mask of observed response cells, shape (N, T, k)."""
        return ~np.isnan(self.responses)

    def time_positions(self, labels) -> np.ndarray:
        """Positions of the given time labels on the grid."""
        pos = []
        for lab in np.atleast_1d(np.asarray(labels, dtype=float)):
            hits = np.flatnonzero(self.times == lab)
            if len(hits) == 0:
                raise InvalidArgumentError(f"time {lab:g} not on the occasion grid")
            pos.append(hits[0])
        return np.asarray(pos, dtype=int)

    def response_index(self, name) -> int:
        try:
            return self.response_names.index(name)
        except ValueError:
            raise InvalidArgumentError(f"unknown response {name!r}") from None

    def with_covariates(self, **overrides) -> "LongitudinalDataset":
        """Copy of the dataset with some covariate arrays replaced."""
        cov = dict(self.covariates)
        for name, arr in overrides.items():
            if name not in cov:
                raise InvalidArgumentError(f"unknown covariate {name!r}")
            cov[name] = np.asarray(arr, dtype=float)
        return replace(self, covariates=cov)


@dataclass(frozen=True)
class SplitSpec:
    """Contiguous train window followed immediately by the forecast window.

    Bounds are inclusive time labels, e.g. train=(17, 24), forecast=(25, 28).
    """

    train: tuple
    forecast: tuple

    @property
    def horizon(self) -> int:
        return int(self.forecast[1] - self.forecast[0]) + 1


def split(ds: LongitudinalDataset, spec: SplitSpec):
    """Partition a dataset into (train, holdout) along the time axis.

    The holdout keeps true responses so forecasts can be scored against
    them; it is never passed to a fitter.
    """
    t_lo, t_hi = float(spec.train[0]), float(spec.train[1])
    f_lo, f_hi = float(spec.forecast[0]), float(spec.forecast[1])
    if t_lo > t_hi or f_lo > f_hi:
        raise SplitError("split ranges must be non-decreasing")
    train_pos = np.flatnonzero((ds.times >= t_lo) & (ds.times <= t_hi))
    fore_pos = np.flatnonzero((ds.times >= f_lo) & (ds.times <= f_hi))
    if len(train_pos) == 0 or len(fore_pos) == 0:
        raise SplitError("split ranges do not overlap the occasion grid")
    if ds.times[train_pos[0]] != t_lo or ds.times[train_pos[-1]] != t_hi:
        raise SplitError(f"train range [{t_lo:g}, {t_hi:g}] not fully on the grid")
    if ds.times[fore_pos[0]] != f_lo or ds.times[fore_pos[-1]] != f_hi:
        raise SplitError(f"forecast range [{f_lo:g}, {f_hi:g}] not fully on the grid")
    if fore_pos[0] != train_pos[-1] + 1:
        raise SplitError(
            f"forecast window must start immediately after the train window "
            f"(train ends at {ds.times[train_pos[-1]]:g}, forecast starts at "
            f"{ds.times[fore_pos[0]]:g})"
        )

    def take(pos):
        return replace(
            ds,
            times=ds.times[pos],
            responses=ds.responses[:, pos, :],
            covariates={k: v[:, pos] for k, v in ds.covariates.items()},
        )

    return take(train_pos), take(fore_pos)


def concat_times(first: LongitudinalDataset, second: LongitudinalDataset) -> LongitudinalDataset:
    """Stack two datasets over adjacent time windows (inverse of ``split``)."""
    if first.subjects != second.subjects or first.response_names != second.response_names:
        raise InvalidArgumentError("datasets do not share subjects/responses")
    return replace(
        first,
        times=np.concatenate([first.times, second.times]),
        responses=np.concatenate([first.responses, second.responses], axis=1),
        covariates={
            k: np.concatenate([first.covariates[k], second.covariates[k]], axis=1)
            for k in first.covariates
        },
    )


@dataclass(frozen=True)
class ModelFormula:
    """Selects responses and design terms.

    Terms are covariate names, interactions joined by ':', and (for shared
    coefficient layouts) response indicators written ``resp(NAME)``.  An
    intercept column is always included first.  ``per_response=True`` lays
    out one design row per (subject, time) with a separate coefficient
    vector per response; ``per_response=False`` expands rows per (subject,
    time, response) with a single shared coefficient vector.
    """

    responses: tuple
    terms: tuple = ()
    per_response: bool = True

    def __post_init__(self):
        object.__setattr__(self, "responses", tuple(self.responses))
        object.__setattr__(self, "terms", tuple(self.terms))
        if len(self.responses) == 0:
            raise FormulaError("formula selects no responses")
        if len(set(self.terms)) != len(self.terms):
            dupes = [t for t in self.terms if self.terms.count(t) > 1]
            raise FormulaError(f"duplicate terms: {sorted(set(dupes))}")

    def validate(self, ds: LongitudinalDataset) -> None:
        for r in self.responses:
            if r not in ds.response_names:
                raise FormulaError(f"unknown response {r!r}")
        for term in self.terms:
            for factor in term.split(":"):
                name = _indicator_target(factor)
                if name is not None:
                    if self.per_response:
                        raise FormulaError(
                            "response indicators require a shared-coefficient "
                            f"formula (per_response=False): {factor!r}"
                        )
                    if name not in self.responses:
                        raise FormulaError(f"indicator for unselected response {name!r}")
                elif factor not in ds.covariates:
                    raise FormulaError(f"unknown covariate {factor!r}")


def _indicator_target(factor: str):
    if factor.startswith("resp(") and factor.endswith(")"):
        return factor[5:-1]
    return None


@dataclass(frozen=True)
class DesignMatrix:
    """Design rows plus the (subject, time[, response]) index of each row.

    Row order is subject-major, then time, then (when expanded) response;
    this matches the cell ordering used for cluster correlation matrices.
    """

    x: np.ndarray
    columns: tuple
    subject_pos: np.ndarray
    time_pos: np.ndarray
    resp_pos: np.ndarray | None
    n_subjects: int
    time_labels: np.ndarray
    response_names: tuple

    @property
    def n_rows(self) -> int:
        return self.x.shape[0]

    @property
    def n_cols(self) -> int:
        return self.x.shape[1]

    def as_cube(self) -> np.ndarray:
        """Reshape rows to (N, T_sel, p) or (N, T_sel, k, p)."""
        n, t = self.n_subjects, len(self.time_labels)
        if self.resp_pos is None:
            return self.x.reshape(n, t, self.n_cols)
        return self.x.reshape(n, t, len(self.response_names), self.n_cols)


def design_matrix(
    ds: LongitudinalDataset, formula: ModelFormula, t_range=None
) -> DesignMatrix:
    """Build the design matrix for the requested time window.

    ``t_range`` is an inclusive (lo, hi) pair of time labels, an explicit
    label list, or None for the full grid.  Interaction columns are
    elementwise products of their factors.
    """
    formula.validate(ds)
    if t_range is None:
        pos = np.arange(ds.n_times)
    elif isinstance(t_range, tuple) and len(t_range) == 2:
        lo, hi = float(t_range[0]), float(t_range[1])
        pos = np.flatnonzero((ds.times >= lo) & (ds.times <= hi))
        if len(pos) == 0:
            raise InvalidArgumentError(f"no occasions in [{lo:g}, {hi:g}]")
    else:
        pos = ds.time_positions(t_range)
    n, tsel = ds.n_subjects, len(pos)
    labels = ds.times[pos]

    cov_panel = {name: arr[:, pos] for name, arr in ds.covariates.items()}
    k = len(formula.responses)

    if formula.per_response:
        shape = (n, tsel)
    else:
        shape = (n, tsel, k)
        resp_onehot = {
            name: np.broadcast_to(
                (np.arange(k) == j).astype(float), shape
            )
            for j, name in enumerate(formula.responses)
        }

    def factor_values(factor):
        name = _indicator_target(factor)
        if name is not None:
            return resp_onehot[name]
        base = cov_panel[factor]
        if formula.per_response:
            return base
        return np.broadcast_to(base[:, :, None], shape)

    columns = ["intercept"]
    col_arrays = [np.ones(shape)]
    for term in formula.terms:
        vals = None
        for factor in term.split(":"):
            fv = factor_values(factor)
            vals = fv if vals is None else vals * fv
        columns.append(term)
        col_arrays.append(vals)

    x = np.stack(col_arrays, axis=-1).reshape(-1, len(columns))
    subj = np.repeat(np.arange(n), tsel * (1 if formula.per_response else k))
    tgrid = np.tile(np.repeat(np.arange(tsel), 1 if formula.per_response else k), n)
    resp = None if formula.per_response else np.tile(np.arange(k), n * tsel)
    return DesignMatrix(
        x=x,
        columns=tuple(columns),
        subject_pos=subj,
        time_pos=tgrid,
        resp_pos=resp,
        n_subjects=n,
        time_labels=labels,
        response_names=formula.responses,
    )


def _parse_schema(schema) -> frozenset:
    if schema is None:
        return frozenset()
    if isinstance(schema, (str, Path)):
        with open(schema, "r", encoding="utf-8") as fh:
            schema = json.load(fh)
    if isinstance(schema, dict):
        return frozenset(schema.get("time_invariant", ()))
    raise InvalidArgumentError(f"schema must be a mapping or a path, got {type(schema)}")


def load_csv(path, schema=None) -> LongitudinalDataset:
    """Read a long-format CSV into a balanced panel.

    Expected header: ``subject,time,resp_id,y,<covariate...>``; missing
    response cells use the token ``NA``.  ``schema`` (mapping or JSON path)
    may declare ``{"time_invariant": [...]}``.  Validation failures name
    the offending row (header is row 1).
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    invariant = _parse_schema(schema)
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in RESERVED_COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing required columns {missing}")
        col_of = {c: i for i, c in enumerate(header)}
        cov_names = [c for c in header if c not in RESERVED_COLUMNS]
        unknown_inv = invariant - set(cov_names)
        if unknown_inv:
            raise DataError(
                f"{path}: schema flags unknown covariates {sorted(unknown_inv)}"
            )

        subjects: list = []
        subj_of: dict = {}
        times_seen: dict = {}
        resp_names: list = []
        resp_of: dict = {}
        records = []
        for rownum, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: row {rownum}: expected {len(header)} fields, got {len(row)}"
                )
            sid = row[col_of["subject"]]
            try:
                t = float(row[col_of["time"]])
            except ValueError:
                raise DataError(
                    f"{path}: row {rownum}: time {row[col_of['time']]!r} is not numeric"
                ) from None
            rid = row[col_of["resp_id"]]
            ytok = row[col_of["y"]].strip()
            if ytok == MISSING_TOKEN:
                y = np.nan
            else:
                try:
                    y = float(ytok)
                except ValueError:
                    raise DataError(
                        f"{path}: row {rownum}: response value {ytok!r} is not 0/1/NA"
                    ) from None
                if y not in (0.0, 1.0):
                    raise DataError(
                        f"{path}: row {rownum}: response value {ytok!r} is not binary"
                    )
            covs = []
            for c in cov_names:
                tok = row[col_of[c]].strip()
                try:
                    covs.append(float(tok))
                except ValueError:
                    raise DataError(
                        f"{path}: row {rownum}: covariate {c}={tok!r} is not numeric"
                    ) from None
            if sid not in subj_of:
                subj_of[sid] = len(subjects)
                subjects.append(sid)
            if rid not in resp_of:
                resp_of[rid] = len(resp_names)
                resp_names.append(rid)
            times_seen[t] = True
            records.append((rownum, subj_of[sid], t, resp_of[rid], y, covs))

    if not records:
        raise DataError(f"{path}: no data rows")
    times = np.array(sorted(times_seen), dtype=float)
    tpos = {t: i for i, t in enumerate(times)}
    n, t_count, k = len(subjects), len(times), len(resp_names)

    responses = np.full((n, t_count, k), np.nan)
    filled = np.zeros((n, t_count, k), dtype=bool)
    cov_arrays = {c: np.full((n, t_count), np.nan) for c in cov_names}
    cov_row = {}
    for rownum, si, t, rj, y, covs in records:
        ti = tpos[t]
        if filled[si, ti, rj]:
            raise DataError(
                f"{path}: row {rownum}: duplicate cell "
                f"(subject={subjects[si]}, time={t:g}, resp_id={resp_names[rj]})"
            )
        filled[si, ti, rj] = True
        responses[si, ti, rj] = y
        for c, v in zip(cov_names, covs):
            prev = cov_arrays[c][si, ti]
            if np.isnan(prev):
                cov_arrays[c][si, ti] = v
                cov_row[(c, si, ti)] = rownum
            elif prev != v:
                raise DataError(
                    f"{path}: row {rownum}: covariate {c} disagrees with row "
                    f"{cov_row[(c, si, ti)]} for subject={subjects[si]}, time={t:g}"
                )
    if not filled.all():
        si, ti, rj = np.argwhere(~filled)[0]
        raise DataError(
            f"{path}: ragged panel: no row for subject={subjects[si]}, "
            f"time={times[ti]:g}, resp_id={resp_names[rj]}"
        )
    for c in cov_names:
        if c in invariant:
            arr = cov_arrays[c]
            drift = np.abs(arr - arr[:, :1]).max(initial=0.0)
            if drift > 0:
                bad = np.argwhere(np.abs(arr - arr[:, :1]) > 0)[0]
                raise DataError(
                    f"{path}: covariate {c} flagged time-invariant but varies "
                    f"for subject={subjects[bad[0]]}"
                )
    return LongitudinalDataset(
        subjects=tuple(subjects),
        times=times,
        response_names=tuple(resp_names),
        responses=responses,
        covariates=cov_arrays,
        time_invariant=frozenset(invariant),
    )


def write_csv(ds: LongitudinalDataset, path, schema_path=None) -> None:
    """Write the panel in long format (inverse of ``load_csv``)."""
    path = Path(path)
    cov_names = list(ds.covariates)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(RESERVED_COLUMNS) + cov_names)
        for si, sid in enumerate(ds.subjects):
            for ti, t in enumerate(ds.times):
                for rj, rid in enumerate(ds.response_names):
                    y = ds.responses[si, ti, rj]
                    ytok = MISSING_TOKEN if np.isnan(y) else f"{int(y)}"
                    row = [sid, f"{t:g}", rid, ytok]
                    row += [repr(float(ds.covariates[c][si, ti])) for c in cov_names]
                    writer.writerow(row)
    if schema_path is not None:
        with open(schema_path, "w", encoding="utf-8") as fh:
            json.dump({"time_invariant": sorted(ds.time_invariant)}, fh, indent=2)
            fh.write("\n")
