"""Data model and delimited-text ingestion for the three study shapes.

* group summaries of a two-stage randomized trial (one row per group),
* two-person households with one randomized index person,
* clusters of individuals with own treatment, outcome and covariates.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import EstimationError, ParseError, ValidationError

GROUP_FIELDS = ("group_id", "assignment", "n_treated", "cases_treated",
                "n_control", "cases_control")
HOUSEHOLD_FIELDS = ("household_id", "z1", "y1", "y2")
CLUSTER_FIELDS = ("cluster_id", "individual_id", "z", "y")


@dataclass(frozen=True)
class GroupSummary:
    group_id: str
    assignment: str
    n_treated: int
    cases_treated: int
    n_control: int
    cases_control: int

    def __post_init__(self):
        for name in ("n_treated", "cases_treated", "n_control", "cases_control"):
            if getattr(self, name) < 0:
                raise ValidationError(f"group {self.group_id}: {name} is negative")
        if self.cases_treated > self.n_treated:
            raise ValidationError(
                f"group {self.group_id}: cases_treated exceeds n_treated")
        if self.cases_control > self.n_control:
            raise ValidationError(
                f"group {self.group_id}: cases_control exceeds n_control")
        if self.n_treated + self.n_control < 1:
            raise ValidationError(f"group {self.group_id}: n_treated + n_control is 0")


@dataclass(frozen=True)
class TrialTable:
    groups: tuple[GroupSummary, ...]
    strategy_labels: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.groups:
            raise ValidationError("no groups")
        ids = [g.group_id for g in self.groups]
        if len(set(ids)) != len(ids):
            raise ValidationError("group_ids are not unique")
        labels = self.strategy_labels or tuple(dict.fromkeys(g.assignment for g in self.groups))
        object.__setattr__(self, "strategy_labels", tuple(labels))
        present = {g.assignment for g in self.groups}
        for label in self.strategy_labels:
            if label not in present:
                raise ValidationError(f"no groups with label {label!r}")

    def with_label(self, label):
        return [g for g in self.groups if g.assignment == label]


@dataclass(frozen=True)
class HouseholdRecord:
    household_id: str
    z1: int
    y1: int
    y2: int

    def __post_init__(self):
        for name in ("z1", "y1", "y2"):
            if getattr(self, name) not in (0, 1):
                raise ValidationError(
                    f"household {self.household_id}: {name} must be 0 or 1")


@dataclass(frozen=True)
class InfectStudy:
    """Empirical ingredients of the household infectiousness contrasts.

    ``p1``/``p0`` are secondary attack rates in individual 2 among households
    whose index person was infected, by the index person's arm.  ``attack1``
    and ``attack0`` are the index attack rates by arm.  The index-case counts
    ``n1``/``n0`` are only needed for confidence intervals.
    """

    p1: float
    p0: float
    attack1: float
    attack0: float
    n_records: int = 0
    n1: int | None = None
    n0: int | None = None

    def __post_init__(self):
        for name in ("p1", "p0", "attack1", "attack0"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v!r} is not a probability")

    @property
    def doomed_fraction(self):
        """pi_D = attack1 / attack0, the doomed share of infected controls."""
        if self.attack0 == 0:
            raise EstimationError("attack0 is 0: no infected index cases in the control arm")
        return self.attack1 / self.attack0

    @property
    def protected_fraction(self):
        return 1.0 - self.doomed_fraction

    def check_monotone(self):
        if self.attack1 > self.attack0:
            raise ValidationError(
                f"attack1={self.attack1:.6g} > attack0={self.attack0:.6g}: "
                "data are incompatible with monotonicity")


@dataclass(frozen=True)
class ClusterData:
    cluster_id: str
    individual_ids: tuple[str, ...]
    z: np.ndarray
    y: np.ndarray
    l: np.ndarray  # (n_members, k)

    def __post_init__(self):
        n = len(self.individual_ids)
        if n < 2:
            raise ValidationError(f"cluster {self.cluster_id}: size {n} < 2")
        z = np.asarray(self.z, dtype=float)
        y = np.asarray(self.y, dtype=float)
        l = np.asarray(self.l, dtype=float)
        if l.ndim == 1:
            l = l.reshape(n, -1)
        if z.shape != (n,) or y.shape != (n,) or l.shape[0] != n:
            raise ValidationError(f"cluster {self.cluster_id}: ragged member arrays")
        if not np.isin(z, (0.0, 1.0)).all():
            raise ValidationError(f"cluster {self.cluster_id}: z must be binary")
        for arr in (z, y, l):
            arr.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "l", l)

    @property
    def size(self):
        return len(self.individual_ids)


# -- exposure summaries ------------------------------------------------------

EXPOSURE_KINDS = ("mean-of-others", "count-of-others", "identity-vector")


@dataclass(frozen=True)
class ExposureSummaryFn:
    """Summary of the other cluster members' values.

    ``mean-of-others`` and ``count-of-others`` are permutation invariant;
    ``identity-vector`` returns the others' values in cluster order.
    """

    kind: str = "count-of-others"

    def __post_init__(self):
        if self.kind not in EXPOSURE_KINDS:
            raise ValidationError(f"unknown exposure summary kind {self.kind!r}")

    def __call__(self, values):
        """Apply to every member: row j summarizes all rows except j."""
        v = np.asarray(values, dtype=float)
        squeeze = v.ndim == 1
        if squeeze:
            v = v[:, None]
        n = v.shape[0]
        if self.kind == "identity-vector":
            out = np.stack([np.delete(v, j, axis=0).reshape(-1) for j in range(n)])
            return out
        others = v.sum(axis=0)[None, :] - v
        if self.kind == "mean-of-others":
            others = others / (n - 1)
        return others[:, 0] if squeeze else others

    def from_count(self, count, n):
        """Map a count of treated others to this summary's value."""
        if self.kind == "count-of-others":
            return count
        if self.kind == "mean-of-others":
            return count / (n - 1)
        raise ValidationError("identity-vector has no scalar count representation")

    @property
    def scalar(self):
        return self.kind != "identity-vector"


@dataclass(frozen=True)
class IndividualFeatures:
    """Flat per-individual regressors built from a collection of clusters."""

    cluster: np.ndarray   # cluster index, 0..m-1
    size: np.ndarray      # cluster size of each individual
    z: np.ndarray
    g: np.ndarray
    l: np.ndarray         # (N, k)
    h: np.ndarray         # (N, k') summary of others' covariates
    y: np.ndarray
    cluster_ids: tuple = field(default=())

    def __len__(self):
        return len(self.z)


def cluster_features(data, g=ExposureSummaryFn(), h=ExposureSummaryFn()):
    """Materialize (z, g, l, h, y) for every individual.

    ``data`` may be a single :class:`ClusterData` or an iterable of them.
    """
    clusters = [data] if isinstance(data, ClusterData) else list(data)
    if not clusters:
        raise ValidationError("no clusters")
    k = clusters[0].l.shape[1]
    if h.kind == "identity-vector" and len({c.size for c in clusters}) > 1:
        raise ValidationError("identity-vector covariate summary needs equal cluster sizes")
    parts = {"cluster": [], "size": [], "z": [], "g": [], "l": [], "h": [], "y": []}
    for idx, c in enumerate(clusters):
        if c.l.shape[1] != k:
            raise ValidationError(
                f"cluster {c.cluster_id}: covariate dimension {c.l.shape[1]} != {k}")
        parts["cluster"].append(np.full(c.size, idx))
        parts["size"].append(np.full(c.size, c.size))
        parts["z"].append(c.z)
        parts["g"].append(g(c.z))
        parts["l"].append(c.l)
        parts["h"].append(h(c.l))
        parts["y"].append(c.y)
    arrays = {key: np.concatenate(val) for key, val in parts.items()}
    return IndividualFeatures(cluster_ids=tuple(c.cluster_id for c in clusters), **arrays)


# -- delimited text ----------------------------------------------------------

def _rows(source, delimiter):
    if isinstance(source, str):
        source = io.StringIO(source)
    lines = (line for line in source if line.strip() and not line.lstrip().startswith("#"))
    return csv.reader(lines, delimiter=delimiter)


def _sniff_delimiter(text):
    first = next((ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")), "")
    return "\t" if "\t" in first else ","


def _read_text(source):
    return source if isinstance(source, str) else source.read()


def _header_index(header, required, row=1):
    header = [h.strip() for h in header]
    missing = [f for f in required if f not in header]
    if missing:
        raise ParseError(f"header lacks column(s) {', '.join(missing)}", row=row)
    return {name: header.index(name) for name in header}


def _as_int(text, name, row):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"{name}={text!r} is not a number", row=row) from None
    if not value.is_integer():
        raise ParseError(f"{name}={text!r} is not an integer", row=row)
    return int(value)


def _as_float(text, name, row):
    if text.strip() == "":
        raise ParseError(f"{name} is missing", row=row)
    try:
        return float(text)
    except ValueError:
        raise ParseError(f"{name}={text!r} is not a number", row=row) from None


def parse_group_summary(source, delimiter=None, strategy_labels=()):
    """Read a :class:`TrialTable` from delimited text.

    The header must name ``group_id, assignment, n_treated, cases_treated,
    n_control, cases_control``; other columns are ignored.  Row order is kept.
    """
    text = _read_text(source)
    delimiter = delimiter or _sniff_delimiter(text)
    rows = _rows(text, delimiter)
    try:
        header = next(rows)
    except StopIteration:
        raise ParseError("empty input") from None
    idx = _header_index(header, GROUP_FIELDS)
    groups = []
    for rownum, row in enumerate(rows, start=2):
        if len(row) < len(idx):
            raise ParseError(f"expected {len(idx)} fields, got {len(row)}", row=rownum)
        cells = {name: row[i].strip() for name, i in idx.items()}
        for name in GROUP_FIELDS:
            if cells[name] == "":
                raise ParseError(f"{name} is missing", row=rownum)
        try:
            groups.append(GroupSummary(
                group_id=cells["group_id"],
                assignment=cells["assignment"],
                **{name: _as_int(cells[name], name, rownum) for name in GROUP_FIELDS[2:]},
            ))
        except ParseError:
            raise
        except ValidationError as exc:
            raise ValidationError(f"row {rownum}: {exc}") from None
    return TrialTable(tuple(groups), tuple(strategy_labels))


def format_group_summary(table, delimiter=","):
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(GROUP_FIELDS)
    for g in table.groups:
        w.writerow([getattr(g, f) for f in GROUP_FIELDS])
    return buf.getvalue()


def parse_households(source, delimiter=None):
    text = _read_text(source)
    delimiter = delimiter or _sniff_delimiter(text)
    rows = _rows(text, delimiter)
    try:
        header = next(rows)
    except StopIteration:
        raise ParseError("empty input") from None
    idx = _header_index(header, HOUSEHOLD_FIELDS)
    out = []
    for rownum, row in enumerate(rows, start=2):
        if len(row) < len(idx):
            raise ParseError(f"expected {len(idx)} fields, got {len(row)}", row=rownum)
        hid = row[idx["household_id"]].strip()
        vals = [_as_int(row[idx[f]], f, rownum) for f in HOUSEHOLD_FIELDS[1:]]
        try:
            out.append(HouseholdRecord(hid, *vals))
        except ValidationError as exc:
            raise ParseError(str(exc), row=rownum) from None
    return out


def format_households(records, delimiter=","):
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(HOUSEHOLD_FIELDS)
    for r in records:
        w.writerow([r.household_id, r.z1, r.y1, r.y2])
    return buf.getvalue()


def parse_clusters(source, delimiter=None):
    """Read clusters from long-format text: one row per individual.

    Covariate columns are ``l_1 .. l_k``; rows of one cluster need not be
    contiguous, and clusters are returned in order of first appearance.
    """
    text = _read_text(source)
    delimiter = delimiter or _sniff_delimiter(text)
    rows = _rows(text, delimiter)
    try:
        header = [h.strip() for h in next(rows)]
    except StopIteration:
        raise ParseError("empty input") from None
    idx = _header_index(header, CLUSTER_FIELDS)
    lcols = sorted((c for c in header if c.startswith("l_")), key=lambda c: int(c[2:]))
    members: dict[str, list] = {}
    for rownum, row in enumerate(rows, start=2):
        if len(row) < len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", row=rownum)
        cid = row[idx["cluster_id"]].strip()
        z = _as_int(row[idx["z"]], "z", rownum)
        if z not in (0, 1):
            raise ParseError("z must be 0 or 1", row=rownum)
        members.setdefault(cid, []).append((
            row[idx["individual_id"]].strip(), z,
            _as_float(row[idx["y"]], "y", rownum),
            [_as_float(row[idx[c]], c, rownum) for c in lcols],
        ))
    if not members:
        raise ValidationError("no clusters")
    out = []
    for cid, ms in members.items():
        out.append(ClusterData(
            cluster_id=cid,
            individual_ids=tuple(m[0] for m in ms),
            z=np.array([m[1] for m in ms], dtype=float),
            y=np.array([m[2] for m in ms], dtype=float),
            l=np.array([m[3] for m in ms], dtype=float).reshape(len(ms), len(lcols)),
        ))
    return out


def format_clusters(clusters, delimiter=",", precision=17):
    clusters = list(clusters)
    k = clusters[0].l.shape[1] if clusters else 0
    buf = io.StringIO()
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(list(CLUSTER_FIELDS) + [f"l_{i + 1}" for i in range(k)])
    fmt = f"{{:.{precision}g}}"
    for c in clusters:
        for j, iid in enumerate(c.individual_ids):
            w.writerow([c.cluster_id, iid, int(c.z[j]), fmt.format(c.y[j])]
                       + [fmt.format(v) for v in c.l[j]])
    return buf.getvalue()


@dataclass(frozen=True)
class HouseholdSample:
    """Columnar collection of household records.

    Iterating yields :class:`HouseholdRecord` objects; the summaries read the
    arrays directly, which matters for samples of a million households.
    """

    household_id: np.ndarray
    z1: np.ndarray
    y1: np.ndarray
    y2: np.ndarray

    def __post_init__(self):
        for name in ("z1", "y1", "y2"):
            arr = np.asarray(getattr(self, name), dtype=np.int8)
            if not np.isin(arr, (0, 1)).all():
                raise ValidationError(f"{name} must be 0 or 1")
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.z1)

    def __iter__(self):
        for i, a, b, c in zip(self.household_id, self.z1, self.y1, self.y2):
            yield HouseholdRecord(str(i), int(a), int(b), int(c))

    @classmethod
    def from_records(cls, records):
        recs = list(records)
        return cls(np.array([r.household_id for r in recs], dtype=object),
                   np.array([r.z1 for r in recs]), np.array([r.y1 for r in recs]),
                   np.array([r.y2 for r in recs]))


def summarize_households(records: Iterable[HouseholdRecord]) -> InfectStudy:
    """Empirical secondary and index attack rates by index arm."""
    sample = records if isinstance(records, HouseholdSample) else HouseholdSample.from_records(records)
    if len(sample) == 0:
        raise EstimationError("no household records")
    z1, y1, y2 = sample.z1, sample.y1, sample.y2
    if not y1.any():
        raise EstimationError("no infected index cases")
    for arm in (1, 0):
        if not (z1 == arm).any():
            raise EstimationError(f"empty cell: no households with z1={arm}")
        if not ((z1 == arm) & (y1 == 1)).any():
            raise EstimationError(f"empty cell: no households with z1={arm}, y1=1")
    idx1 = (z1 == 1) & (y1 == 1)
    idx0 = (z1 == 0) & (y1 == 1)
    return InfectStudy(
        p1=float(y2[idx1].mean()),
        p0=float(y2[idx0].mean()),
        attack1=float(y1[z1 == 1].mean()),
        attack0=float(y1[z1 == 0].mean()),
        n_records=len(sample),
        n1=int(idx1.sum()),
        n0=int(idx0.sum()),
    )
