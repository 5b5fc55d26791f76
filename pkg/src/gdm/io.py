"""CSV ingestion and report serialization.

Single-table layout (UTF-8, header row)::

    subject_id,label[,site],cov_age,cov_sex,roi001,roi002,...

``cov_``-prefixed columns are covariates (prefix stripped), every other
column is a numeric feature.  The split form keeps features in one file
(``subject_id`` plus features) and labels, site and covariates in another,
joined on ``subject_id`` in the feature file's row order.

Floats are written with 17 significant digits, which round-trips binary64
exactly.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from gdm.core import Cohort
from gdm.errors import ValidationError

SUBJECT, LABEL, SITE = "subject_id", "label", "site"
COV_PREFIX = "cov_"


def fmt(value) -> str:
    """Exact text form of a number; strings and bools pass through."""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def _read_rows(path) -> tuple:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    try:
        with path.open(newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except UnicodeDecodeError as exc:
        raise ValidationError(f"{path}: not valid UTF-8 ({exc.reason})") from None
    rows = [r for r in rows if r]
    if not rows:
        raise ValidationError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        dup = next(h for h in header if header.count(h) > 1)
        raise ValidationError(f"{path}: duplicate column {dup!r}")
    body = rows[1:]
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise ValidationError(f"{path}: row {i + 2} has {len(r)} cells, header has {len(header)}")
    return header, body


def _numeric_block(path, header, body, columns) -> np.ndarray:
    """Parse the named columns as floats, reporting the first bad cell."""
    out = np.empty((len(body), len(columns)))
    for j, name in enumerate(columns):
        col = header.index(name)
        for i, row in enumerate(body):
            cell = row[col].strip()
            try:
                v = float(cell)
            except ValueError:
                raise ValidationError(
                    f"{Path(path).name}: non-numeric value {cell!r} at row {i + 2}, column {name!r}"
                ) from None
            if not math.isfinite(v):
                raise ValidationError(f"{Path(path).name}: non-finite value at row {i + 2}, column {name!r}")
            out[i, j] = v
    return out


def _parse_labels(values: Sequence[str]) -> np.ndarray:
    """Floats when every label parses as a number, strings otherwise."""
    try:
        nums = np.array([float(v) for v in values])
    except ValueError:
        return np.array([v.strip() for v in values])
    if not np.all(np.isfinite(nums)):
        raise ValidationError("labels contain non-finite entries")
    return nums


def _require(path, header, names):
    missing = [c for c in names if c not in header]
    if missing:
        raise ValidationError(f"{Path(path).name}: missing reserved column(s) {', '.join(missing)}")


def _meta_columns(path, header, body):
    """Labels, site and covariates from a table carrying the reserved columns."""
    _require(path, header, (SUBJECT, LABEL))
    ids = [r[header.index(SUBJECT)].strip() for r in body]
    labels = _parse_labels([r[header.index(LABEL)] for r in body])
    site = None
    if SITE in header:
        site = np.array([r[header.index(SITE)].strip() for r in body])
    cov_cols = [h for h in header if h.startswith(COV_PREFIX)]
    cov = _numeric_block(path, header, body, cov_cols)
    names = tuple(c[len(COV_PREFIX):] for c in cov_cols)
    return ids, labels, site, cov, names


def load_cohort(path) -> Cohort:
    """Read the single-table layout into a validated :class:`Cohort`."""
    header, body = _read_rows(path)
    ids, labels, site, cov, cov_names = _meta_columns(path, header, body)
    feat_cols = [h for h in header if h not in (SUBJECT, LABEL, SITE) and not h.startswith(COV_PREFIX)]
    if not feat_cols:
        raise ValidationError(f"{Path(path).name}: no feature columns")
    X = _numeric_block(path, header, body, feat_cols)
    return Cohort(features=X, labels_raw=labels, covariates_raw=cov, covariate_names=cov_names,
                  feature_names=tuple(feat_cols), subject_ids=tuple(ids), site=site)


def load_split(features_path, labels_path) -> Cohort:
    """Join a features table and a labels/covariates table on ``subject_id``."""
    fh, fb = _read_rows(features_path)
    _require(features_path, fh, (SUBJECT,))
    feat_cols = [h for h in fh if h != SUBJECT]
    if not feat_cols:
        raise ValidationError(f"{Path(features_path).name}: no feature columns")
    extra = [h for h in feat_cols if h in (LABEL, SITE) or h.startswith(COV_PREFIX)]
    if extra:
        raise ValidationError(f"{Path(features_path).name}: reserved column {extra[0]!r} in features file")
    X = _numeric_block(features_path, fh, fb, feat_cols)
    ids = [r[fh.index(SUBJECT)].strip() for r in fb]

    lh, lb = _read_rows(labels_path)
    unknown = [h for h in lh if h not in (SUBJECT, LABEL, SITE) and not h.startswith(COV_PREFIX)]
    if unknown:
        raise ValidationError(f"{Path(labels_path).name}: unexpected column {unknown[0]!r}")
    lids, labels, site, cov, cov_names = _meta_columns(labels_path, lh, lb)
    where = {}
    for i, s in enumerate(lids):
        if s in where:
            raise ValidationError(f"duplicate subject_id: {s!r}")
        where[s] = i
    missing = [s for s in ids if s not in where]
    if missing:
        raise ValidationError(f"subject_id {missing[0]!r} has features but no label row")
    order = np.array([where[s] for s in ids], dtype=int)
    return Cohort(features=X, labels_raw=labels[order], covariates_raw=cov[order],
                  covariate_names=cov_names, feature_names=tuple(feat_cols), subject_ids=tuple(ids),
                  site=None if site is None else site[order])


def save_cohort(cohort: Cohort, path) -> Path:
    """Write the single-table layout; ``load_cohort`` reads it back bit-identically."""
    header = [SUBJECT, LABEL]
    if cohort.site is not None:
        header.append(SITE)
    header += [COV_PREFIX + c for c in cohort.covariate_names]
    header += list(cohort.feature_names)
    rows = []
    for i in range(cohort.n):
        row = [cohort.subject_ids[i], fmt(cohort.labels_raw[i].item())]
        if cohort.site is not None:
            row.append(cohort.site[i])
        row += [fmt(v) for v in cohort.covariates_raw[i]]
        row += [fmt(v) for v in cohort.features[i]]
        rows.append(row)
    return write_table(path, header, rows)


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([fmt(v) for v in r])
    return path


def read_table(path) -> tuple:
    """Header and string rows of a CSV written by :func:`write_table`."""
    return _read_rows(path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def write_json(path, obj) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def read_json(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"no such file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
