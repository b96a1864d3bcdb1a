"""Long-format CSV ingest and export.

One row per (cluster, occasion): ``id, time, y, x1, ..., xp``.  An empty
``y`` field marks a missing response.  Occasions are numbered ``1..m`` and
every cluster must have all of them.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .dataset import LongitudinalDataset
from .errors import SchemaError

__all__ = ["LongCsvSchema", "ingest", "export"]


@dataclass(frozen=True)
class LongCsvSchema:
    """Column roles.  ``covariates=None`` takes every remaining column in header order."""

    id_col: str = "id"
    time_col: str = "time"
    y_col: str = "y"
    covariates: tuple | None = None


def _number(text, what, lineno):
    try:
        val = float(text)
    except ValueError:
        raise SchemaError(f"line {lineno}: non-numeric {what} {text!r}") from None
    if not math.isfinite(val):
        raise SchemaError(f"line {lineno}: non-finite {what} {text!r}")
    return val


def ingest(path, schema: LongCsvSchema | None = None) -> LongitudinalDataset:
    """Read a long CSV into a dataset.

    Clusters keep their first-appearance order; rows within a cluster are
    sorted by ``time``.  Cluster ids that all parse as integers become ints.

    Raises
    ------
    SchemaError
        Missing header columns, duplicate ``(id, time)``, a cluster lacking
        an occasion, non-numeric or empty covariates.
    """
    schema = schema or LongCsvSchema()
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file, header row required") from None
        for col in (schema.id_col, schema.time_col, schema.y_col):
            if col not in header:
                raise SchemaError(f"{path}: header lacks required column {col!r}")
        roles = {schema.id_col, schema.time_col, schema.y_col}
        cov_names = (
            tuple(h for h in header if h not in roles)
            if schema.covariates is None
            else tuple(schema.covariates)
        )
        if not cov_names:
            raise SchemaError(f"{path}: no covariate columns")
        missing = [c for c in cov_names if c not in header]
        if missing:
            raise SchemaError(f"{path}: header lacks covariate column(s) {missing}")
        i_id, i_t, i_y = (header.index(c) for c in (schema.id_col, schema.time_col, schema.y_col))
        i_x = [header.index(c) for c in cov_names]

        cells = {}
        order = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) != len(header):
                raise SchemaError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            cid = row[i_id].strip()
            if not cid:
                raise SchemaError(f"line {lineno}: empty cluster id")
            t = _number(row[i_t], "time", lineno)
            if t != int(t) or t < 1:
                raise SchemaError(f"line {lineno}: time must be a positive integer, got {row[i_t]!r}")
            t = int(t)
            ytext = row[i_y].strip()
            y = math.nan if ytext == "" else _number(ytext, "response", lineno)
            x = []
            for name, k in zip(cov_names, i_x):
                text = row[k].strip()
                if text == "":
                    raise SchemaError(f"line {lineno}: empty covariate {name!r}")
                x.append(_number(text, f"covariate {name!r}", lineno))
            if cid not in cells:
                cells[cid] = {}
                order.append(cid)
            if t in cells[cid]:
                raise SchemaError(f"line {lineno}: duplicate (id, time) = ({cid}, {t})")
            cells[cid][t] = (y, x)

    if not order:
        raise SchemaError(f"{path}: no data rows")
    m = max(max(c) for c in cells.values())
    for cid in order:
        for t in range(1, m + 1):
            if t not in cells[cid]:
                raise SchemaError(f"cluster {cid!r} lacks occasion time={t} (m={m})")

    n, p = len(order), len(cov_names)
    Y = np.empty((n, m))
    X = np.empty((n, m, p))
    for i, cid in enumerate(order):
        for t in range(1, m + 1):
            y, x = cells[cid][t]
            Y[i, t - 1] = y
            X[i, t - 1] = x
    observed = np.isfinite(Y).astype(np.int8)
    try:
        ids = [int(c) for c in order]
    except ValueError:
        ids = order
    return LongitudinalDataset(Y, X, observed, cluster_ids=ids, covariate_names=cov_names)


def export(dataset: LongitudinalDataset, path, schema: LongCsvSchema | None = None) -> None:
    """Write ``dataset`` as a long CSV; missing responses become empty fields."""
    schema = schema or LongCsvSchema()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([schema.id_col, schema.time_col, schema.y_col, *dataset.covariate_names])
        for i, cid in enumerate(dataset.cluster_ids):
            for j in range(dataset.m):
                y = repr(float(dataset.responses[i, j])) if dataset.observed[i, j] else ""
                w.writerow([cid, j + 1, y, *(repr(float(v)) for v in dataset.covariates[i, j])])
