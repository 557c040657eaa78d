"""CSV ingestion and sample serialization.

Samples are headerless numeric CSV, one observation per row, with an optional
final integer label column. :func:`ingest_csv` also accepts files with a
header row and a named label column via :class:`CsvSchema`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError, ParseError
from .model import LabeledSample


@dataclass(frozen=True)
class CsvSchema:
    """How to read a CSV file.

    ``header``: the first row holds column names. ``label_column``: name (with
    header) or 0-based index (without) of the integer label column; None means
    all columns are data. ``last_column_labels`` treats the final column as
    labels without needing a name.
    """

    header: bool = False
    label_column: Optional[str | int] = None
    last_column_labels: bool = False


def ingest_csv(path, schema: CsvSchema = CsvSchema()) -> LabeledSample:
    """Parse a numeric CSV into a LabeledSample; reject bad cells with line numbers."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = [(i + 1, row) for i, row in enumerate(reader) if row and any(c.strip() for c in row)]
    if not rows:
        raise ParseError(f"{path}: file contains no data rows")

    label_idx: Optional[int] = None
    names: Optional[list[str]] = None
    if schema.header:
        header_line, header_row = rows[0]
        names = [c.strip() for c in header_row]
        rows = rows[1:]
        if not rows:
            raise ParseError(f"{path}: no data rows after header", line=header_line)
        if isinstance(schema.label_column, str):
            if schema.label_column not in names:
                raise ParseError(f"{path}: no column named {schema.label_column!r} in header")
            label_idx = names.index(schema.label_column)
    if isinstance(schema.label_column, int):
        label_idx = schema.label_column
    n_cols = len(rows[0][1])
    if schema.last_column_labels and label_idx is None:
        label_idx = n_cols - 1

    data_rows: list[list[float]] = []
    labels: list[int] = []
    for line_no, row in rows:
        if len(row) != n_cols:
            raise ParseError(
                f"{path}: expected {n_cols} columns, found {len(row)}", line=line_no
            )
        values = []
        for col_no, cell in enumerate(row):
            text = cell.strip()
            if col_no == label_idx:
                try:
                    labels.append(int(float(text)))
                except ValueError:
                    raise ParseError(
                        f"{path}: label cell {text!r} is not an integer",
                        line=line_no,
                        column=col_no + 1,
                    ) from None
                continue
            try:
                values.append(float(text))
            except ValueError:
                raise ParseError(
                    f"{path}: cell {text!r} is not numeric", line=line_no, column=col_no + 1
                ) from None
        data_rows.append(values)

    data = np.asarray(data_rows, dtype=float)
    if data.ndim != 2 or data.shape[1] < 1:
        raise ParseError(f"{path}: no numeric data columns found")
    label_arr = np.asarray(labels, dtype=int) if label_idx is not None else None
    try:
        return LabeledSample(data=data, labels=label_arr)
    except InvalidArgumentError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def write_sample_csv(path, sample: LabeledSample, include_labels: bool = True) -> None:
    """Headerless CSV, one observation per row; labels appended as a final integer column."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        with_labels = include_labels and sample.labels is not None
        for i in range(sample.n):
            row = [format(v, ".17g") for v in sample.data[i]]
            if with_labels:
                row.append(str(int(sample.labels[i])))
            writer.writerow(row)


def read_sample_csv(path, has_labels: bool = False) -> LabeledSample:
    """Read a headerless numeric CSV written by :func:`write_sample_csv`."""
    return ingest_csv(path, CsvSchema(header=False, last_column_labels=has_labels))
