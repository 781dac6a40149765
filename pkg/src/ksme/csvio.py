"""Versioned CSV files.

Every file starts with a comment line `# <schema> v<version>`. Readers
reject other schemas and versions. An optional trailing summary block is
written as comment lines after a `# summary` marker.
"""

import csv
import io
import math

from ksme.errors import ConfigError

VERSION = 1
SUMMARY_MARKER = "# summary"


class SchemaError(ConfigError):
    """A CSV file does not match the expected schema or version."""


def _cell(value):
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def _parse(value):
    for kind in (int, float):
        try:
            return kind(value)
        except ValueError:
            pass
    return value


def _csv_line(values):
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerow([_cell(v) for v in values])
    return buf.getvalue()


def header_line(schema):
    return f"# {schema} v{VERSION}\n"


def write_table(path, schema, fields, rows, summary=None):
    """Writes dict rows (and an optional (fields, rows) summary block)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(header_line(schema))
        fh.write(_csv_line(fields))
        for row in rows:
            fh.write(_csv_line([row[f] for f in fields]))
        if summary is not None:
            summary_fields, summary_rows = summary
            fh.write(SUMMARY_MARKER + "\n")
            fh.write("# " + _csv_line(summary_fields))
            for row in summary_rows:
                fh.write("# " + _csv_line([row[f] for f in summary_fields]))


def check_header(line, schema):
    expected = header_line(schema).strip()
    if line.strip() != expected:
        raise SchemaError(
            f"expected header {expected!r}, found {line.strip()!r}")


def read_table(path, schema, fields=None):
    """Returns (rows, summary_rows); both are lists of dicts."""
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as err:
        raise SchemaError(f"cannot read {path}: {err}") from err
    if not lines:
        raise SchemaError(f"{path} is empty")
    check_header(lines[0], schema)
    body, summary = [], []
    target = body
    for line in lines[1:]:
        if line == SUMMARY_MARKER:
            target = summary
        elif target is summary:
            target.append(line[2:] if line.startswith("# ") else line)
        elif line and not line.startswith("#"):
            target.append(line)
    if not body:
        raise SchemaError(f"{path} has no column header")
    reader = list(csv.reader(body))
    columns = reader[0]
    if fields is not None and tuple(columns) != tuple(fields):
        raise SchemaError(f"unexpected columns {columns}")
    rows = [dict(zip(columns, map(_parse, r))) for r in reader[1:]]
    summary_rows = []
    if summary:
        parsed = list(csv.reader(summary))
        summary_rows = [dict(zip(parsed[0], map(_parse, r)))
                        for r in parsed[1:]]
    return rows, summary_rows


def write_matrix(path, schema, matrix):
    """Square matrix with a leading state column."""
    n = len(matrix)
    fields = ["state"] + [str(j) for j in range(n)]
    rows = [dict(zip(fields, [i] + [float(v) for v in matrix[i]]))
            for i in range(n)]
    write_table(path, schema, fields, rows)


def read_matrix(path, schema):
    rows, _ = read_table(path, schema)
    return [[float(row[str(j)]) for j in range(len(rows))] for row in rows]


def write_embedding(path, emb, kind=None):
    """One row per class: class_index, member_states, f0..f{dim-1}."""
    kind = kind or emb.kind
    n_classes = emb.features.shape[0]
    members = [[] for _ in range(n_classes)]
    for state, c in enumerate(emb.class_of):
        members[c].append(str(state))
    fields = ["class_index", "member_states"] + [
        f"f{j}" for j in range(emb.features.shape[1])]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(header_line("ksme-embedding"))
        fh.write(f"# kind={kind}\n")
        fh.write(_csv_line(fields))
        for c in range(n_classes):
            fh.write(_csv_line([c, ";".join(members[c])] +
                               [float(v) for v in emb.features[c]]))


def read_embedding(path):
    """Returns (kind, class_of tuple, features as a list of rows)."""
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SchemaError(f"{path} is empty")
    check_header(lines[0], "ksme-embedding")
    kind = None
    if len(lines) > 1 and lines[1].startswith("# kind="):
        kind = lines[1][len("# kind="):]
    rows, _ = read_table(path, "ksme-embedding")
    assignment = {}
    features = []
    for row in rows:
        for state in str(row["member_states"]).split(";"):
            assignment[int(state)] = int(row["class_index"])
        features.append([float(v) for k, v in row.items()
                         if k.startswith("f")])
    class_of = tuple(assignment[s] for s in sorted(assignment))
    return kind, class_of, features
