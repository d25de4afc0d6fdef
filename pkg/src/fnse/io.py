"""On-disk artifacts: FNSE-FIELD v1 dumps, checksummed CSVs and solution directories."""
from __future__ import annotations

import csv
import hashlib
import io as _io
from pathlib import Path

import numpy as np

from . import fields as F

MAGIC = "FNSE-FIELD v1"
MANIFEST = "manifest.csv"


def write_field(path, field, t=0.0):
    """Write ``field`` as an FNSE-FIELD v1 dump.

    The header line is followed by little-endian float64 values in row-major
    node order with the component index running fastest.
    """
    g = field.grid
    header = f"{MAGIC} dim={g.dim} n={g.n} comps={field.comps} t={float(t)!r}\n"
    data = np.moveaxis(field.values, 0, -1).astype("<f8", copy=False)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(data).tobytes())


def read_field(path):
    """Read an FNSE-FIELD v1 dump; returns ``(PeriodicField, t)``."""
    raw = Path(path).read_bytes()
    end = raw.find(b"\n")
    if end < 0:
        raise ValueError(f"{path}: missing header line")
    head = raw[:end].decode("ascii")
    if not head.startswith(MAGIC + " "):
        raise ValueError(f"{path}: not an FNSE-FIELD v1 file")
    meta = dict(item.split("=", 1) for item in head[len(MAGIC) + 1:].split())
    try:
        dim, n, comps, t = int(meta["dim"]), int(meta["n"]), int(meta["comps"]), float(meta["t"])
    except KeyError as exc:
        raise ValueError(f"{path}: header lacks {exc.args[0]}") from None
    g = F.PeriodicGrid(dim, n)
    body = np.frombuffer(raw[end + 1:], dtype="<f8")
    if body.size != g.size * comps:
        raise ValueError(f"{path}: expected {g.size * comps} values, found {body.size}")
    vals = np.moveaxis(body.reshape(g.shape + (comps,)), -1, 0).astype(float)
    return F.PeriodicField(g, vals), t


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def csv_text(header, rows):
    """CSV text with a header and a ``# checksum:`` trailer over the data rows.

    The checksum is the SHA-256 of the data rows exactly as written.
    """
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    body = _io.StringIO()
    bw = csv.writer(body, lineterminator="\n")
    for r in rows:
        bw.writerow([_fmt(v) for v in r])
    data = body.getvalue()
    digest = hashlib.sha256(data.encode("utf-8")).hexdigest()
    return buf.getvalue() + data + f"# checksum: sha256:{digest}\n"


def write_csv(path, header, rows):
    """Write a checksummed CSV and return its checksum."""
    text = csv_text(header, rows)
    Path(path).write_text(text, encoding="utf-8")
    return text.rsplit("# checksum: ", 1)[1].strip()


def read_csv(path, verify=True):
    """Read a checksummed CSV; returns ``(header, rows, checksum)``.

    Raises ``ValueError`` if the trailer is missing or, with ``verify``,
    does not match the data rows.
    """
    lines = Path(path).read_text(encoding="utf-8").splitlines(keepends=True)
    if not lines or not lines[-1].startswith("# checksum: "):
        raise ValueError(f"{path}: missing checksum trailer")
    checksum = lines[-1][len("# checksum: "):].strip()
    data = "".join(lines[1:-1])
    if verify:
        digest = "sha256:" + hashlib.sha256(data.encode("utf-8")).hexdigest()
        if digest != checksum:
            raise ValueError(f"{path}: checksum mismatch")
    header = next(csv.reader([lines[0]]))
    rows = list(csv.reader(_io.StringIO(data)))
    return header, rows, checksum


def csv_checksum(path):
    return read_csv(path, verify=False)[2]


def field_slice_rows(field, axis_index=0):
    """Rows ``(i, [j,] x, [y,] value...)`` of a 1D field or a 2D field.

    3D fields are cut at ``x3 = 0``.
    """
    g = field.grid
    vals = field.values
    if g.dim == 3:
        vals = vals[..., axis_index]
    rows = []
    ax = g.axes
    if g.dim == 1:
        for i in range(g.n):
            rows.append([i, ax[i]] + list(vals[:, i]))
    else:
        for i in range(g.n):
            for j in range(g.n):
                rows.append([i, j, ax[i], ax[j]] + list(vals[:, i, j]))
    return rows


def write_field_csv(path, field):
    """CSV export of a 1D field, a 2D field or the ``x3 = 0`` slice of a 3D field."""
    comps = [f"u{c + 1}" for c in range(field.comps)]
    header = ["i", "x"] + comps if field.grid.dim == 1 else ["i", "j", "x", "y"] + comps
    return write_csv(path, header, field_slice_rows(field))


def write_estimate_csv(path, points, estimate):
    """CSV summary ``(node, mean, stderr)`` of a pointwise estimate."""
    mean = np.atleast_1d(np.asarray(estimate.mean))
    se = np.atleast_1d(np.asarray(estimate.stderr))
    pts = np.atleast_2d(np.asarray(points, float))
    mean = mean.reshape(pts.shape[0], -1)
    se = se.reshape(pts.shape[0], -1)
    nc = mean.shape[1]
    header = ["node"] + [f"x{j + 1}" for j in range(pts.shape[1])]
    header += [f"mean{c + 1}" for c in range(nc)] + [f"stderr{c + 1}" for c in range(nc)]
    rows = [[i] + list(pts[i]) + list(mean[i]) + list(se[i]) for i in range(pts.shape[0])]
    return write_csv(path, header, rows)


MANIFEST_HEADER = ["slice", "t", "file", "norm_p", "grad_norm_p", "iterations", "stderr_aggregate"]


def write_solution(directory, series, p=2.0, iterations=0, stderr=None):
    """Write a solution as FNSE-FIELD dumps plus ``manifest.csv``.

    Parameters
    ----------
    directory : path
    series : FieldSeries, VelocityHistory or SolutionHistory
    p : float
        Exponent of the norms in the manifest.
    iterations : int
        Picard iteration count recorded in every row.
    stderr : sequence of float, optional
        Aggregate standard error per slice (zero for deterministic runs).

    Returns
    -------
    str
        Checksum of the manifest.
    """
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    times = list(series.times)
    fields = list(series.fields) if hasattr(series, "fields") else list(series.slices)
    if stderr is None:
        stderr = [0.0] * len(times)
    rows = []
    for i, (t, f) in enumerate(zip(times, fields)):
        name = f"u_{i:04d}.fnse"
        write_field(d / name, f, t)
        rows.append([i, float(t), name, F.sobolev_norm(f, 0, p), F.sobolev_norm(f, 1, p),
                     int(iterations), float(stderr[i])])
    return write_csv(d / MANIFEST, MANIFEST_HEADER, rows)


def read_solution(directory):
    """Load a solution directory as a :class:`FieldSeries` plus its manifest rows."""
    d = Path(directory)
    header, rows, _ = read_csv(d / MANIFEST)
    col = {h: i for i, h in enumerate(header)}
    fields, times = [], []
    for r in rows:
        f, t = read_field(d / r[col["file"]])
        fields.append(f)
        times.append(t)
    return F.FieldSeries(np.array(times), fields), rows
