"""Snapshot files: grid-sampled quintuples plus a plane-wave carrier sidecar.

A snapshot directory holds one ``<name>.dat`` file per quintuple field
(velocity, temperature, pressure, stress, flux).  Each file is plain text:

    # rank=<r> support=<rho> grid=<nt>x<nx1>x<nx2> box=<t0,t1,x10,x11,x20,x21>
    t x1 x2 re im [re im ...]

with one ``re im`` pair per tensor component (row-major), coordinates and
values printed with ``repr`` so a write/read/write cycle is byte-identical.
Rows whose components are all exactly zero are omitted; the reader fills
them back in, so compactly supported fields stay cheap on disk.  A reloaded
field is exactly zero beyond the grid box (writing with box = the support
cube therefore preserves compact support exactly); inside the box the
interpolant can leak up to two grid cells past the true support.

Next to each ``.dat`` file with wave content sits ``<name>.terms``, one line
per carrier pair:

    xi1 xi2 lambda w1 w2 sign

i.e. direction, frequency, advection velocity and conjugation sign of the
carrier ``e^{i sign lambda (xi.(x - w t))}``.  The sidecar is a manifest of
the oscillatory structure: the grid rows already contain the full field
values, so reloading yields an interpolated field (plus the carrier list as
metadata), not the original term tree.  The information lost to sampling is
measured at write time against the source field and reported in the
directory's ``quality`` file; residual budgets downstream account for it.
"""

from __future__ import annotations

import os
import re

import numpy as np

from .construction import FlowState
from .fields import GridAmplitude, WaveField

FIELD_NAMES = ("velocity", "temperature", "pressure", "stress", "flux")

_RANK_SHAPES = {0: (), 1: (2,), 2: (2, 2)}

_HEADER_RE = re.compile(
    r"^# rank=(\d+) support=(\S+) grid=(\d+)x(\d+)x(\d+) box=(\S+)$"
)


class SnapshotError(RuntimeError):
    """Malformed snapshot file or an export too large to materialize."""


def _fmt(x):
    return repr(float(x))


def _axes(box, ns):
    return [np.linspace(box[a][0], box[a][1], ns[a]) for a in range(3)]


def _grid_points(box, ns):
    tt, x1, x2 = np.meshgrid(*_axes(box, ns), indexing="ij")
    return np.stack([tt.ravel(), x1.ravel(), x2.ravel()], axis=1)


def carrier_rows(field: WaveField, cap=200000):
    """(xi1, xi2, lambda, w1, w2, sign) for every wave term, lattices included."""
    try:
        terms = field.materialized_terms(cap)
    except ValueError as exc:
        raise SnapshotError(
            f"{exc}; use sparser lattice families or raise term_cap"
        ) from None
    return [
        (
            float(t.xi[0]),
            float(t.xi[1]),
            float(t.freq),
            float(t.vel[0]),
            float(t.vel[1]),
            int(t.sign),
        )
        for t in terms
    ]


def write_field(path, field: WaveField, box, ns, *, term_cap=200000,
                check_samples=200, check_seed=0):
    """Sample ``field`` on the grid and write ``path`` (+ ``path + '.terms'``).

    Returns a dict with the carrier count and the measured interpolation
    error ``max |field - reloaded|`` at ``check_samples`` random points.
    """

    box = [(float(lo), float(hi)) for lo, hi in box]
    ns = tuple(int(n) for n in ns)
    if any(n < 2 for n in ns):
        raise SnapshotError(f"grid {ns} too small: need at least 2 nodes per axis")
    pts = _grid_points(box, ns)
    data = field.eval(pts).reshape(ns + tuple(field.vshape))

    rank = len(field.vshape)
    rho = field.support_radius if field.support_radius is not None else max(
        abs(v) for pair in box for v in pair
    )
    header = "# rank={} support={} grid={}x{}x{} box={}\n".format(
        rank, _fmt(rho), ns[0], ns[1], ns[2],
        ",".join(_fmt(v) for pair in box for v in pair),
    )

    flat = data.reshape(ns + (-1,))
    with open(path, "w") as fh:
        fh.write(header)
        k = 0
        for it in range(ns[0]):
            for i1 in range(ns[1]):
                for i2 in range(ns[2]):
                    comps = flat[it, i1, i2]
                    if not comps.any():
                        k += 1
                        continue
                    coords = pts[k]
                    k += 1
                    row = [_fmt(coords[0]), _fmt(coords[1]), _fmt(coords[2])]
                    for c in comps:
                        row.append(_fmt(c.real))
                        row.append(_fmt(c.imag))
                    fh.write(" ".join(row) + "\n")

    carriers = carrier_rows(field, term_cap)
    terms_path = str(path) + ".terms"
    if carriers:
        with open(terms_path, "w") as fh:
            for c in carriers:
                fh.write(" ".join(_fmt(v) for v in c[:5]) + f" {c[5]:d}\n")
    elif os.path.exists(terms_path):
        os.remove(terms_path)

    err = 0.0
    if check_samples:
        reloaded, _ = read_field(path)
        rng = np.random.default_rng(check_seed)
        lo = np.array([p[0] for p in box])
        hi = np.array([p[1] for p in box])
        probe = lo + rng.random((check_samples, 3)) * (hi - lo)
        diff = field.eval(probe) - reloaded.eval(probe)
        err = float(np.max(np.abs(diff)))
    return {"carriers": len(carriers), "interp_error": err,
            "samples": int(check_samples)}


def _parse_header(line, path):
    m = _HEADER_RE.match(line.strip())
    if m is None:
        raise SnapshotError(f"{path}: bad header line {line!r}")
    rank = int(m.group(1))
    if rank not in _RANK_SHAPES:
        raise SnapshotError(f"{path}: unsupported rank {rank}")
    support = float(m.group(2))
    ns = (int(m.group(3)), int(m.group(4)), int(m.group(5)))
    vals = [float(v) for v in m.group(6).split(",")]
    if len(vals) != 6:
        raise SnapshotError(f"{path}: box needs 6 numbers, got {len(vals)}")
    box = [(vals[0], vals[1]), (vals[2], vals[3]), (vals[4], vals[5])]
    return rank, support, ns, box


def read_field(path):
    """Reload a ``.dat`` file → (WaveField, meta).

    The field's amplitude is a tricubic interpolant of the stored grid; meta
    carries the header values and the sidecar carrier list (possibly empty).
    """

    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise SnapshotError(f"{path}: empty file")
    rank, support, ns, box = _parse_header(lines[0], path)
    vshape = _RANK_SHAPES[rank]
    ncomp = int(np.prod(vshape, dtype=int))
    data = np.zeros(ns + vshape, dtype=complex)
    flat = data.reshape(ns + (ncomp,))
    hs = [(box[a][1] - box[a][0]) / (ns[a] - 1) for a in range(3)]

    want = 3 + 2 * ncomp
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip() or line.startswith("#"):
            continue
        tok = line.split()
        if len(tok) != want:
            raise SnapshotError(
                f"{path}:{lineno}: expected {want} numbers, got {len(tok)}"
            )
        try:
            vals = [float(t) for t in tok]
        except ValueError:
            raise SnapshotError(f"{path}:{lineno}: non-numeric entry") from None
        idx = []
        for a in range(3):
            i = int(round((vals[a] - box[a][0]) / hs[a]))
            if not (0 <= i < ns[a]) or abs(box[a][0] + i * hs[a] - vals[a]) > 0.25 * hs[a]:
                raise SnapshotError(
                    f"{path}:{lineno}: coordinate {vals[a]!r} is off the grid"
                )
            idx.append(i)
        flat[tuple(idx)] = [
            complex(vals[3 + 2 * j], vals[4 + 2 * j]) for j in range(ncomp)
        ]

    amp = GridAmplitude(box, data, "cubic")
    fld = WaveField(vshape, amp, support_radius=support)

    carriers = []
    terms_path = str(path) + ".terms"
    if os.path.exists(terms_path):
        with open(terms_path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                tok = line.split()
                if len(tok) != 6:
                    raise SnapshotError(
                        f"{terms_path}:{lineno}: carrier lines have 6 entries"
                    )
                xi1, xi2, lam, w1, w2 = (float(t) for t in tok[:5])
                carriers.append((xi1, xi2, lam, w1, w2, int(float(tok[5]))))
    meta = {"rank": rank, "support": support, "ns": ns, "box": box,
            "carriers": carriers}
    return fld, meta


def _odd(n):
    n = max(int(n), 5)
    return n if n % 2 == 1 else n + 1


def grid_shape(box, step, nyquist_factor=1.0):
    """Node counts for ``step / nyquist_factor`` sampling of ``box``."""
    eff = float(step) / float(nyquist_factor)
    return tuple(_odd(round((hi - lo) / eff) + 1) for lo, hi in box)


def write_snapshot(dirpath, state: FlowState, *, box=None, ns=None, step=None,
                   nyquist_factor=1.0, term_cap=200000, check_samples=200):
    """Write the five quintuple fields of ``state`` under ``dirpath``.

    The grid covers ``box`` (default: the state's support cube) with ``ns``
    nodes per axis — given directly or derived from a spatial ``step`` via
    :func:`grid_shape`.  Sampling quality per field goes to ``quality``.
    """

    if box is None:
        rho = state.support_radius
        box = [(-rho, rho)] * 3
    if ns is None:
        ns = grid_shape(box, step, nyquist_factor) if step else (17, 33, 33)
    os.makedirs(dirpath, exist_ok=True)
    meta = {}
    for name in FIELD_NAMES:
        meta[name] = write_field(
            os.path.join(dirpath, name + ".dat"),
            getattr(state, name), box, ns,
            term_cap=term_cap, check_samples=check_samples,
        )
    with open(os.path.join(dirpath, "quality"), "w") as fh:
        for name in FIELD_NAMES:
            m = meta[name]
            fh.write(f"{name} {_fmt(m['interp_error'])} {m['samples']:d}\n")
    return meta


def read_snapshot(dirpath):
    """Reload a snapshot directory → (FlowState, meta dict per field)."""
    if not os.path.isdir(dirpath):
        raise SnapshotError(f"{dirpath}: not a snapshot directory")
    fields = {}
    meta = {}
    for name in FIELD_NAMES:
        path = os.path.join(dirpath, name + ".dat")
        if not os.path.exists(path):
            raise SnapshotError(f"{dirpath}: missing {name}.dat")
        fields[name], meta[name] = read_field(path)
    qpath = os.path.join(dirpath, "quality")
    if os.path.exists(qpath):
        with open(qpath) as fh:
            for line in fh:
                tok = line.split()
                if len(tok) == 3 and tok[0] in meta:
                    meta[tok[0]]["interp_error"] = float(tok[1])
    state = FlowState(
        support_radius=max(meta[n]["support"] for n in FIELD_NAMES),
        **fields,
    )
    return state, meta
