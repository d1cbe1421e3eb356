"""Demonstration records, on-disk format, splitting, windowing and normalisation.

On-disk layout (one directory per dataset)::

    <dir>/<demo_id>.tsv        one demonstration, tab separated
    <dir>/<demo_id>.calib.tsv  optional camera calibration sidecar

A demonstration file starts with the line ``# dlfd-dataset v1`` followed by a
header row. Required columns, in order: ``t``, ``z0..z{d-1}``, ``s0..s13``,
``a0..a6``. Optional groups ``th_l0..5``, ``th_r0..5``, ``g0..g11`` and
``h0..h2`` follow when present. Reals are written with ``repr`` so they
round-trip bit-exactly.

State layout ``s`` (14): left (manipulating) arm position xyz, quaternion
wxyz, then right (needle) arm position xyz, quaternion wxyz.
Action layout ``a`` (7): position increment of the left arm, then its
next-step quaternion wxyz.

The calibration sidecar starts with ``# dlfd-calib v1`` and holds one row of
12 reals (row-major 3x4 extrinsic) per camera, in camera-index order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from .errors import InputError, ParseError, ShapeError

DATASET_HEADER = "# dlfd-dataset v1"
CALIB_HEADER = "# dlfd-calib v1"
STATE_DIM = 14
ACTION_DIM = 7
CALIB_DIM = 12
QUAT_TOL = 1e-9

_OPTIONAL_GROUPS = (("theta_l", "th_l", 6), ("theta_r", "th_r", 6), ("g", "g", 12), ("h", "h", 3))


def _unit(q, tol=QUAT_TOL):
    return abs(float(np.dot(q, q)) - 1.0) <= 2 * tol


@dataclass(frozen=True, eq=False)
class DemonstrationRecord:
    """One timestep of a demonstration."""

    t: int
    z: np.ndarray
    s: np.ndarray
    a: np.ndarray
    theta_l: Optional[np.ndarray] = None
    theta_r: Optional[np.ndarray] = None
    g: Optional[np.ndarray] = None
    h: Optional[np.ndarray] = None

    def __post_init__(self):
        for name in ("z", "s", "a", "theta_l", "theta_r", "g", "h"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, np.asarray(v, dtype=float).reshape(-1))
        if self.s.shape != (STATE_DIM,):
            raise InputError(f"record t={self.t}: state must have {STATE_DIM} entries")
        if self.a.shape != (ACTION_DIM,):
            raise InputError(f"record t={self.t}: action must have {ACTION_DIM} entries")
        for label, q in (("s[3:7]", self.s[3:7]), ("s[10:14]", self.s[10:14]), ("a[3:7]", self.a[3:7])):
            if not _unit(q):
                raise InputError(f"record t={self.t}: quaternion {label} is not unit norm")

    def same_as(self, other: "DemonstrationRecord") -> bool:
        """Field-exact comparison (bitwise on floats)."""
        if self.t != other.t:
            return False
        for name in ("z", "s", "a", "theta_l", "theta_r", "g", "h"):
            x, y = getattr(self, name), getattr(other, name)
            if (x is None) != (y is None):
                return False
            if x is not None and (x.shape != y.shape or x.tobytes() != y.tobytes()):
                return False
        return True


@dataclass(frozen=True, eq=False)
class Demonstration:
    demo_id: str
    records: tuple
    calib: Optional[np.ndarray] = None

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if not self.records:
            raise InputError(f"demonstration {self.demo_id!r} is empty")
        zdim = self.records[0].z.shape
        for i, r in enumerate(self.records):
            if r.t != i:
                raise InputError(f"demonstration {self.demo_id!r}: t must run 0,1,2,... (got {r.t} at {i})")
            if r.z.shape != zdim:
                raise InputError(f"demonstration {self.demo_id!r}: feature width changes at t={r.t}")
        if self.calib is not None:
            c = np.asarray(self.calib, dtype=float).reshape(-1, CALIB_DIM)
            object.__setattr__(self, "calib", c)

    def __len__(self):
        return len(self.records)

    @property
    def z_dim(self) -> int:
        return self.records[0].z.shape[0]

    def array(self, name: str) -> np.ndarray:
        return np.stack([getattr(r, name) for r in self.records])

    def same_as(self, other: "Demonstration") -> bool:
        if self.demo_id != other.demo_id or len(self) != len(other):
            return False
        if (self.calib is None) != (other.calib is None):
            return False
        if self.calib is not None and self.calib.tobytes() != other.calib.tobytes():
            return False
        return all(a.same_as(b) for a, b in zip(self.records, other.records))


# --------------------------------------------------------------------- file I/O


def _fmt(x: float) -> str:
    return repr(float(x))


def _columns(demo: Demonstration) -> list:
    r0 = demo.records[0]
    cols = ["t"] + [f"z{i}" for i in range(demo.z_dim)]
    cols += [f"s{i}" for i in range(STATE_DIM)] + [f"a{i}" for i in range(ACTION_DIM)]
    for attr, prefix, width in _OPTIONAL_GROUPS:
        if getattr(r0, attr) is not None:
            cols += [f"{prefix}{i}" for i in range(width)]
    return cols


def save_demo(demo: Demonstration, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cols = _columns(demo)
    groups = [attr for attr, _, _ in _OPTIONAL_GROUPS if getattr(demo.records[0], attr) is not None]
    lines = [DATASET_HEADER, "\t".join(cols)]
    for r in demo.records:
        if any(getattr(r, attr) is None for attr in groups):
            raise InputError(f"demonstration {demo.demo_id!r}: optional fields must be present on every record")
        vals = [str(r.t)] + [_fmt(v) for v in r.z] + [_fmt(v) for v in r.s] + [_fmt(v) for v in r.a]
        for attr in groups:
            vals += [_fmt(v) for v in getattr(r, attr)]
        lines.append("\t".join(vals))
    path = directory / f"{demo.demo_id}.tsv"
    path.write_text("\n".join(lines) + "\n")
    if demo.calib is not None:
        rows = [CALIB_HEADER] + ["\t".join(_fmt(v) for v in row) for row in demo.calib]
        (directory / f"{demo.demo_id}.calib.tsv").write_text("\n".join(rows) + "\n")
    return path


def save_dataset(demos: Sequence[Demonstration], directory) -> list:
    ids = [d.demo_id for d in demos]
    if len(set(ids)) != len(ids):
        raise InputError("demonstration ids must be unique")
    return [save_demo(d, directory) for d in demos]


def _group(header, prefix, fname, required_width=None):
    idx = []
    i = 0
    while f"{prefix}{i}" in header:
        idx.append(header[f"{prefix}{i}"])
        i += 1
    if required_width is not None and len(idx) != required_width:
        missing = f"{prefix}{len(idx)}"
        raise ParseError(f"{fname}:2: missing required column {missing!r}")
    return idx


def _parse_float(tok, fname, lineno):
    try:
        v = float(tok)
    except ValueError:
        raise ParseError(f"{fname}:{lineno}: not a number: {tok!r}") from None
    if not math.isfinite(v):
        raise ParseError(f"{fname}:{lineno}: non-finite value {tok!r}")
    return v


def load_demo(path) -> Demonstration:
    path = Path(path)
    fname = path.name
    lines = path.read_text().splitlines()
    if not lines or lines[0].strip() != DATASET_HEADER:
        raise ParseError(f"{fname}:1: expected version line {DATASET_HEADER!r}")
    if len(lines) < 2:
        raise ParseError(f"{fname}:2: missing header row")
    names = lines[1].split("\t")
    header = {n: i for i, n in enumerate(names)}
    if len(header) != len(names):
        raise ParseError(f"{fname}:2: duplicate column names")
    if "t" not in header:
        raise ParseError(f"{fname}:2: missing required column 't'")
    zi = _group(header, "z", fname)
    if not zi:
        raise ParseError(f"{fname}:2: missing required column 'z0'")
    si = _group(header, "s", fname, STATE_DIM)
    ai = _group(header, "a", fname, ACTION_DIM)
    opt = []
    for attr, prefix, width in _OPTIONAL_GROUPS:
        if f"{prefix}0" in header:
            opt.append((attr, _group(header, prefix, fname, width)))
    used = 1 + len(zi) + len(si) + len(ai) + sum(len(ix) for _, ix in opt)
    if used != len(names):
        raise ParseError(f"{fname}:2: unrecognised columns in header")

    records = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        toks = line.split("\t")
        if len(toks) != len(names):
            raise ParseError(f"{fname}:{lineno}: expected {len(names)} fields, got {len(toks)}")
        try:
            t = int(toks[header["t"]])
        except ValueError:
            raise ParseError(f"{fname}:{lineno}: bad timestep {toks[header['t']]!r}") from None
        vals = [_parse_float(tok, fname, lineno) if i != header["t"] else 0.0 for i, tok in enumerate(toks)]
        row = np.array(vals)
        kw = {attr: row[ix] for attr, ix in opt}
        try:
            records.append(DemonstrationRecord(t=t, z=row[zi], s=row[si], a=row[ai], **kw))
        except InputError as e:
            raise ParseError(f"{fname}:{lineno}: {e}") from None

    calib = None
    cpath = path.with_name(path.name[: -len(".tsv")] + ".calib.tsv")
    if cpath.exists():
        clines = cpath.read_text().splitlines()
        if not clines or clines[0].strip() != CALIB_HEADER:
            raise ParseError(f"{cpath.name}:1: expected version line {CALIB_HEADER!r}")
        rows = []
        for lineno, line in enumerate(clines[1:], start=2):
            if not line.strip():
                continue
            toks = line.split("\t")
            if len(toks) != CALIB_DIM:
                raise ParseError(f"{cpath.name}:{lineno}: expected {CALIB_DIM} fields, got {len(toks)}")
            rows.append([_parse_float(tok, cpath.name, lineno) for tok in toks])
        calib = np.array(rows).reshape(-1, CALIB_DIM)
    try:
        return Demonstration(demo_id=path.name[: -len(".tsv")], records=records, calib=calib)
    except InputError as e:
        raise ParseError(f"{fname}: {e}") from None


def load_dataset(path) -> list:
    """Load every demonstration file in a directory, sorted by file name."""
    path = Path(path)
    if path.is_file():
        return [load_demo(path)]
    if not path.is_dir():
        raise InputError(f"dataset path does not exist: {path}")
    files = sorted(p for p in path.iterdir() if p.name.endswith(".tsv") and not p.name.endswith(".calib.tsv"))
    if not files:
        raise InputError(f"no demonstration files in {path}")
    return [load_demo(p) for p in files]


# --------------------------------------------------------------------- splitting


def split(demos: Sequence[Demonstration], seed: int):
    """Demonstration-level (fit, validation, test) partition.

    20% of demonstrations (floor) go to test, then 30% (floor) of the rest to
    validation. Each partition keeps the original dataset order.
    """
    n = len(demos)
    if n < 5:
        raise InputError(f"need at least 5 demonstrations to split, got {n}")
    perm = np.random.default_rng(seed).permutation(n)
    n_test = n // 5
    test_idx = perm[:n_test]
    train_idx = perm[n_test:]
    n_val = (3 * len(train_idx)) // 10
    val_idx = train_idx[:n_val]
    fit_idx = train_idx[n_val:]
    pick = lambda idx: [demos[i] for i in sorted(idx)]
    return pick(fit_idx), pick(val_idx), pick(test_idx)


# --------------------------------------------------------------------- windowing


@dataclass(frozen=True)
class WindowedSample:
    input: np.ndarray
    target: np.ndarray
    demo_id: str
    t: int


@dataclass(frozen=True, eq=False)
class WindowedDemo:
    """All windows of one demonstration, in temporal order.

    Row ``i`` of ``X`` is the input for target ``Y[i] = a_{ts[i]}``.
    """

    demo_id: str
    X: np.ndarray
    Y: np.ndarray
    ts: np.ndarray
    N: int
    step_dim: int = 0
    calib_dim: int = 0

    def __len__(self):
        return self.X.shape[0]

    def samples(self) -> Iterator[WindowedSample]:
        for x, y, t in zip(self.X, self.Y, self.ts):
            yield WindowedSample(input=x, target=y, demo_id=self.demo_id, t=int(t))

    def sequence_view(self) -> np.ndarray:
        """Inputs reshaped to (samples, N, step_dim + calib_dim) for recurrent models."""
        return sequence_view(self.X, self.N, self.step_dim, self.calib_dim)

    def with_inputs(self, X) -> "WindowedDemo":
        return WindowedDemo(self.demo_id, X, self.Y, self.ts, self.N, self.step_dim, self.calib_dim)

    def with_targets(self, Y) -> "WindowedDemo":
        return WindowedDemo(self.demo_id, self.X, Y, self.ts, self.N, self.step_dim, self.calib_dim)


def sequence_view(X, N: int, step_dim: int, calib_dim: int = 0) -> np.ndarray:
    """Flat windows ``(samples, N*step_dim + calib_dim)`` as ``(samples, N,
    step_dim + calib_dim)``; the calibration block is repeated at every step."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    if X.ndim != 2 or X.shape[1] != N * step_dim + calib_dim:
        raise ShapeError(f"windows of width {N * step_dim + calib_dim} expected, got {X.shape}")
    steps = X[:, : N * step_dim].reshape(n, N, step_dim)
    if calib_dim:
        calib = np.broadcast_to(X[:, None, N * step_dim:], (n, N, calib_dim))
        steps = np.concatenate([steps, calib], axis=2)
    return steps


def make_windows(demos: Sequence[Demonstration], N: int) -> list:
    """Slice every demonstration into supervised samples.

    The input for target ``a_t`` is ``[z_{t-N}, s_{t-N}, ..., z_{t-1}, s_{t-1}, calib]``.
    """
    if N < 1:
        raise InputError("memory window N must be >= 1")
    out = []
    for d in demos:
        T = len(d)
        if T <= N:
            raise InputError(f"demonstration {d.demo_id!r} has {T} records; window N={N} needs at least {N + 1}")
        steps = np.concatenate([d.array("z"), d.array("s")], axis=1)
        A = d.array("a")
        ts = np.arange(N, T)
        X = np.stack([steps[t - N:t].reshape(-1) for t in ts])
        calib_dim = 0
        if d.calib is not None:
            c = d.calib.reshape(-1)
            calib_dim = c.size
            X = np.concatenate([X, np.broadcast_to(c, (X.shape[0], c.size))], axis=1)
        out.append(WindowedDemo(d.demo_id, X, A[N:T].copy(), ts, N, steps.shape[1], calib_dim))
    widths = {w.X.shape[1] for w in out}
    if len(widths) > 1:
        raise InputError(f"inconsistent window widths across demonstrations: {sorted(widths)}")
    return out


# --------------------------------------------------------------------- normalisation

STD_FLOOR = 1e-12


@dataclass(frozen=True, eq=False)
class Normalizer:
    """Per-coordinate affine input map fitted on training windows.

    Target statistics are recorded for labelled reporting only; targets are
    never transformed.
    """

    mean: np.ndarray
    std: np.ndarray
    target_mean: np.ndarray = field(default=None)
    target_std: np.ndarray = field(default=None)

    def transform(self, X):
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def to_dict(self) -> dict:
        d = {"mean": self.mean.tolist(), "std": self.std.tolist()}
        if self.target_mean is not None:
            d["target_mean"] = self.target_mean.tolist()
            d["target_std"] = self.target_std.tolist()
        return d

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        tm = d.get("target_mean")
        ts = d.get("target_std")
        return cls(np.array(d["mean"], dtype=float), np.array(d["std"], dtype=float),
                   None if tm is None else np.array(tm, dtype=float),
                   None if ts is None else np.array(ts, dtype=float))


def _safe_std(x):
    s = x.std(axis=0)
    return np.where(s < STD_FLOOR, 1.0, s)


def fit_normalizer(train: Sequence[WindowedDemo]) -> Normalizer:
    if not train:
        raise InputError("cannot fit a normalizer on an empty training set")
    X = np.concatenate([w.X for w in train])
    Y = np.concatenate([w.Y for w in train])
    return Normalizer(X.mean(axis=0), _safe_std(X), Y.mean(axis=0), _safe_std(Y))


def apply(norm: Normalizer, samples: Sequence[WindowedDemo]) -> list:
    return [w.with_inputs(norm.transform(w.X)) for w in samples]


@dataclass(frozen=True, eq=False)
class TargetScaler:
    """Affine target encoding used inside trainers: ``encode(y) = (y - mean) / std``.

    Columns that are constant on the training set get ``scale = 0``: they
    encode to 0 and decode to their training value exactly.
    """

    mean: np.ndarray
    scale: np.ndarray

    def encode(self, Y) -> np.ndarray:
        return (np.asarray(Y, dtype=float) - self.mean) / np.where(self.scale > 0, self.scale, 1.0)

    def decode(self, Yn) -> np.ndarray:
        return np.asarray(Yn, dtype=float) * self.scale + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d) -> "TargetScaler":
        return cls(np.array(d["mean"], dtype=float), np.array(d["scale"], dtype=float))


def fit_target_scaler(train: Sequence[WindowedDemo]) -> TargetScaler:
    if not train:
        raise InputError("cannot fit a target scaler on an empty training set")
    Y = np.concatenate([w.Y for w in train])
    s = Y.std(axis=0)
    const = s < STD_FLOOR
    # the column's own value, not its mean, so decoding is exact
    mean = np.where(const, Y[0], Y.mean(axis=0))
    return TargetScaler(mean, np.where(const, 0.0, s))


def dataset_digest(path) -> str:
    """SHA-256 over the dataset directory's files (names and bytes)."""
    import hashlib

    path = Path(path)
    h = hashlib.sha256()
    files = [path] if path.is_file() else sorted(p for p in path.iterdir() if p.name.endswith(".tsv"))
    for p in files:
        h.update(p.name.encode() + b"\0")
        h.update(p.read_bytes())
    return h.hexdigest()
