"""Target sample sets and the physical <-> normalized coordinate transform.

The coverage objective is evaluated on a dimensionless domain. Samples are
translated so their bounding-box minimum sits at the origin and divided by
the extent e, the largest per-axis span. A single scalar extent (rather than
per-axis scaling) keeps isotropic kernel semantics intact; the translation
does not change pairwise distances.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

log = logging.getLogger(__name__)


class DegenerateDomain(ValueError):
    """Sample set has zero extent or too few points to define a domain."""


class ParseError(ValueError):
    """A domain file could not be parsed; carries file and line context."""

    def __init__(self, path, lineno: Optional[int], message: str):
        self.path = str(path)
        self.lineno = lineno
        where = f"{path}:{lineno}" if lineno is not None else str(path)
        super().__init__(f"{where}: {message}")


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class DomainSamples:
    """Weighted target points in physical units.

    Weights are normalized to sum to one at construction; omitted weights
    default to uniform 1/M.
    """

    points: np.ndarray  # (M, d)
    weights: np.ndarray  # (M,), nonnegative, sums to 1

    def __init__(self, points, weights=None):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.ndim != 2:
            raise ValueError(f"points must be a (M, d) array, got shape {points.shape}")
        M, d = points.shape
        if M < 2:
            raise DegenerateDomain(f"need at least 2 sample points, got {M}")
        if d < 1:
            raise ValueError("points must have at least one coordinate")
        if not np.isfinite(points).all():
            raise ValueError("sample points contain NaN or Inf")
        if weights is None:
            weights = np.full(M, 1.0 / M)
        else:
            weights = np.asarray(weights, dtype=float).ravel()
            if weights.shape != (M,):
                raise ValueError(f"expected {M} weights, got {weights.shape}")
            if not np.isfinite(weights).all():
                raise ValueError("weights contain NaN or Inf")
            if (weights < 0).any():
                raise ValueError("weights must be nonnegative")
            total = weights.sum()
            if total <= 0:
                raise ValueError("weights sum to zero")
            weights = weights / total
        object.__setattr__(self, "points", _readonly(points))
        object.__setattr__(self, "weights", _readonly(weights))

    @property
    def num_points(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def scaled(self, s: float) -> "DomainSamples":
        """Copy with all coordinates multiplied by s (weights unchanged)."""
        return DomainSamples(self.points * float(s), self.weights)


def compute_extent(samples: DomainSamples) -> float:
    """Largest per-axis span of the sample bounding box.

    Raises DegenerateDomain when all points coincide.
    """
    spans = samples.points.max(axis=0) - samples.points.min(axis=0)
    e = float(spans.max())
    if e <= 0.0:
        raise DegenerateDomain("all sample points coincide; extent is zero")
    return e


@dataclass(frozen=True, eq=False)
class NormalizedDomain:
    """A sample set together with its dimensionless coordinate transform.

    normalized coordinate = (physical - offset) / extent, where offset is the
    bounding-box minimum corner. Target samples land in [0, 1]^d; arbitrary
    points may map outside that box (no clamping).
    """

    source: DomainSamples
    extent: float = field(init=False)
    offset: np.ndarray = field(init=False)
    normalized_points: np.ndarray = field(init=False)

    def __post_init__(self):
        e = compute_extent(self.source)
        offset = self.source.points.min(axis=0)
        object.__setattr__(self, "extent", e)
        object.__setattr__(self, "offset", _readonly(offset))
        object.__setattr__(self, "normalized_points", _readonly((self.source.points - offset) / e))

    @property
    def dim(self) -> int:
        return self.source.dim

    @property
    def weights(self) -> np.ndarray:
        return self.source.weights

    def normalize(self, point: np.ndarray) -> np.ndarray:
        """Map physical coordinates to the dimensionless domain."""
        point = np.asarray(point, dtype=float)
        if point.shape[-1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {point.shape[-1]}")
        return (point - self.offset) / self.extent

    def denormalize(self, point: np.ndarray) -> np.ndarray:
        """Exact inverse of :meth:`normalize` (to within float rounding)."""
        point = np.asarray(point, dtype=float)
        if point.shape[-1] != self.dim:
            raise ValueError(f"expected dimension {self.dim}, got {point.shape[-1]}")
        return point * self.extent + self.offset


def _parse_csv(path: Path, has_weights: Optional[bool]) -> DomainSamples:
    rows = []
    ncols = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p for p in line.replace(",", " ").split() if p]
            try:
                vals = [float(p) for p in parts]
            except ValueError as exc:
                raise ParseError(path, lineno, f"bad number in row: {exc}") from None
            if ncols is None:
                ncols = len(vals)
                if ncols < 2:
                    raise ParseError(path, lineno, f"need at least 2 columns, got {ncols}")
            elif len(vals) != ncols:
                raise ParseError(path, lineno, f"expected {ncols} columns, got {len(vals)}")
            rows.append(vals)
    if len(rows) < 2:
        raise DegenerateDomain(f"{path}: need at least 2 sample points, got {len(rows)}")
    data = np.asarray(rows, dtype=float)
    # Columns are x,y[,z][,weight]. Three columns are ambiguous; default to
    # x,y,z and let callers pass has_weights=True for x,y,weight files.
    if has_weights is None:
        has_weights = data.shape[1] == 4
    if has_weights:
        if data.shape[1] < 3:
            raise ParseError(path, None, "has_weights=True needs at least 3 columns")
        return DomainSamples(data[:, :-1], data[:, -1])
    return DomainSamples(data)


def _parse_obj(path: Path) -> DomainSamples:
    verts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0] != "v":
                continue  # faces, normals, comments: ignored
            if len(parts) < 4:
                raise ParseError(path, lineno, f"vertex line has {len(parts) - 1} coordinates, need 3")
            try:
                verts.append([float(parts[1]), float(parts[2]), float(parts[3])])
            except ValueError as exc:
                raise ParseError(path, lineno, f"bad vertex coordinate: {exc}") from None
    if len(verts) < 2:
        raise DegenerateDomain(f"{path}: need at least 2 vertices, got {len(verts)}")
    return DomainSamples(np.asarray(verts))


def _parse_ply(path: Path) -> DomainSamples:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError(path, 1, "not a PLY file (missing 'ply' magic)")
    nvert = None
    props = []
    in_vertex = False
    body_start = None
    for lineno, line in enumerate(lines[1:], start=2):
        tok = line.split()
        if not tok:
            continue
        if tok[0] == "format":
            if tok[1] != "ascii":
                raise ParseError(path, lineno, f"only ascii PLY supported, got {tok[1]}")
        elif tok[0] == "element":
            in_vertex = tok[1] == "vertex"
            if in_vertex:
                nvert = int(tok[2])
        elif tok[0] == "property" and in_vertex:
            props.append(tok[-1])
        elif tok[0] == "end_header":
            body_start = lineno
            break
    if nvert is None or body_start is None:
        raise ParseError(path, None, "PLY header missing vertex element or end_header")
    try:
        ix, iy, iz = props.index("x"), props.index("y"), props.index("z")
    except ValueError:
        raise ParseError(path, None, f"PLY vertex element lacks x/y/z properties: {props}") from None
    verts = np.empty((nvert, 3))
    for i in range(nvert):
        lineno = body_start + 1 + i
        if lineno > len(lines):
            raise ParseError(path, lineno, f"expected {nvert} vertices, file ended at {i}")
        vals = lines[lineno - 1].split()
        try:
            verts[i] = [float(vals[ix]), float(vals[iy]), float(vals[iz])]
        except (ValueError, IndexError) as exc:
            raise ParseError(path, lineno, f"bad vertex row: {exc}") from None
    if nvert < 2:
        raise DegenerateDomain(f"{path}: need at least 2 vertices, got {nvert}")
    return DomainSamples(verts)


def load_samples(path, format: Optional[str] = None, has_weights: Optional[bool] = None) -> DomainSamples:
    """Load target samples from a csv, obj, or ply file.

    csv rows are ``x,y[,z][,weight]`` (comma or whitespace separated, lines
    starting with ``#`` ignored). For obj/ply only vertex positions are read;
    faces are ignored. Weights are normalized to sum to one; files without a
    weight column get uniform weights.

    ``has_weights`` disambiguates 3-column csv files (default: three columns
    are read as x,y,z).
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"domain file not found: {path}")
    if format is None:
        format = path.suffix.lstrip(".").lower()
    if format == "csv":
        samples = _parse_csv(path, has_weights)
    elif format == "obj":
        samples = _parse_obj(path)
    elif format == "ply":
        samples = _parse_ply(path)
    else:
        raise ValueError(f"unsupported format {format!r}; expected csv, obj, or ply")
    try:
        extent = compute_extent(samples)
    except DegenerateDomain:
        extent = float("nan")
    log.info(
        "loaded %s: format=%s M=%d d=%d extent=%.6g",
        path, format, samples.num_points, samples.dim, extent,
    )
    return samples
