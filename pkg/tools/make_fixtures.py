#!/usr/bin/env python3
"""Regenerate the bundled domain fixtures (deterministic)."""

from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parents[1] / "src" / "coverplan" / "data"


def unit_square_grid(n: int = 10) -> np.ndarray:
    g = np.linspace(0.0, 1.0, n)
    xx, yy = np.meshgrid(g, g)
    return np.column_stack([xx.ravel(), yy.ravel()])


def blob_500() -> np.ndarray:
    """Star-shaped closed surface sampled at 500 points (desk scale, ~1 m).

    Fibonacci-sphere directions with a smooth radius modulation give an
    organic mesh-like point cloud without bundling a real scanned model.
    """
    n = 500
    i = np.arange(n)
    golden = (1.0 + np.sqrt(5.0)) / 2.0
    z = 1.0 - 2.0 * (i + 0.5) / n
    theta = np.arccos(z)
    phi = 2.0 * np.pi * i / golden
    r = 0.5 * (1.0
               + 0.30 * np.sin(3.0 * theta) * np.cos(2.0 * phi)
               + 0.22 * np.cos(4.0 * theta)
               + 0.18 * np.sin(2.0 * theta) * np.sin(3.0 * phi))
    x = r * np.sin(theta) * np.cos(phi)
    y = r * np.sin(theta) * np.sin(phi)
    zz = r * z / np.abs(z).max() * 0.9  # slight squash for asymmetry
    pts = np.column_stack([x, y, zz])
    # Snap to a dyadic grid (0.24 mm at desk scale). Dyadic coordinates make
    # decimal rescaling exact in floating point, so cross-scale benchmark
    # runs see bitwise-identical normalized problems.
    return np.round(pts * 4096.0) / 4096.0


def two_clusters() -> np.ndarray:
    """Two dense 2D clusters (diameter ~1 m) separated by ~10 diameters."""
    rng = np.random.default_rng(2024)
    pts = []
    for center in ((0.0, 0.0), (10.0, 0.5)):
        ang = rng.uniform(0, 2 * np.pi, 60)
        rad = 0.5 * np.sqrt(rng.uniform(0, 1, 60))
        pts.append(np.column_stack([center[0] + rad * np.cos(ang),
                                    center[1] + rad * np.sin(ang)]))
    return np.vstack(pts)


def write_csv(path: Path, pts: np.ndarray, header: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        for row in pts:
            fh.write(",".join(f"{v:.6f}" for v in row) + "\n")


def write_obj(path: Path, pts: np.ndarray, header: str) -> None:
    # 12 fractional digits represent multiples of 2^-12 exactly.
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# {header}\n")
        for row in pts:
            fh.write("v " + " ".join(f"{v:.12f}" for v in row) + "\n")


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    write_csv(OUT / "unit_square.csv", unit_square_grid(), "x,y : 10x10 grid on the unit square")
    write_obj(OUT / "blob500.obj", blob_500(), "synthetic blob surface, 500 vertices, desk scale (m)")
    write_csv(OUT / "two_clusters.csv", two_clusters(),
              "x,y : two 1 m clusters, centers 10 m apart")
    for f in sorted(OUT.iterdir()):
        print(f, f.stat().st_size, "bytes")


if __name__ == "__main__":
    main()
