#!/usr/bin/env python3
"""Generate a clipped Voronoi mesh of the unit cube in polymesh format.

Seeds form n^3 points in n layers; odd layers are shifted by a quarter cell in
x and y, which avoids the degenerate vertices of a cubic lattice. Each seed is
mirrored across the six cube faces so that the Voronoi regions of the original
seeds are exactly the regions clipped to the cube. An optional jitter perturbs
the seeds; the script fails if the shortest edge falls below --min-edge * h.

    python3 tools/make_voronoi_mesh.py --n 4 --out tests/data/voronoi64.mesh
"""
import argparse

import numpy as np
from scipy.spatial import Voronoi


def mirrored(seeds):
    out = [seeds]
    for axis in range(3):
        for plane in (0.0, 1.0):
            m = seeds.copy()
            m[:, axis] = 2.0 * plane - m[:, axis]
            out.append(m)
    return np.vstack(out)


def build(seeds):
    n = len(seeds)
    vor = Voronoi(mirrored(seeds))
    used = {}
    verts = []

    def vid(i):
        if i not in used:
            p = vor.vertices[i].copy()
            for d in range(3):
                for plane in (0.0, 1.0):
                    if abs(p[d] - plane) < 1e-10:
                        p[d] = plane
            used[i] = len(verts)
            verts.append(p)
        return used[i]

    faces, cells = [], [[] for _ in range(n)]
    for (p, q), ridge in zip(vor.ridge_points, vor.ridge_vertices):
        if p >= n and q >= n:
            continue
        if p >= n:
            p, q = q, p
        if q >= n and q % n != p:
            raise ValueError("degenerate ridge between a seed and a foreign mirror")
        if -1 in ridge:
            raise ValueError("unbounded ridge")
        pts = vor.vertices[ridge]
        centre = pts.mean(axis=0)
        normal = vor.points[q] - vor.points[p]
        normal /= np.linalg.norm(normal)
        a1 = pts[0] - centre
        a1 -= a1.dot(normal) * normal
        a1 /= np.linalg.norm(a1)
        a2 = np.cross(normal, a1)
        ang = [np.arctan2((x - centre).dot(a2), (x - centre).dot(a1)) for x in pts]
        loop = [vid(ridge[i]) for i in np.argsort(ang)]
        fidx = len(faces)
        faces.append(loop)
        cells[p].append(fidx + 1)
        if q < n:
            cells[q].append(-(fidx + 1))
    return np.array(verts), faces, cells


def min_edge(verts, faces):
    best = np.inf
    for loop in faces:
        for i in range(len(loop)):
            a, b = verts[loop[i]], verts[loop[(i + 1) % len(loop)]]
            best = min(best, np.linalg.norm(a - b))
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n", type=int, default=4)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--shift", type=float, default=0.25, help="odd-layer shift, fraction of h")
    ap.add_argument("--jitter", type=float, default=0.0, help="fraction of h")
    ap.add_argument("--min-edge", type=float, default=0.08, help="fraction of h")
    ap.add_argument("--out", required=True)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    h = 1.0 / args.n
    seeds = []
    for k in range(args.n):
        o = args.shift * (k % 2)
        for j in range(args.n):
            for i in range(args.n):
                seeds.append([(i + 0.5 + o) * h, (j + 0.5 + o) * h, (k + 0.5) * h])
    seeds = np.array(seeds) + rng.uniform(-args.jitter, args.jitter, (len(seeds), 3)) * h
    verts, faces, cells = build(seeds)
    if min_edge(verts, faces) < args.min_edge * h:
        raise SystemExit(f"shortest edge {min_edge(verts, faces) / h:.4f} h is below the threshold")
    boundary = [i + 1 for i, loop in enumerate(faces)
                if sum(1 for c in cells for f in c if abs(f) == i + 1) == 1]
    with open(args.out, "w") as out:
        out.write("polymesh 1\n")
        out.write(f"vertices {len(verts)}\n")
        for p in verts:
            out.write(f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}\n")
        out.write(f"faces {len(faces)}\n")
        for loop in faces:
            out.write(" ".join(map(str, [len(loop)] + [v + 1 for v in loop])) + "\n")
        out.write(f"cells {len(cells)}\n")
        for c in cells:
            out.write(" ".join(map(str, [len(c)] + c)) + "\n")
        out.write(f"boundary {len(boundary)}\n")
        out.write(" ".join(map(str, boundary)) + "\n")
    print(f"vertices={len(verts)} faces={len(faces)} min_edge/h={min_edge(verts, faces) / h:.3f}")


if __name__ == "__main__":
    main()
