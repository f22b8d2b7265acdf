"""kd-tree queries against the brute-force oracle.

Run: python3 demos/02_spatial_index.py
"""
import time

import numpy as np

from mudiknn import build_index

rng = np.random.default_rng(0)
heads = rng.uniform(0, 1024, (500, 2))
# every pixel centre of a 256x256 raster
ys, xs = np.mgrid[0:256, 0:256] + 0.5
queries = np.column_stack([xs.ravel() * 4, ys.ravel() * 4])

for backend in ("kdtree", "brute"):
    index = build_index(heads, backend)
    t = time.perf_counter()
    d = index.query(queries, 3)
    print(f"{backend:7s} {len(queries)} queries, k=3: {time.perf_counter() - t:.2f}s")
    if backend == "kdtree":
        fast = d

print("max |kdtree - brute| =", np.abs(fast - d).max())
