"""Build a trajectory flow map from a synthetic check-in log and inspect it.

Run: python demos/01_flow_map.py
"""
import numpy as np

from getnext import dataset as ds
from getnext import flow_map as fm

# %% A small corpus: 30 users walking shared POI paths.  A fifth of them have
# long histories, the rest only a handful of sessions.
raw = ds.synthesize(n_users=30, n_pois=60, n_categories=5, pattern="planted_shared_paths", seed=0)
print(f"{len(raw)} raw check-ins")

# %% Filtering (POIs first, then users), gap-based trajectory splitting and
# the chronological 80/10/10 partition.
d = ds.preprocess(raw)
print(f"train/validation/test trajectories: {len(d.train)}/{len(d.validation)}/{len(d.test)}")
print(f"indexed POIs {d.n_pois}, users {d.n_users}, categories {d.n_categories}")

# %% The flow map only sees the train split.
m = fm.build_from_dataset(d)
print(fm.format_stats(fm.stats(m)), end="")

# every train transition is one unit of edge weight
assert m.adjacency.sum() == sum(len(t) - 1 for t in d.train)

# the propagation matrix the GCN uses is row-stochastic
print("row sums of the propagation matrix:", np.unique(m.laplacian.sum(axis=1).round(12)))

# %% The busiest transitions.
src, dst = np.unravel_index(np.argsort(m.adjacency, axis=None)[::-1][:5], m.adjacency.shape)
for i, j in zip(src, dst):
    print(f"  {m.node_ids[i]} -> {m.node_ids[j]}: {int(m.adjacency[i, j])}")

# %% When during the day is each category visited?  (Sessions start 7-9h.)
for cat in m.categories[:2]:
    hist = fm.category_hour_histogram(d.train, cat)
    busiest = np.argsort(hist)[::-1][:3]
    print(f"category {cat}: busiest local hours {sorted(busiest.tolist())}")
