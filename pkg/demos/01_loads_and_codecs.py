"""Generate the weight variants, compress the curves and cluster the flight cases.

    python demos/01_loads_and_codecs.py
"""

import numpy as np

from wingloads.dimred import OutputCodec
from wingloads.ensembles import derive_seed
from wingloads.evaluation import fit_clusters
from wingloads.wing import WingGeometry, generate_dataset

geom = WingGeometry()
train = generate_dataset(geom, 238, 2000, derive_seed(2024, 238))
vals = {m: generate_dataset(geom, m, 2000, derive_seed(2024, m)) for m in (242, 247, 251)}

print(f"{len(train)} training curves at {train.outputs.shape[1]} stations")
print("root moment range (MN m):", np.round(train.outputs[:, 0].min() / 1e6, 2),
      np.round(train.outputs[:, 0].max() / 1e6, 2))
for m, ds in vals.items():
    print(f"  {m}t mean root moment {ds.outputs[:, 0].mean() / 1e6:8.2f} MN m")

for kind in ("pca", "poly", "poly_pca"):
    codec = OutputCodec(kind).fit(train.outputs, train.stations)
    r2 = codec.train_row_r2
    print(f"{kind:>8}: width {codec.width:2d}, worst row R2 {r2.min():.5f}, "
          f"rows >= 0.999: {100 * np.mean(r2 >= 0.999):.2f} %")

clusters = fit_clusters(train, vals, seed=0)
print("elbow distortions:", np.round(clusters.distortions, 0))
print(f"chosen k = {clusters.k}, sizes {np.bincount(clusters.train_labels).tolist()}")
