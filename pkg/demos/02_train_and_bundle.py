"""Fit one cluster's ADB-DT model on PCA inputs/outputs, save it and score the heavier variants.

    python demos/02_train_and_bundle.py [model_dir]
"""

import sys

import numpy as np

from wingloads.bundles import load_bundle, save_bundle
from wingloads.ensembles import derive_seed
from wingloads.evaluation import PipelineConfig, error_rate, fit_cluster_model, fit_clusters, r2_per_station
from wingloads.wing import WingGeometry, generate_dataset

model_dir = sys.argv[1] if len(sys.argv) > 1 else "models/demo_adb_dt"
geom = WingGeometry()
train = generate_dataset(geom, 238, 2000, derive_seed(2024, 238))
vals = {m: generate_dataset(geom, m, 2000, derive_seed(2024, m)) for m in (242, 247, 251)}
clusters = fit_clusters(train, vals, seed=0)

cfg = PipelineConfig(2, "adb-dt", n_repeats=1, seed=0)
cluster = 0
rows = np.flatnonzero(clusters.train_labels == cluster)
incodec, outcodec, model = fit_cluster_model(train, rows, cfg, cluster, seed=1)
path = save_bundle(model, model_dir, algo=cfg.algo, hyperparameters=cfg.hyperparameters_for(cluster),
                   seed=1, input_codec=incodec, output_codec=outcodec,
                   metadata={"cluster": cluster, "train_variant": 238})
bundle = load_bundle(path)
print(f"saved {bundle.manifest['n_tree_files']} tree files to {path}")

for m, ds in vals.items():
    sel = clusters.validation_labels[m] == cluster
    pred = bundle.predict(ds.features[sel])
    _, r2, _ = r2_per_station(ds.outputs[sel], pred)
    err = error_rate(ds.outputs[sel], pred)
    print(f"{m}t cluster {cluster}: {sel.sum():4d} rows, mean R2 {r2:.4f}, "
          f"rows within 2 % error {100 * np.mean(err <= 0.02):.1f} %")
