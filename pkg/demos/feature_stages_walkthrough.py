"""
From pixels to a 1512-column feature row, one stage at a time
=============================================================

Walks a single luma plane through the transform stack (8x8 block DCT,
zigzag maps, 3x3 Saab on the DC map, pooling, statistics), then builds
a small feature table and ranks its columns by split cost.
"""

import tempfile
from pathlib import Path

import numpy as np

from biqa import augment, dataset, features, rft, toy

work = Path(tempfile.mkdtemp(prefix="biqa_demo_"))
spec = toy.ToyDatasetSpec(n_references=6, levels=3, image_side=192, seed=0)
manifest = toy.gen_toy(spec, work)

img = dataset.load_image(work / manifest.entries[0].image_path)
y = img.y_plane
print(f"luma plane {y.shape}")

# stage 1: per-block DCT; coefficient (0,0) of each block is its DC value
grid = features.block_dct(y)
print(f"DCT grid {grid.shape} (blocks x 8x8 coefficients)")
print(f"AC energy of the plane: {features.ac_energy(y):.1f}")

# zigzag order turns the grid into 64 coefficient maps, DC first
maps = features.coefficient_maps(grid)
print(f"zigzag coefficient maps {maps.shape}")

# stage 2: a data-driven 3x3 transform over the DC map. The kernel is a
# constant (mean) component plus PCA of the mean-removed blocks.
dc_map = grid[:, :, 0, 0]
kernel = features.fit_hop2_saab([dc_map])
hop2 = features.apply_hop2(dc_map, kernel)
print(f"DC map {dc_map.shape} -> second-stage maps {hop2.shape}")
print(f"kernel eigenvalues (descending): {np.round(kernel.eigenvalues, 2)}")

# magnitude pooling, then three statistics per map
pooled = features.abs_max_pool(maps, window=2)
stats = np.stack([pooled.reshape(64, -1).max(axis=1),
                  pooled.reshape(64, -1).mean(axis=1),
                  pooled.reshape(64, -1).std(axis=1)], axis=1)
print(f"pooled maps {pooled.shape} -> per-map (max, mean, std) {stats.shape}")

# full rows: fit the kernels on augmented training subimages, then extract
rows = manifest.entries[:30]
cfg = augment.AugmentConfig(manifest.scenario)


def subimages():
    for i, entry in enumerate(rows):
        im = dataset.load_image(work / entry.image_path)
        yield from augment.augment_image(im, cfg, source_index=i, mos=entry.mos)


params = features.fit_feature_params(subimages)
subs = list(subimages())
table = features.extract_features(subs, params)
print(f"feature table: {table.rows} subimage rows x {table.cols} columns")

# rank columns by the best weighted two-interval RMSE against the labels
targets = np.array([s.mos for s in subs])
ranking = rft.rank_features(table.values, targets,
                            column_meta=table.column_meta)
count = rft.elbow_index(np.sort(ranking.costs))
print(f"cost curve elbow keeps {count} of {table.cols} columns")

print("five most quality-aware columns:")
for col in ranking.order[:5]:
    meta = table.column_meta[col]
    print(f"  column {col:<5} channel {meta.channel} hop {meta.hop} "
          f"coef {meta.coef:<2} stat {meta.stat:<6} cost {ranking.costs[col]:.4f}")
