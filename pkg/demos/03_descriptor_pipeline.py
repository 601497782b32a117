"""
From activations to image descriptors
=====================================

Each region is max-pooled per channel (MAC), L2-normalized, whitened with
a PCA model fitted on gallery regions, and normalized again.  Region
descriptors sum-pool into one vector per image; with three resolutions the
per-resolution vectors sum-pool once more.
"""

import numpy as np

from rmacplus import (GridSpec, Region, fit_whitening, l2_normalize, mac_pool,
                      multires_aggregate, rmac_aggregate, whiten)
from rmacplus.tensor_store import FeatureMap
from rmacplus.region_grid import generate_regions_plus

rng = np.random.default_rng(0)

fmap = FeatureMap.from_array(rng.uniform(0, 1, (24, 30, 16)).astype(np.float32))

# one region: channel-wise maxima
region = Region(4, 2, 8, 6, 0)
raw = mac_pool(fmap, region)
print(f"MAC over {region.rect}: first 4 of {raw.dim} values", raw.values[:4])

unit = l2_normalize(raw)
print("after L2:", np.linalg.norm(unit.values))

# whitening decorrelates; fit it on the region descriptors of a small
# "gallery" of maps with varied channel statistics
regions = generate_regions_plus(fmap.width, fmap.height)
training = []
for _ in range(8):
    scales = rng.uniform(0.2, 1.0, 16)
    other = FeatureMap.from_array(
        (rng.uniform(0, 1, (24, 30, 16)) * scales).astype(np.float32))
    training.extend(l2_normalize(mac_pool(other, r)) for r in regions)
model = fit_whitening(training)
print(f"whitening fitted on {model.fitted_on} descriptors, "
      f"top eigenvalues {np.round(model.eigenvalues()[:3], 4)}")

whitened = [whiten(l2_normalize(mac_pool(fmap, r)), model) for r in regions]
image_descriptor = rmac_aggregate(whitened)
print("image descriptor norm:", float(np.linalg.norm(image_descriptor.values)))

# multi-resolution: three per-resolution descriptors sum-pool into one
triple = [image_descriptor, image_descriptor, image_descriptor]
combined = multires_aggregate(triple)
print("multi-resolution combination equals its inputs when they agree:",
      bool(np.allclose(combined.values, image_descriptor.values, atol=1e-6)))
