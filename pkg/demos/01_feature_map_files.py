"""
Feature-map files and manifests
===============================

The pipeline consumes activation tensors stored in a small binary format:
a "FMAP" magic, a version, the three dimensions, then W*H*D float32 values
in (y, x, d) order.  A tab-separated manifest lists which file belongs to
which image and resolution.
"""

import tempfile
from pathlib import Path

import numpy as np

from rmacplus import (FeatureMap, FeatureSetManifest, ManifestEntry,
                      read_feature_map, read_manifest, write_feature_map,
                      write_manifest)

workdir = Path(tempfile.mkdtemp(prefix="fmap_demo_"))

# a tiny 4x3 map with 2 channels
data = np.arange(24, dtype=np.float32).reshape(3, 4, 2)
fmap = FeatureMap.from_array(data)
print(f"tensor: W={fmap.width} H={fmap.height} D={fmap.channels}")

path = workdir / "toy.fmap"
write_feature_map(fmap, path)
raw = path.read_bytes()
print(f"file: {len(raw)} bytes, header {raw[:4]!r}, "
      f"payload {len(raw) - 20} bytes")

# round trip is bit-exact
loaded = read_feature_map(path)
print("round-trip equal:", loaded == fmap)

# value at (y=1, x=2, d=1) sits at payload offset 4*((y*W + x)*D + d)
offset = 20 + 4 * ((1 * 4 + 2) * 2 + 1)
print(f"value at (1,2,1) = {loaded.data[1, 2, 1]}, "
      f"stored at byte offset {offset}")

# the manifest ties image ids to files
manifest = FeatureSetManifest(
    dataset_name="demo",
    entries=[ManifestEntry("toy", "base", "toy.fmap", 4, 3, 2)],
    root=workdir,
)
write_manifest(manifest, workdir / "demo.manifest")
print("\nmanifest contents:")
print((workdir / "demo.manifest").read_text())
print("resolution mode:", read_manifest(workdir / "demo.manifest").resolution_mode())
