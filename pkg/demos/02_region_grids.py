"""
Region grids on feature maps
============================

Two detectors place pooling regions on a W x H feature map.  The adaptive
grid uses four levels (whole map, two large squares along the long side,
then 3x2 and 2x3 arrangements) for 15 regions that always cover every
cell.  The rigid baseline places l*(l+m-1) squares per scale for 20
regions at the defaults.
"""

import numpy as np

from rmacplus import (GridSpec, generate_regions_plus, generate_regions_tolias,
                      project_bbox, regions_to_text)

W, H = 32, 24

regions = generate_regions_plus(W, H)
print(f"adaptive grid on {W}x{H}: {len(regions)} regions")
print(regions_to_text(regions))

# per-level ASCII coverage sketch
for level in range(4):
    mask = np.zeros((H, W), dtype=int)
    for r in (r for r in regions if r.level == level):
        mask[r.y0:r.y0 + r.h, r.x0:r.x0 + r.w] += 1
    rows = ["".join(str(min(v, 9)) for v in row) for row in mask[:: H // 6]]
    print(f"level {level}: regions overlap per cell (sampled rows)")
    print("\n".join("  " + row for row in rows))

union = np.zeros((H, W), dtype=bool)
for r in regions:
    union[r.y0:r.y0 + r.h, r.x0:r.x0 + r.w] = True
print("union covers every cell:", union.all())

baseline = generate_regions_tolias(W, H, GridSpec(detector="tolias_baseline"))
print(f"\nrigid baseline on {W}x{H}: {len(baseline)} regions "
      f"(sides {sorted({r.w for r in baseline}, reverse=True)})")

# queries arrive with pixel bounding boxes; project them onto map cells
crop = project_bbox((136.5, 34.1, 648.5, 955.7), (1024, 1024), (32, 32))
print(f"\npixel bbox (136.5, 34.1, 648.5, 955.7) on a 1024px image "
      f"-> cells x[{crop.x0},{crop.x0 + crop.w}) y[{crop.y0},{crop.y0 + crop.h})")
