"""Walk through the depth decomposition and the IoU cost of a radial error.

Run with ``python demos/geometry_walkthrough.py``.
"""

# %%
import math

import numpy as np

from ocdepth.evaluation import SURFACE_ERROR_DIMS, SURFACE_ERRORS, surface_error_iou_table
from ocdepth.geometry import Box3D, CameraIntrinsics, bev_iou, iou_3d, project, surface_to_center, viewing_angle
from ocdepth.losses import surface_depth_target

cam = CameraIntrinsics(fu=721.5, fv=721.5, cx=609.6, cy=172.9, width=1242, height=375)

# %% A car 20 m ahead, seen at an angle. The keypoint is its projected center.
car = Box3D(center=(3.0, 1.0, 20.0), size=(1.62, 1.53, 3.9), yaw=0.6, category="Car")
u, v, d = project(cam, car.center)
print(f"keypoint (u, v) = ({u:.1f}, {v:.1f}), center depth {d:.2f} m")
print(f"viewing angle at the keypoint: {math.degrees(viewing_angle(cam, u)):.1f} deg")

# %% LiDAR sees the surface, not the center. Split the center depth into the two parts.
t = surface_depth_target(car, cam)
print(f"surface depth {t.d_s:.3f} m + surface-to-center {t.d_s2c:.3f} m = {t.d_s + t.d_s2c:.3f} m")

# %% The offset depends only on the footprint and the yaw relative to the viewing ray.
for rel in np.linspace(0, math.pi, 7):
    print(f"relative yaw {math.degrees(rel):6.1f} deg -> offset {surface_to_center((1.62, 3.9), rel, 0.0):.3f} m")

# %% A radial error of e meters along the heading leaves (l - e) / (l + e) of the IoU.
table = surface_error_iou_table()
print("error [m]  " + "  ".join(f"{e:5.2f}" for e in SURFACE_ERRORS))
for (name, *_), row in zip(SURFACE_ERROR_DIMS, table):
    print(f"{name:<10} " + "  ".join(f"{x:5.2f}" for x in row))

# %% Rotated boxes: BEV and 3D IoU against a shifted, turned copy.
other = Box3D(center=(3.4, 1.0, 20.5), size=car.size, yaw=0.9, category="Car")
print(f"BEV IoU {bev_iou(car, other):.3f}, 3D IoU {iou_3d(car, other):.3f}")
