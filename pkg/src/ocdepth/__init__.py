"""Object-centric depth supervision for monocular 3D detection.

Submodules:

* :mod:`ocdepth.geometry` camera math, oriented boxes, rotated IoU
* :mod:`ocdepth.kitti` KITTI label, calibration and result files
* :mod:`ocdepth.depth` sparse depth images, masks and augmentation
* :mod:`ocdepth.losses` heatmaps, focal loss, uncertainty depth losses
* :mod:`ocdepth.decode` keypoint decoding and confidence fusion
* :mod:`ocdepth.evaluation` AP40, recall, localization and depth metrics
* :mod:`ocdepth.synth` synthetic scenes and the toy depth model
* :mod:`ocdepth.gradcheck` finite-difference gradient suites
"""

from .geometry import Box3D, CameraIntrinsics, project, unproject

__version__ = "0.1.0"

__all__ = ["Box3D", "CameraIntrinsics", "project", "unproject", "__version__"]
