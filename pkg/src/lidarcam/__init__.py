"""Targetless lidar-camera extrinsic calibration from per-sensor ego-motion.

The toolkit initializes the rigid camera-to-lidar transform by solving the
motion-consistency equation L X = X C over pose pairs, then refines the
translation by aligning vertical structure seen by both sensors: pole-like
3D lines from the lidar against 2D image line segments, with an IRLS
robust penalty.  A bundled scene simulator provides reproducible synthetic
sessions for end-to-end exercise of the pipeline.
"""

__version__ = "0.1.0"
