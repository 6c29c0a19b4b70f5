"""Body-weight regression from top-view depth frames.

Pipeline: depth CSV -> calibrated point cloud -> cleaned / normalized /
1024-point standardized cloud -> PointNet or DGCNN regressor trained on a
built-in reverse-mode autodiff engine, evaluated under single-source, joint,
and transfer-learning experiment designs with cow-level cross-validation.
"""

__version__ = "0.1.0"
