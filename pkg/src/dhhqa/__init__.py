"""Blind quality scoring and distortion recognition for textured 3D head meshes.

Pipeline: load or synthesise a textured mesh, render its front projection,
crop patches, and score them with a small vision transformer that predicts a
quality score and a distortion class from a shared embedding.
"""
from .distort import DistortionKind, DistortionSpec, SampleRecord, apply_distortion, build_corpus
from .mesh import ColoredPointCloud, TexturedMesh, load_mesh, mesh_to_pointcloud, save_mesh
from .model import VitConfig
from .render import ProjectionImage, RenderConfig, crop_patches, render_front
from .stats import MetricsReport, evaluate, krcc, make_folds, plcc, rmse, srcc
from .training import Prediction, TrainConfig, predict, train

__version__ = "0.1.0"
