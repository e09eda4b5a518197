"""Statistical shape models and smooth completion of partial meshes."""

from .align import SimilarityTransform, generalized_procrustes, procrustes_align
from .distance import ErrorStats, TriangleBVH, point_to_mesh_distance, surface_error_stats
from .extrapolate import (
    ExtrapolationResult,
    extrapolate,
    extrapolate_feather,
    extrapolate_po,
    extrapolate_tps,
    seam_jumps,
)
from .harness import CropSpec, crop_partition, fit_runtime_curve, run_loo_extrapolation
from .mesh import RegionPartition, TriMesh, build_adjacency, compute_partition
from .ssm import ShapeModel, build_ssm, build_ssm_from_corpus, loo_generalization, project
from .synthetic import SyntheticCorpusSpec, generate_synthetic_corpus
from .tps import TpsModel, build_tps, evaluate_tps

__version__ = "0.1.0"
