"""Part-aware feature fields on individual 3D shapes.

Fit a triplane feature field to a shape from 2D/3D part proposals with a
triplet contrastive objective, then cluster, evaluate, and explore the
field for hierarchical decomposition, cosegmentation, and correspondence.
"""

from .analysis import (
    GroundTruth,
    LogRegModel,
    best_of_scales,
    cosegment,
    evaluation_report,
    fit_logreg,
    grouped_means,
    miou,
    nn_correspondence,
    predict,
    similarity_map,
    transfer_point_labels_to_faces,
)
from .clustering import MergeTree, Segmentation, agglomerate, cut_tree, kmeans, multi_scale
from .field import (
    FeatureSet,
    TriplaneField,
    face_features,
    ingest_external_features,
    load_features,
    load_field,
    new_triplane,
    query,
    query_grad,
    save_features,
    save_field,
)
from .fitting import (
    AdamState,
    FitConfig,
    FitReport,
    adam_step,
    canonical_point_set,
    contrastive_loss,
    cosine_sim,
    fit_field,
    loss_grad,
)
from .geometry import (
    BVH,
    Camera,
    DepthIdImage,
    NormalizationTransform,
    PointSet,
    TriMesh,
    build_bvh,
    default_camera_rig,
    load_mesh,
    load_point_set,
    normalize_unit_cube,
    ray_cast,
    render_depth_ids,
    sample_interior,
    sample_surface,
)
from .proposals import (
    LabelSet,
    PartProposal,
    ingest_labels,
    project_mask,
    synth_mask_proposals,
)
from .sampler import (
    SamplerConfig,
    TripletBatch,
    build_triplet_batch,
    sample_3d_hard_negatives,
    sample_feature_hard_negatives,
    sample_positive_pairs,
    sample_uniform_negatives,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState", "BVH", "Camera", "DepthIdImage", "FeatureSet", "FitConfig",
    "FitReport", "GroundTruth", "LabelSet", "LogRegModel", "MergeTree",
    "NormalizationTransform", "PartProposal", "PointSet", "SamplerConfig",
    "Segmentation", "TriMesh", "TriplaneField", "TripletBatch", "adam_step",
    "agglomerate", "best_of_scales", "build_bvh", "build_triplet_batch",
    "canonical_point_set", "contrastive_loss", "cosegment", "cosine_sim",
    "cut_tree", "default_camera_rig", "evaluation_report", "face_features",
    "fit_field", "fit_logreg", "grouped_means", "ingest_external_features",
    "ingest_labels", "kmeans", "load_features", "load_field", "load_mesh",
    "load_point_set", "loss_grad", "miou", "multi_scale", "new_triplane",
    "nn_correspondence", "normalize_unit_cube", "predict", "project_mask",
    "query", "query_grad", "ray_cast", "render_depth_ids",
    "sample_3d_hard_negatives", "sample_feature_hard_negatives",
    "sample_interior", "sample_positive_pairs", "sample_surface",
    "sample_uniform_negatives", "save_features", "save_field",
    "similarity_map", "synth_mask_proposals", "transfer_point_labels_to_faces",
]
