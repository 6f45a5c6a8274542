"""Fine-grained VR sketch to 3D shape retrieval with point-cloud encoders."""

from .augmentation import AugmentConfig, compose_training_set, random_anisotropic_scale, random_axis_rotation
from .dataset import DatasetSnapshot, ManifestRecord, load_manifest, load_pair, make_splits
from .encoders import ModelConfig, RetrievalModel, clone_for_heterogeneous, encode, encode_batch
from .geometry import (ShapeMesh, Sketch, Stroke, farthest_point_sample, knn_indices, normalize_cloud,
                       sample_mesh_cloud, sample_sketch_cloud)
from .losses import LossConfig, contrastive_loss, triplet_loss
from .retrieval import GalleryIndex, RetrievalResult, accuracy_at_k, build_gallery, per_group_report, retrieve
from .trainer import RunRecord, TrainConfig, TrainingData, select_best, train, train_heterogeneous

__version__ = "0.1.0"
