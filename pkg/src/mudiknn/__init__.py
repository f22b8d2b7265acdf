"""Inverse k-nearest-neighbour crowd-count labels and a multi-scale upsampling counting network."""
from .annotations import AnnotationSet, DatasetStats, dataset_stats, load_annotations, save_annotations
from .labelmaps import (Adaptive, Fixed, LabelMap, MapConfig, density_map, downsample_map, export_png, iknn_map,
                        knn_map, load_lmap, save_lmap, sigma_for_head)
from .model import BackboneConfig, MudNet, PredictionResult, compute_loss
from .spatial import HeadIndex, build_index, knn_distances, mean_knn_distance

__version__ = "0.1.0"
