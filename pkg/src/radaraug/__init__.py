"""Range-aware augmentation, detection and evaluation for low-THz radar images."""

from .augment import (AttenuationFit, AttenuationModel, AugmentationPlan, AugmentedSample,
                      ObjectMask, Recipe, Sample, apply_attenuation, apply_speckle,
                      augment_dataset, background_shift, default_threshold, fit_attenuation,
                      mean_object_power, mirror, resample_resolution, segment_threshold,
                      speckle, standard_augment, synthesize_at_range, translate,
                      translate_to_range)
from .detect import (NOISE, CfarParams, Cluster, DbscanParams, LabeledBox,
                     NearestCentroidClassifier, baseline_classifier, ca_cfar, ca_cfar_linear,
                     clusters_from_labels, clusters_to_boxes, crop_resize, dbscan,
                     detect_pipeline)
from .errors import (DomainError, EmptySelectionError, FormatError, InvalidBoxError,
                     InvalidInputError, InvalidParamsError, RadarAugError, SingularFitError,
                     UndefinedMetricError, UnknownClassError)
from .geometry import (CartesianImage, GridPoint, PolarImage, SensorConfig,
                       cartesian_to_polar, cross_range_cell_size, polar_to_cartesian,
                       range_resolution, resize_bilinear, sensor_300ghz)
from .metrics import (accuracy_confusion, average_precision, evaluate, iou, match_detections,
                      mean_ap, msad, pr_curve)
from .sim import Scatterer, SimConfig, radar_equation, render_scene

__version__ = "0.1.0"
