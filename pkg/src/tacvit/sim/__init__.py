"""Synthetic marker-array tactile data."""

from .dataset import (DatasetManifest, SensorData, discover, generate_dataset, generate_randomized,
                      image_name, load_dataset, load_root, prepare_images, read_labels, read_pgm,
                      write_labels, write_pgm)
from .labels import (FORCE_RANGES, LABEL_FIELDS, POSE_RANGES, RANGES, TARGET_SLICE, TARGET_UNITS, TARGETS,
                     ContactLabel, force_model, labels_to_array, sample_labels)
from .profiles import DEFAULT_PROFILES, REFERENCE_SIZE, SensorProfile, default_profiles, identity_profile, random_profile
from .render import displacement_field, marker_positions, quantize, render, render_array, rest_positions
