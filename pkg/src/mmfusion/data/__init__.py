from .augment import AugmentParams, adjust_brightness, apply_params, augment, draw_params
from .pairing import (
    MODALITY_CONFIGS,
    apply_modality_config,
    build_missing_pool,
    complete_samples,
    make_incomplete,
    pair_indices,
    pair_object,
)
from .records import (
    ImageLoader,
    ObjectRecord,
    Sample,
    class_vocabulary,
    load_samples,
    read_manifest,
    save_image,
    save_samples,
    write_manifest,
)
from .synthetic import SynthConfig, generate_synthetic
from .usecases import UseCase, load_use_cases, synthetic_use_case

__all__ = [
    "AugmentParams", "adjust_brightness", "apply_params", "augment", "draw_params",
    "MODALITY_CONFIGS", "apply_modality_config", "build_missing_pool", "complete_samples",
    "make_incomplete", "pair_indices", "pair_object",
    "ImageLoader", "ObjectRecord", "Sample", "class_vocabulary", "load_samples", "read_manifest",
    "save_image", "save_samples", "write_manifest",
    "SynthConfig", "generate_synthetic",
    "UseCase", "load_use_cases", "synthetic_use_case",
]
