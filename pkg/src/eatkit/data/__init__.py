from .augment import AugmentConfig, AugmentPlan, apply_plan, augment, hflip, resize_bilinear, rotate, sample_plan, zoom
from .batches import Batch, ChannelStats, ImageSource, channel_stats, data_workers, epoch_order, make_batches
from .index import DEFAULT_RATIOS, DataError, DatasetIndex, assign_splits, scan_dataset
from .pnm import DecodeError, decode_pnm, encode_pnm, load_image, save_image
from .synthetic import canonical_pattern, nearest_template, synth_dataset

__all__ = [
    "AugmentConfig", "AugmentPlan", "apply_plan", "augment", "hflip", "resize_bilinear", "rotate",
    "sample_plan", "zoom",
    "Batch", "ChannelStats", "ImageSource", "channel_stats", "data_workers", "epoch_order", "make_batches",
    "DEFAULT_RATIOS", "DataError", "DatasetIndex", "assign_splits", "scan_dataset",
    "DecodeError", "decode_pnm", "encode_pnm", "load_image", "save_image",
    "canonical_pattern", "nearest_template", "synth_dataset",
]
