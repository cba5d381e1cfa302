"""Desk-scale temporal <-> visual bridging: a shared multi-head codebook
between a series autoencoder and an image autoencoder, index-level
alignment models, class pairing by JSD, and conversion pipelines."""

from .alignment import (AlignConfig, AlignmentModel, PairedSample, align_predict,
                        build_sliding_pairs, extract_indices, train_alignment)
from .classpair import (NearestCentroidClassifier, classify_series, cost_matrix,
                        hungarian_assign, index_histogram, js_divergence)
from .config import RunConfig, load_config, parse_config
from .convert import (ForecastConfig, OracleOutpainter, TileOutpainter, correlational_score,
                      eval_forecast, forecast, image_to_series, series_to_image, stylize)
from .persist import load_checkpoint, load_image, load_series_csv, save_checkpoint, save_image
from .quantizer import MultiHeadCodebook
from .tokenization import Image, TimeSeries
from .training import BundleConfig, TokenizerBundle, WarmupConfig, run_warmup

__version__ = "0.1.0"

__all__ = [
    "AlignConfig", "AlignmentModel", "BundleConfig", "ForecastConfig", "Image",
    "MultiHeadCodebook", "NearestCentroidClassifier", "OracleOutpainter", "PairedSample",
    "RunConfig", "TileOutpainter", "TimeSeries", "TokenizerBundle", "WarmupConfig",
    "align_predict", "build_sliding_pairs", "classify_series", "correlational_score",
    "cost_matrix", "eval_forecast", "extract_indices", "forecast", "hungarian_assign",
    "image_to_series", "index_histogram", "js_divergence", "load_checkpoint", "load_config",
    "load_image", "load_series_csv", "parse_config", "run_warmup", "save_checkpoint",
    "save_image", "series_to_image", "stylize", "train_alignment",
]
