"""Out-of-core seismic facies classification: SEG-Y in, K-means facies labels out."""

from .attributes import ATTRIBUTE_NAMES, compute_all
from .errors import FaciesError
from .export import LabelVolume, export_slice_image, labels_to_volume
from .kmeans import KMeansConfig, KMeansModel, fit, predict
from .segy import SeismicVolume, SynthSpec, read_segy, synth_volume, write_segy
from .store import open_store, write_store, zscore_apply, zscore_fit

__version__ = "0.1.0"

__all__ = [
    "ATTRIBUTE_NAMES",
    "FaciesError",
    "KMeansConfig",
    "KMeansModel",
    "LabelVolume",
    "SeismicVolume",
    "SynthSpec",
    "compute_all",
    "export_slice_image",
    "fit",
    "labels_to_volume",
    "open_store",
    "predict",
    "read_segy",
    "synth_volume",
    "write_segy",
    "write_store",
    "zscore_apply",
    "zscore_fit",
]
