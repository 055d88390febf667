"""End-to-end steps shared by the CLI and library users."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

from .attributes import DEFAULT_WINDOW, compute_all
from .errors import DimensionMismatch
from .export import DEFAULT_PALETTE, LabelVolume, export_slice_image, labels_to_volume, write_label_volume
from .kmeans import KMeansConfig, KMeansModel, fit, predict, save_model
from .segy import SeismicVolume
from .store import DEFAULT_CHUNK_ROWS, StoreManifest, as_matrix, flatten, open_store, write_store, zscore_apply, zscore_fit


def ingest(volume: SeismicVolume, store_path, window: int = DEFAULT_WINDOW,
           chunk_rows: int = DEFAULT_CHUNK_ROWS, workers: int = 1) -> StoreManifest:
    """Attributes -> flattened matrix -> z-score -> chunked store."""
    features = compute_all(volume, window, workers)
    matrix = flatten(features, chunk_rows)
    stats = zscore_fit(matrix)
    return write_store(zscore_apply(matrix, stats), stats, store_path)


def train(store, config: KMeansConfig, model_path=None, workers: int = 1) -> KMeansModel:
    model = fit(store, config, workers=workers)
    if model_path is not None:
        save_model(model, model_path)
    return model


def classify(store, model: KMeansModel, workers: int = 1) -> LabelVolume:
    manifest = store if isinstance(store, StoreManifest) else open_store(store)
    if model.centroids.shape[1] != manifest.n_cols:
        raise DimensionMismatch(
            f"model has {model.centroids.shape[1]} features, store has {manifest.n_cols} columns"
        )
    labels = predict(as_matrix(manifest), model.centroids, workers)
    return labels_to_volume(labels, manifest.geometry, k=model.n_clusters)


def slice_path(base, axis: str, index: int) -> Path:
    base = Path(base)
    return base.with_name(f"{base.stem}_{axis}_{index:04d}.ppm")


def export_outputs(volume: LabelVolume, out_path, inlines: Iterable[int] = (), crosslines: Iterable[int] = (),
                   palette=DEFAULT_PALETTE) -> list[Path]:
    write_label_volume(volume, out_path)
    written = [Path(out_path)]
    for axis, indices in (("inline", inlines), ("crossline", crosslines)):
        for index in indices:
            path = slice_path(out_path, axis, index)
            export_slice_image(volume, axis, index, palette, path)
            written.append(path)
    return written
