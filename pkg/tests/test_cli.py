import csv
import json

import numpy as np
import pytest

from seisfacies import errors
from seisfacies.cli import CONFIG_ENV, PipelineConfig, main
from seisfacies.errors import ConfigError
from seisfacies.export import read_label_volume
from seisfacies.kmeans import assign_chunk, load_model
from seisfacies.store import as_matrix, open_store

SYNTH = ["--synth", "--geometry", "8", "8", "32", "--seed", "3"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def ingest(capsys, store, *extra):
    code, out, _ = run(capsys, "ingest", *SYNTH, "--store", store, "--chunk-rows", 500, "--workers", 1, *extra)
    assert code == 0
    return json.loads(out)


def test_ingest_synth_summary(tmp_path, capsys):
    code, out, _ = run(capsys, "ingest", "--synth", "--geometry", 16, 16, 64, "--store", tmp_path / "s")
    assert code == 0
    summary = json.loads(out)
    assert (summary["rows"], summary["cols"]) == (16384, 9)
    assert summary["bytes"] == 16384 * 9 * 4


def test_ingest_is_reproducible(tmp_path, capsys):
    ingest(capsys, tmp_path / "a")
    ingest(capsys, tmp_path / "b", "--workers", 3)
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name


def test_ingest_from_segy_file(tmp_path, capsys):
    sgy = tmp_path / "v.sgy"
    assert run(capsys, "synth", "--out", sgy, "--geometry", 4, 3, 32, "--format", 1)[0] == 0
    code, out, _ = run(capsys, "ingest", "--input", sgy, "--store", tmp_path / "s")
    assert code == 0 and json.loads(out)["geometry"] == [4, 3, 32]


def test_missing_input_exit_code(tmp_path, capsys):
    missing = tmp_path / "absent.sgy"
    code, _, err = run(capsys, "ingest", "--input", missing, "--store", tmp_path / "s")
    assert code == errors.DataIOError.exit_code
    assert str(missing) in err


def test_missing_required_flag(tmp_path, capsys):
    code, _, err = run(capsys, "ingest", "--store", tmp_path / "s")
    assert code == ConfigError.exit_code and "--input" in err


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as info:
        main(["train", "--k", "many"])
    assert info.value.code == 2


def test_train_and_predict(tmp_path, capsys):
    store = tmp_path / "s"
    ingest(capsys, store)
    model_path = tmp_path / "m.json"
    code, out, _ = run(capsys, "train", "--store", store, "--model", model_path, "--k", 8, "--tol", 0, "--workers", 1)
    assert code == 0
    summary = json.loads(out)
    assert summary["k"] == 8 and summary["distance_evals"] == 2048 * 8 * summary["iterations"]
    model = load_model(model_path)
    assert model.centroids.shape == (8, 9)

    labels_path = tmp_path / "labels.bin"
    code, out, _ = run(capsys, "predict", "--store", store, "--model", model_path, "--out", labels_path,
                       "--inline", 0, "--crossline", 7)
    assert code == 0
    written = json.loads(out)["written"]
    assert len(written) == 3
    volume = read_label_volume(labels_path)
    x = np.concatenate(list(as_matrix(store).iter_chunks()))
    assert np.array_equal(volume.data.reshape(-1), assign_chunk(x, model.centroids).labels)
    image = open(written[1], "rb").read()
    assert image.startswith(b"P6\n8 32\n255\n") and len(image) == len(b"P6\n8 32\n255\n") + 8 * 32 * 3

    code, _, _ = run(capsys, "slice", "--input", labels_path, "--axis", "crossline", "--index", 7,
                     "--out", tmp_path / "again.ppm")
    assert code == 0 and (tmp_path / "again.ppm").read_bytes() == open(written[2], "rb").read()


def test_train_iteration_cap(tmp_path, capsys):
    store = tmp_path / "s"
    ingest(capsys, store)
    code, out, _ = run(capsys, "train", "--store", store, "--model", tmp_path / "m.json", "--k", 4,
                       "--tol", 0, "--max-iters", 1)
    assert code == 0 and json.loads(out)["iterations"] == 1
    assert len(load_model(tmp_path / "m.json").objective_history) == 1


def test_train_worker_count_does_not_change_model(tmp_path, capsys):
    store = tmp_path / "s"
    ingest(capsys, store)
    for w in (1, 4):
        assert run(capsys, "train", "--store", store, "--model", tmp_path / f"m{w}.json", "--k", 5, "--workers", w)[0] == 0
    assert (tmp_path / "m1.json").read_bytes() == (tmp_path / "m4.json").read_bytes()


def test_predict_dimension_mismatch(tmp_path, capsys):
    store = tmp_path / "s"
    ingest(capsys, store)
    run(capsys, "train", "--store", store, "--model", tmp_path / "m.json", "--k", 3)
    d = json.loads((tmp_path / "m.json").read_text())
    d["centroids"] = [row[:4] for row in d["centroids"]]
    d["n_features"] = 4
    (tmp_path / "m.json").write_text(json.dumps(d))
    code, _, err = run(capsys, "predict", "--store", store, "--model", tmp_path / "m.json", "--out", tmp_path / "l.bin")
    assert code == errors.DimensionMismatch.exit_code and "4" in err


def test_bench_sweep(tmp_path, capsys):
    store = tmp_path / "s"
    ingest(capsys, store)
    out_csv = tmp_path / "bench.csv"
    code, out, _ = run(capsys, "bench", "--store", store, "--k-min", 5, "--k-max", 12, "--workers", "1,2",
                       "--reps", 1, "--out", out_csv)
    assert code == 0
    assert "speedup_geomean" in out
    rows = list(csv.DictReader(out_csv.open()))
    assert len(rows) == 16
    for w in ("1", "2"):
        assert [int(r["k"]) for r in rows if r["worker_count"] == w] == list(range(5, 13))
    for r in rows:
        assert int(r["distance_evals"]) == 2048 * int(r["k"]) * int(r["iterations"])
    speedups = list(csv.DictReader((tmp_path / "bench_speedup.csv").open()))
    assert all(float(r["speedup"]) > 0 for r in speedups)


def test_config_file_precedence(tmp_path, capsys, monkeypatch):
    store = tmp_path / "s"
    ingest(capsys, store)
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("k: 3\nmax-iters: 2\n")
    code, out, _ = run(capsys, "--config", cfg, "train", "--store", store, "--model", tmp_path / "m.json")
    assert code == 0 and json.loads(out)["k"] == 3
    monkeypatch.setenv(CONFIG_ENV, str(cfg))
    code, out, _ = run(capsys, "train", "--store", store, "--model", tmp_path / "m.json", "--k", 4)
    summary = json.loads(out)
    assert summary["k"] == 4 and summary["iterations"] <= 2


def test_bad_config_file(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("colour: blue\n")
    code, _, err = run(capsys, "--config", cfg, "train", "--store", tmp_path, "--model", tmp_path / "m.json")
    assert code == ConfigError.exit_code and "colour" in err


def test_pipeline_config_invariants():
    with pytest.raises(ConfigError):
        PipelineConfig(k_min=9, k_max=5)
    with pytest.raises(ConfigError):
        PipelineConfig(workers=-1)


def test_invalid_kmeans_settings_are_config_errors(tmp_path, capsys):
    ingest(capsys, tmp_path / "s")
    code, _, _ = run(capsys, "train", "--store", tmp_path / "s", "--model", tmp_path / "m.json", "--k", 0)
    assert code == ConfigError.exit_code
    assert open_store(tmp_path / "s").n_rows == 2048
