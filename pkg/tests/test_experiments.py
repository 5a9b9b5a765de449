import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from exceptions import ConfigError, DataError, SchemaError
from models.metric_model import TRACE_COLUMNS
from services import experiment_service

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def test_defaults_follow_experimental_setup():
    cfg = experiment_service.validate('method = "afed_gan"')
    assert cfg.training.rounds == 150
    assert cfg.training.local_epochs == 5
    assert cfg.training.lr_classifier == 0.005
    assert cfg.training.lr_generator == 0.0001
    assert cfg.training.lr_discriminator == 0.0003
    assert cfg.network.latent_dim == 64
    assert cfg.network.noise_dim == 32
    assert cfg.training.gan_loss == "nonsaturating"
    assert cfg.dataset.kind == "toy"


def test_missing_method_is_named():
    with pytest.raises(ConfigError) as exc:
        experiment_service.validate('name = "x"')
    assert any(err.startswith("method:") for err in exc.value.errors)


def test_nested_errors_use_dotted_keys():
    text = """
method = "fedavg"
[training]
participant_ratio = 1.5
[dataset]
kind = "toy"
per_client = 5
"""
    with pytest.raises(ConfigError) as exc:
        experiment_service.validate(text)
    keys = {err.split(":")[0] for err in exc.value.errors}
    assert "training.participant_ratio" in keys
    assert "dataset.per_client" in keys


def test_unknown_key_is_rejected():
    with pytest.raises(ConfigError) as exc:
        experiment_service.validate('method = "fedavg"\n[training]\nlearning_rate = 0.1\n')
    assert any(err.startswith("training.learning_rate:") for err in exc.value.errors)


def test_empty_sweep_lists_are_rejected():
    with pytest.raises(ConfigError) as exc:
        experiment_service.validate('method = "fedavg"\n[sweep]\nlambdas = []\n')
    assert any(err.startswith("sweep.lambdas:") for err in exc.value.errors)


def test_partition_scheme_must_match_dataset():
    with pytest.raises(ConfigError) as exc:
        experiment_service.validate(
            'method = "fedavg"\n[partition]\nscheme = "dirichlet"\n'
        )
    assert any("partition.scheme" in err for err in exc.value.errors)


def test_client_components_length_must_match_clients():
    with pytest.raises(ConfigError) as exc:
        experiment_service.validate(
            'method = "fedavg"\n[dataset]\nkind = "toy"\nclient_components = [0, 1]\n'
        )
    assert any("dataset.client_components" in err for err in exc.value.errors)


def test_unparseable_text():
    with pytest.raises(ConfigError) as exc:
        experiment_service.validate("method = = fedavg")
    assert exc.value.errors[0].startswith("config:")


def test_csv_path_must_exist(tmp_path):
    text = """
method = "fedavg"
[dataset]
kind = "csv"
path = "missing.csv"
[dataset.columns]
label_column = "y"
attribute_column = "a"
[partition]
scheme = "dirichlet"
"""
    with pytest.raises(ConfigError) as exc:
        experiment_service.validate(text, base_dir=tmp_path)
    assert exc.value.errors[0].startswith("dataset.path:")
    (tmp_path / "missing.csv").write_text("y,a\n1,0\n")
    cfg = experiment_service.validate(text, base_dir=tmp_path)
    assert cfg.dataset.path == str(tmp_path / "missing.csv")


def test_canonical_form_round_trip_is_idempotent(smoke_text):
    cfg = experiment_service.validate(smoke_text)
    once = experiment_service.canonical_form(cfg)
    twice = experiment_service.canonical_form(experiment_service.validate(once))
    assert once == twice
    assert json.loads(once)["training"]["rounds"] == 2


def test_load_config_from_file(tmp_path, smoke_text):
    path = tmp_path / "exp.toml"
    path.write_text(smoke_text)
    assert experiment_service.load_config(path).name == "smoke"
    with pytest.raises(ConfigError):
        experiment_service.load_config(tmp_path / "nope.toml")


def test_run_writes_trace_and_summary(tmp_path, smoke_text):
    cfg = experiment_service.validate(smoke_text)
    artifacts = experiment_service.run_config(cfg, out_dir=tmp_path / "out")
    trace = pd.read_csv(artifacts.trace_path)
    assert list(trace.columns) == TRACE_COLUMNS
    # 3 λ × 2 semillas × 2 rondas
    assert len(trace) == 12 == artifacts.n_rows
    summary = json.loads((tmp_path / "out" / "summary.json").read_text())
    assert len(summary["entries"]) == 6
    assert [agg["n_seeds"] for agg in summary["aggregates"]] == [2, 2, 2]
    assert (tmp_path / "out" / "run.log").exists()


def test_rerun_is_byte_identical(tmp_path, smoke_text):
    cfg = experiment_service.validate(smoke_text)
    a = experiment_service.run_config(cfg, out_dir=tmp_path / "a")
    b = experiment_service.run_config(cfg, out_dir=tmp_path / "b", threads=2)
    with open(a.trace_path, "rb") as fa, open(b.trace_path, "rb") as fb:
        assert fa.read() == fb.read()
    with open(a.summary_path, "rb") as fa, open(b.summary_path, "rb") as fb:
        assert fa.read() == fb.read()


def test_run_single_seed_override(tmp_path, smoke_text):
    cfg = experiment_service.validate(smoke_text)
    artifacts = experiment_service.run_config(cfg, out_dir=tmp_path, seed=7)
    trace = pd.read_csv(artifacts.trace_path)
    assert set(trace["seed"]) == {7}
    assert len(artifacts.summary.entries) == 3


def _trace(path, method, rows):
    frame = pd.DataFrame(rows, columns=["round", "seed", "lambda", "acc", "dp_gap"])
    frame.insert(1, "method", method)
    for col in ("loss_y", "loss_fair", "loss_g", "loss_d"):
        frame[col] = 0.0
    frame = frame[TRACE_COLUMNS]
    frame.to_csv(path, index=False)
    return path


def test_compare_single_file_passthrough(tmp_path):
    path = _trace(
        tmp_path / "t.csv",
        "afed_gan",
        [
            (1, 0, 0.0, 0.5, 0.9),
            (2, 0, 0.0, 0.8, 0.4),
            (1, 0, 1.0, 0.5, 0.9),
            (2, 0, 1.0, 0.7, 0.1),
        ],
    )
    rows = experiment_service.compare([path])
    assert [(r.method, r.lam, r.acc, r.dp_gap) for r in rows] == [
        ("afed_gan", 0.0, 0.8, 0.4),
        ("afed_gan", 1.0, 0.7, 0.1),
    ]


def test_compare_merges_methods_and_averages_seeds(tmp_path):
    a = _trace(tmp_path / "a.csv", "fedavg", [(1, 0, 0.0, 0.9, 0.6), (1, 1, 0.0, 0.8, 0.4)])
    b = _trace(tmp_path / "b.csv", "afed_g", [(1, 0, 2.0, 0.7, 0.2), (1, 0, 0.5, 0.75, 0.3)])
    rows = experiment_service.compare([a, b])
    assert [(r.method, r.lam) for r in rows] == [("afed_g", 0.5), ("afed_g", 2.0), ("fedavg", 0.0)]
    fedavg = rows[-1]
    assert fedavg.n_seeds == 2
    assert fedavg.acc == pytest.approx(0.85)
    assert fedavg.dp_gap == pytest.approx(0.5)
    assert fedavg.dp_std == pytest.approx(0.1)


def test_compare_empty_input():
    with pytest.raises(DataError):
        experiment_service.compare([])


def test_compare_rejects_foreign_csv(tmp_path):
    path = tmp_path / "x.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(SchemaError):
        experiment_service.compare([path])


def test_spearman_by_method(tmp_path):
    path = _trace(
        tmp_path / "t.csv",
        "fedreg",
        [(1, 0, lam, 0.8, gap) for lam, gap in [(0.0, 0.5), (1.0, 0.3), (2.0, 0.2), (4.0, 0.1)]],
    )
    rho = experiment_service.spearman_by_method(experiment_service.compare([path]))
    assert rho["fedreg"] == pytest.approx(-1.0)
    single = _trace(tmp_path / "s.csv", "fedavg", [(1, 0, 0.0, 0.8, 0.5)])
    assert np.isnan(experiment_service.spearman_by_method(experiment_service.compare([single]))["fedavg"])


@pytest.mark.slow
def test_tradeoff_is_monotone_on_synthetic_benchmark(tmp_path):
    text = """
name = "tradeoff"
method = "fedreg"
[dataset]
kind = "synthetic"
n_samples = 1000
n_features = 6
[partition]
n_clients = 4
scheme = "dirichlet"
concentration = 5.0
[network]
latent_dim = 8
extractor_hidden = [16]
head_hidden = 8
[training]
rounds = 20
lr_classifier = 0.01
lr_fair = 0.01
penalty_mode = "absolute"
[sweep]
lambdas = [0.0, 1.0, 4.0, 16.0, 64.0]
seeds = [0, 1, 2]
"""
    artifacts = experiment_service.run_config(experiment_service.validate(text), out_dir=tmp_path)
    rows = experiment_service.compare([artifacts.trace_path])
    assert experiment_service.spearman_by_method(rows)["fedreg"] <= -0.8


@pytest.mark.parametrize("path", sorted(CONFIG_DIR.glob("*.toml")), ids=lambda p: p.stem)
def test_shipped_configs_validate(path):
    cfg = experiment_service.load_config(path)
    assert cfg.name == path.stem
    if cfg.method != "fedavg":
        assert cfg.training.penalty_mode == "absolute"
