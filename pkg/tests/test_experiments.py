import json

import numpy as np
import pytest

from gtvmin import experiments
from gtvmin.experiments import (PRESETS, ExperimentConfig, ExperimentError, FmiConfig,
                                NumericalFailure, config_from_dict, emit_plots_data,
                                format_value, gen_fmi_stations, get_preset,
                                normalize_csv_text, read_csv, run_experiment, write_csv)


def small_chain(**kw):
    base = dict(name="tiny", topology={"kind": "chain", "n": 5, "eps": 0.0},
                labels={"d": 2, "m": 5, "sigma": 0.0, "scheme": "fixed",
                        "vectors": [[2.0, 2.0], [-2.0, 2.0]]},
                sweep={"name": "eps", "values": [0.0, 0.5]}, rho=0.6, iters=50, seeds=[1, 0])
    base.update(kw)
    return ExperimentConfig(**base)


def test_presets_validate():
    assert set(PRESETS) == {"sbm-table1", "chain-noiseless", "chain-noisy", "star-consensus",
                            "synthetic-fmi"}
    for name in PRESETS:
        get_preset(name).validate()
    assert get_preset("chain-noiseless").iters == 2000
    assert get_preset("sbm-table1").seeds == [0, 1, 2]
    with pytest.raises(ValueError):
        get_preset("fig9")


def test_preset_copy_is_independent():
    cfg = get_preset("chain-noisy")
    cfg.seeds.append(99)
    assert 99 not in PRESETS["chain-noisy"].seeds


def test_csv_shape_and_determinism():
    cfg = small_chain(series=[{"label": "a", "lambda": 0.1}, {"label": "b", "lambda": 0.0}])
    h1, r1 = run_experiment(cfg)
    h2, r2 = run_experiment(small_chain(series=[{"label": "a", "lambda": 0.1},
                                                {"label": "b", "lambda": 0.0}], seeds=[0, 1]))
    assert h1 == ["param", "mse_mean_a", "mse_std_a", "mse_mean_b", "mse_std_b"]
    assert [r[0] for r in r1] == [0.0, 0.5]
    # seed order in the config does not matter
    assert write_csv(h1, r1) == write_csv(h2, r2)


def test_unlabelled_series_columns():
    h, rows = run_experiment(small_chain(seeds=[0]))
    assert h == ["param", "mse_mean", "mse_std"]
    assert rows[0][2] == 0.0


def test_spread_metric():
    cfg = ExperimentConfig(name="s", topology={"kind": "star", "leaves": 4},
                           labels={"d": 1, "m": 5, "sigma": 0.1, "scheme": "gaussian"},
                           sweep={"name": "lambda", "values": [0.0, 100.0]}, iters=300,
                           metric="spread")
    _, rows = run_experiment(cfg)
    assert rows[0][1] > 0.1 and rows[1][1] < 1e-6


def test_config_from_dict(tmp_path):
    cfg = config_from_dict({"preset": "star-consensus", "seeds": [4], "iters": 10})
    assert cfg.seeds == [4] and cfg.iters == 10 and cfg.metric == "spread"
    with pytest.raises(ValueError):
        config_from_dict({"preset": "star-consensus", "colour": 1})
    with pytest.raises(ValueError):
        config_from_dict({"name": "x"})
    with pytest.raises(ValueError):
        config_from_dict({**small_chain().__dict__, "iters": 0})
    bad = small_chain().__dict__ | {"series": [{"lambda": -1.0}]}
    with pytest.raises(ValueError):
        config_from_dict(bad)
    fmi = config_from_dict({"kind": "fmi", "n_stations": 20, "splits": 2})
    assert isinstance(fmi, FmiConfig)


def test_failure_names_the_point(monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("kaput")

    monkeypatch.setattr(experiments, "mse", boom)
    with pytest.raises(ExperimentError, match=r"eps=0.0, series='', seed=0: kaput"):
        run_experiment(small_chain())


def test_non_finite_is_numerical_failure(monkeypatch):
    from gtvmin.solver import STOP_NON_FINITE, SolveResult

    def bad_solve(g, losses, cfg):
        return SolveResult(np.zeros((g.n, 2)), None, 0, STOP_NON_FINITE, [])

    monkeypatch.setattr(experiments, "solve", bad_solve)
    with pytest.raises(NumericalFailure, match="seed=0"):
        run_experiment(small_chain())


def test_fmi_station_generator():
    cfg = FmiConfig(n_stations=12, regions=3, m=10)
    a = gen_fmi_stations(cfg, 0)
    b = gen_fmi_stations(cfg, 0)
    assert len(a) == 12 and a[0].X.shape == (10, 2)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.X, y.X)


def test_fmi_small_run_is_deterministic():
    cfg = FmiConfig(n_stations=24, regions=2, m=12, splits=2, iters=50)
    h, rows = run_experiment(cfg)
    assert h == ["param", "val_err_mean", "val_err_std"]
    assert [r[0] for r in rows] == [0.0, 0.5]
    assert write_csv(h, rows) == write_csv(*run_experiment(cfg))


def test_format_value():
    assert format_value(3) == "3"
    assert format_value(0.1) == "0.10000000000000001"
    assert float(format_value(1 / 3)) == 1 / 3
    assert format_value(None) == ""
    assert format_value(" 2.50 ") == "2.5"
    assert format_value("abc") == "abc"


def test_normalize_examples():
    assert normalize_csv_text("iter,objective,gtv,gap\n") == "iter,objective,gtv,gap\n"
    one = "iter,objective,gtv,gap\n0,1.5,0.25,\n"
    assert normalize_csv_text(one) == one
    a = normalize_csv_text("param,mse_std,mse_mean\n0.5,0.1,2\n")
    b = normalize_csv_text("mse_mean,param,mse_std\n2,0.5,0.1\n")
    assert a == b == "param,mse_mean,mse_std\n0.5,2,0.10000000000000001\n"
    assert normalize_csv_text(a) == a


@pytest.mark.parametrize("text", ["", "a,a\n1,2\n", "a,b\n1\n", ",b\n1,2\n"])
def test_normalize_rejects_malformed(text):
    with pytest.raises(ValueError):
        normalize_csv_text(text)


def test_emitted_csv_round_trips(tmp_path):
    h, rows = run_experiment(small_chain(seeds=[0]))
    path = tmp_path / "out.csv"
    write_csv(h, rows, path)
    h2, rows2 = read_csv(path)
    assert h2 == h and rows2 == rows
    norm = emit_plots_data(path, tmp_path / "n.csv")
    assert (tmp_path / "n.csv").read_text() == norm
    assert read_csv(tmp_path / "n.csv") == (h, rows)
