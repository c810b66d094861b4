import pytest

from mpose import presets
from mpose.errors import ConfigError
from mpose.mpo import MpoPlan
from mpose.nn import compression_report


def test_dense_counts():
    assert presets.mlp_preset(0).n_params() == 3543296
    assert presets.lstm_preset(0).n_params() == 5904640


def test_mlp_rate_5_plans():
    spec = presets.mlp_preset(5)
    for l in spec.layers:
        if (l.n_out, l.n_in) == (1024, 1024):
            assert l.plan == MpoPlan((4, 8, 8, 4), (4, 8, 8, 4), (1, 32, 32, 32, 1))
    assert spec.layers[0].kind == "mpo" and spec.context == 4


def test_lstm_rate_100_solution_c():
    spec = presets.lstm_preset(100)
    l = spec.layers[0]
    assert l.kind == "mpo_lstm"
    assert l.plan_w == MpoPlan((8, 8, 8, 4), (4, 4, 4, 4), (1, 10, 10, 10, 1))
    assert l.plan_u.fj == (4, 4, 8, 4)
    assert spec.weight_params() == 57712
    assert spec.n_params() == 64112


@pytest.mark.parametrize("rate, solution", [(5, "A"), (10, "B"), (20, "B"), (25, "C"), (75, "C")])
def test_lstm_solution_by_rate(rate, solution):
    spec = presets.lstm_preset(rate)
    expected = presets.LSTM_SOLUTIONS[solution][0][0]
    assert (spec.layers[0].plan_w.fi, spec.layers[0].plan_w.fj) == expected


@pytest.mark.parametrize("rate", presets.RATES[1:])
def test_preset_rates_close_to_nominal(rate):
    mlp = compression_report(presets.mlp_preset(rate)).rate
    lstm = compression_report(presets.lstm_preset(rate)).rate
    assert 0.85 * rate < mlp < 1.2 * rate
    assert 0.85 * rate < lstm < 1.2 * rate


@pytest.mark.parametrize("rate", [5, 10, 25, 100])
def test_desk_presets_reach_rate(rate):
    for arch in ("mlp-desk", "lstm-desk"):
        assert compression_report(presets.build_from_preset(arch, rate)).rate >= rate


def test_unsupported_rate():
    with pytest.raises(ConfigError):
        presets.mlp_preset(7)
    with pytest.raises(ConfigError):
        presets.build_from_preset("cnn", 5)


def test_twins():
    spec = presets.mlp_desk_preset(100)
    dense = presets.dense_twin(spec)
    assert all(l.kind == "dense" for l in dense.layers)
    assert dense.n_params() == presets.mlp_desk_preset(0).n_params()
    full = presets.full_rank_twin(spec)
    assert compression_report(full).rate < 1
