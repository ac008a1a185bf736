import json
import math

import numpy as np
import pandas as pd
import pytest

from src.config import Config, ExperimentConfig, load_experiment_config, parse_config_text
from src.errors import DivisionError, ValidationError
from src.utils import (LogComplex, PartialSum, format_float, log_sum, to_jsonable, tree_reduce, wrap_phase,
                       write_json, write_table)


def test_parse_config_text_strips_comments():
    values = parse_config_text('# header\nmodel.a = 1.5  # speed\n\ngeometry.points = 0.3,0.2; 0.6,0.45\n')
    assert values == {'model.a': '1.5', 'geometry.points': '0.3,0.2; 0.6,0.45'}


def test_parse_config_text_rejects_missing_equals():
    with pytest.raises(ValidationError):
        parse_config_text('model.a 1.5')


def test_overrides_win_over_file(tmp_path):
    path = tmp_path / 'run.cfg'
    path.write_text('command = density\ngeometry.M = 2\nrun.seed = 5\n')
    cfg = load_experiment_config(str(path), {'geometry.M': '4', 'run.seed': None})
    assert cfg.get_int('geometry.M') == 4
    assert cfg.get_int('run.seed') == 5
    assert cfg.command == 'density'


def test_load_rejects_missing_file_and_unknown_command(tmp_path):
    with pytest.raises(ValidationError):
        load_experiment_config(str(tmp_path / 'absent.cfg'))
    with pytest.raises(ValidationError):
        load_experiment_config(None, {'command': 'fly'})


def test_typed_getters():
    cfg = ExperimentConfig({'numeric.T_grid': '1:3:5', 'numeric.n_max': '4', 'geometry.M': '1,2,3',
                            'geometry.points': '0.3,0.2; 0.6,0.45', 'numeric.bad': 'x'})
    assert cfg.get_float_list('numeric.T_grid') == pytest.approx([1.0, 1.5, 2.0, 2.5, 3.0])
    assert cfg.get_int('numeric.n_max') == 4
    assert cfg.get_int_list('geometry.M') == [1, 2, 3]
    assert cfg.get_points('geometry.points') == [(0.3, 0.2), (0.6, 0.45)]
    assert cfg.get_float('missing', 2.5) == 2.5
    with pytest.raises(ValidationError):
        cfg.get_float('numeric.bad')
    with pytest.raises(ValidationError):
        cfg.require('model.a')


def test_config_hash_ignores_insertion_order():
    first = ExperimentConfig({'a': '1', 'b': '2'})
    second = ExperimentConfig({'b': '2', 'a': '1'})
    assert first.config_hash() == second.config_hash()
    assert first.config_hash() != ExperimentConfig({'a': '1', 'b': '3'}).config_hash()


def test_validate_config_flags_bad_radius_mode(monkeypatch):
    monkeypatch.setattr(Config, 'RADIUS_MODE', 'spiral')
    status = Config.validate_config()
    assert not status['is_valid']


def test_wrap_phase_range():
    for phase in (-7.0, -math.pi, 0.0, math.pi, 4.0, 12.5):
        wrapped = wrap_phase(phase)
        assert -math.pi < wrapped <= math.pi
        assert math.cos(wrapped) == pytest.approx(math.cos(phase), abs=1e-12)


def test_log_complex_arithmetic():
    a = LogComplex.from_complex(1.5 - 2.0j)
    b = LogComplex.from_complex(-0.25 + 0.75j)
    assert (a * b).to_complex() == pytest.approx((1.5 - 2.0j) * (-0.25 + 0.75j), rel=1e-12)
    assert (a / b).to_complex() == pytest.approx((1.5 - 2.0j) / (-0.25 + 0.75j), rel=1e-12)
    assert (a + b).to_complex() == pytest.approx(1.25 - 1.25j, rel=1e-12)
    assert abs(a - a) < 1e-12
    assert (LogComplex.zero() + b).to_complex() == pytest.approx(b.to_complex())
    with pytest.raises(DivisionError):
        a / LogComplex.zero()


def test_log_complex_handles_huge_magnitudes():
    big = LogComplex(1000.0, 0.0)
    total = big + big.scale(-1.0)
    assert total.log_mag == pytest.approx(1000.0 + math.log(1 + math.exp(-1.0)), rel=1e-14)


def test_log_sum_reports_cancellation():
    total, ratio = log_sum([LogComplex(0.0, 0.0), LogComplex(math.log(0.999), math.pi)])
    assert total.to_complex().real == pytest.approx(0.001, rel=1e-9)
    assert ratio == pytest.approx(0.001, rel=1e-9)
    assert log_sum([]) == (LogComplex.zero(), 1.0)


def test_partial_sums_reduce_like_a_plain_sum():
    rng = np.random.default_rng(0)
    logs = rng.normal(size=1000) * 20 + 1j * rng.uniform(-3, 3, size=1000)
    parts = [PartialSum.from_logs(chunk) for chunk in np.array_split(logs, 7)]
    total = tree_reduce(parts).to_log_complex()
    pivot = logs.real.max()
    expected = np.sum(np.exp(logs - pivot))
    assert total.scale(-pivot).to_complex() == pytest.approx(expected, rel=1e-10)
    assert tree_reduce(parts).count == 1000


def test_format_float_round_trips():
    for value in (0.1, 1.0 / 3.0, 2.5e-300, 123456789.123):
        assert float(format_float(value)) == value


def test_to_jsonable_converts_numpy_and_complex():
    payload = to_jsonable({'x': np.float64(1.5), 'n': np.int64(3), 'z': 1 + 2j, 'bad': math.nan,
                           'arr': np.arange(3)})
    assert payload == {'x': 1.5, 'n': 3, 'z': {'re': 1.0, 'im': 2.0}, 'bad': 'nan', 'arr': [0, 1, 2]}


def test_write_table_appends_hash_and_seed(tmp_path):
    path = write_table(pd.DataFrame({'T': [1.0], 'density': [0.25]}), str(tmp_path / 'nested' / 'a.csv'),
                       'abc', 11)
    table = pd.read_csv(path)
    assert list(table.columns) == ['T', 'density', 'config_hash', 'seed']
    assert table['seed'].iloc[0] == 11


def test_write_json_sorted_keys(tmp_path):
    path = write_json({'b': 1, 'a': [1.0, 2.0]}, str(tmp_path / 'out.json'))
    text = open(path, encoding='utf-8').read()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {'a': [1.0, 2.0], 'b': 1}
