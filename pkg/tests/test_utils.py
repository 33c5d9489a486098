import pytest
from astropy import units as u

import CNNLayoutEngine.utils.formatting as form
import CNNLayoutEngine.utils.unit_conversion as unit
import tests.basic_test_func as basic_test_func
from CNNLayoutEngine.config import Config
from CNNLayoutEngine.utils.timing import measure_nanos, time_call


def test_elements_to_bytes():
    result = unit.elements_to_bytes(10)

    assert result == 40 * u.byte


def test_bandwidth_gbps():
    assert unit.bandwidth_gbps(1000, 1000) == pytest.approx(1.0)
    assert unit.bandwidth_gbps(2 * u.kbyte, 1000) == pytest.approx(2.0)
    assert unit.bandwidth_gbps(8, 0) == float('inf')


def test_nanos_to_millis():
    assert unit.nanos_to_millis(2500000) == pytest.approx(2.5)


def test_dims_strings():
    assert form.dims_to_string((128, 3, 224, 224)) == '128x3x224x224'
    assert form.get_dims_from_string('64,96,55,55') == (64, 96, 55, 55)
    assert form.get_dims_from_string('64x96x55x55') == (64, 96, 55, 55)
    with pytest.raises(ValueError):
        form.get_dims_from_string('64,96,55')


def test_get_log_step():
    assert form.get_log_step('cv1', 1) == '        cv1'


def test_measure_nanos_warmup_and_repeats():
    calls = []
    nanos = measure_nanos(lambda: calls.append(1), repeats=3, warmup=2)

    assert len(calls) == 5
    assert isinstance(nanos, int)
    assert nanos >= 0
    with pytest.raises(ValueError):
        measure_nanos(lambda: None, repeats=0)


def test_time_call():
    result, nanos = time_call(max, 3, 4)

    assert result == 4
    assert nanos >= 0


def test_config_from_tests_json():
    config = basic_test_func.create_dummy_Config_object()

    assert config.BENCH_REPEATS == 1
    assert config.LAYOUT_PRESET == 'titan-black'
    assert config.POOL_COARSENING == [2, 2]
    assert config.GEMM_BLOCK == 64


def test_config_defaults_and_checks():
    config = Config(init_mode='default')

    assert config.CALIBRATION_FILE == 'calibration.txt'
    assert config.POOL_ACCUMULATOR_CAP == 64
    assert config.TRANSFORM_TILE == 32
    with pytest.raises(ValueError):
        Config(init_mode='from_dict', config_dict={'POOL_COARSENING': [9, 9]})
    with pytest.raises(ValueError):
        Config(init_mode='from_dict', config_dict={'BENCH_SCALE': 0})
    with pytest.raises(ValueError):
        Config(init_mode='from_yaml')


def test_config_calibration_file_from_environment(monkeypatch):
    monkeypatch.setenv('CLE_CALIBRATION_FILE', '/tmp/host.calibration')
    config = Config(init_mode='from_dict', config_dict={'POOL_COARSENING': 'autotune'})

    assert config.CALIBRATION_FILE == '/tmp/host.calibration'
    assert config.POOL_COARSENING == 'autotune'
