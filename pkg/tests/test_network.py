import json

import numpy as np
import pytest

import tests.basic_test_func as basic_test_func
from CNNLayoutEngine.layers.softmax import softmax_reference
from CNNLayoutEngine.layout_selection import HeuristicThresholds, LayerKind, get_preset
from CNNLayoutEngine.net.network import (LayerExecutionError, TransformStep, annotate_layouts, init_weights,
                                         plan_transforms, profile_refine, run_network, set_all_layouts)
from CNNLayoutEngine.net.network_spec import NetworkConfigError, load_network, parse_network
from CNNLayoutEngine.tensor import FilterBank, Layout, LayoutError, ShapeError, Tensor4D

ZFNET_TEXT = '''
{
  "input": {"n": 64, "c": 3, "h": 224, "w": 224},
  "layers": [
    {"name": "cv5", "kind": "conv", "c_out": 96, "f": 3, "stride": 2},
    {"name": "cv6", "kind": "conv", "c_out": 256, "f": 5, "stride": 2},
    {"name": "cv7", "kind": "conv", "c_out": 384, "f": 3, "pad": 1},
    {"name": "cv8", "kind": "conv", "c_out": 384, "f": 3, "pad": 1}
  ]
}
'''


def get_network_text(layers, input_dims=(2, 1, 8, 8)):
    n, c, h, w = input_dims
    return json.dumps({'input': {'n': n, 'c': c, 'h': h, 'w': w}, 'layers': layers})


def get_mixed_LeNet_spec(n=8):
    spec = set_all_layouts(basic_test_func.create_dummy_LeNet_spec(n), Layout.CHWN)
    spec.layers[2].layout = Layout.NCHW
    return spec


def test_parse_lenet_shapes():
    spec = basic_test_func.create_dummy_LeNet_spec()

    assert spec.input_dims == (8, 1, 28, 28)
    assert [layer.out_dims for layer in spec.layers] == [(8, 16, 24, 24), (8, 16, 12, 12), (8, 16, 8, 8),
                                                        (8, 16, 4, 4), (8, 10, 1, 1), (8, 10, 1, 1)]
    assert spec.layers[4].fan_in == 16 * 4 * 4
    assert spec.layers[1].pool_params.stride == 2
    assert all(layer.layout is None for layer in spec.layers)


def test_load_shipped_networks():
    for name in ('lenet', 'cifar', 'alexnet'):
        spec = load_network(basic_test_func.get_network_path(name))

        assert spec.name == name
        assert spec.layers[-1].kind == LayerKind.SOFTMAX

    alexnet = load_network(basic_test_func.get_network_path('alexnet'))
    assert alexnet.layers[0].out_dims == (128, 96, 55, 55)
    assert alexnet.layers[-2].out_dims == (128, 1000, 1, 1)


def test_parse_errors():
    with pytest.raises(NetworkConfigError):
        parse_network(get_network_text([]))
    with pytest.raises(NetworkConfigError):
        parse_network('{"input": {"n": 1, "c": 1, "h": 8, "w": 8}, "layers": [')
    with pytest.raises(NetworkConfigError, match='relu'):
        parse_network(get_network_text([{'name': 'r1', 'kind': 'relu'}]))
    with pytest.raises(NetworkConfigError, match='unique'):
        parse_network(get_network_text([{'name': 'a', 'kind': 'fc', 'out': 2}, {'name': 'a', 'kind': 'softmax'}]))
    with pytest.raises(NetworkConfigError, match='last'):
        parse_network(get_network_text([{'name': 'sm', 'kind': 'softmax'}, {'name': 'fc', 'kind': 'fc', 'out': 2}]))
    with pytest.raises(NetworkConfigError, match='follow'):
        parse_network(get_network_text([{'name': 'fc', 'kind': 'fc', 'out': 2},
                                        {'name': 'cv', 'kind': 'conv', 'c_out': 2, 'f': 1}]))
    with pytest.raises(NetworkConfigError):
        parse_network(get_network_text([{'name': 'cv', 'kind': 'conv', 'c_out': 0, 'f': 3}]))
    with pytest.raises(NetworkConfigError):
        parse_network(get_network_text([{'name': 'fc', 'kind': 'fc', 'out': 2, 'layout': 'chwn'}]))


def test_parse_channel_mismatch_names_both_layers():
    layers = [{'name': 'cv1', 'kind': 'conv', 'c_out': 4, 'f': 3},
              {'name': 'cv2', 'kind': 'conv', 'c_out': 4, 'f': 3, 'c_in': 8}]

    with pytest.raises(NetworkConfigError) as excinfo:
        parse_network(get_network_text(layers))

    assert excinfo.value.layer == 'cv2'
    assert 'cv1' in str(excinfo.value)


def test_parse_infers_input_channels():
    layers = [{'name': 'cv1', 'kind': 'conv', 'c_out': 4, 'f': 3},
              {'name': 'pl1', 'kind': 'pool', 'win': 2},
              {'name': 'cv2', 'kind': 'conv', 'c_out': 6, 'f': 1},
              {'name': 'cv3', 'kind': 'conv', 'c_out': 2, 'f': 1, 'c_in': 6}]
    spec = parse_network(get_network_text(layers))

    assert spec.layers[2].filter_dims == (6, 4, 1, 1)
    assert spec.layers[3].filter_dims == (2, 6, 1, 1)
    with pytest.raises(NetworkConfigError) as excinfo:
        parse_network(get_network_text([{'name': 'cv1', 'kind': 'conv', 'c_out': 4, 'f': 3, 'c_in': 'one'}]))

    assert excinfo.value.layer == 'cv1'


def test_parse_filter_larger_than_input():
    with pytest.raises(NetworkConfigError) as excinfo:
        parse_network(get_network_text([{'name': 'cv1', 'kind': 'conv', 'c_out': 4, 'f': 9}]))

    assert excinfo.value.layer == 'cv1'


def test_annotate_lenet_all_chwn():
    spec = annotate_layouts(basic_test_func.create_dummy_LeNet_spec(128), get_preset('titan-black'))

    assert spec.layouts[:4] == [Layout.CHWN] * 4
    assert spec.layouts[4:] == [None, None]
    assert plan_transforms(spec, input_layout=Layout.CHWN) == []


def test_annotate_zfnet_conv_stack():
    spec = annotate_layouts(parse_network(ZFNET_TEXT), get_preset('titan-black'))

    assert spec.layouts == [Layout.CHWN, Layout.NCHW, Layout.NCHW, Layout.NCHW]
    assert plan_transforms(spec) == [TransformStep(1, Layout.CHWN, Layout.NCHW)]


def test_annotate_keeps_overrides_and_copies():
    layers = [{'name': 'cv1', 'kind': 'conv', 'c_out': 4, 'f': 3, 'layout': 'nchw'},
              {'name': 'pl1', 'kind': 'pool', 'win': 2}]
    spec = parse_network(get_network_text(layers))
    annotated = annotate_layouts(spec, HeuristicThresholds(32, 128))

    assert annotated.layouts == [Layout.NCHW, Layout.CHWN]
    assert spec.layouts == [Layout.NCHW, None]


def test_plan_transforms_chain():
    spec = set_all_layouts(basic_test_func.create_dummy_LeNet_spec(), Layout.NCHW)
    spec.layers[1].layout = Layout.CHWN
    spec.layers[2].layout = Layout.CHWN

    assert plan_transforms(spec) == [TransformStep(1, Layout.NCHW, Layout.CHWN),
                                     TransformStep(3, Layout.CHWN, Layout.NCHW)]
    assert plan_transforms(spec, input_layout=Layout.CHWN)[0] == TransformStep(0, Layout.CHWN, Layout.NCHW)


def test_plan_transforms_needs_annotation():
    with pytest.raises(LayoutError):
        plan_transforms(basic_test_func.create_dummy_LeNet_spec())


def test_alexnet_transform_positions():
    spec = annotate_layouts(load_network(basic_test_func.get_network_path('alexnet')), get_preset('titan-black'))
    names = [layer.name for layer in spec.layers]
    steps = plan_transforms(spec, input_layout=Layout.CHWN)

    assert len(steps) == 4
    assert [names[step.position - 1] for step in steps] == ['pl1', 'cv2', 'pl2', 'cv5']


def test_init_weights():
    spec = basic_test_func.create_dummy_LeNet_spec()
    weights = init_weights(spec, seed=1)

    assert sorted(weights) == ['cv1', 'cv2', 'fc1']
    assert weights['cv2'].dims == (16, 16, 5, 5)
    assert weights['fc1'].shape == (256, 10)
    assert np.all(np.abs(weights['cv1'].data) <= 1.0 / np.sqrt(25))
    assert np.array_equal(init_weights(spec, seed=1)['fc1'], weights['fc1'])


def test_results_independent_of_layouts():
    config = basic_test_func.create_dummy_Config_object()
    lenet = basic_test_func.create_dummy_LeNet_spec()
    weights = init_weights(lenet, seed=3)
    t = Tensor4D.random(lenet.input_dims, Layout.NCHW, seed=4)

    outputs = []
    for spec in (set_all_layouts(lenet, Layout.CHWN), set_all_layouts(lenet, Layout.NCHW), get_mixed_LeNet_spec()):
        out, report = run_network(spec, t, weights=weights, config=config)
        outputs.append(out)

        assert out.shape == (8, 10)
        assert np.allclose(out.sum(axis=1), 1.0, atol=1e-5)

    assert np.allclose(outputs[0], outputs[1], rtol=1e-5, atol=1e-6)
    assert np.allclose(outputs[0], outputs[2], rtol=1e-5, atol=1e-6)


def test_report_entries():
    config = basic_test_func.create_dummy_Config_object()
    spec = get_mixed_LeNet_spec()
    t = Tensor4D.random(spec.input_dims, Layout.CHWN, seed=5)
    _, report = run_network(spec, t, config=config)
    df = report.to_dataframe()

    assert len(report.transforms) == 2
    assert len(df) == len(spec.layers) + 2
    assert list(df.columns) == ['layer', 'kind', 'layout', 'algorithm', 'nanos', 'input_loads', 'output_stores']
    assert df['kind'].tolist() == ['conv', 'pool', 'transform', 'conv', 'transform', 'pool', 'fc', 'softmax']
    assert df['layout'].tolist()[2] == 'CHWN->NCHW'
    assert df.loc[df['layer'] == 'pl1', 'algorithm'].item() == 'coarsened-2x2'
    assert df.loc[df['layer'] == 'pl1', 'output_stores'].item() == 8 * 16 * 12 * 12
    assert df['input_loads'].isna().sum() == 6
    assert report.total_nanos == df['nanos'].sum()


def test_identity_conv_then_softmax():
    layers = [{'name': 'cv', 'kind': 'conv', 'c_out': 1, 'f': 1, 'layout': 'chwn'},
              {'name': 'sm', 'kind': 'softmax'}]
    spec = parse_network(get_network_text(layers, input_dims=(2, 1, 3, 3)))
    t = Tensor4D.random(spec.input_dims, Layout.CHWN, seed=6)
    out, report = run_network(spec, t, weights={'cv': FilterBank((1, 1, 1, 1), [1.0])})

    assert report.transforms == []
    assert np.allclose(out, softmax_reference(t.logical().reshape(2, 9)), rtol=1e-6)


def test_run_checks_input_and_wraps_layer_errors():
    spec = set_all_layouts(basic_test_func.create_dummy_LeNet_spec(), Layout.NCHW)

    with pytest.raises(ShapeError):
        run_network(spec, Tensor4D.random((4, 1, 28, 28)))

    weights = init_weights(spec)
    weights['cv2'] = FilterBank.random((16, 8, 5, 5))
    with pytest.raises(LayerExecutionError, match='cv2'):
        run_network(spec, Tensor4D.random(spec.input_dims), weights=weights)


def test_profile_refine():
    spec = annotate_layouts(basic_test_func.create_dummy_LeNet_spec(2), get_preset('titan-black'))
    refined, table = profile_refine(spec, seed=7, repeats=1)

    assert list(table.columns) == ['layer', 'layout', 'algorithm', 'nanos']
    assert table['layer'].tolist() == ['cv1', 'cv1', 'cv2', 'cv2']
    assert set(refined.layouts[:4]) <= {Layout.CHWN, Layout.NCHW}
    assert spec.layouts[:4] == [Layout.CHWN] * 4
    assert refined.layers[1].layout == Layout.CHWN
