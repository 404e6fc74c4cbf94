import numpy as np
import pytest

from faultforge.errors import FileFormatError, ValidationError
from faultforge.model_registry import (
    Layer,
    LayerKind,
    Model,
    builtin_models,
    decode_detections,
    enumerate_injectable_layers,
    get_model,
    load_model,
    save_model,
)

rng = np.random.default_rng(513)


def small_model():
    return Model(
        "m3",
        (2, 6, 6),
        [
            Layer(LayerKind.CONV2D, rng.standard_normal((4, 2, 3, 3)).astype(np.float32),
                  np.zeros(4, np.float32), padding=1),
            Layer(LayerKind.RELU),
            Layer(LayerKind.CONV2D, rng.standard_normal((4, 4, 3, 3)).astype(np.float32),
                  np.zeros(4, np.float32), padding=1),
            Layer(LayerKind.FLATTEN),
            Layer(LayerKind.LINEAR, rng.standard_normal((5, 144)).astype(np.float32),
                  np.zeros(5, np.float32)),
        ],
    )


# ---------------------------------------------------------------------------
# enumeration
# ---------------------------------------------------------------------------

def test_enumerate_all_layers():
    infos = enumerate_injectable_layers(small_model())
    assert [li.index for li in infos] == [0, 1, 2]
    assert [li.kind for li in infos] == [LayerKind.CONV2D, LayerKind.CONV2D, LayerKind.LINEAR]


def test_enumerate_kind_filter_empty_is_error():
    conv_only = Model(
        "c", (1, 4, 4),
        [Layer(LayerKind.CONV2D, np.ones((1, 1, 2, 2), np.float32), np.zeros(1, np.float32))])
    with pytest.raises(ValidationError):
        enumerate_injectable_layers(conv_only, kinds={LayerKind.LINEAR})


def test_enumerate_range():
    infos = enumerate_injectable_layers(small_model(), layer_range=(1, 1))
    assert len(infos) == 1 and infos[0].index == 1


def test_enumerate_bad_range():
    with pytest.raises(ValidationError):
        enumerate_injectable_layers(small_model(), layer_range=(2, 5))


def test_enumeration_stable_across_calls():
    m = small_model()
    assert m.injectable_infos == m.injectable_infos


def test_layer_info_counts_match_shape_arithmetic():
    m = small_model()
    infos = m.injectable_infos
    # conv outputs 4x6x6 with padding 1
    assert infos[0].neuron_dims == (4, 1, 6, 6)
    assert infos[0].element_count_neurons == 144
    assert infos[0].weight_dims == (4, 2, 1, 3, 3)
    assert infos[0].element_count_weights == 72
    assert infos[2].neuron_dims == (5, 1, 1, 1)
    assert infos[2].weight_dims == (5, 144, 1, 1, 1)


def test_incompatible_layers_rejected():
    with pytest.raises(ValidationError):
        Model("bad", (2, 4, 4),
              [Layer(LayerKind.CONV2D, np.ones((1, 3, 2, 2), np.float32),
                     np.zeros(1, np.float32))])


# ---------------------------------------------------------------------------
# built-ins
# ---------------------------------------------------------------------------

def test_builtin_names():
    assert set(builtin_models()) == {"tiny-cnn", "tiny-3d", "tiny-det"}


def test_tiny_cnn_deterministic_logits():
    x = np.linspace(0, 1, 3 * 16 * 16, dtype=np.float32).reshape(3, 16, 16)
    a = get_model("tiny-cnn").forward(x)
    b = get_model("tiny-cnn").forward(x)
    assert np.array_equal(a, b)
    assert a.shape == (10,)


def test_builtin_param_counts():
    # documented counts, recomputed here from the layer dims
    expected = {"tiny-cnn": 3962, "tiny-3d": 6553, "tiny-det": 47517}
    for name, m in builtin_models().items():
        # weights plus one bias per output channel, recomputed from dims
        by_dims = sum(li.element_count_weights + li.neuron_dims[0] for li in m.injectable_infos)
        assert m.param_count() == expected[name] == by_dims
        assert m.param_count() <= 50_000


def test_tiny_det_decodes_five_valid_boxes():
    m = get_model("tiny-det")
    x = np.linspace(-1, 1, 3 * 32 * 32, dtype=np.float32).reshape(3, 32, 32)
    boxes = decode_detections(m, m.forward(x))
    assert len(boxes) == 5
    for x1, y1, x2, y2, score, cls in boxes:
        assert x1 < x2 and y1 < y2
        assert 0.0 <= score <= 1.0
        assert 0 <= cls < 4


def test_tiny_3d_runs():
    m = get_model("tiny-3d")
    x = np.zeros(m.input_shape, np.float32)
    out = m.forward(x)
    assert out.shape == (5,)
    assert np.isfinite(out).all()


# ---------------------------------------------------------------------------
# forward hooks
# ---------------------------------------------------------------------------

def test_forward_observe_sees_every_layer():
    m = small_model()
    seen = []
    m.forward(np.zeros((2, 6, 6), np.float32), observe=lambda pos, t: seen.append(pos))
    assert seen == [0, 1, 2, 3, 4]


def test_forward_observe_is_readonly():
    m = small_model()

    def poke(pos, t):
        with pytest.raises(ValueError):
            t[...] = 0.0

    m.forward(np.zeros((2, 6, 6), np.float32), observe=poke)


def test_forward_inject_receives_postbias_output():
    m = small_model()
    captured = {}

    def inject(idx, out):
        captured[idx] = out.shape

    m.forward(np.zeros((2, 6, 6), np.float32), inject=inject)
    assert captured == {0: (4, 6, 6), 1: (4, 6, 6), 2: (5,)}


# ---------------------------------------------------------------------------
# ALFM round trip
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("name", ["tiny-cnn", "tiny-3d", "tiny-det"])
def test_model_roundtrip_bit_exact(tmp_path, name):
    m = get_model(name)
    p = tmp_path / f"{name}.alfm"
    save_model(m, p)
    m2 = load_model(p)
    assert m2.name == m.name
    assert m2.input_shape == m.input_shape
    assert m2.head == m.head
    assert m2.weights_hash() == m.weights_hash()
    for a, b in zip(m.layers, m2.layers):
        assert a.kind == b.kind
        if a.weights is not None:
            assert np.array_equal(a.weights.view(np.uint32), b.weights.view(np.uint32))


def test_model_save_is_deterministic(tmp_path):
    m = get_model("tiny-cnn")
    p1, p2 = tmp_path / "a.alfm", tmp_path / "b.alfm"
    save_model(m, p1)
    save_model(load_model(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_truncated_model_file(tmp_path):
    m = get_model("tiny-cnn")
    p = tmp_path / "t.alfm"
    save_model(m, p)
    data = p.read_bytes()
    p.write_bytes(data[: len(data) // 2])
    with pytest.raises(FileFormatError) as e:
        load_model(p)
    assert e.value.offset is not None


def test_bad_magic(tmp_path):
    p = tmp_path / "x.alfm"
    p.write_bytes(b"NOPE" + bytes(64))
    with pytest.raises(FileFormatError):
        load_model(p)


def test_clamp_bounds_roundtrip(tmp_path):
    m = small_model()
    m.layers[0].clamp_lo = -1.5
    m.layers[0].clamp_hi = 2.5
    p = tmp_path / "c.alfm"
    save_model(m, p)
    m2 = load_model(p)
    assert m2.layers[0].clamp_lo == pytest.approx(-1.5)
    assert m2.layers[0].clamp_hi == pytest.approx(2.5)
    assert m2.layers[2].clamp_lo is None
