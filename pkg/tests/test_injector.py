import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from faultforge import tensor_core as tc
from faultforge.errors import FaultLocationError, FaultsExhausted, ValidationError
from faultforge.fault_gen import NeuronFault, WeightFault, generate_fault_matrix
from faultforge.injector import (
    CorruptedModel,
    FlipDirection,
    apply_neuron_faults,
    apply_weight_faults,
    f32_bits,
    f32_from_bits,
    flip_bit,
    make_fault_iterator,
)
from faultforge.model_registry import Layer, LayerKind, Model, get_model
from faultforge.scenario import (
    FaultPersistence,
    InjectionTarget,
    InjPolicy,
    RndMode,
    ScenarioConfig,
    scenario_hash,
)

rng = np.random.default_rng(40423)


# ---------------------------------------------------------------------------
# flip_bit
# ---------------------------------------------------------------------------

def test_flip_sign_bit():
    y, d = flip_bit(1.0, 31)
    assert y == -1.0 and d is FlipDirection.ZERO_TO_ONE


def test_flip_mantissa_msb():
    y, d = flip_bit(1.0, 22)
    assert y == 1.5 and d is FlipDirection.ZERO_TO_ONE


def test_flip_exponent_msb_gives_inf():
    y, d = flip_bit(1.0, 30)
    assert np.isposinf(y) and d is FlipDirection.ZERO_TO_ONE


def test_flip_one_to_zero_direction():
    y, d = flip_bit(-1.0, 31)
    assert y == 1.0 and d is FlipDirection.ONE_TO_ZERO


@given(st.floats(width=32, allow_nan=False, allow_infinity=False), st.integers(0, 31))
@settings(max_examples=300, deadline=None)
def test_flip_is_involution_and_single_bit(x, bit):
    y, _ = flip_bit(x, bit)
    back, _ = flip_bit(y, bit)
    assert f32_bits(back) == f32_bits(np.float32(x))
    assert bin(f32_bits(y) ^ f32_bits(np.float32(x))).count("1") == 1


def test_bits_roundtrip_preserves_nan_payload():
    weird_nan = 0x7F800001  # signaling NaN pattern
    v = f32_from_bits(weird_nan)
    assert np.isnan(v)
    assert f32_bits(v) == weird_nan


# ---------------------------------------------------------------------------
# neuron faults
# ---------------------------------------------------------------------------

def test_apply_neuron_fault_bitflip_event():
    out = np.ones((2, 3, 3), dtype=np.float32)
    rec = NeuronFault(0, 0, 1, -1, 2, 2, 31.0)
    events = apply_neuron_faults(out, [rec], RndMode.BITFLIP, columns=[7])
    assert out[1, 2, 2] == -1.0
    (e,) = events
    assert e.column == 7
    assert e.original_value == 1.0 and e.corrupted_value == -1.0
    assert e.direction is FlipDirection.ZERO_TO_ONE


def test_apply_neuron_fault_value_mode():
    out = np.zeros(5, dtype=np.float32)
    rec = NeuronFault(0, 0, 3, -1, 0, 0, 2.5)
    apply_neuron_faults(out, [rec], RndMode.RANDOM_VALUE)
    assert out[3] == 2.5


def test_out_of_bounds_names_column():
    out = np.zeros((2, 3, 3), dtype=np.float32)
    rec = NeuronFault(0, 0, 9, -1, 0, 0, 1.0)
    with pytest.raises(FaultLocationError) as e:
        apply_neuron_faults(out, [rec], columns=[42])
    assert "column 42" in str(e.value)


def one_neuron_model(mat, cfg, rec):
    return CorruptedModel(mat, [(0, rec)], InjectionTarget.NEURONS, cfg.rnd_mode,
                          cfg.fault_persistence)


def test_empty_group_is_identity():
    m = get_model("tiny-cnn")
    x = rng.random((3, 16, 16)).astype(np.float32)
    cm = CorruptedModel(m, [], InjectionTarget.NEURONS, RndMode.BITFLIP,
                        FaultPersistence.TRANSIENT)
    out, events = cm.forward(x)
    assert events == []
    assert np.array_equal(out.view(np.uint32), m.forward(x).view(np.uint32))


def test_neuron_injection_matches_split_model_oracle():
    """Hook-based injection == manually editing the tensor between two half runs."""
    m = get_model("tiny-cnn")
    x = rng.random((3, 16, 16)).astype(np.float32)
    rec = NeuronFault(batch=0, layer=1, channel=3, depth=-1, height=2, width=5, value=30.0)
    cm = CorruptedModel(m, [(0, rec)], InjectionTarget.NEURONS, RndMode.BITFLIP,
                        FaultPersistence.TRANSIENT)
    got, events = cm.forward(x)
    assert len(events) == 1

    # independent oracle: run the layers by hand, flip the element in between
    l = {i: m.layers[i] for i in range(len(m.layers))}
    t = tc.conv2d_forward(x, l[0].weights, l[0].bias, 1, 1)
    t = tc.relu(t)
    t = tc.maxpool2d(t, 2, 2)
    t = tc.conv2d_forward(t, l[3].weights, l[3].bias, 1, 1)
    flipped, _ = flip_bit(t[3, 2, 5], 30)
    t = t.copy()
    t[3, 2, 5] = flipped
    t = tc.relu(t)
    t = tc.maxpool2d(t, 2, 2)
    want = tc.linear_forward(t.reshape(-1), l[7].weights, l[7].bias)
    assert np.array_equal(got.view(np.uint32), want.view(np.uint32))


def test_neuron_fault_locality():
    """Activations strictly before the faulted layer are untouched."""
    m = get_model("tiny-cnn")
    x = rng.random((3, 16, 16)).astype(np.float32)
    rec = NeuronFault(0, 1, 0, -1, 1, 1, 30.0)
    cm = CorruptedModel(m, [(0, rec)], InjectionTarget.NEURONS, RndMode.BITFLIP,
                        FaultPersistence.TRANSIENT)
    clean, faulty = [], []
    m.forward(x, observe=lambda p, t: clean.append(t.copy()))
    cm.forward(x, observe=lambda p, t: faulty.append(t.copy()))
    conv2_pos = 3
    for p in range(conv2_pos):
        assert np.array_equal(clean[p], faulty[p])
    assert not np.array_equal(clean[conv2_pos], faulty[conv2_pos])


def test_inf_logit_detected_downstream():
    m = get_model("tiny-cnn")
    x = rng.random((3, 16, 16)).astype(np.float32)
    rec = NeuronFault(0, 2, 4, -1, 0, 0, float(np.float32(np.inf)))
    cm = CorruptedModel(m, [(0, rec)], InjectionTarget.NEURONS, RndMode.RANDOM_VALUE,
                        FaultPersistence.TRANSIENT)
    out, _ = cm.forward(x)
    assert np.isinf(out).any()


# ---------------------------------------------------------------------------
# weight faults
# ---------------------------------------------------------------------------

def test_transient_weight_fault_never_touches_base():
    m = get_model("tiny-cnn")
    baseline = m.weights_hash()
    rec = WeightFault(layer=0, out_ch=2, in_ch=1, k_depth=-1, k_h=0, k_w=2, value=31.0)
    cm = apply_weight_faults(m, [rec])
    x = rng.random((3, 16, 16)).astype(np.float32)
    out_corr, _ = cm.forward(x)
    assert m.weights_hash() == baseline
    assert not np.array_equal(out_corr, m.forward(x))
    cm.restore()
    out_restored, _ = cm.forward(x)
    assert np.array_equal(out_restored, m.forward(x))
    assert m.weights_hash() == baseline


def test_weight_sign_flip_linear_delta():
    # dyadic weights keep every partial sum exact, so the output delta is -2w
    w = np.array([[0.5, -0.25, 1.0, 0.125], [0.75, 0.5, -0.5, 0.25]], dtype=np.float32)
    b = np.zeros(2, dtype=np.float32)
    m = Model("lin", (4,), [Layer(LayerKind.LINEAR, w, b)])
    x = np.ones(4, dtype=np.float32)
    rec = WeightFault(layer=0, out_ch=0, in_ch=2, k_depth=-1, k_h=0, k_w=0, value=31.0)
    cm = apply_weight_faults(m, [rec])
    orig = m.forward(x)
    corr, _ = cm.forward(x)
    assert corr[0] - orig[0] == -2.0 * w[0, 2]
    assert corr[1] == orig[1]


def test_weight_event_records_values():
    m = get_model("tiny-cnn")
    rec = WeightFault(0, 1, 0, -1, 1, 1, 31.0)
    cm = apply_weight_faults(m, [rec], columns=[5])
    (e,) = cm.weight_events
    assert e.column == 5
    assert e.corrupted_value == -e.original_value
    assert e.fault is rec


def test_weight_out_of_bounds():
    m = get_model("tiny-cnn")
    rec = WeightFault(0, 99, 0, -1, 0, 0, 1.0)
    with pytest.raises(FaultLocationError):
        apply_weight_faults(m, [rec])


# ---------------------------------------------------------------------------
# fault iterator
# ---------------------------------------------------------------------------

def neuron_cfg(**kw):
    base = dict(dataset_size=4, num_runs=1, max_faults_per_image=1,
                injection_target=InjectionTarget.NEURONS, rnd_mode=RndMode.BITFLIP,
                rnd_bit_range=(0, 31))
    base.update(kw)
    return ScenarioConfig(**base).validate()


def test_iterator_counts_per_image():
    m = get_model("tiny-cnn")
    cfg = neuron_cfg()
    it = make_fault_iterator(m, generate_fault_matrix(m, cfg, cfg.seed), cfg)
    got = [next(it) for _ in range(4)]
    assert all(len(cm.group) == 1 for cm in got)
    with pytest.raises(FaultsExhausted):
        next(it)


def test_iterator_groups_of_c():
    m = get_model("tiny-cnn")
    cfg = neuron_cfg(dataset_size=4, num_runs=2, max_faults_per_image=3)
    it = make_fault_iterator(m, generate_fault_matrix(m, cfg, cfg.seed), cfg)
    got = [next(it) for _ in range(8)]
    assert all(len(cm.group) == 3 for cm in got)
    cols = [col for cm in got for col, _ in cm.group]
    assert cols == list(range(24))
    with pytest.raises(FaultsExhausted):
        next(it)


def test_iterator_per_epoch():
    m = get_model("tiny-cnn")
    cfg = neuron_cfg(num_runs=2, inj_policy=InjPolicy.PER_EPOCH)
    it = make_fault_iterator(m, generate_fault_matrix(m, cfg, cfg.seed), cfg)
    assert len(next(it).group) == 1
    assert len(next(it).group) == 1
    with pytest.raises(FaultsExhausted):
        next(it)


def test_iterator_rejects_mismatched_scenario():
    m = get_model("tiny-cnn")
    cfg = neuron_cfg()
    matrix = generate_fault_matrix(m, cfg, cfg.seed)
    other = neuron_cfg(dataset_size=5)
    assert scenario_hash(other) != matrix.scenario_hash
    with pytest.raises(ValidationError):
        make_fault_iterator(m, matrix, other)


def test_permanent_weight_faults_accumulate_then_reset():
    m = get_model("tiny-cnn")
    cfg = neuron_cfg(dataset_size=2, num_runs=2,
                     injection_target=InjectionTarget.WEIGHTS,
                     fault_persistence=FaultPersistence.PERMANENT)
    matrix = generate_fault_matrix(m, cfg, cfg.seed)
    it = make_fault_iterator(m, matrix, cfg)

    def diff_count(cm):
        total = 0
        for i, info in enumerate(m.injectable_infos):
            base = m.injectable_layer(i).weights
            cur = cm.model.injectable_layer(i).weights
            total += int(np.sum(base.view(np.uint32) != cur.view(np.uint32)))
        return total

    first = next(it)
    second = next(it)   # same epoch: first fault still applied
    third = next(it)    # new epoch: state cleared
    assert diff_count(first) == 1
    assert diff_count(second) == 2
    assert diff_count(third) == 1


def test_transient_scopes_do_not_accumulate():
    m = get_model("tiny-cnn")
    cfg = neuron_cfg(dataset_size=3, injection_target=InjectionTarget.WEIGHTS)
    it = make_fault_iterator(m, generate_fault_matrix(m, cfg, cfg.seed), cfg)
    for _ in range(3):
        cm = next(it)
        diffs = sum(
            int(np.sum(m.injectable_layer(i).weights.view(np.uint32)
                       != cm.model.injectable_layer(i).weights.view(np.uint32)))
            for i in range(len(m.injectable_infos)))
        assert diffs == 1
