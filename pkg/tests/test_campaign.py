import numpy as np
import pytest

from faultforge.campaign import (
    RangeProfile,
    Session,
    attach_monitor,
    detect_nan_inf,
    get_scenario,
    harden_with_clipper,
    load_runset,
    profile_ranges,
    replay,
    run_campaign,
    set_scenario,
    sweep,
    verify_replay,
    write_runset,
)
from faultforge.dataset import DatasetHandle, Sample, dataset_for_model
from faultforge.errors import ReplayMismatchError, ValidationError
from faultforge.evaluation import evaluate_run, read_classification_rows
from faultforge.fault_gen import generate_fault_matrix, load_fault_matrix
from faultforge.injector import CorruptedModel
from faultforge.model_registry import get_model
from faultforge.scenario import (
    FaultPersistence,
    InjectionTarget,
    InjPolicy,
    RndMode,
    ScenarioConfig,
)
from faultforge.tensor_core import LayerKind


def make_cfg(**kw):
    base = dict(dataset_size=8, num_runs=1, max_faults_per_image=1,
                injection_target=InjectionTarget.NEURONS, rnd_mode=RndMode.BITFLIP,
                rnd_bit_range=(30, 30), seed=404)
    base.update(kw)
    return ScenarioConfig(**base).validate()


@pytest.fixture(scope="module")
def model():
    return get_model("tiny-cnn")


@pytest.fixture()
def ds8(model):
    return dataset_for_model(model, 8, seed=12)


# ---------------------------------------------------------------------------
# nan/inf detection
# ---------------------------------------------------------------------------

def test_detect_nan_inf():
    assert detect_nan_inf(np.array([1.0, 2.0, 3.0])) == (False, False)
    assert detect_nan_inf(np.array([1.0, np.nan])) == (True, False)
    assert detect_nan_inf(np.array([-np.inf, 1.0])) == (False, True)


# ---------------------------------------------------------------------------
# range profiling and hardening
# ---------------------------------------------------------------------------

def test_profile_constant_zero_stream(model):
    zeros = [Sample(np.zeros(model.input_shape, np.float32), i, f"z{i}", 16, 16, label=0)
             for i in range(3)]
    ds = DatasetHandle("zeros", zeros)
    profile = profile_ranges(model, ds)
    # zero input: conv outputs collapse to bias-propagated constants
    for (lo, hi) in profile.bounds:
        assert lo <= hi
    lo0, hi0 = profile.bounds[0]
    biases = model.injectable_layer(0).bias
    assert lo0 == float(biases.min()) and hi0 == float(biases.max())


def test_profile_deterministic(model, ds8):
    assert profile_ranges(model, ds8) == profile_ranges(model, ds8)


def test_profile_min_le_max(model, ds8):
    for lo, hi in profile_ranges(model, ds8).bounds:
        assert lo <= hi


def test_clipper_identity_on_profiling_set(model, ds8):
    hardened = harden_with_clipper(model, profile_ranges(model, ds8))
    for s in ds8:
        a = model.forward(s.image)
        b = hardened.forward(s.image)
        assert np.array_equal(a.view(np.uint32), b.view(np.uint32))


def test_clipper_removes_injected_inf(model, ds8):
    profile = profile_ranges(model, ds8)
    hardened = harden_with_clipper(model, profile)
    from faultforge.fault_gen import NeuronFault
    rec = NeuronFault(0, 0, 2, -1, 3, 3, float(np.float32(np.inf)))
    cm = CorruptedModel(hardened, [(0, rec)], InjectionTarget.NEURONS,
                        RndMode.RANDOM_VALUE, FaultPersistence.TRANSIENT)
    seen = []
    out, events = cm.forward(ds8[0].image, observe=lambda p, t: seen.append(t))
    assert len(events) == 1
    assert not any(np.isinf(t).any() or np.isnan(t).any() for t in seen)
    assert not np.isinf(out).any()


def test_clipper_preserves_layer_indexing(model, ds8):
    hardened = harden_with_clipper(model, profile_ranges(model, ds8))
    assert [li.neuron_dims for li in hardened.injectable_infos] == \
           [li.neuron_dims for li in model.injectable_infos]
    assert hardened.name == "tiny-cnn+clipper"


def test_harden_rejects_wrong_profile(model):
    with pytest.raises(ValidationError):
        harden_with_clipper(model, RangeProfile(bounds=((0.0, 1.0),)))


# ---------------------------------------------------------------------------
# campaigns
# ---------------------------------------------------------------------------

def test_zero_fault_campaign_identity(model, ds8, tmp_path):
    cfg = make_cfg()
    out = run_campaign(model, ds8, cfg, tmp_path / "run", inject=False)
    orig = read_classification_rows(out / "results" / "orig.csv", "orig")
    corr = read_classification_rows(out / "results" / "corr.csv", "corr")
    for o, c in zip(orig, corr):
        assert o.top5 == c.top5
    reports = evaluate_run(out)
    assert reports["corr"].sde_count == 0
    assert reports["corr"].due_count == 0
    runset, _ = load_runset(out / "faults" / "campaign.alfr", cfg.injection_target)
    assert runset == []


def test_campaign_output_layout(model, ds8, tmp_path):
    out = run_campaign(model, ds8, make_cfg(), tmp_path / "run")
    for rel in ("meta/scenario.yml", "meta/dataset.json", "meta/model.txt",
                "faults/campaign.alff", "faults/campaign.alfr", "results/orig.csv",
                "results/corr.csv"):
        assert (out / rel).exists(), rel
    assert not (out / "results" / "resil.csv").exists()


def test_campaign_runset_accounting(model, ds8, tmp_path):
    cfg = make_cfg(num_runs=2, max_faults_per_image=3, rnd_bit_range=(0, 31))
    out = run_campaign(model, ds8, cfg, tmp_path / "run")
    runset, crc_ok = load_runset(out / "faults" / "campaign.alfr", cfg.injection_target)
    assert crc_ok
    # per_image: images per epoch x c, per epoch
    assert len(runset) == 8 * 2 * 3
    for epoch in (0, 1):
        assert sum(1 for r in runset if r.epoch == epoch) == 24
    cols = [r.fault_column for r in runset]
    assert cols == sorted(cols)
    assert set(cols) == set(range(48))


def test_campaign_rerun_is_byte_identical(model, tmp_path):
    cfg = make_cfg(num_runs=2, rnd_bit_range=(0, 31))
    files = []
    for tag in ("a", "b"):
        ds = dataset_for_model(model, 8, seed=12)
        out = run_campaign(model, ds, cfg, tmp_path / tag, with_mitigation=True)
        files.append({p.relative_to(out): p.read_bytes()
                      for p in sorted(out.rglob("*")) if p.is_file()})
    assert files[0].keys() == files[1].keys()
    for rel in files[0]:
        assert files[0][rel] == files[1][rel], rel


def test_campaign_thread_count_does_not_change_outputs(model, tmp_path):
    cfg = make_cfg(max_faults_per_image=2, rnd_bit_range=(0, 31))
    outs = []
    for tag, threads in (("t1", 1), ("t4", 4)):
        ds = dataset_for_model(model, 8, seed=12)
        out = run_campaign(model, ds, cfg, tmp_path / tag, with_mitigation=True,
                           threads=threads)
        outs.append({p.relative_to(out): p.read_bytes()
                     for p in sorted(out.rglob("*")) if p.is_file()})
    assert outs[0] == outs[1]


def test_campaign_weight_faults_restore_model(model, ds8, tmp_path):
    baseline = model.weights_hash()
    cfg = make_cfg(injection_target=InjectionTarget.WEIGHTS, rnd_bit_range=(0, 31))
    run_campaign(model, ds8, cfg, tmp_path / "run")
    assert model.weights_hash() == baseline


def test_campaign_mismatched_matrix_refused(model, ds8, tmp_path):
    cfg = make_cfg()
    other = make_cfg(seed=405)
    matrix = generate_fault_matrix(model, other, other.seed)
    with pytest.raises(ValidationError):
        run_campaign(model, ds8, cfg, tmp_path / "run", faults=matrix)


def test_permanent_per_epoch_weight_fault_constant_output(model, tmp_path):
    # same input repeated: the whole epoch must see identical corrupted outputs
    img = dataset_for_model(model, 1, seed=3)[0].image
    samples = [Sample(img, i, f"rep{i}", 16, 16) for i in range(3)]
    ds = DatasetHandle("rep", samples)
    cfg = make_cfg(dataset_size=3, injection_target=InjectionTarget.WEIGHTS,
                   inj_policy=InjPolicy.PER_EPOCH,
                   fault_persistence=FaultPersistence.PERMANENT,
                   rnd_bit_range=(29, 29))
    out = run_campaign(model, ds, cfg, tmp_path / "run")
    rows = read_classification_rows(out / "results" / "corr.csv", "corr")
    assert len({tuple(r.top5) for r in rows}) == 1
    runset, _ = load_runset(out / "faults" / "campaign.alfr", cfg.injection_target)
    assert len(runset) == 1  # one weight mutation for the whole epoch


def test_tiny_3d_campaign_exercises_depth_row(tmp_path):
    m3 = get_model("tiny-3d")
    ds = dataset_for_model(m3, 16, seed=8)
    cfg = make_cfg(dataset_size=16, num_runs=2, rnd_bit_range=(0, 31), seed=21,
                   layer_types=frozenset({LayerKind.CONV3D}))
    out = run_campaign(m3, ds, cfg, tmp_path / "run3d")
    runset, _ = load_runset(out / "faults" / "campaign.alfr", cfg.injection_target)
    assert len(runset) == 32
    assert all(r.location.depth >= 0 for r in runset)  # conv3d coordinates carry depth
    reports = evaluate_run(out)
    assert reports["corr"].total == 32


def test_per_batch_policy_accounting(model, ds8, tmp_path):
    cfg = make_cfg(max_faults_per_image=2, batch_size=4,
                   inj_policy=InjPolicy.PER_BATCH, rnd_bit_range=(0, 31))
    out = run_campaign(model, ds8, cfg, tmp_path / "pb")
    runset, _ = load_runset(out / "faults" / "campaign.alfr", cfg.injection_target)
    # 8 images in batches of 4 -> 2 scopes, c=2 faults each, applied once per scope
    assert len(runset) == 4
    assert {r.batch_index for r in runset} == {0, 1}
    for r in runset:
        assert 0 <= r.location.batch < 4


def test_detection_campaign_end_to_end(tmp_path):
    det = get_model("tiny-det")
    ds = dataset_for_model(det, 4, seed=5)
    cfg = make_cfg(dataset_size=4, rnd_bit_range=(30, 30), seed=11)
    out = run_campaign(det, ds, cfg, tmp_path / "det", with_mitigation=True)
    for leg in ("orig", "corr", "resil"):
        assert (out / "results" / f"{leg}.json").exists()
    reports = evaluate_run(out)
    assert set(reports) == {"corr", "resil"}
    assert 0.0 <= reports["corr"].sde_rate <= 1.0


# ---------------------------------------------------------------------------
# monitors
# ---------------------------------------------------------------------------

def test_counting_monitor_sees_all_layers(model, ds8, tmp_path):
    session = Session(model, ds8, make_cfg())
    events = []
    attach_monitor(session, lambda pos, t: events.append(pos), legs=("orig",))
    session.run(tmp_path / "run")
    # one event per layer per fault-free inference
    assert len(events) == len(model.layers) * len(ds8)


def test_noop_monitor_leaves_outputs_identical(model, tmp_path):
    cfg = make_cfg()
    ds_a = dataset_for_model(model, 8, seed=12)
    plain = run_campaign(model, ds_a, cfg, tmp_path / "plain")
    session = Session(model, dataset_for_model(model, 8, seed=12), cfg)
    attach_monitor(session, lambda pos, t: None)
    monitored = session.run(tmp_path / "monitored")
    for rel in ("results/orig.csv", "results/corr.csv", "faults/campaign.alfr"):
        assert (plain / rel).read_bytes() == (monitored / rel).read_bytes()


def test_range_monitor_reproduces_profile(model, ds8, tmp_path):
    profile = profile_ranges(model, ds8)
    positions = {pos: i for i, pos in enumerate(model.injectable_positions)}
    mins = [np.inf] * 3
    maxs = [-np.inf] * 3

    def track(pos, t):
        if pos in positions:
            i = positions[pos]
            mins[i] = min(mins[i], float(t.min()))
            maxs[i] = max(maxs[i], float(t.max()))

    session = Session(model, ds8, make_cfg())
    attach_monitor(session, track, legs=("orig",))
    session.run(tmp_path / "run")
    assert tuple(zip(mins, maxs)) == profile.bounds


# ---------------------------------------------------------------------------
# session and sweeps
# ---------------------------------------------------------------------------

def test_get_set_scenario_regenerates_identically(model, ds8):
    session = Session(model, ds8, make_cfg())
    before = session.matrix
    set_scenario(session, get_scenario(session))
    assert session.matrix == before


def test_set_scenario_layer_range_confines_faults(model, ds8):
    session = Session(model, ds8, make_cfg(dataset_size=8))
    from dataclasses import replace
    set_scenario(session, replace(get_scenario(session), layer_range=(2, 2)))
    assert all(rec.layer == 2 for rec in session.matrix.columns)


def test_set_scenario_invalid_keeps_previous(model, ds8):
    session = Session(model, ds8, make_cfg())
    good = session.cfg
    bad = make_cfg(layer_types=frozenset({LayerKind.CONV3D}))  # no conv3d in tiny-cnn
    with pytest.raises(ValidationError):
        set_scenario(session, bad)
    assert session.cfg == good


def test_set_scenario_mid_batch_rejected(model, ds8, tmp_path):
    session = Session(model, ds8, make_cfg())

    def evil(pos, t):
        set_scenario(session, session.get_scenario())

    attach_monitor(session, evil, legs=("orig",))
    with pytest.raises(ValidationError) as e:
        session.run(tmp_path / "run")
    assert "mid-batch" in str(e.value)
    assert session._mid_batch is False


def test_sweep_layers(model, ds8, tmp_path):
    session = Session(model, ds8, make_cfg(dataset_size=8))
    dirs = sweep(session, "layer", [0, 1, 2], tmp_path / "sweep")
    assert [d.name for d in dirs] == ["layer=0", "layer=1", "layer=2"]
    for i, d in enumerate(dirs):
        matrix = load_fault_matrix(d / "faults" / "campaign.alff")
        assert all(rec.layer == i for rec in matrix.columns)


def test_sweep_faults_per_image_tracks_c(model, ds8, tmp_path):
    session = Session(model, ds8, make_cfg(rnd_bit_range=(0, 31)))
    dirs = sweep(session, "faults-per-image", [1, 2, 4], tmp_path / "sweep")
    for c, d in zip([1, 2, 4], dirs):
        runset, _ = load_runset(d / "faults" / "campaign.alfr", InjectionTarget.NEURONS)
        assert len(runset) == 8 * c


def test_sweep_target_switches_exclusively(model, ds8, tmp_path):
    session = Session(model, ds8, make_cfg())
    dirs = sweep(session, "target", ["neurons", "weights"], tmp_path / "sweep")
    m_n = load_fault_matrix(dirs[0] / "faults" / "campaign.alff")
    m_w = load_fault_matrix(dirs[1] / "faults" / "campaign.alff")
    assert m_n.target is InjectionTarget.NEURONS
    assert m_w.target is InjectionTarget.WEIGHTS


def test_sweep_bit_axis_exponent_dominates(model, tmp_path):
    ds = dataset_for_model(model, 32, seed=12)
    session = Session(model, ds, make_cfg(dataset_size=32))
    dirs = sweep(session, "bit", [30, 0], tmp_path / "sweep")
    sde = {d.name: evaluate_run(d)["corr"].sde_rate for d in dirs}
    assert sde["bit=30"] >= sde["bit=0"]
    assert sde["bit=0"] == 0.0


def test_sweep_bad_axis(model, ds8, tmp_path):
    session = Session(model, ds8, make_cfg())
    with pytest.raises(ValidationError):
        sweep(session, "voltage", [1], tmp_path / "sweep")


# ---------------------------------------------------------------------------
# replay
# ---------------------------------------------------------------------------

def test_replay_fresh_campaign_clean(model, ds8, tmp_path):
    out = run_campaign(model, ds8, make_cfg(rnd_bit_range=(0, 31)), tmp_path / "run")
    report = replay(out / "faults" / "campaign.alff", out / "faults" / "campaign.alfr", model)
    assert report.ok
    assert report.records_checked == 8
    assert report.mismatches == []


def test_replay_detects_tampered_value(model, ds8, tmp_path):
    out = run_campaign(model, ds8, make_cfg(rnd_bit_range=(0, 31)), tmp_path / "run")
    runset_path = out / "faults" / "campaign.alfr"
    data = bytearray(runset_path.read_bytes())
    # corrupt one byte of record 0's corrupted-value field
    offset = 4 + 2 + 8 + 52
    data[offset] ^= 0xFF
    runset_path.write_bytes(bytes(data))
    report = replay(out / "faults" / "campaign.alff", runset_path, model)
    assert not report.ok
    assert any("record 0" in m for m in report.mismatches)
    with pytest.raises(ReplayMismatchError):
        verify_replay(out / "faults" / "campaign.alff", runset_path, model)


def test_replay_refuses_wrong_model(model, ds8, tmp_path):
    out = run_campaign(model, ds8, make_cfg(), tmp_path / "run")
    other = get_model("tiny-3d")
    with pytest.raises(ValidationError):
        replay(out / "faults" / "campaign.alff", out / "faults" / "campaign.alfr", other)


def test_runset_roundtrip(model, ds8, tmp_path):
    cfg = make_cfg(rnd_bit_range=(0, 31), injection_target=InjectionTarget.WEIGHTS)
    out = run_campaign(model, ds8, cfg, tmp_path / "run")
    path = out / "faults" / "campaign.alfr"
    records, crc_ok = load_runset(path, cfg.injection_target)
    assert crc_ok and len(records) == 8
    copy = tmp_path / "copy.alfr"
    write_runset(records, copy)
    assert copy.read_bytes() == path.read_bytes()
