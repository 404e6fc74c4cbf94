"""faultforge: reproducible fault-injection campaigns for NN inference.

Pre-generated reusable fault matrices, IEEE-754 bit-flip or value
corruption of neurons and weights, lockstep fault-free / faulty /
clipper-hardened execution, and SDE/DUE vulnerability KPIs, all on a
built-in deterministic inference core.
"""

from ._kernels import BACKEND as KERNEL_BACKEND
from .campaign import (
    RangeProfile,
    ReplayReport,
    RunsetRecord,
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
from .dataset import (
    DatasetHandle,
    Sample,
    assign_boxes_from_model,
    assign_labels_from_model,
    batches,
    dataset_for_model,
    export_ground_truth_json,
    load_dataset,
    synthetic_classification_dataset,
    synthetic_detection_dataset,
)
from .errors import (
    FaultForgeError,
    FaultLocationError,
    FaultsExhausted,
    FileFormatError,
    ReplayMismatchError,
    ValidationError,
)
from .evaluation import (
    ClassificationRow,
    DetectionRow,
    KpiReport,
    evaluate_run,
    iou,
    load_report,
    sde_due_classification,
    sde_due_detection,
    top_k,
    write_joined_results,
    write_report,
)
from .fault_gen import (
    FaultMatrix,
    NeuronFault,
    WeightFault,
    generate_fault_matrix,
    layer_selection_weights,
    load_fault_matrix,
    save_fault_matrix,
)
from .injector import (
    CorruptedModel,
    FlipDirection,
    InjectionEvent,
    apply_neuron_faults,
    apply_weight_faults,
    f32_bits,
    f32_from_bits,
    flip_bit,
    make_fault_iterator,
)
from .model_registry import (
    Layer,
    LayerInfo,
    Model,
    builtin_models,
    decode_detections,
    enumerate_injectable_layers,
    get_model,
    load_model,
    resolve_model,
    save_model,
)
from .scenario import (
    FaultPersistence,
    InjectionTarget,
    InjPolicy,
    LayerWeighting,
    RndMode,
    ScenarioConfig,
    num_faults_required,
    parse_scenario,
    save_scenario,
    scenario_hash,
)
from .tensor_core import (
    LayerKind,
    as_tensor,
    clamp,
    conv2d_forward,
    conv3d_forward,
    linear_forward,
    maxpool2d,
    relu,
    softmax,
)

__version__ = "0.1.0"
