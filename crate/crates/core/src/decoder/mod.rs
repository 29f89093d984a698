//! Decoder stack with hybrid and stand-alone cross-attention layers.

pub mod check;
pub mod layers;
pub mod layout;
pub mod params;
pub mod stack;

pub use check::{
    check_stack_gradients, gradcheck_stack, stack_grads, stack_loss, GradCheckOptions, GradCheckReport, GroupCheck,
    GRAD_TOLERANCE,
};
pub use layers::{
    cross_attention, gate_values, hybrid_layer_backward, hybrid_layer_forward,
    standalone_xattn_layer_backward, standalone_xattn_layer_forward, standard_layer_backward,
    standard_layer_forward, BranchGrads, GateGrads, HostGrads, LayerCache, LayerCtx, LayerGrads,
    StandaloneCache, StandaloneGrads,
};
pub use layout::{build_sequence, HiddenState, Segment, SequenceLayout};
pub use params::{
    init_cross_attn, BranchParam, CrossBranch, DecoderLayerParams, GateParams, GatedFfn, HostParam,
    HostSlot, HybridLayerParams, Model, ParamGroup, ParamId, StandaloneLayer, StandaloneParam,
    TrainStage, Weight, NEW_PARAM_STD,
};
pub use stack::{decoder_stack_backward, decoder_stack_forward, CrossKind, CrossTrace, ModelGrads, StackCache, StackOutput};
