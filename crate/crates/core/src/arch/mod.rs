//! Model variants: construction, early-exit inference and training passes.

mod exec;
mod model;
mod submodel;
mod variant;

pub use exec::{extract_mask, ExitHead, ForwardPass, ForwardTape, MaskSet, StreamState};
pub use model::{build_model, AccessLog, FcExitSource, Layer, LayerAccess, Model, Stage, LAYER_NAMES};
pub use submodel::{slice_submodel, SubModel};
pub use variant::{Dims, Profile, StageKind, Topology, Variant, NUM_STAGES, STAGE_KINDS};
