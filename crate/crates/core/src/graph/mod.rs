//! Fast-forwarding stages composed into full networks.

mod exec;
mod params;
mod spec;

pub use exec::{backward, backward_with_fault, forward, Fault, ForwardTrace, StageTrace};
pub use params::ParamStore;
pub use spec::{
    build_ffnet, deep_name, ff_name, ArchConfig, InputShape, LayerKind, NetworkSpec, ParamCount, PathDepth, StageSpec,
    HEAD_NAMES,
};
