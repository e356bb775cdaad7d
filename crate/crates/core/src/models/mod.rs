//! U-Net generators, PatchGAN discriminators, and the two model layouts.

mod bundle;
pub mod checkpoint;
mod discriminator;
mod generator;
mod graph;
mod spec;

pub use bundle::{assemble, AssembleOptions, ModelBundle, ModelKind, Role};
pub use discriminator::{Discriminator, DiscriminatorTrace};
pub use generator::{Generator, GeneratorTrace, LayerObserver};
pub use graph::{ArchitectureGraph, LayerDesc, LayerKind};
pub use spec::{modified_pairwise_preset, GeneratorSpec};
