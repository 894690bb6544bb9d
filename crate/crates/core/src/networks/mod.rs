//! Trainable networks: the SR generator, the domain generator and the two
//! critics, plus the projection layer and the constrained filter
//! parametrization they share.

mod disc;
mod gd;
mod gsr;
mod layers;
mod params;

pub use disc::{dx_score, dy_score, BnUpdates, Discriminator, DiscriminatorConfig, DiscriminatorKind};
pub use gd::{gd_forward, DomainGenerator, DomainGeneratorConfig};
pub use gsr::{gsr_forward, GeneratorSR, GeneratorSRConfig};
pub use layers::{
    clip_intensities, parametrize_filters, project, projection_threshold, relativistic_prob, ProjectionLayer,
};
pub use params::{stack_images, unstack_images, Bound, Init, Params};
