//! Real-world single-image super-resolution built around a one-step
//! proximal-gradient generator.
//!
//! The crate has two halves that check each other:
//!
//! - [`variational`] is the explicit energy model (data term plus a filter-bank
//!   regularizer), its gradient, the ball projection and the iterative
//!   proximal-gradient solver. It is a plain numerical library.
//! - [`networks`] holds the trainable generator whose architecture unrolls a
//!   single proximal-gradient step, the domain generator that learns sensor
//!   corruptions, and the two discriminators. In analytic mode the generator
//!   reproduces [`variational::one_step_inference`] exactly.
//!
//! Training ([`training`]) runs in two stages: a domain stage that learns to
//! corrupt bicubic downscales like real source images, and an SR stage that
//! trains the generator on the generated pairs. [`evaluation`] provides PSNR,
//! SSIM, an LPIPS-style distance and the dihedral self-ensemble.
//!
//! Runnable walkthroughs of each capability live in `examples/`; the `srres`
//! binary exposes the same pipeline as batch verbs.

pub mod archive;
pub mod autograd;
pub mod cli;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod losses;
pub mod networks;
pub mod training;
pub mod variational;

pub use error::{Error, Result};
pub use imaging::ImageTensor;
