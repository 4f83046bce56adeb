//! Persistent point-cloud world for guidance-conditioned video synthesis.
//!
//! The library keeps a colorized 3D point cloud alive across a rendered
//! sequence and projects it into each new camera to produce *guidance
//! images*: sparse, physically grounded estimates of the next frame. Around
//! that core sit the pieces needed to exercise it end to end at desk scale:
//!
//! - [`geometry`]: pinhole cameras, rigid poses, projection.
//! - [`world`]: the point cloud, z-buffered splatting, colorization.
//! - [`tensor`]: NCHW tensors, plain and partial convolutions, multi-source
//!   spatially adaptive modulation, and the toy network family built on them.
//! - [`flow`]: dense flow fields, bilinear warping, geometric motion fields.
//! - [`losses`]: the training objective terms with analytic gradients.
//! - [`gradcheck`]: finite-difference verification of every backward pass.
//! - [`metrics`]: world- and short-term-consistency measurements.
//! - [`synthworld`]: a synthetic quad-scene generator with exact ground truth.
//! - [`io`]: file formats (PLY, PFM, PPM/PGM/PBM, JSON specs) and manifests.
//!
//! Everything is seeded and single-threaded by design: two runs with the
//! same inputs produce bit-identical outputs, which the test suite checks.

pub mod cli;
pub mod flow;
pub mod geometry;
pub mod gradcheck;
pub mod image;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod synthworld;
pub mod tensor;
pub mod world;

pub use geometry::{Camera, Intrinsics, Pose};
pub use image::{Frame, Mask};
pub use world::{ColorPolicy, GuidanceImage, WorldCloud};
