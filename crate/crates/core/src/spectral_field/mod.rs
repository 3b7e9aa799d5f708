//! Divergence-free periodic vector fields in Fourier representation.

mod basis;
mod field;
mod grid;
mod random;
mod snapshot;
mod transform;

pub use basis::RealBasis;
pub use field::{leray_project, RawSpectrum, SpectralField};
pub(crate) use field::project_mode;
pub use grid::{GridSpec, WaveVector};
pub use random::random_field;
pub use snapshot::{read_snapshot, read_snapshot_file, read_snapshot_on, write_snapshot, write_snapshot_file};
pub use transform::{from_physical, grid_point, to_physical, PhysicalField};
pub(crate) use transform::{forward_many, interleave, inverse_many, split_components};
