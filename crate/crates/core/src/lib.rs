//! Vector magnetometry with nitrogen-vacancy ensembles.
//!
//! The crate covers the forward model of the NV ground-state spin
//! ([`spin`]), synthetic ODMR and coherence data ([`synth`]), least-squares
//! fitting ([`fit`]), reconstruction of the field vector from the four
//! orientation classes ([`vector`]), shot-noise sensitivity budgets
//! ([`sensitivity`]) and the file formats used by the `nvmag` binary ([`io`]).
//!
//! ```
//! use nvmag::spin::{FieldVector, NvModel};
//! use nvmag::vector::{project_field, reconstruct_field};
//!
//! let model = NvModel::default();
//! let b = FieldVector::new(1.0, 2.0, 3.0);
//! let rec = reconstruct_field(&model, &project_field(&model, &b)).unwrap();
//! assert!((rec.b.magnitude() - b.magnitude()).abs() < 1e-9);
//! ```

pub mod fit;
pub mod io;
pub mod sensitivity;
pub mod spin;
pub mod synth;
pub mod vector;
