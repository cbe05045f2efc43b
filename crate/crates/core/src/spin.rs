//! Ground-state spin model of the NV centre.
//!
//! Frequencies are in MHz, fields in mT. The closed-form transition
//! frequencies assume the field lies along the NV axis; [`exact_eigenfrequencies`]
//! diagonalizes the full S=1 Hamiltonian and serves as the reference for
//! arbitrary field directions.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Reduced Planck constant (J·s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Planck constant (J·s).
pub const PLANCK: f64 = 6.626_070_15e-34;
/// Bohr magneton (J/T).
pub const BOHR_MAGNETON: f64 = 9.274_010_078_3e-24;

pub const DEFAULT_D_MHZ: f64 = 2870.0;
pub const DEFAULT_HYPERFINE_MHZ: f64 = 2.16;
pub const DEFAULT_G_FACTOR: f64 = 2.0;

const GEOMETRY_TOL: f64 = 1e-12;

/// Converts a Landé g-factor to a gyromagnetic ratio in MHz/mT.
pub fn gamma_from_g(g: f64) -> f64 {
    // Hz/T -> MHz/mT is a factor 1e-9.
    g * BOHR_MAGNETON / PLANCK * 1e-9
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpinError {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    /// Half the splitting is smaller than E, so the projection cannot be
    /// distinguished from zero.
    #[error("half splitting {half_splitting_mhz} MHz is below E = {e_mhz} MHz")]
    SplittingBelowE { half_splitting_mhz: f64, e_mhz: f64 },
}

/// The four ⟨111⟩ NV axes in the cubic crystal frame. The ordering is fixed
/// and shared with every file format that stores per-axis values.
pub fn tetrahedral_axes() -> [Vector3<f64>; 4] {
    let s = 1.0 / 3f64.sqrt();
    [
        Vector3::new(s, s, s),
        Vector3::new(s, -s, -s),
        Vector3::new(-s, s, -s),
        Vector3::new(-s, -s, s),
    ]
}

/// Spin-model constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NvModel {
    pub d_mhz: f64,
    pub e_mhz: f64,
    pub gamma_mhz_per_mt: f64,
    pub a_hf_mhz: f64,
    pub axes: [[f64; 3]; 4],
}

impl Default for NvModel {
    fn default() -> Self {
        let axes = tetrahedral_axes().map(|a| [a.x, a.y, a.z]);
        Self {
            d_mhz: DEFAULT_D_MHZ,
            e_mhz: 0.0,
            gamma_mhz_per_mt: gamma_from_g(DEFAULT_G_FACTOR),
            a_hf_mhz: DEFAULT_HYPERFINE_MHZ,
            axes,
        }
    }
}

impl NvModel {
    /// Default constants with the given transverse splitting.
    pub fn with_e(e_mhz: f64) -> Result<Self, SpinError> {
        let model = Self {
            e_mhz,
            ..Self::default()
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        let bad = |msg: String| Err(SpinError::InvalidModel(msg));
        if !(self.d_mhz.is_finite() && self.d_mhz > 0.0) {
            return bad(format!("d_mhz must be positive, got {}", self.d_mhz));
        }
        if !(self.e_mhz.is_finite() && self.e_mhz >= 0.0 && self.e_mhz < self.d_mhz) {
            return bad(format!("e_mhz must satisfy 0 <= E < D, got {}", self.e_mhz));
        }
        if !(self.gamma_mhz_per_mt.is_finite() && self.gamma_mhz_per_mt > 0.0) {
            return bad(format!(
                "gamma_mhz_per_mt must be positive, got {}",
                self.gamma_mhz_per_mt
            ));
        }
        if !(self.a_hf_mhz.is_finite() && self.a_hf_mhz >= 0.0) {
            return bad(format!(
                "a_hf_mhz must be non-negative, got {}",
                self.a_hf_mhz
            ));
        }
        let axes = self.axis_vectors();
        let mut sum = Vector3::zeros();
        for (i, a) in axes.iter().enumerate() {
            if (a.norm() - 1.0).abs() > GEOMETRY_TOL {
                return bad(format!("axis {} is not unit length", i + 1));
            }
            sum += a;
            for b in &axes[i + 1..] {
                if (a.dot(b) + 1.0 / 3.0).abs() > GEOMETRY_TOL {
                    return bad("axes are not tetrahedral (pairwise dot != -1/3)".into());
                }
            }
        }
        if sum.amax() > GEOMETRY_TOL {
            return bad("axes do not sum to zero".into());
        }
        Ok(())
    }

    pub fn axis_vectors(&self) -> [Vector3<f64>; 4] {
        self.axes.map(Vector3::from)
    }

    /// Landé g-factor implied by the gyromagnetic ratio.
    pub fn g_factor(&self) -> f64 {
        self.gamma_mhz_per_mt / gamma_from_g(1.0)
    }
}

/// Magnetic field in the diamond cubic frame (mT).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldVector {
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
}

impl FieldVector {
    pub fn new(bx: f64, by: f64, bz: f64) -> Self {
        Self { bx, by, bz }
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.bx, self.by, self.bz)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn magnitude(&self) -> f64 {
        self.as_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.bx.is_finite() && self.by.is_finite() && self.bz.is_finite()
    }
}

/// A single per-axis field magnitude |n·B| with its 1σ uncertainty (mT).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub b_mt: f64,
    pub sigma_mt: f64,
}

/// Unsigned projections on the four NV axes. `None` marks an orientation
/// that was not resolved in the data.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProjectionSet {
    pub entries: [Option<Projection>; 4],
}

impl ProjectionSet {
    pub fn from_values(b_mt: [f64; 4]) -> Self {
        Self {
            entries: b_mt.map(|b| {
                Some(Projection {
                    b_mt: b,
                    sigma_mt: 0.0,
                })
            }),
        }
    }

    pub fn present(&self) -> usize {
        self.entries.iter().flatten().count()
    }

    pub fn values(&self) -> [Option<f64>; 4] {
        self.entries.map(|e| e.map(|p| p.b_mt))
    }
}

/// Closed-form (ν−, ν+) for a field of magnitude `b_axial` along one NV axis.
pub fn transition_frequencies(model: &NvModel, b_axial: f64) -> (f64, f64) {
    let split = (model.gamma_mhz_per_mt * b_axial).hypot(model.e_mhz);
    (model.d_mhz - split, model.d_mhz + split)
}

/// Inverts the axial resonance condition: field projection (mT) from a pair
/// of resonance frequencies.
pub fn invert_projection(model: &NvModel, nu_plus: f64, nu_minus: f64) -> Result<f64, SpinError> {
    if !(nu_plus.is_finite() && nu_minus.is_finite()) {
        return Err(SpinError::InvalidInput(
            "resonance frequencies must be finite".into(),
        ));
    }
    if nu_plus < nu_minus {
        return Err(SpinError::InvalidInput(format!(
            "nu_plus ({nu_plus}) is below nu_minus ({nu_minus})"
        )));
    }
    let half = 0.5 * (nu_plus - nu_minus);
    let e = model.e_mhz;
    if half < e {
        return Err(SpinError::SplittingBelowE {
            half_splitting_mhz: half,
            e_mhz: e,
        });
    }
    Ok(((half - e) * (half + e)).sqrt() / model.gamma_mhz_per_mt)
}

/// The three ¹⁴N hyperfine lines around `nu_center`.
pub fn hyperfine_triplet(nu_center: f64, model: &NvModel) -> [f64; 3] {
    let a = model.a_hf_mhz;
    [nu_center - a, nu_center, nu_center + a]
}

fn spin_one_operators() -> [Matrix3<Complex64>; 3] {
    let z = Complex64::new(0.0, 0.0);
    let r = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let i = Complex64::new(0.0, std::f64::consts::FRAC_1_SQRT_2);
    let one = Complex64::new(1.0, 0.0);
    // basis ordering: m = +1, 0, -1
    let sx = Matrix3::new(z, r, z, r, z, r, z, r, z);
    let sy = Matrix3::new(z, -i, z, i, z, -i, z, i, z);
    let sz = Matrix3::new(one, z, z, z, z, z, z, z, -one);
    [sx, sy, sz]
}

/// The S=1 ground-state Hamiltonian H/h in MHz, basis (m=+1, 0, −1), for a
/// field given in the NV frame (z along the NV axis).
pub fn hamiltonian(model: &NvModel, b_nv: &Vector3<f64>) -> Matrix3<Complex64> {
    let [sx, sy, sz] = spin_one_operators();
    let c = |x: f64| Complex64::new(x, 0.0);
    let g = model.gamma_mhz_per_mt;
    sz * sz * c(model.d_mhz)
        + (sx * sx - sy * sy) * c(model.e_mhz)
        + sx * c(g * b_nv.x)
        + sy * c(g * b_nv.y)
        + sz * c(g * b_nv.z)
}

/// Transition frequencies from direct diagonalization of [`hamiltonian`].
///
/// The m_s=0-like level is the eigenvector with the largest weight on |0⟩;
/// the two returned frequencies are the gaps from it to the other levels,
/// sorted ascending.
pub fn exact_eigenfrequencies(model: &NvModel, b_in_nv_frame: &Vector3<f64>) -> (f64, f64) {
    let eig = hamiltonian(model, b_in_nv_frame).symmetric_eigen();
    let zero_like = (0..3)
        .max_by(|&a, &b| {
            let wa = eig.eigenvectors[(1, a)].norm_sqr();
            let wb = eig.eigenvectors[(1, b)].norm_sqr();
            wa.total_cmp(&wb)
        })
        .unwrap_or(0);
    let e0 = eig.eigenvalues[zero_like];
    let mut gaps = [0.0; 2];
    let mut k = 0;
    for j in 0..3 {
        if j != zero_like {
            gaps[k] = eig.eigenvalues[j] - e0;
            k += 1;
        }
    }
    gaps.sort_by(f64::total_cmp);
    (gaps[0], gaps[1])
}
