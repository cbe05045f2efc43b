//! Vector field reconstruction from per-orientation projections.
//!
//! ODMR only measures |n_i·B|, so each projection carries an unknown sign.
//! Reconstruction enumerates the sign patterns (modulo the global sign, which
//! is never observable) and keeps the least-squares solution with the smallest
//! misfit. Which physical NV axis produced which resonance pair is likewise not
//! observable from a single spectrum: [`projections_from_odmr`] assigns pairs
//! to axes in order of decreasing splitting, which fixes the field up to a
//! symmetry of the cube.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fit::PeakSet;
use crate::spin::{invert_projection, FieldVector, NvModel, Projection, ProjectionSet, SpinError};

const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VectorError {
    #[error("weighted axes do not span 3D space ({present} usable projections)")]
    Degenerate { present: usize },
    #[error("invalid projection {index}: {reason}")]
    InvalidProjection { index: usize, reason: String },
    #[error("expected an even number of centers between 2 and 8, got {0}")]
    BadPeakCount(usize),
    #[error("no pairing is symmetric about D within {threshold_mhz:.3} MHz (best max asymmetry {best_mhz:.3} MHz)")]
    PairingFailed {
        threshold_mhz: f64,
        best_mhz: f64,
        pairs: Vec<PairAsymmetry>,
    },
    #[error(transparent)]
    Spin(#[from] SpinError),
}

/// Canonical field plus the bookkeeping needed to interpret it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub b: FieldVector,
    pub signs: [i8; 4],
    pub residual_mt: f64,
    /// 1σ of |B| propagated from the projection uncertainties (mT).
    pub sigma_magnitude_mt: f64,
    pub ambiguity_note: AmbiguityNote,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityNote {
    /// The global sign of B is unobservable; B was chosen so that its first
    /// nonzero component is positive. True when that negated the solution
    /// whose first axis sign was fixed to +1.
    pub global_sign_flipped: bool,
    /// Every sign pattern (after canonicalization) whose misfit ties with the
    /// winner, including the winner itself, with the field it implies.
    pub tied_solutions: Vec<TiedSolution>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TiedSolution {
    pub signs: [i8; 4],
    pub b: FieldVector,
}

pub fn project_field(model: &NvModel, b: &FieldVector) -> ProjectionSet {
    let bv = b.as_vector();
    let axes = model.axis_vectors();
    ProjectionSet::from_values(std::array::from_fn(|i| axes[i].dot(&bv).abs()))
}

fn canonicalize(b: Vector3<f64>, signs: [i8; 4]) -> (Vector3<f64>, [i8; 4], bool) {
    let scale = b.amax().max(1.0);
    let first = b.iter().copied().find(|c| c.abs() > TIE_TOL * scale);
    match first {
        Some(c) if c < 0.0 => (-b, signs.map(|s| -s), true),
        _ => (b, signs, false),
    }
}

/// Weighted least-squares field for every sign pattern; see module docs.
pub fn reconstruct_field(
    model: &NvModel,
    proj: &ProjectionSet,
) -> Result<ReconstructionResult, VectorError> {
    let axes = model.axis_vectors();
    let mut values = [0.0; 4];
    let mut weights = [0.0; 4];
    let mut sigmas = [0.0; 4];
    for (i, entry) in proj.entries.iter().enumerate() {
        let Some(p) = entry else { continue };
        if !(p.b_mt.is_finite() && p.b_mt >= 0.0) {
            return Err(VectorError::InvalidProjection {
                index: i,
                reason: format!("value {}", p.b_mt),
            });
        }
        if !(p.sigma_mt.is_finite() && p.sigma_mt >= 0.0) {
            return Err(VectorError::InvalidProjection {
                index: i,
                reason: format!("sigma {}", p.sigma_mt),
            });
        }
        values[i] = p.b_mt;
        sigmas[i] = p.sigma_mt;
        weights[i] = if p.sigma_mt > 0.0 {
            1.0 / (p.sigma_mt * p.sigma_mt)
        } else {
            1.0
        };
    }
    let present = proj.present();

    let mut normal = Matrix3::zeros();
    for i in 0..4 {
        normal += weights[i] * axes[i] * axes[i].transpose();
    }
    let inverse = match normal.try_inverse() {
        Some(inv) if present >= 3 && inv.iter().all(|x| x.is_finite()) => inv,
        _ => return Err(VectorError::Degenerate { present }),
    };

    struct Candidate {
        chi2: f64,
        b: Vector3<f64>,
        signs: [i8; 4],
        flipped: bool,
    }
    // the first sign is fixed to +1; the global flip is handled by canonicalization
    let candidates: Vec<Candidate> = (0..8u8)
        .map(|mask| {
            let signs: [i8; 4] = std::array::from_fn(|i| {
                if i > 0 && mask & (1 << (i - 1)) != 0 {
                    -1
                } else {
                    1
                }
            });
            let rhs: Vector3<f64> = (0..4)
                .map(|i| weights[i] * f64::from(signs[i]) * values[i] * axes[i])
                .sum();
            let b = inverse * rhs;
            let chi2: f64 = (0..4)
                .map(|i| weights[i] * (f64::from(signs[i]) * values[i] - axes[i].dot(&b)).powi(2))
                .sum();
            let (b, signs, flipped) = canonicalize(b, signs);
            Candidate {
                chi2,
                b,
                signs,
                flipped,
            }
        })
        .collect();

    let best_chi2 = candidates
        .iter()
        .map(|c| c.chi2)
        .fold(f64::INFINITY, f64::min);
    let tol = TIE_TOL * best_chi2.max(1.0);
    let mut tied: Vec<&Candidate> = candidates
        .iter()
        .filter(|c| c.chi2 - best_chi2 <= tol)
        .collect();
    tied.sort_by_key(|c| c.signs);
    tied.dedup_by(|a, b| a.signs == b.signs);
    let winner = tied[0];

    let signed: Vec<f64> = (0..4)
        .map(|i| f64::from(winner.signs[i]) * values[i])
        .collect();
    let used: Vec<usize> = (0..4).filter(|&i| proj.entries[i].is_some()).collect();
    let residual_mt = (used
        .iter()
        .map(|&i| (signed[i] - axes[i].dot(&winner.b)).powi(2))
        .sum::<f64>()
        / used.len() as f64)
        .sqrt();

    // B is linear in the projections: B = Σ_i M_i b_i with M_i = W⁻¹ w_i s_i n_i
    let magnitude = winner.b.norm();
    let sigma_magnitude_mt = if magnitude > 0.0 {
        let unit = winner.b / magnitude;
        (0..4)
            .map(|i| {
                let m_i = inverse * (weights[i] * f64::from(winner.signs[i]) * axes[i]);
                (unit.dot(&m_i) * sigmas[i]).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    } else {
        (0..4)
            .map(|i| (inverse * (weights[i] * axes[i])).norm_squared() * sigmas[i] * sigmas[i])
            .sum::<f64>()
            .sqrt()
    };

    Ok(ReconstructionResult {
        b: FieldVector::from_vector(&winner.b),
        signs: winner.signs,
        residual_mt,
        sigma_magnitude_mt,
        ambiguity_note: AmbiguityNote {
            global_sign_flipped: winner.flipped,
            tied_solutions: tied
                .iter()
                .map(|c| TiedSolution {
                    signs: c.signs,
                    b: FieldVector::from_vector(&c.b),
                })
                .collect(),
        },
    })
}

/// Symmetry of one ν± pair about D.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairAsymmetry {
    pub nu_minus_mhz: f64,
    pub nu_plus_mhz: f64,
    /// ν₊ + ν₋ − 2D
    pub asymmetry_mhz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairingOptions {
    /// Floor of the per-pair σ used in the threshold 4·max(σ, floor).
    pub sigma_floor_mhz: f64,
}

impl Default for PairingOptions {
    fn default() -> Self {
        Self {
            sigma_floor_mhz: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedProjections {
    pub projections: ProjectionSet,
    pub pairs: Vec<PairAsymmetry>,
    /// Axes whose pair had a half splitting below E and were set to zero.
    pub below_e: Vec<usize>,
}

fn matchings(items: &[usize]) -> Vec<Vec<(usize, usize)>> {
    if items.is_empty() {
        return vec![Vec::new()];
    }
    let first = items[0];
    let mut out = Vec::new();
    for k in 1..items.len() {
        let rest: Vec<usize> = items[1..]
            .iter()
            .copied()
            .filter(|&x| x != items[k])
            .collect();
        for mut m in matchings(&rest) {
            m.insert(0, (first, items[k]));
            out.push(m);
        }
    }
    out
}

/// Groups resonance centers into ν± pairs symmetric about D and inverts
/// each pair to a projection magnitude.
///
/// All perfect matchings are scored (at most 105 for 8 centers) and the one
/// with the smallest worst-pair asymmetry wins. Projections are assigned to
/// axes in order of decreasing splitting; unresolved axes stay `None`.
pub fn projections_from_odmr(
    model: &NvModel,
    peaks: &PeakSet,
    opts: &PairingOptions,
) -> Result<PairedProjections, VectorError> {
    let n = peaks.len();
    if n == 0 || !n.is_multiple_of(2) || n > 8 {
        return Err(VectorError::BadPeakCount(n));
    }
    let centers = &peaks.peaks;
    let two_d = 2.0 * model.d_mhz;
    let asym = |i: usize, j: usize| centers[i].center_mhz + centers[j].center_mhz - two_d;
    let threshold_of = |i: usize, j: usize| {
        4.0 * centers[i]
            .sigma_center_mhz
            .max(centers[j].sigma_center_mhz)
            .max(opts.sigma_floor_mhz)
    };

    let idx: Vec<usize> = (0..n).collect();
    // (worst relative asymmetry, total asymmetry, matching)
    type Scored = (f64, f64, Vec<(usize, usize)>);
    let mut best: Option<Scored> = None;
    for m in matchings(&idx) {
        // score by the worst pair relative to its own threshold, then total asymmetry
        let worst = m
            .iter()
            .map(|&(i, j)| asym(i, j).abs() / threshold_of(i, j))
            .fold(0.0, f64::max);
        let total: f64 = m.iter().map(|&(i, j)| asym(i, j).abs()).sum();
        let better = match &best {
            None => true,
            Some((w, t, _)) => worst < *w || (worst == *w && total < *t),
        };
        if better {
            best = Some((worst, total, m));
        }
    }
    let (worst, _, matching) = best.expect("at least one matching");

    let mut pairs: Vec<(PairAsymmetry, f64)> = matching
        .iter()
        .map(|&(i, j)| {
            let (lo, hi) = if centers[i].center_mhz <= centers[j].center_mhz {
                (i, j)
            } else {
                (j, i)
            };
            let sigma = centers[lo]
                .sigma_center_mhz
                .hypot(centers[hi].sigma_center_mhz);
            (
                PairAsymmetry {
                    nu_minus_mhz: centers[lo].center_mhz,
                    nu_plus_mhz: centers[hi].center_mhz,
                    asymmetry_mhz: asym(lo, hi),
                },
                sigma,
            )
        })
        .collect();
    pairs.sort_by(|a, b| {
        let sa = a.0.nu_plus_mhz - a.0.nu_minus_mhz;
        let sb = b.0.nu_plus_mhz - b.0.nu_minus_mhz;
        sb.total_cmp(&sa)
    });

    if worst >= 1.0 {
        let best_mhz = pairs
            .iter()
            .map(|p| p.0.asymmetry_mhz.abs())
            .fold(0.0, f64::max);
        let threshold_mhz = matching
            .iter()
            .map(|&(i, j)| threshold_of(i, j))
            .fold(f64::INFINITY, f64::min);
        return Err(VectorError::PairingFailed {
            threshold_mhz,
            best_mhz,
            pairs: pairs.into_iter().map(|p| p.0).collect(),
        });
    }

    let gamma = model.gamma_mhz_per_mt;
    let e = model.e_mhz;
    let mut projections = ProjectionSet::default();
    let mut below_e = Vec::new();
    for (axis, (pair, sigma_pair)) in pairs.iter().enumerate() {
        // σ of the half splitting
        let sigma_half = 0.5 * sigma_pair;
        let half = 0.5 * (pair.nu_plus_mhz - pair.nu_minus_mhz);
        let b = match invert_projection(model, pair.nu_plus_mhz, pair.nu_minus_mhz) {
            Ok(b) => b,
            Err(SpinError::SplittingBelowE { .. }) => {
                below_e.push(axis);
                0.0
            }
            Err(other) => return Err(other.into()),
        };
        let root = |s: f64| (s * s - e * e).max(0.0).sqrt() / gamma;
        let sigma_mt = if half - sigma_half > e {
            // first order: db/ds = s / (γ·sqrt(s² − E²))
            half / (gamma * gamma * b.max(f64::MIN_POSITIVE)) * sigma_half
        } else {
            // near the E threshold the linearization diverges; use the spread
            0.5 * (root(half + sigma_half) - root((half - sigma_half).max(e)))
        };
        projections.entries[axis] = Some(Projection { b_mt: b, sigma_mt });
    }
    Ok(PairedProjections {
        projections,
        pairs: pairs.into_iter().map(|p| p.0).collect(),
        below_e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::PeakEstimate;
    use crate::synth::peaks_from_field;
    use approx::assert_abs_diff_eq;

    fn model() -> NvModel {
        NvModel::with_e(3.0).unwrap()
    }

    fn peak_set(centers: &[f64]) -> PeakSet {
        PeakSet {
            peaks: centers
                .iter()
                .map(|&c| PeakEstimate::guess(c, 6.0, 0.02))
                .collect(),
        }
    }

    #[test]
    fn projection_examples() {
        let m = model();
        let b0 = 2.5;
        let p = project_field(&m, &FieldVector::new(0.0, 0.0, b0)).values();
        for v in p {
            assert_abs_diff_eq!(v.unwrap(), b0 / 3f64.sqrt(), epsilon = 1e-15);
        }
        let n1 = m.axis_vectors()[0] * b0;
        let p = project_field(&m, &FieldVector::from_vector(&n1)).values();
        assert_abs_diff_eq!(p[0].unwrap(), b0, epsilon = 1e-14);
        for v in &p[1..] {
            assert_abs_diff_eq!(v.unwrap(), b0 / 3.0, epsilon = 1e-14);
        }
        assert_eq!(
            project_field(&m, &FieldVector::default()).values(),
            [Some(0.0); 4]
        );
    }

    #[test]
    fn round_trip_with_canonical_sign() {
        let m = model();
        for b in [
            FieldVector::new(1.0, -2.0, 0.5),
            FieldVector::new(-3.0, 1.0, 4.0),
        ] {
            let r = reconstruct_field(&m, &project_field(&m, &b)).unwrap();
            let sign = if b.bx < 0.0 { -1.0 } else { 1.0 };
            assert_abs_diff_eq!(r.b.bx, sign * b.bx, epsilon = 1e-12);
            assert_abs_diff_eq!(r.b.by, sign * b.by, epsilon = 1e-12);
            assert_abs_diff_eq!(r.b.bz, sign * b.bz, epsilon = 1e-12);
            assert!(r.residual_mt < 1e-12);
            // flipped relative to the candidate with the first sign fixed to +1
            assert_eq!(r.ambiguity_note.global_sign_flipped, r.signs[0] == -1);
        }
    }

    #[test]
    fn equal_projections_tie_between_cube_axes() {
        let m = model();
        let b0 = 2.0;
        let r = reconstruct_field(&m, &ProjectionSet::from_values([b0 / 3f64.sqrt(); 4])).unwrap();
        assert_eq!(r.ambiguity_note.tied_solutions.len(), 3);
        assert_eq!(r.signs, [1, -1, -1, 1]);
        assert_abs_diff_eq!(r.b.bz, b0, epsilon = 1e-12);
        assert_abs_diff_eq!(r.b.magnitude(), b0, epsilon = 1e-12);
        for t in &r.ambiguity_note.tied_solutions {
            assert_abs_diff_eq!(t.b.magnitude(), b0, epsilon = 1e-12);
            let nonzero = [t.b.bx, t.b.by, t.b.bz]
                .iter()
                .filter(|c| c.abs() > 1e-9)
                .count();
            assert_eq!(nonzero, 1);
        }
    }

    #[test]
    fn zero_projections_give_zero_field() {
        let r = reconstruct_field(&model(), &ProjectionSet::from_values([0.0; 4])).unwrap();
        assert_eq!(r.b.magnitude(), 0.0);
        assert_eq!(r.residual_mt, 0.0);
    }

    #[test]
    fn two_projections_are_degenerate() {
        let mut proj = ProjectionSet::from_values([1.0, 0.5, 0.2, 0.1]);
        proj.entries[2] = None;
        proj.entries[3] = None;
        assert!(matches!(
            reconstruct_field(&model(), &proj),
            Err(VectorError::Degenerate { .. })
        ));
    }

    #[test]
    fn pairing_recovers_projections() {
        let m = model();
        let b = FieldVector::new(3.0, 1.7, 4.1);
        let centers: Vec<f64> = peaks_from_field(&m, &b, 6.0, 0.02)
            .unwrap()
            .iter()
            .map(|p| p.center_mhz)
            .collect();
        let paired =
            projections_from_odmr(&m, &peak_set(&centers), &PairingOptions::default()).unwrap();
        let mut got: Vec<f64> = paired
            .projections
            .values()
            .iter()
            .map(|v| v.unwrap())
            .collect();
        let mut want: Vec<f64> = project_field(&m, &b)
            .values()
            .iter()
            .map(|v| v.unwrap())
            .collect();
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert_abs_diff_eq!(g, w, epsilon = 1e-9);
        }
        // decreasing splitting order
        let v = paired.projections.values();
        assert!(v.windows(2).all(|w| w[0].unwrap() >= w[1].unwrap()));
    }

    #[test]
    fn asymmetric_pair_fails() {
        let m = model();
        let b = FieldVector::new(3.0, 1.7, 4.1);
        let mut centers: Vec<f64> = peaks_from_field(&m, &b, 6.0, 0.02)
            .unwrap()
            .iter()
            .map(|p| p.center_mhz)
            .collect();
        centers[7] += 10.0;
        let err =
            projections_from_odmr(&m, &peak_set(&centers), &PairingOptions::default()).unwrap_err();
        assert!(matches!(err, VectorError::PairingFailed { .. }));
    }

    #[test]
    fn partial_orientations() {
        let m = model();
        let (lo1, hi1) = crate::spin::transition_frequencies(&m, 4.0);
        let (lo2, hi2) = crate::spin::transition_frequencies(&m, 1.5);
        let paired = projections_from_odmr(
            &m,
            &peak_set(&[lo1, lo2, hi2, hi1]),
            &PairingOptions::default(),
        )
        .unwrap();
        let v = paired.projections.values();
        assert_abs_diff_eq!(v[0].unwrap(), 4.0, epsilon = 1e-9);
        assert_abs_diff_eq!(v[1].unwrap(), 1.5, epsilon = 1e-9);
        assert_eq!(v[2], None);
        assert_eq!(v[3], None);
        assert_eq!(paired.projections.present(), 2);
    }

    #[test]
    fn odd_count_rejected() {
        let err = projections_from_odmr(
            &model(),
            &peak_set(&[2860.0, 2870.0, 2880.0]),
            &PairingOptions::default(),
        );
        assert_eq!(err.unwrap_err(), VectorError::BadPeakCount(3));
    }

    #[test]
    fn below_e_pair_is_tagged_zero() {
        let m = model();
        let paired =
            projections_from_odmr(&m, &peak_set(&[2868.0, 2872.0]), &PairingOptions::default())
                .unwrap();
        assert_eq!(paired.below_e, vec![0]);
        assert_eq!(paired.projections.values()[0], Some(0.0));
    }
}
