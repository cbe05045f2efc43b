use nalgebra::{Matrix3, Vector3};
use proptest::prelude::*;

use nvmag::io::{read_odmr, write_odmr};
use nvmag::sensitivity::{
    db_to_transmission, eta_ac, eta_dc, transmission_to_db, SensitivityInputs,
};
use nvmag::spin::{
    exact_eigenfrequencies, invert_projection, tetrahedral_axes, transition_frequencies,
    FieldVector, NvModel,
};
use nvmag::synth::{linear_grid, peaks_from_field, synthesize_odmr, LorentzianPeak, OdmrSpectrum};
use nvmag::vector::{project_field, reconstruct_field};

fn model(e: f64) -> NvModel {
    NvModel {
        e_mhz: e,
        ..NvModel::default()
    }
}

fn field() -> impl Strategy<Value = Vector3<f64>> {
    (-10.0..10.0f64, -10.0..10.0f64, -10.0..10.0f64)
        .prop_map(|(x, y, z)| Vector3::new(x, y, z))
        .prop_filter("away from zero", |b| b.norm() > 0.1)
}

fn canonical(v: Vector3<f64>) -> Vector3<f64> {
    match v.iter().find(|c| c.abs() > 1e-12) {
        Some(c) if *c < 0.0 => -v,
        _ => v,
    }
}

/// The 24 proper rotations of the cube: signed permutation matrices with
/// determinant +1.
fn cube_rotations() -> Vec<Matrix3<f64>> {
    let perms = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut out = Vec::new();
    for p in perms {
        for mask in 0..8 {
            let mut m = Matrix3::<f64>::zeros();
            for (row, &col) in p.iter().enumerate() {
                m[(row, col)] = if mask & (1 << row) != 0 { -1.0 } else { 1.0 };
            }
            if (m.determinant() - 1.0).abs() < 1e-12 {
                out.push(m);
            }
        }
    }
    out
}

#[test]
fn there_are_24_cube_rotations() {
    assert_eq!(cube_rotations().len(), 24);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn closed_form_matches_eigensolver(b in 0.0..10.0f64, e in 0.0..10.0f64) {
        let m = model(e);
        let (lo, hi) = transition_frequencies(&m, b);
        let (elo, ehi) = exact_eigenfrequencies(&m, &Vector3::new(0.0, 0.0, b));
        prop_assert!((lo - elo).abs() < 1e-9 && (hi - ehi).abs() < 1e-9);
    }

    #[test]
    fn inversion_round_trip(b in 0.01..10.0f64, e in 0.0..10.0f64) {
        let m = model(e);
        let (lo, hi) = transition_frequencies(&m, b);
        let back = invert_projection(&m, hi, lo).unwrap();
        prop_assert!((back - b).abs() < 1e-9, "{back} vs {b}");
    }

    #[test]
    fn resonances_sum_to_2d(b in 0.0..10.0f64, e in 0.0..10.0f64) {
        let m = model(e);
        let (lo, hi) = transition_frequencies(&m, b);
        prop_assert!((lo + hi - 2.0 * m.d_mhz).abs() <= 4.0 * f64::EPSILON * m.d_mhz);
    }

    #[test]
    fn signed_projections_sum_to_zero(b in field()) {
        let s: f64 = tetrahedral_axes().iter().map(|n| n.dot(&b)).sum();
        prop_assert!(s.abs() < 1e-12);
    }

    #[test]
    fn spectrum_superposition(
        c1 in 2800.0..2940.0f64, w1 in 1.0..20.0f64, a1 in 0.01..0.3f64,
        c2 in 2800.0..2940.0f64, w2 in 1.0..20.0f64, a2 in 0.01..0.3f64,
    ) {
        let grid = linear_grid(2780.0, 2960.0, 361);
        let p1 = LorentzianPeak::new(c1, w1, a1).unwrap();
        let p2 = LorentzianPeak::new(c2, w2, a2).unwrap();
        let both = synthesize_odmr(&[p1, p2], &grid).unwrap();
        let s1 = synthesize_odmr(&[p1], &grid).unwrap();
        let s2 = synthesize_odmr(&[p2], &grid).unwrap();
        for i in 0..grid.len() {
            prop_assert!((both.pl_norm[i] - (s1.pl_norm[i] + s2.pl_norm[i] - 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn dip_centers_pair_about_d(b in field(), e in 0.0..10.0f64) {
        let m = model(e);
        let peaks = peaks_from_field(&m, &FieldVector::from_vector(&b), 6.0, 0.02).unwrap();
        let n = peaks.len();
        for k in 0..n / 2 {
            let s = peaks[k].center_mhz + peaks[n - 1 - k].center_mhz;
            prop_assert!((s - 2.0 * m.d_mhz).abs() < 1e-9);
        }
    }

    #[test]
    fn global_sign_invariance(b in field()) {
        let m = NvModel::default();
        let plus = reconstruct_field(&m, &project_field(&m, &FieldVector::from_vector(&b))).unwrap();
        let minus = reconstruct_field(&m, &project_field(&m, &FieldVector::from_vector(&-b))).unwrap();
        prop_assert_eq!(plus.signs, minus.signs);
        prop_assert!((plus.b.as_vector() - minus.b.as_vector()).amax() < 1e-12);
    }

    #[test]
    fn cube_rotations_permute_projections(b in field()) {
        let m = NvModel::default();
        let axes = m.axis_vectors();
        let base = project_field(&m, &FieldVector::from_vector(&b)).values();
        for r in cube_rotations() {
            let rb = r * b;
            let rotated = project_field(&m, &FieldVector::from_vector(&rb)).values();
            // each rotated projection equals some original one, via Rᵀnᵢ = ±n_j
            for i in 0..4 {
                let image = r.transpose() * axes[i];
                let j = (0..4).find(|&j| (image - axes[j]).norm() < 1e-12 || (image + axes[j]).norm() < 1e-12);
                prop_assert!(j.is_some());
                let j = j.unwrap();
                prop_assert!((rotated[i].unwrap() - base[j].unwrap()).abs() < 1e-12);
            }
            let rec = reconstruct_field(&m, &project_field(&m, &FieldVector::from_vector(&rb))).unwrap();
            prop_assert!((rec.b.as_vector() - canonical(rb)).amax() < 1e-9);
        }
    }

    #[test]
    fn winning_signs_satisfy_sum_rule(b in field()) {
        let m = NvModel::default();
        let proj = project_field(&m, &FieldVector::from_vector(&b));
        let rec = reconstruct_field(&m, &proj).unwrap();
        let s: f64 = proj.values().iter().zip(rec.signs).map(|(v, s)| f64::from(s) * v.unwrap()).sum();
        prop_assert!(s.abs() < 1e-9);
    }

    #[test]
    fn eta_dc_scaling_laws(k in 0.01..100.0f64) {
        let m = NvModel::default();
        let base = SensitivityInputs { contrast: 0.003, pl_rate_hz: 362.4e9, readout_us: 0.5, t2_star_us: 0.5, t2_us: 5.0 };
        let eta = eta_dc(&m, &base).unwrap();
        let rate = eta_dc(&m, &SensitivityInputs { pl_rate_hz: k * base.pl_rate_hz, ..base }).unwrap();
        prop_assert!((rate / (eta / k.sqrt()) - 1.0).abs() < 1e-14);
        if k * base.contrast <= 1.0 {
            let contrast = eta_dc(&m, &SensitivityInputs { contrast: k * base.contrast, ..base }).unwrap();
            prop_assert!((contrast / (eta / k) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn eta_ac_identity_at_equal_times(eta in 1e-15..1e-6f64, t in 0.01..100.0f64) {
        prop_assert_eq!(eta_ac(eta, t, t).unwrap(), eta);
    }

    #[test]
    fn decibel_round_trip(f in 1e-9..1.0f64) {
        let back = db_to_transmission(transmission_to_db(f).unwrap()).unwrap();
        prop_assert!((back / f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip_is_lossless(
        rows in prop::collection::vec((0.0..1e4f64, 0.0..2.0f64, 1.0..1e9f64), 1..64),
    ) {
        let mut freqs: Vec<f64> = rows.iter().map(|r| r.0).collect();
        freqs.sort_by(f64::total_cmp);
        freqs.dedup();
        let n = freqs.len();
        let pl: Vec<f64> = rows.iter().take(n).map(|r| r.1).collect();
        let counts: Vec<f64> = rows.iter().take(n).map(|r| r.2).collect();
        let spectrum = OdmrSpectrum::new(freqs, pl, Some(counts)).unwrap();
        let mut buf = Vec::new();
        write_odmr(&mut buf, &spectrum).unwrap();
        prop_assert_eq!(read_odmr(buf.as_slice()).unwrap(), spectrum);
    }
}
