mod common;

use common::*;
use std::f64::consts::PI;
use windcoh::dynsim::{self, Disturbance, Integrator, Outputs, SimOptions};
use windcoh::linearize::scale_rows;
use windcoh::{linalg, perturbation};

#[test]
fn undamped_swing_frequencies_are_square_roots_of_the_coupling_spectrum() {
    let s = nominal();
    let m = s.case.inertia();
    let l0 = l_of(&s);
    let model = dynsim::assemble_full_model(&s.case, &s.jac, 0.0).unwrap();
    let mut table: Vec<f64> = dynsim::modal_table(&model).iter().filter(|md| md.freq_hz > 1e-3).map(|md| md.freq_hz).collect();
    table.sort_by(f64::total_cmp);

    // oracle: the symmetric form M^-1/2 ℒ0 M^-1/2 has the same spectrum as M⁻¹ℒ0
    let sym = nalgebra::DMatrix::from_fn(16, 16, |i, j| 0.5 * (l0[(i, j)] + l0[(j, i)]) / (m[i] * m[j]).sqrt());
    let mut expected: Vec<f64> = sym.symmetric_eigenvalues().iter().map(|&l| (-l).max(0.0).sqrt() / (2.0 * PI)).collect();
    expected.sort_by(f64::total_cmp);
    let expected = &expected[1..];
    assert_eq!(table.len(), expected.len());
    for (a, b) in table.iter().zip(expected) {
        assert!((a - b).abs() < 1e-6, "{a} vs {b}");
    }
}

#[test]
fn default_damping_sets_real_parts_and_keeps_nominal_stable() {
    let s = nominal();
    let model = dynsim::assemble_full_model(&s.case, &s.jac, dynsim::DEFAULT_DAMPING).unwrap();
    let table = dynsim::modal_table(&model);
    for md in &table {
        assert!(md.re <= 1e-9, "unstable mode {md:?}");
        if md.oscillatory {
            assert!((md.re + dynsim::DEFAULT_DAMPING / 2.0).abs() < 1e-9);
        }
    }
    assert_eq!(dynsim::slow_modes(&table, 4).len(), 4);
}

#[test]
fn state_matrix_reuses_the_reduced_coupling_bit_for_bit() {
    let nom = nominal();
    let w = with_farms(&[(66, 650)]);
    let ledger = perturbation::perturbed_l(&nom.jac, &w.jac).unwrap();
    let model = dynsim::assemble_full_model(&w.case, &w.jac, dynsim::DEFAULT_DAMPING).unwrap();
    assert_eq!(model.r1, scale_rows(&ledger.l_direct, &w.case.inertia()));
    assert_eq!(model.nz(), 9);
    assert_eq!(model.labels[32], "z66_omega_r");
}

#[test]
fn halving_the_step_changes_nothing() {
    let d = Disturbance { machine: 0, magnitude: 1.0 };
    let opts = SimOptions::default();
    for s in [nominal(), with_farms(&[(66, 650)]), with_farms(&[(37, 700)])] {
        let model = dynsim::assemble_full_model(&s.case, &s.jac, dynsim::DEFAULT_DAMPING).unwrap();
        let err = dynsim::refinement_error(&model, &d, &opts).unwrap();
        assert!(err < 1e-6, "{err:e}");
    }
}

#[test]
fn trapezoid_converges_to_the_exact_discretisation() {
    let s = nominal();
    let model = dynsim::assemble_full_model(&s.case, &s.jac, dynsim::DEFAULT_DAMPING).unwrap();
    let d = Disturbance { machine: 0, magnitude: 1.0 };
    let zoh = SimOptions { horizon: 20.0, outputs: Outputs::Angles, ..Default::default() };
    let exact = dynsim::simulate(&model, &d, &zoh).unwrap();
    let mut last = f64::INFINITY;
    for dt in [0.01, 0.005] {
        let trap = SimOptions { dt, integrator: Integrator::Trapezoidal, ..zoh.clone() };
        let t = dynsim::simulate(&model, &d, &trap).unwrap();
        let stride = (0.01 / dt).round() as usize;
        let mut worst: f64 = 0.0;
        for k in 0..exact.samples() {
            for r in 0..exact.data.nrows() {
                worst = worst.max((exact.data[(r, k)] - t.data[(r, stride * k)]).abs());
            }
        }
        assert!(worst < 0.3 * last, "second order: {worst:e} after {last:e}");
        last = worst;
    }
}

#[test]
fn step_response_settles_to_the_static_shift() {
    // D = dM, so the extra power spreads into a common speed ΔP / (d ΣM)
    let s = nominal();
    let model = dynsim::assemble_full_model(&s.case, &s.jac, 1.0).unwrap();
    let t = dynsim::simulate(&model, &Disturbance { machine: 0, magnitude: 1.0 }, &SimOptions::default()).unwrap();
    let last = t.data.column(t.samples() - 1);
    let speeds: Vec<f64> = (16..32).map(|i| last[i]).collect();
    let total_m: f64 = s.case.inertia().iter().sum();
    for w in &speeds {
        assert!((w - 1.0 / total_m).abs() < 1e-3 / total_m, "{w}");
    }
    assert!(!t.unstable);
    assert!(linalg::asymmetry(&model.l) < 1e-8);
}
