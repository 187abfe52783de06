//! Linear state-space model of the wind-integrated system, step responses
//! and modal tables.
//!
//! States are ordered `[Δδ; Δω; Δz]` and the model is
//!
//! ```text
//! Δδ̇ = Δω
//! Δω̇ = R1 Δδ − d Δω + R2 Δz + M⁻¹ ΔP_m
//! Δż = R3 Δδ + R4 Δz
//! ```
//!
//! with `R1 = M⁻¹ℒ`, `R2 = −M⁻¹K̄12Ā3⁻¹Ā2`, `R3 = −BĀ3⁻¹Ā1` and
//! `R4 = A − BĀ3⁻¹Ā2`. The swing equations carry no damping of their own;
//! `d` is a uniform damping extension with `D = d·M`, which shifts every
//! swing eigenvalue's real part by `−d/2` and leaves eigenvectors alone.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Factored, C64};
use crate::linearize::{scale_rows, JacobianSet};
use crate::netmodel::NetworkCase;
use crate::windfarm;

/// Uniform damping per unit inertia that puts the slowest nominal swing mode
/// at a real part of about −0.13.
pub const DEFAULT_DAMPING: f64 = 0.2642;

/// Trajectory norm beyond which a run is flagged unstable.
pub const BLOWUP: f64 = 1e6;

#[derive(Clone, Debug)]
pub struct StateSpaceModel {
    pub r1: DMatrix<f64>,
    pub r2: DMatrix<f64>,
    pub r3: DMatrix<f64>,
    pub r4: DMatrix<f64>,
    pub m: Vec<f64>,
    pub damping: f64,
    /// `ℒ` used for `R1`.
    pub l: DMatrix<f64>,
    pub labels: Vec<String>,
}

impl StateSpaceModel {
    pub fn n(&self) -> usize {
        self.r1.nrows()
    }

    pub fn nz(&self) -> usize {
        self.r4.nrows()
    }

    pub fn dim(&self) -> usize {
        2 * self.n() + self.nz()
    }

    /// Swing-only model `M Δδ̈ = ℒ Δδ − D Δω`.
    pub fn from_laplacian(m: &[f64], l: &DMatrix<f64>, damping: f64) -> Self {
        let n = m.len();
        Self {
            r1: scale_rows(l, m),
            r2: DMatrix::zeros(n, 0),
            r3: DMatrix::zeros(0, n),
            r4: DMatrix::zeros(0, 0),
            m: m.to_vec(),
            damping,
            l: l.clone(),
            labels: default_labels(n, 0),
        }
    }

    /// The full state matrix.
    pub fn a(&self) -> DMatrix<f64> {
        let (n, nz) = (self.n(), self.nz());
        let mut a = DMatrix::zeros(2 * n + nz, 2 * n + nz);
        for i in 0..n {
            a[(i, n + i)] = 1.0;
            a[(n + i, n + i)] = -self.damping;
        }
        a.view_mut((n, 0), (n, n)).copy_from(&self.r1);
        a.view_mut((n, 2 * n), (n, nz)).copy_from(&self.r2);
        a.view_mut((2 * n, 0), (nz, n)).copy_from(&self.r3);
        a.view_mut((2 * n, 2 * n), (nz, nz)).copy_from(&self.r4);
        a
    }

    /// Input column of a unit step in the mechanical power of machine `k`.
    pub fn input(&self, k: usize) -> DVector<f64> {
        let mut b = DVector::zeros(self.dim());
        b[self.n() + k] = 1.0 / self.m[k];
        b
    }
}

fn default_labels(n: usize, nz: usize) -> Vec<String> {
    let mut out: Vec<String> = (1..=n).map(|i| format!("delta_{i}")).collect();
    out.extend((1..=n).map(|i| format!("omega_{i}")));
    out.extend((0..nz).map(|k| format!("z{}_{}", k / windfarm::NZ + 1, windfarm::STATE_NAMES[k % windfarm::NZ])));
    out
}

/// Assemble the model from (wind-integrated) Jacobians.
pub fn assemble_full_model(case: &NetworkCase, jac: &JacobianSet, damping: f64) -> Result<StateSpaceModel> {
    let m = case.inertia();
    let n = m.len();
    let a3 = Factored::new(&jac.a3, "A3 of the wind-integrated model")?;
    let a3_a1 = a3.solve(&jac.a1);
    let l = &jac.gen.k11 - &jac.gen.k12 * &a3_a1;
    let (r2, r3, r4) = match &jac.wind {
        Some(w) => {
            let a3_a2 = a3.solve(&jac.a2);
            (-scale_rows(&(&jac.gen.k12 * &a3_a2), &m), -(&w.b * &a3_a1), &w.a - &w.b * &a3_a2)
        }
        None => (DMatrix::zeros(n, 0), DMatrix::zeros(0, n), DMatrix::zeros(0, 0)),
    };
    let nz = r4.nrows();
    let mut labels: Vec<String> = case.generators.iter().map(|g| format!("delta_{}", g.id)).collect();
    labels.extend(case.generators.iter().map(|g| format!("omega_{}", g.id)));
    for f in case.wind_farms.iter().filter(|f| f.gamma > 0) {
        labels.extend(windfarm::STATE_NAMES.iter().map(|s| format!("z{}_{s}", f.bus)));
    }
    debug_assert_eq!(labels.len(), 2 * n + nz);
    Ok(StateSpaceModel { r1: scale_rows(&l, &m), r2, r3, r4, m, damping, l, labels })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// Exact discretisation for piecewise-constant input.
    Zoh,
    Trapezoidal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Outputs {
    /// Machine angles only.
    Angles,
    /// Angles then speeds.
    Machines,
    All,
}

/// Step of `magnitude` pu on the mechanical power of machine index `machine`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    pub machine: usize,
    pub magnitude: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimOptions {
    pub horizon: f64,
    pub dt: f64,
    pub integrator: Integrator,
    pub outputs: Outputs,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self { horizon: 100.0, dt: 0.01, integrator: Integrator::Zoh, outputs: Outputs::Machines }
    }
}

/// Sampled signals, one row per signal and one column per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryMatrix {
    pub data: DMatrix<f64>,
    pub dt: f64,
    pub labels: Vec<String>,
    pub disturbance: String,
    pub unstable: bool,
}

impl TrajectoryMatrix {
    pub fn samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Rows whose label starts with `prefix`.
    pub fn select(&self, prefix: &str) -> TrajectoryMatrix {
        let idx: Vec<usize> = (0..self.labels.len()).filter(|&i| self.labels[i].starts_with(prefix)).collect();
        TrajectoryMatrix {
            data: linalg::rows(&self.data, &idx),
            dt: self.dt,
            labels: idx.iter().map(|&i| self.labels[i].clone()).collect(),
            disturbance: self.disturbance.clone(),
            unstable: self.unstable,
        }
    }
}

/// Step response from the origin.
pub fn simulate(model: &StateSpaceModel, dist: &Disturbance, opts: &SimOptions) -> Result<TrajectoryMatrix> {
    if !(opts.dt > 0.0) || !(opts.horizon >= 0.0) {
        return Err(Error::Domain(format!("need dt > 0 and horizon ≥ 0, got {} and {}", opts.dt, opts.horizon)));
    }
    if dist.machine >= model.n() {
        return Err(Error::Domain(format!("disturbed machine index {} out of range", dist.machine)));
    }
    let steps = (opts.horizon / opts.dt).round() as usize;
    let dim = model.dim();
    let a = model.a();
    let b = model.input(dist.machine) * dist.magnitude;
    let (phi, gamma) = match opts.integrator {
        Integrator::Zoh => {
            let mut aug = DMatrix::zeros(dim + 1, dim + 1);
            aug.view_mut((0, 0), (dim, dim)).copy_from(&(&a * opts.dt));
            aug.view_mut((0, dim), (dim, 1)).copy_from(&(&b * opts.dt));
            let e = aug.exp();
            (e.view((0, 0), (dim, dim)).into_owned(), e.view((0, dim), (dim, 1)).column(0).into_owned())
        }
        Integrator::Trapezoidal => {
            let h = opts.dt / 2.0;
            let id = DMatrix::<f64>::identity(dim, dim);
            let lhs = Factored::new(&(&id - &a * h), "trapezoidal step matrix")?;
            let phi = lhs.solve(&(&id + &a * h));
            let gamma = lhs.solve(&DMatrix::from_column_slice(dim, 1, (&b * opts.dt).as_slice())).column(0).into_owned();
            (phi, gamma)
        }
    };
    let n = model.n();
    let rows: Vec<usize> = match opts.outputs {
        Outputs::Angles => (0..n).collect(),
        Outputs::Machines => (0..2 * n).collect(),
        Outputs::All => (0..dim).collect(),
    };
    let mut data = DMatrix::zeros(rows.len(), steps + 1);
    let mut x = DVector::zeros(dim);
    let mut unstable = false;
    for k in 0..=steps {
        if k > 0 {
            x = &phi * &x + &gamma;
        }
        if !unstable && (!x.iter().all(|v| v.is_finite()) || x.norm() > BLOWUP) {
            unstable = true;
        }
        for (r, &i) in rows.iter().enumerate() {
            data[(r, k)] = x[i];
        }
    }
    Ok(TrajectoryMatrix {
        data,
        dt: opts.dt,
        labels: rows.iter().map(|&i| model.labels[i].clone()).collect(),
        disturbance: format!("step of {} pu in mechanical power of machine index {}", dist.magnitude, dist.machine),
        unstable,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub re: f64,
    pub im: f64,
    pub freq_hz: f64,
    pub damping_ratio: f64,
    pub oscillatory: bool,
    /// Share of participation in the machine angle and speed states.
    pub swing_share: f64,
}

impl Mode {
    pub fn eigenvalue(&self) -> C64 {
        C64::new(self.re, self.im)
    }

    pub fn is_swing(&self) -> bool {
        self.swing_share > 0.5
    }
}

/// Eigenvalues with frequency and damping ratio, conjugate pairs once,
/// sorted by frequency.
///
/// ```
/// use windcoh::dynsim::mode_of;
///
/// let m = mode_of(windcoh::linalg::C64::new(-0.1321, 1.877), 1.0);
/// assert!((m.freq_hz - 0.299).abs() < 5e-4);
/// ```
pub fn modal_table(model: &StateSpaceModel) -> Vec<Mode> {
    let a = model.a();
    let swing = 2 * model.n();
    let mut modes: Vec<Mode> = linalg::eigenvalues(&a)
        .into_iter()
        .filter(|l| l.im >= 0.0)
        .map(|l| mode_of(l, swing_share(&a, l, swing)))
        .collect();
    modes.sort_by(|x, y| x.freq_hz.total_cmp(&y.freq_hz).then(x.re.total_cmp(&y.re)));
    modes
}

pub fn mode_of(l: C64, swing_share: f64) -> Mode {
    let mag = l.norm();
    Mode {
        re: l.re,
        im: l.im,
        freq_hz: l.im.abs() / (2.0 * PI),
        damping_ratio: if mag > 0.0 { -l.re / mag } else { 0.0 },
        oscillatory: l.im != 0.0,
        swing_share,
    }
}

/// Normalised participation `|v_k||w_k|` summed over the first `swing` states.
fn swing_share(a: &DMatrix<f64>, l: C64, swing: usize) -> f64 {
    if swing == a.nrows() {
        return 1.0;
    }
    let v = linalg::complex_eigenvector(a, l);
    let w = linalg::complex_eigenvector(&a.transpose(), l);
    let p: Vec<f64> = v.iter().zip(w.iter()).map(|(x, y)| x.norm() * y.norm()).collect();
    let total: f64 = p.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    p[..swing].iter().sum::<f64>() / total
}

/// The `count` lowest-frequency oscillatory swing modes.
pub fn slow_modes(table: &[Mode], count: usize) -> Vec<Mode> {
    table.iter().filter(|m| m.oscillatory && m.is_swing()).take(count).cloned().collect()
}

/// RMS difference between a run and one at half the step, on common samples.
pub fn refinement_error(model: &StateSpaceModel, dist: &Disturbance, opts: &SimOptions) -> Result<f64> {
    let coarse = simulate(model, dist, opts)?;
    let fine = simulate(model, dist, &SimOptions { dt: opts.dt / 2.0, ..opts.clone() })?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..coarse.samples() {
        for r in 0..coarse.data.nrows() {
            let d = coarse.data[(r, k)] - fine.data[(r, 2 * k)];
            sum += d * d;
            count += 1;
        }
    }
    Ok((sum / count.max(1) as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(k: f64, m1: f64, m2: f64) -> StateSpaceModel {
        let l = DMatrix::from_row_slice(2, 2, &[-k, k, k, -k]);
        StateSpaceModel::from_laplacian(&[m1, m2], &l, 0.0)
    }

    #[test]
    fn zero_input_stays_at_origin() {
        let model = pair(2.0, 1.0, 3.0);
        let t = simulate(&model, &Disturbance { machine: 0, magnitude: 0.0 }, &SimOptions { horizon: 5.0, ..Default::default() })
            .unwrap();
        assert!(t.data.iter().all(|v| *v == 0.0));
        assert_eq!(t.samples(), 501);
    }

    #[test]
    fn pair_oscillates_at_closed_form_frequency() {
        let (k, m1, m2) = (2.0, 1.0, 3.0);
        let model = pair(k, m1, m2);
        let w = (k * (1.0 / m1 + 1.0 / m2)).sqrt();
        let opts = SimOptions { horizon: 100.0, dt: 0.01, integrator: Integrator::Zoh, outputs: Outputs::Angles };
        let t = simulate(&model, &Disturbance { machine: 0, magnitude: 1.0 }, &opts).unwrap();
        // relative angle: steady offset plus a constant-amplitude cosine
        let rel: Vec<f64> = (0..t.samples()).map(|s| t.data[(0, s)] - t.data[(1, s)]).collect();
        let offset = 1.0 / (m1 * w * w);
        let amp = |lo: usize, hi: usize| rel[lo..hi].iter().map(|r| (r - offset).abs()).fold(0.0, f64::max);
        let (first, last) = (amp(0, 1000), amp(9000, 10001));
        assert!((first - last).abs() / first < 0.01);
        for s in [137usize, 4242, 9999] {
            let want = offset * (1.0 - (w * t.time(s)).cos());
            assert!((rel[s] - want).abs() < 1e-9, "{} vs {}", rel[s], want);
        }
        let table = modal_table(&model);
        let osc: Vec<_> = table.iter().filter(|m| m.oscillatory).collect();
        assert_eq!(osc.len(), 1);
        assert!((osc[0].freq_hz - w / (2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn real_eigenvalue_is_non_oscillatory() {
        let m = mode_of(C64::new(-3.0, 0.0), 0.0);
        assert_eq!(m.freq_hz, 0.0);
        assert!(!m.oscillatory);
        assert_eq!(m.damping_ratio, 1.0);
    }

    #[test]
    fn trapezoid_agrees_with_zoh_at_small_step() {
        let model = pair(2.0, 1.0, 3.0);
        let d = Disturbance { machine: 1, magnitude: 1.0 };
        let zoh = simulate(&model, &d, &SimOptions { horizon: 10.0, dt: 0.001, ..Default::default() }).unwrap();
        let tr = simulate(
            &model,
            &d,
            &SimOptions { horizon: 10.0, dt: 0.001, integrator: Integrator::Trapezoidal, ..Default::default() },
        )
        .unwrap();
        assert!((zoh.data - tr.data).amax() < 1e-5);
    }

    #[test]
    fn growth_is_flagged() {
        let l = DMatrix::from_row_slice(2, 2, &[5.0, -5.0, -5.0, 5.0]);
        let model = StateSpaceModel::from_laplacian(&[1.0, 1.0], &l, 0.0);
        let t = simulate(&model, &Disturbance { machine: 0, magnitude: 1.0 }, &SimOptions { horizon: 20.0, ..Default::default() })
            .unwrap();
        assert!(t.unstable);
    }
}
