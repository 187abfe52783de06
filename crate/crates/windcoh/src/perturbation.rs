//! How wind farms perturb the reduced swing matrix.
//!
//! With nominal Jacobians (no farms) and barred ones (farms attached), the
//! wind-integrated matrix `ℒ = K̄11 − K̄12 Ā3⁻¹ Ā1` is rebuilt from the
//! nominal `ℒ0` plus explicit correction terms. The inversion term uses
//! `Ā3⁻¹ = A3⁻¹ + X` with `X = −(I + A3⁻¹x)⁻¹ A3⁻¹ x A3⁻¹` and `x = Ā3 − A3`,
//! and everything caused by the moved operating point is collected in
//!
//! `κ = Δk11 − K12(A3⁻¹+X)Δ_A1 − Δk12(A3⁻¹+X)(A1+Δ_A1)`,
//!
//! so that `ℒ = ℒ0 − K12 X A1 + κ` holds as an identity.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{self, Factored, C64};
use crate::linearize::{self, JacobianSet, ReducedSwingModel, TimeScaleTransform, TwoTimeScaleModel};
use crate::netmodel::{self, NetworkCase, OperatingPoint};
use crate::windfarm::StackedWind;

/// Residual target of the truncated inverse expansions.
pub const SERIES_TOL: f64 = 1e-8;
/// Hard cap on expansion terms.
pub const SERIES_CAP: usize = 50;

/// Difference between nominal and wind-integrated Jacobians.
#[derive(Clone, Debug)]
pub struct JacobianShift {
    pub delta_k11: DMatrix<f64>,
    pub delta_k12: DMatrix<f64>,
    pub delta_a1: DMatrix<f64>,
    /// `Ā3 − A3 − Σ γᵢ A3ⁱ`.
    pub delta_a3: DMatrix<f64>,
    /// Unscaled structural terms `A3ⁱ`, one per farm.
    pub a3_terms: Vec<DMatrix<f64>>,
    pub gammas: Vec<f64>,
}

/// `A3ⁱ` of each farm: `ζ1..ζ4` at the farm bus's `(P, V_Re)`, `(P, V_Im)`,
/// `(Q, V_Re)` and `(Q, V_Im)` positions.
pub fn structural_a3_terms(wind: &StackedWind, m: usize) -> Vec<DMatrix<f64>> {
    wind.bus_idx
        .iter()
        .zip(&wind.zetas)
        .map(|(&k, z)| {
            let mut a = DMatrix::zeros(2 * m, 2 * m);
            a[(k, k)] = z[0];
            a[(k, m + k)] = z[1];
            a[(m + k, k)] = z[2];
            a[(m + k, m + k)] = z[3];
            a
        })
        .collect()
}

pub fn jacobian_shift(nominal: &JacobianSet, perturbed: &JacobianSet) -> Result<JacobianShift> {
    if nominal.a3.shape() != perturbed.a3.shape() || nominal.a1.shape() != perturbed.a1.shape() {
        return Err(Error::Structural(format!(
            "Jacobian sets disagree in size: A3 {:?} vs {:?}",
            nominal.a3.shape(),
            perturbed.a3.shape()
        )));
    }
    let m = nominal.m();
    let (a3_terms, gammas) = match &perturbed.wind {
        Some(w) => (structural_a3_terms(w, m), w.gammas.clone()),
        None => (Vec::new(), Vec::new()),
    };
    let mut delta_a3 = &perturbed.a3 - &nominal.a3;
    for (a, g) in a3_terms.iter().zip(&gammas) {
        delta_a3 -= a * *g;
    }
    Ok(JacobianShift {
        delta_k11: &perturbed.gen.k11 - &nominal.gen.k11,
        delta_k12: &perturbed.gen.k12 - &nominal.gen.k12,
        delta_a1: &perturbed.a1 - &nominal.a1,
        delta_a3,
        a3_terms,
        gammas,
    })
}

impl JacobianShift {
    /// `x = Σ γᵢ A3ⁱ + Δ_A3`.
    pub fn x(&self) -> DMatrix<f64> {
        let mut x = self.delta_a3.clone();
        for (a, g) in self.a3_terms.iter().zip(&self.gammas) {
            x += a * *g;
        }
        x
    }
}

/// `X` with `(A3 + x)⁻¹ = A3⁻¹ + X`.
///
/// ```
/// use nalgebra::DMatrix;
/// use windcoh::perturbation::inversion_correction;
///
/// let a3 = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
/// let x = &a3 * 0.5;
/// let big_x = inversion_correction(&a3, &x).unwrap();
/// let expected = a3.clone().try_inverse().unwrap() * (-0.5 / 1.5);
/// assert!((big_x - expected).amax() < 1e-14);
/// ```
pub fn inversion_correction(a3: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let a3inv = Factored::new(a3, "A3")?.inverse;
    let n = a3.nrows();
    let p = DMatrix::identity(n, n) + &a3inv * x;
    let pf = Factored::new(&p, "I + A3⁻¹x (penetration too large for the inversion lemma)")?;
    Ok(-pf.solve(&(&a3inv * x * &a3inv)))
}

/// The full perturbation ledger of one wind scenario.
#[derive(Clone, Debug)]
pub struct PerturbationLedger {
    pub shift: JacobianShift,
    pub x: DMatrix<f64>,
    pub big_x: DMatrix<f64>,
    pub kappa: DMatrix<f64>,
    pub l0: DMatrix<f64>,
    /// `−K12 X A1`.
    pub inversion_term: DMatrix<f64>,
    /// `ℒ0 − K12 X A1 + κ`.
    pub l: DMatrix<f64>,
    /// `K̄11 − K̄12 Ā3⁻¹ Ā1`, the independent route.
    pub l_direct: DMatrix<f64>,
    pub split: Option<EpsilonSplit>,
    pub warnings: Vec<String>,
}

impl PerturbationLedger {
    /// Relative Frobenius gap between the two routes to `ℒ`.
    pub fn two_path_error(&self) -> f64 {
        linalg::rel_diff(&self.l, &self.l_direct)
    }

    /// Named matrices for audit export.
    pub fn named_matrices(&self) -> Vec<(&'static str, &DMatrix<f64>)> {
        let s = &self.shift;
        let mut out = vec![
            ("delta_k11", &s.delta_k11),
            ("delta_k12", &s.delta_k12),
            ("delta_a1", &s.delta_a1),
            ("delta_a3", &s.delta_a3),
            ("x", &self.x),
            ("big_x", &self.big_x),
            ("kappa", &self.kappa),
            ("l0", &self.l0),
            ("inversion_term", &self.inversion_term),
            ("l", &self.l),
            ("l_direct", &self.l_direct),
        ];
        if let Some(sp) = &self.split {
            out.extend([
                ("a3_int", &sp.a3_int),
                ("a3_ext", &sp.a3_ext),
                ("x1", &sp.x1),
                ("x2", &sp.x2),
                ("p1a", &sp.p1a),
                ("p_a", &sp.p_a),
                ("p_b", &sp.p_b),
                ("delta_l_int", &sp.delta_l_int),
                ("delta_l_ext", &sp.delta_l_ext),
            ]);
        }
        out
    }
}

/// Build the ledger from nominal and wind-integrated Jacobians.
pub fn perturbed_l(nominal: &JacobianSet, perturbed: &JacobianSet) -> Result<PerturbationLedger> {
    let shift = jacobian_shift(nominal, perturbed)?;
    let a3f = Factored::new(&nominal.a3, "nominal A3")?;
    let x = shift.x();
    let big_x = inversion_correction(&nominal.a3, &x)?;
    let k12 = &nominal.gen.k12;
    let a1 = &nominal.a1;
    let bar_inv = &a3f.inverse + &big_x;
    let kappa = &shift.delta_k11
        - k12 * (&bar_inv * &shift.delta_a1)
        - &shift.delta_k12 * (&bar_inv * (a1 + &shift.delta_a1));
    let l0 = &nominal.gen.k11 - k12 * a3f.solve(a1);
    let inversion_term = -(k12 * (&big_x * a1));
    let l = &l0 + &inversion_term + &kappa;
    let l_direct = linearize::kron_reduce(&perturbed.gen.k11, &perturbed.gen.k12, &perturbed.a1, &perturbed.a3)?;
    let mut warnings = Vec::new();
    if a3f.ill_conditioned() {
        warnings.push(format!("nominal A3 condition number {:.3e}", a3f.cond));
    }
    Ok(PerturbationLedger { shift, x, big_x, kappa, l0, inversion_term, l, l_direct, split: None, warnings })
}

/// Jacobian (as part of `A3`) of the series branches of lines whose ends lie
/// in different areas; this is `εA3ᴱ`.
pub fn tie_line_a3(case: &NetworkCase, op: &OperatingPoint, bus_area: &[usize]) -> Result<DMatrix<f64>> {
    let m = case.m();
    let mut y = DMatrix::<C64>::zeros(m, m);
    for l in &case.lines {
        let a = case.bus_index(l.from).ok_or_else(|| Error::Structural(format!("missing bus {}", l.from)))?;
        let b = case.bus_index(l.to).ok_or_else(|| Error::Structural(format!("missing bus {}", l.to)))?;
        if bus_area[a] == bus_area[b] {
            continue;
        }
        let ys = C64::new(0.0, -l.b);
        y[(a, a)] += ys / (l.tap * l.tap);
        y[(b, b)] += ys;
        y[(a, b)] -= ys / l.tap;
        y[(b, a)] -= ys / l.tap;
    }
    Ok(-netmodel::injection_jacobian(&y, &op.v_re, &op.v_im))
}

/// `Σ_{k≥1} (−t)^k · base`, truncated once a term falls below
/// `SERIES_TOL · ‖base‖`. Returns the sum and the number of terms.
pub fn neumann_tail(base: &DMatrix<f64>, t: &DMatrix<f64>, context: &str) -> Result<(DMatrix<f64>, usize)> {
    let scale = base.norm().max(f64::MIN_POSITIVE);
    let mut term = base.clone();
    let mut sum = DMatrix::zeros(base.nrows(), base.ncols());
    for k in 1..=SERIES_CAP {
        term = -(t * &term);
        sum += &term;
        let size = term.norm() / scale;
        if !size.is_finite() || size > 1e6 {
            return Err(Error::Expansion { context: context.into(), terms: k, residual: size });
        }
        if size < SERIES_TOL {
            return Ok((sum, k));
        }
    }
    let residual = term.norm() / scale;
    Err(Error::Expansion { context: context.into(), terms: SERIES_CAP, residual })
}

/// Internal/external split of the perturbation.
#[derive(Clone, Debug)]
pub struct EpsilonSplit {
    pub epsilon: f64,
    pub a3_int: DMatrix<f64>,
    pub a3_ext: DMatrix<f64>,
    pub x1: DMatrix<f64>,
    pub x2: DMatrix<f64>,
    pub p1a: DMatrix<f64>,
    pub p_a: DMatrix<f64>,
    pub p_b: DMatrix<f64>,
    /// `K12 P_a A1 + κ`.
    pub delta_l_int: DMatrix<f64>,
    /// `K12 P_b A1`.
    pub delta_l_ext: DMatrix<f64>,
    pub x1_terms: usize,
    pub x2_terms: usize,
    /// `‖A3⁻¹ − (A3ᴵ)⁻¹ − εX1‖ / ‖A3⁻¹‖`.
    pub x1_residual: f64,
}

/// Split `ℒ − ℒ0` into parts riding on `ℒ0ᴵ` and `εℒ0ᴱ`.
///
/// `eps_a3_ext` is `εA3ᴱ` (see [`tie_line_a3`]). With `Ai = (A3ᴵ)⁻¹`,
/// `A3⁻¹ = Ai + εX1` and `(I + A3⁻¹x)⁻¹ = P1a⁻¹ + εX2`, `P1a = I + Ai x`,
/// the correction is `−X = P_a + εP_b` with `P_a = P1a⁻¹ Ai x Ai` and
/// `P_b` collecting every remaining term (first order and above in ε).
pub fn epsilon_split_perturbation(
    ledger: &PerturbationLedger,
    nominal: &JacobianSet,
    eps_a3_ext: &DMatrix<f64>,
    epsilon: f64,
) -> Result<EpsilonSplit> {
    if !(epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    let n2 = nominal.a3.nrows();
    let a3_int = &nominal.a3 - eps_a3_ext;
    let ai = Factored::new(&a3_int, "internal part of A3")?.inverse;
    let (eps_x1, x1_terms) = neumann_tail(&ai, &(&ai * eps_a3_ext), "A3 = A3ᴵ + εA3ᴱ expansion")?;
    let a3inv = Factored::new(&nominal.a3, "nominal A3")?.inverse;
    let x1_residual = linalg::rel_diff(&(&ai + &eps_x1), &a3inv);

    let x = &ledger.x;
    let p1a = DMatrix::identity(n2, n2) + &ai * x;
    let p1a_inv = Factored::new(&p1a, "P1a = I + (A3ᴵ)⁻¹x")?.inverse;
    let (eps_x2, x2_terms) = neumann_tail(&p1a_inv, &(&p1a_inv * (&eps_x1 * x)), "(P1a + εX1x) expansion")?;

    let full = &ai + &eps_x1;
    let p_a = &p1a_inv * (&ai * x * &ai);
    let eps_p_b = &p1a_inv * (&ai * x * &eps_x1) + &p1a_inv * (&eps_x1 * x * &full) + &eps_x2 * (&full * x * &full);

    let k12 = &nominal.gen.k12;
    let a1 = &nominal.a1;
    let delta_l_int = k12 * (&p_a * a1) + &ledger.kappa;
    let delta_l_ext = k12 * (&eps_p_b * a1) / epsilon;
    Ok(EpsilonSplit {
        epsilon,
        a3_ext: eps_a3_ext / epsilon,
        a3_int,
        x1: eps_x1 / epsilon,
        x2: eps_x2 / epsilon,
        p1a,
        p_a,
        p_b: eps_p_b / epsilon,
        delta_l_int,
        delta_l_ext,
        x1_terms,
        x2_terms,
        x1_residual,
    })
}

impl EpsilonSplit {
    /// `(ℒ0ᴵ + Δ_ℒᴵ) + ε(ℒ0ᴱ + Δ_ℒᴱ)`.
    pub fn reconstruct(&self, model: &ReducedSwingModel) -> DMatrix<f64> {
        &model.l0_int + &self.delta_l_int + (&model.l0_ext + &self.delta_l_ext) * self.epsilon
    }
}

/// Row-sum-corrected `ℒ` and its area split.
#[derive(Clone, Debug)]
pub struct EquivalentLaplacian {
    pub l: DMatrix<f64>,
    pub l_eq: DMatrix<f64>,
    /// `Δℒ_eqᴵ`: block-diagonal part of `ℒ_eq − ℒ0`, made Laplacian.
    pub delta_int: DMatrix<f64>,
    /// `Δℒ_eqᴱ`: off-block part of `ℒ_eq − ℒ0` over ε, made Laplacian.
    pub delta_ext: DMatrix<f64>,
    pub epsilon: f64,
    pub gammas: Vec<f64>,
    pub farm_buses: Vec<usize>,
}

impl EquivalentLaplacian {
    pub fn l_eq_int(&self, model: &ReducedSwingModel) -> DMatrix<f64> {
        &model.l0_int + &self.delta_int
    }

    pub fn l_eq_ext(&self, model: &ReducedSwingModel) -> DMatrix<f64> {
        &model.l0_ext + &self.delta_ext
    }

    /// `max |Δℒ_eqᴵ U|` and `max |M̂ Uᵀ Δℒ_eqᴵ G†|`.
    pub fn consistency(&self, xf: &TimeScaleTransform) -> (f64, f64) {
        let du = (&self.delta_int * &xf.u).amax();
        let mhat = linalg::diag(&xf.m_hat);
        let cross = if xf.g_dagger.ncols() == 0 {
            0.0
        } else {
            (mhat * xf.u.transpose() * &self.delta_int * &xf.g_dagger).amax()
        };
        (du, cross)
    }
}

/// `ℒ_eq(i,j) = ℒ(i,j)`, `ℒ_eq(i,i) = −Σ_{j≠i} ℒ(i,j)`, split along `areas`.
pub fn equivalent_laplacian(
    l: &DMatrix<f64>,
    model: &ReducedSwingModel,
    areas: &[Vec<usize>],
    gammas: Vec<f64>,
    farm_buses: Vec<usize>,
) -> Result<EquivalentLaplacian> {
    let n = l.nrows();
    let lab = linearize::labels(areas, n)?;
    let l_eq = linalg::make_laplacian(l);
    let d = &l_eq - &model.l0;
    let eps = model.epsilon;
    let int = DMatrix::from_fn(n, n, |i, j| if i != j && lab[i] == lab[j] { d[(i, j)] } else { 0.0 });
    let ext = DMatrix::from_fn(n, n, |i, j| if i != j && lab[i] != lab[j] { d[(i, j)] / eps } else { 0.0 });
    Ok(EquivalentLaplacian {
        l: l.clone(),
        l_eq,
        delta_int: linalg::make_laplacian(&int),
        delta_ext: linalg::make_laplacian(&ext),
        epsilon: eps,
        gammas,
        farm_buses,
    })
}

/// Slow/fast blocks of the perturbed model.
///
/// `T̃ = [C; G] M⁻¹ (ℒ0ᴵ + Δᴵ + ε(ℒ0ᴱ + Δᴱ)) [U G†]`, written term by term
/// with the three `ℒ0ᴵ` products that vanish left out.
pub fn assemble_t_tilde(
    model: &ReducedSwingModel,
    delta_int: &DMatrix<f64>,
    delta_ext: &DMatrix<f64>,
    xf: &TimeScaleTransform,
) -> TwoTimeScaleModel {
    let eps = model.epsilon;
    let mi = |a: &DMatrix<f64>| linearize::scale_rows(a, &model.m);
    let pert = mi(delta_int) + mi(&(&model.l0_ext + delta_ext)) * eps;
    TwoTimeScaleModel {
        t11: &xf.c * &pert * &xf.u,
        t12: &xf.c * &pert * &xf.g_dagger,
        t21: &xf.g * &pert * &xf.u,
        t22: &xf.g * (mi(&model.l0_int) + &pert) * &xf.g_dagger,
    }
}

/// Frobenius norm of every ledger matrix, in ledger order.
pub fn ledger_norms(ledger: &PerturbationLedger) -> Vec<(String, f64)> {
    ledger.named_matrices().into_iter().map(|(k, m)| (k.to_string(), m.norm())).collect()
}

/// Largest |row sum| of a matrix, using the summation order that
/// [`linalg::make_laplacian`] inverts.
pub fn max_row_sum(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows()).map(|i| linalg::ordered_row_sum(m, i).abs()).fold(0.0, f64::max)
}
