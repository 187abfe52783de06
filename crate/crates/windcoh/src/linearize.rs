//! Small-signal Jacobians, Kron reduction and the two-time-scale transform.
//!
//! The algebraic part of the model is the bus power balance
//! `g(δ, V, z) = 0` stacked as `[P rows of all buses; Q rows of all buses]`
//! with `g_P = P_s + P_w − P_load − P_net(V)`. Then `A1 = ∂g/∂δ`,
//! `A3 = ∂g/∂V` and `A2 = ∂g/∂z`, and the machine equations give
//! `K11 = −∂P_s/∂δ`, `K12 = −∂P_s/∂V`. With those signs `ℒ0 = K11 − K12 A3⁻¹ A1`
//! has negative diagonal and `M⁻¹ℒ0` has non-positive eigenvalues, so the
//! swing dynamics read `M Δδ̈ = ℒ Δδ`.

use nalgebra::{DMatrix, DVector};
use petgraph::graph::{NodeIndex, UnGraph};

use crate::error::{Error, Result};
use crate::linalg::{self, Factored};
use crate::netmodel::{self, NetworkCase, OperatingPoint};
use crate::windfarm::{self, StackedWind};

/// Machine-equation Jacobians at an operating point.
#[derive(Clone, Debug)]
pub struct GeneratorJacobians {
    /// `n × n` diagonal, `−∂P_s/∂δ`.
    pub k11: DMatrix<f64>,
    /// `n × 2m`, `−∂P_s/∂[V_Re; V_Im]`.
    pub k12: DMatrix<f64>,
    pub k21: DMatrix<f64>,
    pub k22: DMatrix<f64>,
}

/// Partials of one classical machine: `[∂/∂δ, ∂/∂V_Re, ∂/∂V_Im]` of `(P_s, Q_s)`.
fn machine_partials(e_int: f64, xd: f64, delta: f64, vr: f64, vi: f64) -> ([f64; 3], [f64; 3]) {
    let (s, c) = delta.sin_cos();
    let k = e_int / xd;
    let dp = [k * (vr * c + vi * s), k * s, -k * c];
    let dq = [k * (-vr * s + vi * c), k * c - 2.0 * vr / xd, k * s - 2.0 * vi / xd];
    (dp, dq)
}

pub fn generator_jacobians(case: &NetworkCase, op: &OperatingPoint) -> Result<GeneratorJacobians> {
    let (n, m) = (case.n(), case.m());
    let gen_bus = case.gen_bus_indices()?;
    let mut out = GeneratorJacobians {
        k11: DMatrix::zeros(n, n),
        k12: DMatrix::zeros(n, 2 * m),
        k21: DMatrix::zeros(n, n),
        k22: DMatrix::zeros(n, 2 * m),
    };
    for (i, (g, &k)) in case.generators.iter().zip(&gen_bus).enumerate() {
        let (dp, dq) = machine_partials(op.e_int[i], g.xd_prime, op.delta[i], op.v_re[k], op.v_im[k]);
        out.k11[(i, i)] = -dp[0];
        out.k12[(i, k)] = -dp[1];
        out.k12[(i, m + k)] = -dp[2];
        out.k21[(i, i)] = -dq[0];
        out.k22[(i, k)] = -dq[1];
        out.k22[(i, m + k)] = -dq[2];
    }
    Ok(out)
}

/// Rows of the network-injection Jacobian grouped by bus class.
///
/// `k1`/`k2` are the active/reactive rows at synchronous-generator buses,
/// `k3`/`k4` at wind buses and `k5`/`k6` at non-generator buses; each has
/// `2m` columns.
#[derive(Clone, Debug)]
pub struct PowerFlowBlocks {
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub k3: DMatrix<f64>,
    pub k4: DMatrix<f64>,
    pub k5: DMatrix<f64>,
    pub k6: DMatrix<f64>,
}

/// All Jacobians of one operating point.
#[derive(Clone, Debug)]
pub struct JacobianSet {
    pub gen: GeneratorJacobians,
    pub blocks: PowerFlowBlocks,
    /// `∂[P_net; Q_net]/∂V`, `2m × 2m`.
    pub net: DMatrix<f64>,
    /// `2m × n`.
    pub a1: DMatrix<f64>,
    /// `2m × 2m`.
    pub a3: DMatrix<f64>,
    /// `2m × n_z`; empty without farms.
    pub a2: DMatrix<f64>,
    pub wind: Option<StackedWind>,
    pub gen_buses: Vec<usize>,
    pub wind_buses: Vec<usize>,
    pub non_gen_buses: Vec<usize>,
}

impl JacobianSet {
    pub fn n(&self) -> usize {
        self.a1.ncols()
    }

    pub fn m(&self) -> usize {
        self.a1.nrows() / 2
    }
}

/// Network and machine Jacobians at `op`; farms in `case` enter through
/// `D1`/`D2` in `A3` and `C1`/`C2` in `A2`.
pub fn network_jacobians(case: &NetworkCase, op: &OperatingPoint) -> Result<JacobianSet> {
    let (n, m) = (case.n(), case.m());
    let y = netmodel::build_admittance(case)?;
    let net = netmodel::injection_jacobian(&y, &op.v_re, &op.v_im);
    let gen = generator_jacobians(case, op)?;
    let gen_buses = case.gen_bus_indices()?;
    let wind_buses = case.farm_bus_indices()?;

    let mut a1 = DMatrix::zeros(2 * m, n);
    let mut a3 = -&net;
    for (i, &k) in gen_buses.iter().enumerate() {
        a1[(k, i)] = -gen.k11[(i, i)];
        a1[(m + k, i)] = -gen.k21[(i, i)];
        for c in 0..2 * m {
            a3[(k, c)] -= gen.k12[(i, c)];
            a3[(m + k, c)] -= gen.k22[(i, c)];
        }
    }

    let wind = if case.wind_farms.is_empty() {
        None
    } else {
        if op.wind.len() != case.wind_farms.len() {
            return Err(Error::Structural("operating point lacks wind steady states".into()));
        }
        let lins: Vec<_> = case
            .wind_farms
            .iter()
            .zip(&op.wind)
            .zip(&wind_buses)
            .map(|((spec, st), &k)| windfarm::linearize_wind(spec, st, k, m, case.base_mva))
            .collect();
        Some(windfarm::multi_farm(&lins, m)?)
    };
    let nz = wind.as_ref().map_or(0, |w| w.a.nrows());
    let mut a2 = DMatrix::zeros(2 * m, nz);
    if let Some(w) = &wind {
        for (p, &k) in w.bus_idx.iter().enumerate() {
            for c in 0..2 * m {
                a3[(k, c)] += w.d1[(p, c)];
                a3[(m + k, c)] += w.d2[(p, c)];
            }
            for c in 0..nz {
                a2[(k, c)] += w.c1[(p, c)];
                a2[(m + k, c)] += w.c2[(p, c)];
            }
        }
    }

    let non_gen_buses: Vec<usize> =
        (0..m).filter(|k| !gen_buses.contains(k) && !wind_buses.contains(k)).collect();
    let p_rows = |idx: &[usize]| linalg::rows(&net, idx);
    let q_rows = |idx: &[usize]| linalg::rows(&net, &idx.iter().map(|k| m + k).collect::<Vec<_>>());
    let blocks = PowerFlowBlocks {
        k1: p_rows(&gen_buses),
        k2: q_rows(&gen_buses),
        k3: p_rows(&wind_buses),
        k4: q_rows(&wind_buses),
        k5: p_rows(&non_gen_buses),
        k6: q_rows(&non_gen_buses),
    };
    Ok(JacobianSet { gen, blocks, net, a1, a3, a2, wind, gen_buses, wind_buses, non_gen_buses })
}

/// Nonlinear balance `g(δ, V)` and machine output `P_s(δ, V)` with `E`, the
/// farm states and loads frozen at `op`; used to audit the analytic Jacobians.
pub fn balance_function(case: &NetworkCase, op: &OperatingPoint) -> Result<impl Fn(&DVector<f64>) -> DVector<f64>> {
    let (n, m) = (case.n(), case.m());
    let y = netmodel::build_admittance(case)?;
    let gen_bus = case.gen_bus_indices()?;
    let farm_bus = case.farm_bus_indices()?;
    let xd: Vec<f64> = case.generators.iter().map(|g| g.xd_prime).collect();
    let load_p: Vec<f64> = case.buses.iter().map(|b| b.load_p).collect();
    let load_q: Vec<f64> = case.buses.iter().map(|b| b.load_q).collect();
    let farms: Vec<_> = case.wind_farms.iter().zip(&op.wind).map(|(w, s)| (w.clone(), s.clone())).collect();
    let e_int = op.e_int.clone();
    let sb = case.base_mva * 1e6;
    Ok(move |x: &DVector<f64>| {
        let delta = x.rows(0, n);
        let e = x.rows(n, m).into_owned();
        let f = x.rows(n + m, m).into_owned();
        let (pn, qn) = netmodel::injections(&y, &e, &f);
        let mut out = DVector::zeros(2 * m + n);
        for k in 0..m {
            out[k] = -load_p[k] - pn[k];
            out[m + k] = -load_q[k] - qn[k];
        }
        for i in 0..n {
            let k = gen_bus[i];
            let (p, q) = netmodel::machine_power(e_int[i], xd[i], delta[i], e[k], f[k]);
            out[k] += p;
            out[m + k] += q;
            out[2 * m + i] = p;
        }
        for ((w, st), &k) in farms.iter().zip(&farm_bus) {
            let (vq, vd) = windfarm::stator_voltages(w.model.v_base, st.theta0, e[k], f[k]);
            let (p, q) = windfarm::farm_power(w.gamma, vq, vd, st.z[windfarm::IQS], st.z[windfarm::IDS]);
            out[k] += p / sb;
            out[m + k] += q / sb;
        }
        out
    })
}

/// Stack `[δ; V_Re; V_Im]` of an operating point.
pub fn state_vector(op: &OperatingPoint) -> DVector<f64> {
    DVector::from_iterator(
        op.delta.len() + 2 * op.v_re.len(),
        op.delta.iter().chain(op.v_re.iter()).chain(op.v_im.iter()).copied(),
    )
}

/// `K11 − K12 A3⁻¹ A1`.
pub fn kron_reduce(k11: &DMatrix<f64>, k12: &DMatrix<f64>, a1: &DMatrix<f64>, a3: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let f = Factored::new(a3, "A3 in Kron reduction")?;
    Ok(k11 - k12 * f.solve(a1))
}

/// Reduced swing model `M Δδ̈ = ℒ0 Δδ` with an optional area split.
#[derive(Clone, Debug)]
pub struct ReducedSwingModel {
    pub m: Vec<f64>,
    pub l0: DMatrix<f64>,
    pub l0_int: DMatrix<f64>,
    pub l0_ext: DMatrix<f64>,
    pub epsilon: f64,
    pub warnings: Vec<String>,
}

impl ReducedSwingModel {
    /// `M⁻¹ℒ`.
    pub fn state_matrix(&self) -> DMatrix<f64> {
        scale_rows(&self.l0, &self.m)
    }
}

/// `diag(m)⁻¹ · a`.
pub fn scale_rows(a: &DMatrix<f64>, m: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] / m[i])
}

/// Area label of each machine for a partition given as index lists.
pub fn labels(areas: &[Vec<usize>], n: usize) -> Result<Vec<usize>> {
    let mut lab = vec![usize::MAX; n];
    for (a, members) in areas.iter().enumerate() {
        for &i in members {
            if i >= n || lab[i] != usize::MAX {
                return Err(Error::Structural(format!("machine index {i} is out of range or in two areas")));
            }
            lab[i] = a;
        }
    }
    if let Some(i) = lab.iter().position(|&l| l == usize::MAX) {
        return Err(Error::Structural(format!("machine index {i} belongs to no area")));
    }
    Ok(lab)
}

/// Split `ℒ0 = ℒ0ᴵ + εℒ0ᴱ` along a machine partition.
///
/// Off-diagonals inside an area go to `ℒ0ᴵ`, the rest (divided by ε) to
/// `ℒ0ᴱ`; both get Laplacian diagonals. ε is the largest external coupling
/// over the smallest internal one, set to 1 when either side is empty and
/// clamped to 1 (with a warning) when larger.
pub fn split_internal_external(l0: &DMatrix<f64>, m: &[f64], areas: &[Vec<usize>]) -> Result<ReducedSwingModel> {
    let n = l0.nrows();
    let lab = labels(areas, n)?;
    let mut warnings = Vec::new();
    let mut max_ext: f64 = 0.0;
    let mut min_int = f64::INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i == j || l0[(i, j)] == 0.0 {
                continue;
            }
            let v = l0[(i, j)].abs();
            if lab[i] == lab[j] {
                min_int = min_int.min(v);
            } else {
                max_ext = max_ext.max(v);
            }
        }
    }
    let mut epsilon = if max_ext == 0.0 || !min_int.is_finite() { 1.0 } else { max_ext / min_int };
    if epsilon > 1.0 {
        warnings.push(format!("coupling ratio {epsilon:.3e} exceeds 1; epsilon clamped to 1"));
        epsilon = 1.0;
    }
    let int = DMatrix::from_fn(n, n, |i, j| if i != j && lab[i] == lab[j] { l0[(i, j)] } else { 0.0 });
    let ext = DMatrix::from_fn(n, n, |i, j| if i != j && lab[i] != lab[j] { l0[(i, j)] / epsilon } else { 0.0 });
    Ok(ReducedSwingModel {
        m: m.to_vec(),
        l0: l0.clone(),
        l0_int: linalg::make_laplacian(&int),
        l0_ext: linalg::make_laplacian(&ext),
        epsilon,
        warnings,
    })
}

/// Area of every bus: that of the electrically nearest machine terminal.
///
/// Distances are shortest paths with edge weight `x = 1/b`; a tie goes to the
/// machine with the lower index.
pub fn bus_areas(case: &NetworkCase, areas: &[Vec<usize>]) -> Result<Vec<usize>> {
    let lab = labels(areas, case.n())?;
    let m = case.m();
    let mut graph = UnGraph::<(), f64>::new_undirected();
    let nodes: Vec<NodeIndex> = (0..m).map(|_| graph.add_node(())).collect();
    for l in &case.lines {
        let a = case.bus_index(l.from).ok_or_else(|| Error::Structural(format!("missing bus {}", l.from)))?;
        let b = case.bus_index(l.to).ok_or_else(|| Error::Structural(format!("missing bus {}", l.to)))?;
        graph.add_edge(nodes[a], nodes[b], 1.0 / l.b);
    }
    let mut best = vec![(f64::INFINITY, usize::MAX); m];
    for (i, &k) in case.gen_bus_indices()?.iter().enumerate() {
        let dist = petgraph::algo::dijkstra(&graph, nodes[k], None, |e| *e.weight());
        for (node, d) in dist {
            let slot = &mut best[node.index()];
            if d < slot.0 {
                *slot = (d, i);
            }
        }
    }
    Ok(best.iter().map(|&(_, i)| lab[i]).collect())
}

/// `q_s = C Δδ`, `q_f = G Δδ` and the inverse map `Δδ = U q_s + G† q_f`.
#[derive(Clone, Debug)]
pub struct TimeScaleTransform {
    pub c: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub m_hat: Vec<f64>,
    /// Right inverse of `G` with `C G† = 0`: `M⁻¹Gᵀ(G M⁻¹ Gᵀ)⁻¹`.
    pub g_dagger: DMatrix<f64>,
}

impl TimeScaleTransform {
    /// `[C; G]`.
    pub fn forward(&self) -> DMatrix<f64> {
        stack_rows(&self.c, &self.g)
    }

    /// `[U  G†]`.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.u.nrows();
        let mut out = DMatrix::zeros(n, n);
        out.view_mut((0, 0), self.u.shape()).copy_from(&self.u);
        out.view_mut((0, self.u.ncols()), self.g_dagger.shape()).copy_from(&self.g_dagger);
        out
    }
}

pub(crate) fn stack_rows(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), 0), b.shape()).copy_from(b);
    out
}

/// Slow/fast coordinates of a partition.
///
/// Row `α` of `C` is the inertia-weighted mean angle of area `α`. `G` has one
/// row per non-first machine of each area, `Δδ_j − Δδ_first`, where "first" is
/// the first listed member of that area.
///
/// ```
/// use windcoh::linearize::timescale_transform;
///
/// let xf = timescale_transform(&[vec![0, 1, 2], vec![3, 4]], &[1.0; 5]).unwrap();
/// assert_eq!(xf.g.row(0).iter().copied().collect::<Vec<_>>(), vec![-1.0, 1.0, 0.0, 0.0, 0.0]);
/// assert_eq!(xf.g.row(2).iter().copied().collect::<Vec<_>>(), vec![0.0, 0.0, 0.0, -1.0, 1.0]);
/// ```
pub fn timescale_transform(areas: &[Vec<usize>], m: &[f64]) -> Result<TimeScaleTransform> {
    let n = m.len();
    labels(areas, n)?;
    let r = areas.len();
    let mut u = DMatrix::zeros(n, r);
    let mut m_hat = vec![0.0; r];
    for (a, members) in areas.iter().enumerate() {
        for &i in members {
            u[(i, a)] = 1.0;
            m_hat[a] += m[i];
        }
    }
    let c = DMatrix::from_fn(r, n, |a, j| u[(j, a)] * m[j] / m_hat[a]);
    let mut g = DMatrix::zeros(n - r, n);
    let mut row = 0;
    for members in areas {
        if members.is_empty() {
            return Err(Error::Structural("empty area".into()));
        }
        for &j in &members[1..] {
            g[(row, members[0])] = -1.0;
            g[(row, j)] = 1.0;
            row += 1;
        }
    }
    let minv_gt = DMatrix::from_fn(n, n - r, |i, k| g[(k, i)] / m[i]);
    let gram = &g * &minv_gt;
    let g_dagger = if n == r {
        DMatrix::zeros(n, 0)
    } else {
        minv_gt * Factored::new(&gram, "G M⁻¹ Gᵀ")?.inverse
    };
    Ok(TimeScaleTransform { c, g, u, m_hat, g_dagger })
}

/// Blocks of the slow/fast model `[q̈_s; q̈_f] = T [q_s; q_f]`.
#[derive(Clone, Debug)]
pub struct TwoTimeScaleModel {
    pub t11: DMatrix<f64>,
    pub t12: DMatrix<f64>,
    pub t21: DMatrix<f64>,
    pub t22: DMatrix<f64>,
}

impl TwoTimeScaleModel {
    pub fn r(&self) -> usize {
        self.t11.nrows()
    }

    pub fn full(&self) -> DMatrix<f64> {
        let (r, f) = (self.t11.nrows(), self.t22.nrows());
        let mut out = DMatrix::zeros(r + f, r + f);
        out.view_mut((0, 0), (r, r)).copy_from(&self.t11);
        out.view_mut((0, r), (r, f)).copy_from(&self.t12);
        out.view_mut((r, 0), (f, r)).copy_from(&self.t21);
        out.view_mut((r, r), (f, f)).copy_from(&self.t22);
        out
    }
}

/// `T11 = εCM⁻¹ℒ0ᴱU`, `T12 = εCM⁻¹ℒ0ᴱG†`, `T21 = εGM⁻¹ℒ0ᴱU`,
/// `T22 = GM⁻¹ℒ0ᴵG† + εGM⁻¹ℒ0ᴱG†`.
pub fn assemble_t(model: &ReducedSwingModel, xf: &TimeScaleTransform) -> TwoTimeScaleModel {
    let eps = model.epsilon;
    let mi_ext = scale_rows(&model.l0_ext, &model.m) * eps;
    let mi_int = scale_rows(&model.l0_int, &model.m);
    TwoTimeScaleModel {
        t11: &xf.c * &mi_ext * &xf.u,
        t12: &xf.c * &mi_ext * &xf.g_dagger,
        t21: &xf.g * &mi_ext * &xf.u,
        t22: &xf.g * (&mi_int + &mi_ext) * &xf.g_dagger,
    }
}

/// Machine ids grouped into the areas of `areas` (index lists).
pub fn area_ids(case: &NetworkCase, areas: &[Vec<usize>]) -> Vec<Vec<usize>> {
    areas.iter().map(|a| a.iter().map(|&i| case.generators[i].id).collect()).collect()
}

/// Translate area lists of machine ids into index lists.
pub fn area_indices(case: &NetworkCase, areas: &[Vec<usize>]) -> Result<Vec<Vec<usize>>> {
    areas
        .iter()
        .map(|a| {
            a.iter()
                .map(|id| {
                    case.generators
                        .iter()
                        .position(|g| g.id == *id)
                        .ok_or_else(|| Error::Structural(format!("no generator with id {id}")))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdiff;
    use crate::netmodel::{ieee68, solve_power_flow, PowerFlowOptions};

    #[test]
    fn single_machine_partial() {
        let (dp, _) = machine_partials(1.0, 0.5, 0.0, 1.0, 0.0);
        assert_eq!(dp[0], 2.0);
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        let case = ieee68();
        let op = solve_power_flow(&case, &PowerFlowOptions::default()).unwrap();
        let jac = network_jacobians(&case, &op).unwrap();
        let (n, m) = (case.n(), case.m());
        let num = fdiff::jacobian(balance_function(&case, &op).unwrap(), &state_vector(&op), fdiff::STEP);
        let a1 = num.view((0, 0), (2 * m, n)).into_owned();
        let a3 = num.view((0, n), (2 * m, 2 * m)).into_owned();
        let k11 = -num.view((2 * m, 0), (n, n)).into_owned();
        let k12 = -num.view((2 * m, n), (n, 2 * m)).into_owned();
        assert!(fdiff::max_rel_err(&jac.a1, &a1) < 1e-5);
        assert!(fdiff::max_rel_err(&jac.a3, &a3) < 1e-5);
        assert!(fdiff::max_rel_err(&jac.gen.k11, &k11) < 1e-5);
        assert!(fdiff::max_rel_err(&jac.gen.k12, &k12) < 1e-5);
    }

    #[test]
    fn a1_zero_rows_at_non_generator_buses() {
        let case = ieee68();
        let op = solve_power_flow(&case, &PowerFlowOptions::default()).unwrap();
        let jac = network_jacobians(&case, &op).unwrap();
        let m = case.m();
        for &k in &jac.non_gen_buses {
            assert!(jac.a1.row(k).iter().all(|v| *v == 0.0));
            assert!(jac.a1.row(m + k).iter().all(|v| *v == 0.0));
        }
        assert_eq!(jac.blocks.k1.nrows(), 16);
        assert_eq!(jac.blocks.k3.nrows(), 0);
        assert_eq!(jac.blocks.k5.nrows(), 52);
    }

    #[test]
    fn split_limits() {
        let l = DMatrix::from_row_slice(3, 3, &[-3.0, 1.0, 2.0, 1.0, -4.0, 3.0, 2.0, 3.0, -5.0]);
        let m = [1.0; 3];
        let one = split_internal_external(&l, &m, &[vec![0, 1, 2]]).unwrap();
        assert_eq!(one.l0_int, l);
        assert_eq!(one.l0_ext, DMatrix::zeros(3, 3));
        assert_eq!(one.epsilon, 1.0);
        let each = split_internal_external(&l, &m, &[vec![0], vec![1], vec![2]]).unwrap();
        assert_eq!(each.l0_int, DMatrix::zeros(3, 3));
        assert_eq!(each.l0_ext, l);
    }

    #[test]
    fn toy_epsilon_ratio() {
        let mut l = DMatrix::zeros(4, 4);
        for (i, j, w) in [(0, 1, 10.0), (2, 3, 10.0), (1, 2, 1.0)] {
            l[(i, j)] = w;
            l[(j, i)] = w;
        }
        let l = linalg::make_laplacian(&l);
        let s = split_internal_external(&l, &[1.0; 4], &[vec![0, 1], vec![2, 3]]).unwrap();
        assert!((s.epsilon - 0.1).abs() < 1e-15);
        assert!(linalg::rel_diff(&(&s.l0_int + &s.l0_ext * s.epsilon), &l) < 1e-15);
    }

    #[test]
    fn transform_inverse_and_row_sums() {
        let m = [1.0, 2.0, 3.0, 4.0, 5.0];
        let xf = timescale_transform(&[vec![0, 1, 2], vec![3, 4]], &m).unwrap();
        let prod = xf.forward() * xf.inverse();
        assert!((prod - DMatrix::identity(5, 5)).amax() < 1e-12);
        for a in 0..2 {
            assert!((xf.c.row(a).sum() - 1.0).abs() < 1e-15);
        }
        let eq = timescale_transform(&[vec![0, 1, 2]], &[2.0; 3]).unwrap();
        assert!(eq.c.iter().all(|v| (*v - 1.0 / 3.0).abs() < 1e-15));
    }
}
