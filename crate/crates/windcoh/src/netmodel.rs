//! Static network case and AC power flow.
//!
//! Lines are lossless series reactances with optional charging and an
//! off-nominal tap on the `from` side. Loads are constant power. Each
//! synchronous machine is a voltage `E∠δ` behind its transient reactance
//! `x'_d`; `E` and `δ` are recovered from the power-flow solution.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use petgraph::graph::UnGraph;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::C64;
use crate::windfarm::{self, WindFarmSpec, WindState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BusKind {
    SyncGen,
    WindGen,
    NonGen,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    #[serde(default)]
    pub g_shunt: f64,
    #[serde(default)]
    pub b_shunt: f64,
    #[serde(default)]
    pub load_p: f64,
    #[serde(default)]
    pub load_q: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Series susceptance magnitude `1/x`, pu.
    pub b: f64,
    /// Total line charging, split evenly between the ends.
    #[serde(default)]
    pub charging: f64,
    /// Off-nominal ratio on the `from` side.
    #[serde(default = "unit")]
    pub tap: f64,
    /// Series resistance; only accepted when zero.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub r: f64,
}

fn is_zero(v: &f64) -> bool {
    *v == 0.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: usize,
    pub bus: usize,
    /// Inertia constant `H` in seconds; `M = 2H/ω_s`.
    pub h: f64,
    pub xd_prime: f64,
    /// Scheduled active output, pu (ignored for the slack machine).
    pub p_set: f64,
    /// Terminal voltage set-point, pu.
    pub v_set: f64,
    #[serde(default)]
    pub damping: f64,
}

fn sixty() -> f64 {
    60.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    #[serde(default)]
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<String>,
    pub base_mva: f64,
    #[serde(default = "sixty")]
    pub freq_hz: f64,
    /// Slack generator id; defaults to the largest-inertia machine.
    #[serde(default)]
    pub slack: Option<usize>,
    pub buses: Vec<Bus>,
    pub lines: Vec<Line>,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub wind_farms: Vec<WindFarmSpec>,
}

/// The 16-machine 68-bus benchmark shipped with the crate.
pub fn ieee68() -> NetworkCase {
    serde_json::from_str(IEEE68_JSON).expect("bundled fixture parses")
}

pub const IEEE68_JSON: &str = include_str!("../data/ieee68.json");

impl NetworkCase {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn n(&self) -> usize {
        self.generators.len()
    }

    pub fn m(&self) -> usize {
        self.buses.len()
    }

    pub fn omega_s(&self) -> f64 {
        2.0 * PI * self.freq_hz
    }

    /// Position of bus `id` in `buses`.
    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    fn idx(&self, id: usize) -> Result<usize> {
        self.bus_index(id).ok_or_else(|| Error::Structural(format!("reference to missing bus {id}")))
    }

    /// Bus index of every generator, in generator order.
    pub fn gen_bus_indices(&self) -> Result<Vec<usize>> {
        self.generators.iter().map(|g| self.idx(g.bus)).collect()
    }

    pub fn farm_bus_indices(&self) -> Result<Vec<usize>> {
        self.wind_farms.iter().map(|w| self.idx(w.bus)).collect()
    }

    /// Inertias `M_i = 2H_i/ω_s`.
    pub fn inertia(&self) -> Vec<f64> {
        let ws = self.omega_s();
        self.generators.iter().map(|g| 2.0 * g.h / ws).collect()
    }

    /// Index of the slack machine in `generators`.
    pub fn slack_index(&self) -> Result<usize> {
        match self.slack {
            Some(id) => self
                .generators
                .iter()
                .position(|g| g.id == id)
                .ok_or_else(|| Error::Structural(format!("slack generator {id} does not exist"))),
            None => {
                let mut best = 0;
                for (i, g) in self.generators.iter().enumerate() {
                    if g.h > self.generators[best].h {
                        best = i;
                    }
                }
                if self.generators.is_empty() {
                    Err(Error::Structural("case has no generators".into()))
                } else {
                    Ok(best)
                }
            }
        }
    }

    /// Copy of the case with `farms` attached (replacing any existing farms).
    /// Farms with `γ = 0` are dropped.
    pub fn with_farms(&self, farms: &[WindFarmSpec]) -> Self {
        let mut out = self.clone();
        out.wind_farms = farms.iter().filter(|f| f.gamma > 0).cloned().collect();
        for b in &mut out.buses {
            if b.kind == BusKind::WindGen {
                b.kind = BusKind::NonGen;
            }
        }
        let ids: BTreeSet<usize> = out.wind_farms.iter().map(|f| f.bus).collect();
        for b in &mut out.buses {
            if ids.contains(&b.id) && b.kind == BusKind::NonGen {
                b.kind = BusKind::WindGen;
            }
        }
        out
    }
}

/// Category of a [`Finding`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FindingKind {
    DuplicateId,
    DanglingReference,
    SelfLoop,
    NonPositive,
    ResistiveLine,
    Disconnected,
    TooFewGenerators,
    KindMismatch,
    SharedBus,
    BadSlack,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub kind: FindingKind,
    pub message: String,
}

/// Check every case invariant; an empty list means the case is usable.
pub fn validate_case(case: &NetworkCase) -> Vec<Finding> {
    let mut out = Vec::new();
    let mut push = |kind, message: String| out.push(Finding { kind, message });

    let mut seen = BTreeSet::new();
    for b in &case.buses {
        if !seen.insert(b.id) {
            push(FindingKind::DuplicateId, format!("bus id {} appears more than once", b.id));
        }
    }
    let mut gen_ids = BTreeSet::new();
    for g in &case.generators {
        if !gen_ids.insert(g.id) {
            push(FindingKind::DuplicateId, format!("generator id {} appears more than once", g.id));
        }
    }
    let kind_of: BTreeMap<usize, BusKind> = case.buses.iter().map(|b| (b.id, b.kind)).collect();

    for (k, l) in case.lines.iter().enumerate() {
        for end in [l.from, l.to] {
            if !kind_of.contains_key(&end) {
                push(FindingKind::DanglingReference, format!("line {k} references missing bus {end}"));
            }
        }
        if l.from == l.to {
            push(FindingKind::SelfLoop, format!("line {k} connects bus {} to itself", l.from));
        }
        if !(l.b > 0.0) || !l.b.is_finite() {
            push(FindingKind::NonPositive, format!("line {k} has susceptance {}", l.b));
        }
        if !(l.tap > 0.0) {
            push(FindingKind::NonPositive, format!("line {k} has tap {}", l.tap));
        }
        if l.r != 0.0 {
            push(FindingKind::ResistiveLine, format!("line {k} has resistance {}; only lossless lines are modelled", l.r));
        }
    }

    let mut gen_buses = BTreeSet::new();
    for g in &case.generators {
        match kind_of.get(&g.bus) {
            None => push(FindingKind::DanglingReference, format!("generator {} on missing bus {}", g.id, g.bus)),
            Some(BusKind::SyncGen) => {}
            Some(k) => push(FindingKind::KindMismatch, format!("generator {} sits on bus {} of kind {k:?}", g.id, g.bus)),
        }
        if !gen_buses.insert(g.bus) {
            push(FindingKind::SharedBus, format!("more than one generator on bus {}", g.bus));
        }
        if !(g.h > 0.0) {
            push(FindingKind::NonPositive, format!("generator {} has inertia {}", g.id, g.h));
        }
        if !(g.xd_prime > 0.0) {
            push(FindingKind::NonPositive, format!("generator {} has x'd {}", g.id, g.xd_prime));
        }
        if !(g.v_set > 0.0) {
            push(FindingKind::NonPositive, format!("generator {} has voltage set-point {}", g.id, g.v_set));
        }
    }
    for b in &case.buses {
        if b.kind == BusKind::SyncGen && !gen_buses.contains(&b.id) {
            push(FindingKind::KindMismatch, format!("bus {} is sync-gen but hosts no generator", b.id));
        }
    }
    if case.generators.len() < 2 {
        push(FindingKind::TooFewGenerators, format!("{} synchronous generators; at least 2 required", case.generators.len()));
    }
    if let Some(id) = case.slack {
        if !gen_ids.contains(&id) {
            push(FindingKind::BadSlack, format!("slack generator {id} does not exist"));
        }
    }

    let mut farm_buses = BTreeSet::new();
    for w in &case.wind_farms {
        match kind_of.get(&w.bus) {
            None => push(FindingKind::DanglingReference, format!("wind farm on missing bus {}", w.bus)),
            Some(BusKind::WindGen) => {}
            Some(k) => push(FindingKind::KindMismatch, format!("wind farm on bus {} of kind {k:?}", w.bus)),
        }
        if !farm_buses.insert(w.bus) {
            push(FindingKind::SharedBus, format!("more than one wind farm on bus {}", w.bus));
        }
        if w.gamma == 0 {
            push(FindingKind::NonPositive, format!("wind farm on bus {} has gamma 0", w.bus));
        }
        if !(w.wind_speed > 0.0) {
            push(FindingKind::NonPositive, format!("wind farm on bus {} has wind speed {}", w.bus, w.wind_speed));
        }
    }

    if !case.buses.is_empty() && !connected(case) {
        push(FindingKind::Disconnected, "network graph is not connected".into());
    }
    out
}

fn connected(case: &NetworkCase) -> bool {
    let mut g = UnGraph::<(), ()>::new_undirected();
    let nodes: Vec<_> = case.buses.iter().map(|_| g.add_node(())).collect();
    for l in &case.lines {
        if let (Some(a), Some(b)) = (case.bus_index(l.from), case.bus_index(l.to)) {
            g.add_edge(nodes[a], nodes[b], ());
        }
    }
    petgraph::algo::connected_components(&g) == 1
}

/// Complex bus admittance matrix.
///
/// A line of series susceptance `b` has admittance `y = −jb`. It adds
/// `y/t²` and `y` to the two diagonals and `−y/t` to both off-diagonals,
/// so an untapped line puts `+jb` off the diagonal and `−jb` on it.
/// Charging adds `+j·charging/2` at each end, and bus shunts `G + jB` add
/// on the diagonal.
pub fn build_admittance(case: &NetworkCase) -> Result<DMatrix<C64>> {
    if !connected(case) {
        return Err(Error::Structural("network graph is not connected".into()));
    }
    let m = case.m();
    let mut y = DMatrix::<C64>::zeros(m, m);
    for l in &case.lines {
        let (a, b) = (case.idx(l.from)?, case.idx(l.to)?);
        let ys = C64::new(0.0, -l.b);
        let half = C64::new(0.0, 0.5 * l.charging);
        y[(a, a)] += ys / (l.tap * l.tap) + half;
        y[(b, b)] += ys + half;
        y[(a, b)] -= ys / l.tap;
        y[(b, a)] -= ys / l.tap;
    }
    for (i, bus) in case.buses.iter().enumerate() {
        y[(i, i)] += C64::new(bus.g_shunt, bus.b_shunt);
    }
    Ok(y)
}

/// Net injections `S = V ∘ conj(Y V)` split as `(P, Q)`.
pub fn injections(y: &DMatrix<C64>, e: &DVector<f64>, f: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let m = e.len();
    let mut p = DVector::zeros(m);
    let mut q = DVector::zeros(m);
    for j in 0..m {
        let (mut ir, mut ii) = (0.0, 0.0);
        for k in 0..m {
            let (g, b) = (y[(j, k)].re, y[(j, k)].im);
            ir += g * e[k] - b * f[k];
            ii += g * f[k] + b * e[k];
        }
        p[j] = e[j] * ir + f[j] * ii;
        q[j] = f[j] * ir - e[j] * ii;
    }
    (p, q)
}

/// Partial derivatives of the net injections with respect to `[V_Re; V_Im]`.
///
/// Returns a `2m × 2m` matrix with rows `[P_1..P_m; Q_1..Q_m]`.
pub fn injection_jacobian(y: &DMatrix<C64>, e: &DVector<f64>, f: &DVector<f64>) -> DMatrix<f64> {
    let m = e.len();
    let mut jac = DMatrix::zeros(2 * m, 2 * m);
    for j in 0..m {
        let (mut ir, mut ii) = (0.0, 0.0);
        for k in 0..m {
            let (g, b) = (y[(j, k)].re, y[(j, k)].im);
            ir += g * e[k] - b * f[k];
            ii += g * f[k] + b * e[k];
            jac[(j, k)] = e[j] * g + f[j] * b;
            jac[(j, m + k)] = -e[j] * b + f[j] * g;
            jac[(m + j, k)] = f[j] * g - e[j] * b;
            jac[(m + j, m + k)] = -f[j] * b - e[j] * g;
        }
        jac[(j, j)] += ir;
        jac[(j, m + j)] += ii;
        jac[(m + j, j)] -= ii;
        jac[(m + j, m + j)] += ir;
    }
    jac
}

/// Classical machine output `(P_s, Q_s)` at its terminal bus.
///
/// `P_s = (E/x')(V_Re sin δ − V_Im cos δ)`,
/// `Q_s = (E/x')(V_Re cos δ + V_Im sin δ) − |V|²/x'`.
pub fn machine_power(e_int: f64, xd: f64, delta: f64, vr: f64, vi: f64) -> (f64, f64) {
    let (s, c) = delta.sin_cos();
    let k = e_int / xd;
    (k * (vr * s - vi * c), k * (vr * c + vi * s) - (vr * vr + vi * vi) / xd)
}

#[derive(Clone, Debug)]
pub enum Init {
    Flat,
    Supplied { v_re: DVector<f64>, v_im: DVector<f64> },
}

#[derive(Clone, Debug)]
pub struct PowerFlowOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub init: Init,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 30, init: Init::Flat }
    }
}

/// Steady state about which the model is linearised.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub v_re: DVector<f64>,
    pub v_im: DVector<f64>,
    /// Machine rotor angles, rad.
    pub delta: DVector<f64>,
    /// Internal voltages `E_i`.
    pub e_int: DVector<f64>,
    /// Mechanical power, equal to `P_s` at equilibrium.
    pub p_m: DVector<f64>,
    pub q_gen: DVector<f64>,
    /// Net network injections per bus.
    pub p_inj: DVector<f64>,
    pub q_inj: DVector<f64>,
    pub wind: Vec<WindState>,
    pub iterations: usize,
    pub mismatch: f64,
}

impl OperatingPoint {
    pub fn voltage_vector(&self) -> DVector<f64> {
        let m = self.v_re.len();
        DVector::from_fn(2 * m, |k, _| if k < m { self.v_re[k] } else { self.v_im[k - m] })
    }
}

/// Scheduled `(P, Q)` injections from loads and farms, before generators.
fn scheduled(case: &NetworkCase) -> Result<(DVector<f64>, DVector<f64>)> {
    let m = case.m();
    let mut p = DVector::from_fn(m, |i, _| -case.buses[i].load_p);
    let mut q = DVector::from_fn(m, |i, _| -case.buses[i].load_q);
    for w in &case.wind_farms {
        let k = case.idx(w.bus)?;
        let (pw, qw) = w.injection_pu(case.base_mva);
        p[k] += pw;
        q[k] += qw;
    }
    Ok((p, q))
}

/// Newton–Raphson power flow in rectangular coordinates.
///
/// The slack bus holds `V = v_set + j0`; other generator buses are PV
/// (`|V|² = v_set²`); the rest are PQ. Wind farms inject their MPPT power at
/// the configured reactive set-point. After convergence each machine's
/// `E∠δ = V + j x'_d I` and each farm's equilibrium are filled in.
pub fn solve_power_flow(case: &NetworkCase, opts: &PowerFlowOptions) -> Result<OperatingPoint> {
    let y = build_admittance(case)?;
    let m = case.m();
    let gen_bus = case.gen_bus_indices()?;
    let slack_gen = case.slack_index()?;
    let slack = gen_bus[slack_gen];
    let (mut p_sched, q_sched) = scheduled(case)?;
    let mut vset: Vec<Option<f64>> = vec![None; m];
    for (g, &k) in case.generators.iter().zip(&gen_bus) {
        vset[k] = Some(g.v_set);
        if k != slack {
            p_sched[k] += g.p_set;
        }
    }

    let (mut e, mut f) = match &opts.init {
        Init::Flat => (DVector::from_fn(m, |k, _| vset[k].unwrap_or(1.0)), DVector::zeros(m)),
        Init::Supplied { v_re, v_im } => (v_re.clone(), v_im.clone()),
    };
    e[slack] = vset[slack].expect("slack bus hosts a generator");
    f[slack] = 0.0;

    let unknown: Vec<usize> = (0..m).filter(|&k| k != slack).collect();
    let nu = unknown.len();
    let residual = |e: &DVector<f64>, f: &DVector<f64>| {
        let (p, q) = injections(&y, e, f);
        let mut r = DVector::zeros(2 * nu);
        for (a, &k) in unknown.iter().enumerate() {
            r[a] = p_sched[k] - p[k];
            r[nu + a] = match vset[k] {
                Some(v) => v * v - (e[k] * e[k] + f[k] * f[k]),
                None => q_sched[k] - q[k],
            };
        }
        r
    };

    let mut iterations = 0;
    let mut r = residual(&e, &f);
    let mut mismatch = r.amax();
    while mismatch >= opts.tol {
        if iterations == opts.max_iter || !mismatch.is_finite() {
            return Err(Error::Diverged { iterations, mismatch });
        }
        let full = injection_jacobian(&y, &e, &f);
        let mut jac = DMatrix::zeros(2 * nu, 2 * nu);
        for (a, &k) in unknown.iter().enumerate() {
            for (b, &l) in unknown.iter().enumerate() {
                jac[(a, b)] = full[(k, l)];
                jac[(a, nu + b)] = full[(k, m + l)];
                if vset[k].is_some() {
                    if k == l {
                        jac[(nu + a, b)] = 2.0 * e[k];
                        jac[(nu + a, nu + b)] = 2.0 * f[k];
                    }
                } else {
                    jac[(nu + a, b)] = full[(m + k, l)];
                    jac[(nu + a, nu + b)] = full[(m + k, m + l)];
                }
            }
        }
        // r = scheduled − actual, and the Jacobian is of `actual`
        let dx = jac.lu().solve(&r).ok_or_else(|| Error::Singular {
            context: "power-flow Jacobian (voltage collapse)".into(),
            condition: f64::INFINITY,
        })?;
        for (a, &k) in unknown.iter().enumerate() {
            e[k] += dx[a];
            f[k] += dx[nu + a];
        }
        iterations += 1;
        r = residual(&e, &f);
        mismatch = r.amax();
    }

    let (p_inj, q_inj) = injections(&y, &e, &f);
    let n = case.n();
    let mut delta = DVector::zeros(n);
    let mut e_int = DVector::zeros(n);
    let mut p_m = DVector::zeros(n);
    let mut q_gen = DVector::zeros(n);
    let (p_other, q_other) = scheduled(case)?;
    for (i, (g, &k)) in case.generators.iter().zip(&gen_bus).enumerate() {
        let s = C64::new(p_inj[k] - p_other[k], q_inj[k] - q_other[k]);
        let v = C64::new(e[k], f[k]);
        let cur = (s / v).conj();
        let ev = v + C64::new(0.0, g.xd_prime) * cur;
        e_int[i] = ev.norm();
        delta[i] = ev.arg();
        p_m[i] = s.re;
        q_gen[i] = s.im;
    }
    let mut wind = Vec::with_capacity(case.wind_farms.len());
    for w in &case.wind_farms {
        let k = case.idx(w.bus)?;
        wind.push(windfarm::wind_steady_state(w, e[k], f[k], case.base_mva)?);
    }
    Ok(OperatingPoint { v_re: e, v_im: f, delta, e_int, p_m, q_gen, p_inj, q_inj, wind, iterations, mismatch })
}

/// Worst bus power balance at `op`, recomputed from the machine model.
///
/// Uses `E∠δ` for the machines and the farm currents for wind, so it checks
/// the whole operating point rather than the solver's own residual.
pub fn balance_residual(case: &NetworkCase, op: &OperatingPoint) -> Result<f64> {
    let y = build_admittance(case)?;
    let (p, q) = injections(&y, &op.v_re, &op.v_im);
    let (mut ps, mut qs) = scheduled(case)?;
    for (i, (g, k)) in case.generators.iter().zip(case.gen_bus_indices()?).enumerate() {
        let (pg, qg) = machine_power(op.e_int[i], g.xd_prime, op.delta[i], op.v_re[k], op.v_im[k]);
        ps[k] += pg;
        qs[k] += qg;
    }
    // replace scheduled farm output with the output of the farm state
    for (w, st) in case.wind_farms.iter().zip(&op.wind) {
        let k = case.idx(w.bus)?;
        let (pw0, qw0) = w.injection_pu(case.base_mva);
        let (vq, vd) = windfarm::stator_voltages(w.model.v_base, st.theta0, op.v_re[k], op.v_im[k]);
        let (pw, qw) = windfarm::farm_power(w.gamma, vq, vd, st.z[windfarm::IQS], st.z[windfarm::IDS]);
        let sb = case.base_mva * 1e6;
        ps[k] += pw / sb - pw0;
        qs[k] += qw / sb - qw0;
    }
    Ok((ps - p).amax().max((qs - q).amax()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_bus(b: f64, load: f64) -> NetworkCase {
        NetworkCase {
            name: "two-bus".into(),
            provenance: None,
            base_mva: 100.0,
            freq_hz: 60.0,
            slack: Some(1),
            buses: vec![
                Bus { id: 1, kind: BusKind::SyncGen, g_shunt: 0.0, b_shunt: 0.0, load_p: 0.0, load_q: 0.0 },
                Bus { id: 2, kind: BusKind::SyncGen, g_shunt: 0.0, b_shunt: 0.0, load_p: load, load_q: 0.0 },
            ],
            lines: vec![Line { from: 1, to: 2, b, charging: 0.0, tap: 1.0, r: 0.0 }],
            generators: vec![
                Generator { id: 1, bus: 1, h: 5.0, xd_prime: 0.3, p_set: 0.0, v_set: 1.0, damping: 0.0 },
                Generator { id: 2, bus: 2, h: 5.0, xd_prime: 0.3, p_set: 0.0, v_set: 1.0, damping: 0.0 },
            ],
            wind_farms: vec![],
        }
    }

    #[test]
    fn two_bus_admittance() {
        let mut case = two_bus(10.0, 0.0);
        let y = build_admittance(&case).unwrap();
        assert_eq!(y[(0, 1)], C64::new(0.0, 10.0));
        assert_eq!(y[(1, 0)], C64::new(0.0, 10.0));
        assert_eq!(y[(0, 0)], C64::new(0.0, -10.0));
        assert_eq!(y[(1, 1)], C64::new(0.0, -10.0));
        case.buses[0].b_shunt = 0.5;
        let y2 = build_admittance(&case).unwrap();
        assert_eq!(y2[(0, 0)] - y[(0, 0)], C64::new(0.0, 0.5));
        assert_eq!(y2[(1, 1)], y[(1, 1)]);
    }

    #[test]
    fn ring_row_sums_are_shunts() {
        let mut case = two_bus(5.0, 0.0);
        case.buses.push(Bus { id: 3, kind: BusKind::NonGen, g_shunt: 0.1, b_shunt: 0.2, load_p: 0.0, load_q: 0.0 });
        case.lines = vec![
            Line { from: 1, to: 2, b: 5.0, charging: 0.0, tap: 1.0, r: 0.0 },
            Line { from: 2, to: 3, b: 5.0, charging: 0.0, tap: 1.0, r: 0.0 },
            Line { from: 3, to: 1, b: 5.0, charging: 0.0, tap: 1.0, r: 0.0 },
        ];
        let y = build_admittance(&case).unwrap();
        // hand-assembled: −j10 diagonals, +j5 off-diagonals, shunt on bus 3
        let mut hand = DMatrix::from_element(3, 3, C64::new(0.0, 5.0));
        for i in 0..3 {
            hand[(i, i)] = C64::new(0.0, -10.0);
        }
        hand[(2, 2)] += C64::new(0.1, 0.2);
        assert_eq!(y, hand);
        let sums: Vec<C64> = (0..3).map(|i| y.row(i).sum()).collect();
        for (s, want) in sums.iter().zip([C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(0.1, 0.2)]) {
            assert!((s - want).norm() < 1e-12, "{s} vs {want}");
        }
        assert_eq!(y, y.transpose());
    }

    #[test]
    fn disconnected_is_structural_error() {
        let mut case = two_bus(5.0, 0.0);
        case.lines.clear();
        assert!(matches!(build_admittance(&case), Err(Error::Structural(_))));
    }

    #[test]
    fn no_load_gives_equal_angles() {
        let case = two_bus(8.0, 0.0);
        let op = solve_power_flow(&case, &PowerFlowOptions::default()).unwrap();
        assert_eq!(op.iterations, 0);
        assert!(op.p_inj.amax() < 1e-14);
        assert!((op.delta[0] - op.delta[1]).abs() < 1e-14);
        assert!((op.e_int[0] - op.e_int[1]).abs() < 1e-14);
    }

    #[test]
    fn two_bus_angle_closed_form() {
        let mut case = two_bus(5.0, 0.5);
        // bus 2 as a PQ load bus with flat voltage is not reachable with a
        // lossless line, so pin it as PV at 1.0 and schedule zero generation
        case.generators[1].p_set = 0.0;
        let op = solve_power_flow(&case, &PowerFlowOptions::default()).unwrap();
        let th = op.v_im[1].atan2(op.v_re[1]);
        let expected = -(0.5f64 / 5.0).asin();
        assert!((th - expected).abs() < 1e-10, "{th} vs {expected}");
        assert!(op.mismatch < 1e-8);
    }

    #[test]
    fn validate_findings() {
        let case = two_bus(5.0, 0.0);
        assert!(validate_case(&case).is_empty());
        let mut bad = case.clone();
        bad.generators[1].bus = 9;
        let f = validate_case(&bad);
        assert_eq!(f.iter().filter(|x| x.kind == FindingKind::DanglingReference).count(), 1);
        let mut dup = case.clone();
        dup.buses[1].id = 1;
        dup.lines.clear();
        dup.generators[1].bus = 1;
        let f = validate_case(&dup);
        assert_eq!(f.iter().filter(|x| x.kind == FindingKind::DuplicateId).count(), 1);
        let mut res = case.clone();
        res.lines[0].r = 0.01;
        assert_eq!(validate_case(&res)[0].kind, FindingKind::ResistiveLine);
    }

    #[test]
    fn machine_power_derivative_example() {
        let h = 1e-6;
        let (p1, _) = machine_power(1.0, 0.5, h, 1.0, 0.0);
        let (p0, _) = machine_power(1.0, 0.5, -h, 1.0, 0.0);
        assert!(((p1 - p0) / (2.0 * h) - 2.0).abs() < 1e-8);
    }

    #[test]
    fn injection_jacobian_matches_finite_differences() {
        let case = ieee68();
        let y = build_admittance(&case).unwrap();
        let m = case.m();
        let x0 = DVector::from_fn(2 * m, |k, _| if k < m { 1.0 + 0.01 * (k as f64).sin() } else { 0.2 * (k as f64).cos() });
        let split = |x: &DVector<f64>| (x.rows(0, m).into_owned(), x.rows(m, m).into_owned());
        let (e, f) = split(&x0);
        let jac = injection_jacobian(&y, &e, &f);
        let num = crate::fdiff::jacobian(
            |x| {
                let (e, f) = split(x);
                let (p, q) = injections(&y, &e, &f);
                DVector::from_iterator(2 * m, p.iter().chain(q.iter()).copied())
            },
            &x0,
            crate::fdiff::STEP,
        );
        assert!(crate::fdiff::max_rel_err(&jac, &num) < 1e-5);
    }
}
