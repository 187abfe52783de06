//! Aggregated DFIG wind farm: drivetrain, machine, and PI power loops.
//!
//! A farm is `γ` identical units behind one bus. Every unit carries the
//! same average state
//! `z = [ω_r, ω_g, θ_T, i_ds, i_qs, i_dr, i_qr, x_p, x_q]` in SI units.
//!
//! Sign conventions: stator currents are positive out of the machine
//! (generator convention) and rotor currents positive into it. Flux linkages
//! are then `ψ_ds = −L_s i_ds + L_m i_dr` and `ψ_dr = L_r i_dr − L_m i_ds`,
//! with the same pattern on the q axis. The stator dq frame is frozen at the
//! steady-state bus-voltage angle θ0, so at the operating point `v_ds = 0`
//! and `v_qs = V_b|V|`.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use nalgebra::{DMatrix, Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of states per farm.
pub const NZ: usize = 9;

pub const WR: usize = 0;
pub const WG: usize = 1;
pub const TH: usize = 2;
pub const IDS: usize = 3;
pub const IQS: usize = 4;
pub const IDR: usize = 5;
pub const IQR: usize = 6;
pub const XP: usize = 7;
pub const XQ: usize = 8;

pub const STATE_NAMES: [&str; NZ] =
    ["omega_r", "omega_g", "theta_t", "i_ds", "i_qs", "i_dr", "i_qr", "x_p", "x_q"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurbineParams {
    pub j_r: f64,
    pub j_g: f64,
    pub b_dt: f64,
    pub k_dt: f64,
    pub b_r: f64,
    pub b_g: f64,
    pub n_g: f64,
    pub rho: f64,
    pub a_s: f64,
    pub c_p: f64,
}

impl TurbineParams {
    /// MPPT gain `k_opt = ρ A_s C_p / 2`, so that `P* = k_opt ν³`.
    pub fn k_opt(&self) -> f64 {
        0.5 * self.rho * self.a_s * self.c_p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DfigParams {
    pub r_s: f64,
    pub r_r: f64,
    pub l_ls: f64,
    pub l_lr: f64,
    pub l_m: f64,
    pub p_e: u32,
    pub omega_e: f64,
}

impl DfigParams {
    pub fn l_s(&self) -> f64 {
        self.l_ls + self.l_m
    }
    pub fn l_r(&self) -> f64 {
        self.l_lr + self.l_m
    }
    /// Maps `[i_ds, i_qs, i_dr, i_qr]` to `[ψ_ds, ψ_qs, ψ_dr, ψ_qr]`.
    fn inductance(&self) -> Matrix4<f64> {
        let (ls, lr, lm) = (self.l_s(), self.l_r(), self.l_m);
        Matrix4::new(
            -ls, 0.0, lm, 0.0, //
            0.0, -ls, 0.0, lm, //
            -lm, 0.0, lr, 0.0, //
            0.0, -lm, 0.0, lr,
        )
    }
    /// Torque constant of `T_g = c (i_qs i_dr − i_ds i_qr)`, with the 3/2 factor.
    fn torque_constant(&self) -> f64 {
        1.5 * (self.p_e as f64 / 2.0) * self.l_m
    }
}

/// PI gains of the active (`p`) and reactive (`q`) power loops.
///
/// Errors are normalised by the unit rating, so `kp` is in volts per
/// per-unit error and `ki` in volts per per-unit-second.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PiGains {
    pub kp_p: f64,
    pub ki_p: f64,
    pub kp_q: f64,
    pub ki_q: f64,
}

/// One registry entry: everything about a turbine-generator unit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FarmModel {
    #[serde(default)]
    pub provenance: String,
    #[serde(default)]
    pub note: String,
    /// Stator voltage in volts corresponding to 1 pu bus voltage.
    pub v_base: f64,
    /// Unit rating in watts; normalises the PI errors.
    pub p_rated: f64,
    pub turbine: TurbineParams,
    pub dfig: DfigParams,
    pub pi: PiGains,
}

pub const DEFAULT_MODEL: &str = "dfig-1.76mw";

static REGISTRY: OnceLock<BTreeMap<String, FarmModel>> = OnceLock::new();

/// Built-in parameter registry, keyed by model name.
pub fn registry() -> &'static BTreeMap<String, FarmModel> {
    REGISTRY.get_or_init(|| {
        serde_json::from_str(include_str!("../data/farms.json")).expect("bundled farm registry parses")
    })
}

pub fn default_model() -> FarmModel {
    registry()[DEFAULT_MODEL].clone()
}

/// Look up a registry entry, falling back to an external registry file's map.
pub fn lookup_model(name: &str, extra: Option<&BTreeMap<String, FarmModel>>) -> Result<FarmModel> {
    extra
        .and_then(|m| m.get(name))
        .or_else(|| registry().get(name))
        .cloned()
        .ok_or_else(|| Error::Domain(format!("unknown farm model '{name}'")))
}

fn default_wind_speed() -> f64 {
    11.0
}

/// A farm attached to a bus of a case.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindFarmSpec {
    /// Bus id (as in the case file).
    pub bus: usize,
    /// Number of aggregated units.
    pub gamma: u32,
    #[serde(default = "default_wind_speed")]
    pub wind_speed: f64,
    /// Farm reactive output in pu on the system base; 0 is unity power factor.
    #[serde(default)]
    pub q_setpoint: f64,
    #[serde(default = "default_model")]
    pub model: FarmModel,
}

impl WindFarmSpec {
    pub fn new(bus: usize, gamma: u32) -> Self {
        Self { bus, gamma, wind_speed: default_wind_speed(), q_setpoint: 0.0, model: default_model() }
    }

    /// Per-unit setpoints `(P*, Q*)` in W and var.
    pub fn unit_setpoints(&self, base_mva: f64) -> (f64, f64) {
        let p = self.model.turbine.k_opt() * self.wind_speed.powi(3);
        let q = self.q_setpoint * base_mva * 1e6 / self.gamma.max(1) as f64;
        (p, q)
    }

    /// Farm injection `(P_w, Q_w)` in system per unit at the setpoints.
    pub fn injection_pu(&self, base_mva: f64) -> (f64, f64) {
        let (p, _) = self.unit_setpoints(base_mva);
        (self.gamma as f64 * p / (base_mva * 1e6), self.q_setpoint)
    }
}

/// Aerodynamic torque `ρ A_s ν³ C_p / (2 ω_r)`.
pub fn aero_torque(nu: f64, omega_r: f64, turbine: &TurbineParams) -> Result<f64> {
    if omega_r <= 0.0 {
        return Err(Error::Domain(format!("rotor speed must be positive, got {omega_r}")));
    }
    Ok(turbine.k_opt() * nu.powi(3) / omega_r)
}

/// Stator `(v_qs, v_ds)` in volts for bus voltage `(e, f)` in the frame at θ0.
pub fn stator_voltages(v_base: f64, theta0: f64, e: f64, f: f64) -> (f64, f64) {
    let (s, c) = theta0.sin_cos();
    (v_base * (e * c + f * s), v_base * (e * s - f * c))
}

/// Unit output `(P_s, Q_s)` in W and var.
pub fn stator_power(v_qs: f64, v_ds: f64, i_qs: f64, i_ds: f64) -> (f64, f64) {
    (v_qs * i_qs + v_ds * i_ds, v_qs * i_ds - v_ds * i_qs)
}

/// Farm output `(P_w, Q_w) = γ (P_s, Q_s)` in W and var.
pub fn farm_power(gamma: u32, v_qs: f64, v_ds: f64, i_qs: f64, i_ds: f64) -> (f64, f64) {
    let (p, q) = stator_power(v_qs, v_ds, i_qs, i_ds);
    (gamma as f64 * p, gamma as f64 * q)
}

/// Steady state of one farm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WindState {
    pub bus: usize,
    pub z: [f64; NZ],
    pub theta0: f64,
    pub v_qs: f64,
    pub v_ds: f64,
    pub p_star: f64,
    pub q_star: f64,
    pub t_a: f64,
    pub t_g: f64,
    /// `[ψ_ds, ψ_qs, ψ_dr, ψ_qr]`.
    pub psi: [f64; 4],
}

impl WindState {
    pub fn omega_r(&self) -> f64 {
        self.z[WR]
    }
    pub fn omega_g(&self) -> f64 {
        self.z[WG]
    }
}

/// Time derivative of the unit state for stator voltages `(v_qs, v_ds)`.
pub fn rhs(spec: &WindFarmSpec, z: &[f64; NZ], v_qs: f64, v_ds: f64, p_star: f64, q_star: f64) -> [f64; NZ] {
    let FarmModel { turbine: t, dfig: d, pi, p_rated, .. } = &spec.model;
    let cur = Vector4::new(z[IDS], z[IQS], z[IDR], z[IQR]);
    let lmat = d.inductance();
    let psi = lmat * cur;
    let (p_s, q_s) = stator_power(v_qs, v_ds, z[IQS], z[IDS]);
    let e_p = (p_star - p_s) / p_rated;
    let e_q = (q_star - q_s) / p_rated;
    let v_qr = pi.kp_p * e_p + z[XP];
    let v_dr = pi.kp_q * e_q + z[XQ];
    let w_sl = d.omega_e - d.p_e as f64 / 2.0 * z[WG];
    let u = Vector4::new(
        v_ds + d.r_s * z[IDS] + d.omega_e * psi[1],
        v_qs + d.r_s * z[IQS] - d.omega_e * psi[0],
        v_dr - d.r_r * z[IDR] + w_sl * psi[3],
        v_qr - d.r_r * z[IQR] - w_sl * psi[2],
    );
    let di = lmat.lu().solve(&u).expect("inductance matrix is non-singular");
    let t_a = t.k_opt() * spec.wind_speed.powi(3) / z[WR];
    let t_g = d.torque_constant() * (z[IQS] * z[IDR] - z[IDS] * z[IQR]);
    [
        (t.b_dt / t.n_g * z[WG] - t.k_dt * z[TH] - (t.b_dt + t.b_r) * z[WR] + t_a) / t.j_r,
        (t.b_dt / t.n_g * z[WR] + t.k_dt / t.n_g * z[TH] - (t.b_dt / (t.n_g * t.n_g) + t.b_g) * z[WG] - t_g)
            / t.j_g,
        z[WR] - z[WG] / t.n_g,
        di[0],
        di[1],
        di[2],
        di[3],
        pi.ki_p * e_p,
        pi.ki_q * e_q,
    ]
}

/// Equilibrium of a farm whose bus sits at `(e, f)` pu.
///
/// Currents follow from the power setpoints and stator equations, the rotor
/// speed from the drivetrain balance
/// `(B_r + B_g N_g²) ω_r² + N_g T_g ω_r − P* = 0`, and the integrators hold
/// the rotor voltages.
pub fn wind_steady_state(spec: &WindFarmSpec, e: f64, f: f64, base_mva: f64) -> Result<WindState> {
    let bus = spec.bus;
    if !(spec.wind_speed > 0.0) {
        return Err(Error::Wind { bus, reason: format!("wind speed must be positive, got {}", spec.wind_speed) });
    }
    if spec.gamma == 0 {
        return Err(Error::Wind { bus, reason: "gamma must be at least 1".into() });
    }
    let FarmModel { turbine: t, dfig: d, v_base, .. } = &spec.model;
    let theta0 = f.atan2(e);
    let (v_qs, v_ds) = stator_voltages(*v_base, theta0, e, f);
    let (p_star, q_star) = spec.unit_setpoints(base_mva);
    let v2 = v_qs * v_qs + v_ds * v_ds;
    let i_qs = (v_qs * p_star - v_ds * q_star) / v2;
    let i_ds = (v_ds * p_star + v_qs * q_star) / v2;
    let (ls, lm, we) = (d.l_s(), d.l_m, d.omega_e);
    let i_qr = (-v_ds - d.r_s * i_ds + we * ls * i_qs) / (we * lm);
    let i_dr = (v_qs + d.r_s * i_qs + we * ls * i_ds) / (we * lm);
    let t_g = d.torque_constant() * (i_qs * i_dr - i_ds * i_qr);
    let c = t.b_r + t.b_g * t.n_g * t.n_g;
    let p_aero = t.k_opt() * spec.wind_speed.powi(3);
    let b = t.n_g * t_g;
    let disc = b * b + 4.0 * c * p_aero;
    // the root written to avoid cancellation when c is small
    let omega_r = 2.0 * p_aero / (b + disc.sqrt());
    if !(omega_r > 0.0) || !omega_r.is_finite() {
        return Err(Error::Wind { bus, reason: format!("no positive rotor-speed equilibrium (T_g = {t_g:.4e})") });
    }
    let omega_g = t.n_g * omega_r;
    let t_a = p_aero / omega_r;
    let theta = (t_a - t.b_r * omega_r) / t.k_dt;
    let cur = Vector4::new(i_ds, i_qs, i_dr, i_qr);
    let psi = d.inductance() * cur;
    let w_sl = we - d.p_e as f64 / 2.0 * omega_g;
    let v_dr = d.r_r * i_dr - w_sl * psi[3];
    let v_qr = d.r_r * i_qr + w_sl * psi[2];
    Ok(WindState {
        bus,
        z: [omega_r, omega_g, theta, i_ds, i_qs, i_dr, i_qr, v_qr, v_dr],
        theta0,
        v_qs,
        v_ds,
        p_star,
        q_star,
        t_a,
        t_g,
        psi: [psi[0], psi[1], psi[2], psi[3]],
    })
}

/// Largest |derivative| of the unit state at a claimed equilibrium.
pub fn steady_state_residual(spec: &WindFarmSpec, st: &WindState) -> f64 {
    rhs(spec, &st.z, st.v_qs, st.v_ds, st.p_star, st.q_star).iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// Small-signal model of one farm at bus index `bus_idx` of an `m`-bus case.
#[derive(Clone, Debug)]
pub struct WindLinearization {
    pub a: DMatrix<f64>,
    /// `NZ × 2m`, nonzero only in the farm bus's `V_Re`/`V_Im` columns.
    pub b: DMatrix<f64>,
    /// `∂P_w/∂z` in system pu per SI state unit.
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    /// `1 × 2m`: `γζ₁`, `γζ₂` at the farm bus columns.
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
    pub zeta: [f64; 4],
    pub gamma: f64,
    pub bus_idx: usize,
}

/// Analytic linearization about `st`.
pub fn linearize_wind(spec: &WindFarmSpec, st: &WindState, bus_idx: usize, m: usize, base_mva: f64) -> WindLinearization {
    let FarmModel { turbine: t, dfig: d, pi, p_rated, v_base, .. } = &spec.model;
    let z = &st.z;
    let (v_qs, v_ds) = (st.v_qs, st.v_ds);
    let pe2 = d.p_e as f64 / 2.0;
    let (ls, lr, lm, we) = (d.l_s(), d.l_r(), d.l_m, d.omega_e);
    let w_sl = we - pe2 * z[WG];
    let psi = st.psi;
    let pr = *p_rated;

    // ∂u/∂z for the four current equations, rows u_ds, u_qs, u_dr, u_qr
    let mut du = DMatrix::<f64>::zeros(4, NZ);
    du[(0, IDS)] = d.r_s;
    du[(0, IQS)] = -we * ls;
    du[(0, IQR)] = we * lm;
    du[(1, IQS)] = d.r_s;
    du[(1, IDS)] = we * ls;
    du[(1, IDR)] = -we * lm;
    du[(2, IDS)] = -pi.kp_q * v_qs / pr;
    du[(2, IQS)] = pi.kp_q * v_ds / pr - w_sl * lm;
    du[(2, IDR)] = -d.r_r;
    du[(2, IQR)] = w_sl * lr;
    du[(2, XQ)] = 1.0;
    du[(2, WG)] = -pe2 * psi[3];
    du[(3, IDS)] = -pi.kp_p * v_ds / pr + w_sl * lm;
    du[(3, IQS)] = -pi.kp_p * v_qs / pr;
    du[(3, IQR)] = -d.r_r;
    du[(3, IDR)] = -w_sl * lr;
    du[(3, XP)] = 1.0;
    du[(3, WG)] = pe2 * psi[2];

    // ∂u/∂(v_qs, v_ds)
    let mut duv = DMatrix::<f64>::zeros(4, 2);
    duv[(1, 0)] = 1.0;
    duv[(0, 1)] = 1.0;
    duv[(2, 0)] = -pi.kp_q * z[IDS] / pr;
    duv[(2, 1)] = pi.kp_q * z[IQS] / pr;
    duv[(3, 0)] = -pi.kp_p * z[IQS] / pr;
    duv[(3, 1)] = -pi.kp_p * z[IDS] / pr;

    let linv = {
        let l = d.inductance();
        let inv = l.try_inverse().expect("inductance matrix is non-singular");
        DMatrix::from_fn(4, 4, |i, j| inv[(i, j)])
    };
    let di = &linv * du;
    let div = &linv * duv;

    let mut a = DMatrix::<f64>::zeros(NZ, NZ);
    let ct = d.torque_constant();
    let p_aero = t.k_opt() * spec.wind_speed.powi(3);
    a[(WR, WR)] = (-(t.b_dt + t.b_r) - p_aero / (z[WR] * z[WR])) / t.j_r;
    a[(WR, WG)] = t.b_dt / t.n_g / t.j_r;
    a[(WR, TH)] = -t.k_dt / t.j_r;
    a[(WG, WR)] = t.b_dt / t.n_g / t.j_g;
    a[(WG, TH)] = t.k_dt / t.n_g / t.j_g;
    a[(WG, WG)] = -(t.b_dt / (t.n_g * t.n_g) + t.b_g) / t.j_g;
    a[(WG, IQS)] = -ct * z[IDR] / t.j_g;
    a[(WG, IDR)] = -ct * z[IQS] / t.j_g;
    a[(WG, IDS)] = ct * z[IQR] / t.j_g;
    a[(WG, IQR)] = ct * z[IDS] / t.j_g;
    a[(TH, WR)] = 1.0;
    a[(TH, WG)] = -1.0 / t.n_g;
    for r in 0..4 {
        for c in 0..NZ {
            a[(IDS + r, c)] = di[(r, c)];
        }
    }
    a[(XP, IQS)] = -pi.ki_p * v_qs / pr;
    a[(XP, IDS)] = -pi.ki_p * v_ds / pr;
    a[(XQ, IDS)] = -pi.ki_q * v_qs / pr;
    a[(XQ, IQS)] = pi.ki_q * v_ds / pr;

    // ∂ż/∂(v_qs, v_ds), then chain to (V_Re, V_Im) of the bus
    let mut dv = DMatrix::<f64>::zeros(NZ, 2);
    for r in 0..4 {
        dv[(IDS + r, 0)] = div[(r, 0)];
        dv[(IDS + r, 1)] = div[(r, 1)];
    }
    dv[(XP, 0)] = -pi.ki_p * z[IQS] / pr;
    dv[(XP, 1)] = -pi.ki_p * z[IDS] / pr;
    dv[(XQ, 0)] = -pi.ki_q * z[IDS] / pr;
    dv[(XQ, 1)] = pi.ki_q * z[IQS] / pr;
    let (s0, c0) = st.theta0.sin_cos();
    // rows (v_qs, v_ds), columns (V_Re, V_Im)
    let chain = [[v_base * c0, v_base * s0], [v_base * s0, -v_base * c0]];
    let mut b = DMatrix::<f64>::zeros(NZ, 2 * m);
    for r in 0..NZ {
        for (k, col) in [bus_idx, m + bus_idx].into_iter().enumerate() {
            b[(r, col)] = dv[(r, 0)] * chain[0][k] + dv[(r, 1)] * chain[1][k];
        }
    }

    let sb = base_mva * 1e6;
    let gamma = spec.gamma as f64;
    let mut c1 = DMatrix::<f64>::zeros(1, NZ);
    c1[(0, IQS)] = gamma * v_qs / sb;
    c1[(0, IDS)] = gamma * v_ds / sb;
    let mut c2 = DMatrix::<f64>::zeros(1, NZ);
    c2[(0, IDS)] = gamma * v_qs / sb;
    c2[(0, IQS)] = -gamma * v_ds / sb;

    let (iqs, ids) = (z[IQS], z[IDS]);
    let zeta = [
        v_base * (iqs * c0 + ids * s0) / sb,
        v_base * (iqs * s0 - ids * c0) / sb,
        v_base * (-iqs * s0 + ids * c0) / sb,
        v_base * (iqs * c0 + ids * s0) / sb,
    ];
    let mut d1 = DMatrix::<f64>::zeros(1, 2 * m);
    d1[(0, bus_idx)] = gamma * zeta[0];
    d1[(0, m + bus_idx)] = gamma * zeta[1];
    let mut d2 = DMatrix::<f64>::zeros(1, 2 * m);
    d2[(0, bus_idx)] = gamma * zeta[2];
    d2[(0, m + bus_idx)] = gamma * zeta[3];

    WindLinearization { a, b, c1, c2, d1, d2, zeta, gamma, bus_idx }
}

/// Stacked model of `p` farms.
#[derive(Clone, Debug)]
pub struct StackedWind {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c1: DMatrix<f64>,
    pub c2: DMatrix<f64>,
    /// `p × 2m`, i.e. `[D1_Re, D1_Im]`.
    pub d1: DMatrix<f64>,
    pub d2: DMatrix<f64>,
    pub bus_idx: Vec<usize>,
    pub gammas: Vec<f64>,
    pub zetas: Vec<[f64; 4]>,
}

/// Stack per-farm linearizations; farms must sit on distinct buses.
pub fn multi_farm(lins: &[WindLinearization], m: usize) -> Result<StackedWind> {
    let p = lins.len();
    for (i, a) in lins.iter().enumerate() {
        if lins[..i].iter().any(|b| b.bus_idx == a.bus_idx) {
            return Err(Error::Structural(format!("two wind farms on bus index {}", a.bus_idx)));
        }
    }
    let nz = NZ * p;
    let mut out = StackedWind {
        a: DMatrix::zeros(nz, nz),
        b: DMatrix::zeros(nz, 2 * m),
        c1: DMatrix::zeros(p, nz),
        c2: DMatrix::zeros(p, nz),
        d1: DMatrix::zeros(p, 2 * m),
        d2: DMatrix::zeros(p, 2 * m),
        bus_idx: Vec::with_capacity(p),
        gammas: Vec::with_capacity(p),
        zetas: Vec::with_capacity(p),
    };
    for (i, l) in lins.iter().enumerate() {
        let o = NZ * i;
        out.a.view_mut((o, o), (NZ, NZ)).copy_from(&l.a);
        out.b.view_mut((o, 0), (NZ, 2 * m)).copy_from(&l.b);
        out.c1.view_mut((i, o), (1, NZ)).copy_from(&l.c1);
        out.c2.view_mut((i, o), (1, NZ)).copy_from(&l.c2);
        out.d1.row_mut(i).copy_from(&l.d1.row(0));
        out.d2.row_mut(i).copy_from(&l.d2.row(0));
        out.bus_idx.push(l.bus_idx);
        out.gammas.push(l.gamma);
        out.zetas.push(l.zeta);
    }
    Ok(out)
}
