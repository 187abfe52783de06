#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use windcoh::linearize::{self, JacobianSet};
use windcoh::netmodel::{self, NetworkCase, OperatingPoint, PowerFlowOptions};
use windcoh::windfarm::{self, WindFarmSpec, NZ};
use windcoh::fdiff;

pub struct Solved {
    pub case: NetworkCase,
    pub op: OperatingPoint,
    pub jac: JacobianSet,
}

pub fn solve(case: NetworkCase) -> Solved {
    let op = netmodel::solve_power_flow(&case, &PowerFlowOptions::default()).expect("power flow");
    let jac = linearize::network_jacobians(&case, &op).expect("jacobians");
    Solved { case, op, jac }
}

pub fn nominal() -> Solved {
    solve(netmodel::ieee68())
}

pub fn with_farms(farms: &[(usize, u32)]) -> Solved {
    let specs: Vec<WindFarmSpec> = farms.iter().map(|&(b, g)| WindFarmSpec::new(b, g)).collect();
    solve(netmodel::ieee68().with_farms(&specs))
}

pub fn l_of(s: &Solved) -> DMatrix<f64> {
    linearize::kron_reduce(&s.jac.gen.k11, &s.jac.gen.k12, &s.jac.a1, &s.jac.a3).unwrap()
}

/// Named relative errors of every analytic Jacobian against central differences.
pub fn jacobian_audit(s: &Solved) -> Vec<(String, f64)> {
    let (n, m) = (s.case.n(), s.case.m());
    let jac = &s.jac;
    let num = fdiff::jacobian(linearize::balance_function(&s.case, &s.op).unwrap(), &linearize::state_vector(&s.op), fdiff::STEP);
    let mut out = vec![
        ("A1".to_string(), fdiff::max_rel_err(&jac.a1, &num.view((0, 0), (2 * m, n)).into_owned())),
        ("A3".to_string(), fdiff::max_rel_err(&jac.a3, &num.view((0, n), (2 * m, 2 * m)).into_owned())),
        ("K11".to_string(), fdiff::max_rel_err(&jac.gen.k11, &-num.view((2 * m, 0), (n, n)).into_owned())),
        ("K12".to_string(), fdiff::max_rel_err(&jac.gen.k12, &-num.view((2 * m, n), (n, 2 * m)).into_owned())),
    ];
    let Some(w) = &jac.wind else { return out };
    let sb = s.case.base_mva * 1e6;
    let farm_bus = s.case.farm_bus_indices().unwrap();
    let v0 = s.op.voltage_vector();
    for (i, (spec, st)) in s.case.wind_farms.iter().zip(&s.op.wind).enumerate() {
        let k = farm_bus[i];
        let z0 = DVector::from_column_slice(&st.z);
        let fz = |z: &DVector<f64>| {
            let zz: [f64; NZ] = std::array::from_fn(|j| z[j]);
            DVector::from_column_slice(&windfarm::rhs(spec, &zz, st.v_qs, st.v_ds, st.p_star, st.q_star))
        };
        let fv = |v: &DVector<f64>| {
            let (vq, vd) = windfarm::stator_voltages(spec.model.v_base, st.theta0, v[k], v[m + k]);
            DVector::from_column_slice(&windfarm::rhs(spec, &st.z, vq, vd, st.p_star, st.q_star))
        };
        let pz = |z: &DVector<f64>| {
            let (p, q) = windfarm::farm_power(spec.gamma, st.v_qs, st.v_ds, z[windfarm::IQS], z[windfarm::IDS]);
            DVector::from_vec(vec![p / sb, q / sb])
        };
        let pv = |v: &DVector<f64>| {
            let (vq, vd) = windfarm::stator_voltages(spec.model.v_base, st.theta0, v[k], v[m + k]);
            let (p, q) = windfarm::farm_power(spec.gamma, vq, vd, st.z[windfarm::IQS], st.z[windfarm::IDS]);
            DVector::from_vec(vec![p / sb, q / sb])
        };
        let r = i * NZ;
        let a = w.a.view((r, r), (NZ, NZ)).into_owned();
        let b = w.b.view((r, 0), (NZ, 2 * m)).into_owned();
        let mut c = DMatrix::zeros(2, NZ);
        c.row_mut(0).copy_from(&w.c1.view((i, r), (1, NZ)));
        c.row_mut(1).copy_from(&w.c2.view((i, r), (1, NZ)));
        let mut d = DMatrix::zeros(2, 2 * m);
        d.row_mut(0).copy_from(&w.d1.row(i));
        d.row_mut(1).copy_from(&w.d2.row(i));
        let bus = spec.bus;
        out.push((format!("farm {bus} A"), fdiff::max_rel_err(&a, &fdiff::jacobian(fz, &z0, fdiff::STEP))));
        out.push((format!("farm {bus} B"), fdiff::max_rel_err(&b, &fdiff::jacobian(fv, &v0, fdiff::STEP))));
        out.push((format!("farm {bus} C"), fdiff::max_rel_err(&c, &fdiff::jacobian(pz, &z0, fdiff::STEP))));
        out.push((format!("farm {bus} D"), fdiff::max_rel_err(&d, &fdiff::jacobian(pv, &v0, fdiff::STEP))));
    }
    out
}

pub fn sorted_sets(areas: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = areas
        .iter()
        .map(|a| {
            let mut a = a.clone();
            a.sort_unstable();
            a
        })
        .collect();
    out.sort();
    out
}
