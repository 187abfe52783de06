mod common;

use common::sorted_sets;
use windcoh::pipeline::{self, Analyses, Scenario, Stage, SweepPoint};

fn coherency_only(mut s: Scenario) -> Scenario {
    s.analyses = Analyses { coherency: true, modal: false, simulate: false, pca: false };
    s
}

#[test]
fn reruns_are_byte_identical() {
    let s = Scenario::with_farms("bus37", &[(37, 700)]);
    let a = pipeline::run_pipeline(&s);
    let b = pipeline::run_pipeline(&s);
    assert!(a.failure.is_none());
    for name in ["manifest.json", "partition.json", "modes.csv", "traj.csv", "pca.csv", "ledger/l.csv", "ledger/norms.json"] {
        assert!(a.files.contains_key(name), "missing {name}");
    }
    assert_eq!(a.files, b.files);
}

#[test]
fn zero_penetration_is_the_nominal_system() {
    let nominal = pipeline::run_pipeline(&coherency_only(Scenario::with_farms("n", &[])));
    let zero = pipeline::run_pipeline(&coherency_only(Scenario::with_farms("n", &[(66, 0)])));
    let (a, b) = (&nominal.outcome, &zero.outcome);
    assert_eq!(a.area_ids(), b.area_ids());
    assert_eq!(a.reference_ids(), b.reference_ids());
    assert_eq!(a.space.as_ref().unwrap().eigenvalues, b.space.as_ref().unwrap().eigenvalues);
    assert!(zero.outcome.ledger.is_none());
}

#[test]
fn coupling_moves_continuously_with_penetration() {
    let nominal = pipeline::run_pipeline(&coherency_only(Scenario::with_farms("n", &[])));
    let l0 = nominal.outcome.coupling().unwrap().clone();
    let mut gaps = Vec::new();
    for g in [10, 50, 100] {
        let b = pipeline::run_pipeline(&coherency_only(Scenario::with_farms("g", &[(66, g)])));
        gaps.push((b.outcome.coupling().unwrap() - &l0).norm() / l0.norm());
        assert_eq!(sorted_sets(&b.outcome.area_ids().unwrap()), sorted_sets(&nominal.outcome.area_ids().unwrap()));
    }
    assert!(gaps[0] > 0.0 && gaps[0] < 1e-2);
    // roughly linear for small γ
    for (k, ratio) in [(1, 5.0), (2, 10.0)] {
        let r = gaps[k] / gaps[0];
        assert!(r > 0.5 * ratio && r < 2.0 * ratio, "{gaps:?}");
    }
}

#[test]
fn sweep_points_are_isolated() {
    let template = coherency_only(Scenario::with_farms("t", &[]));
    let points = [
        SweepPoint { bus: Some(66), gamma: Some(650) },
        SweepPoint { bus: Some(999), gamma: Some(100) },
        SweepPoint { bus: Some(32), gamma: Some(700) },
    ];
    let rows = pipeline::sweep(&template, &points, 3, false).unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].failure.is_some());
    assert!(rows[1].moved.is_none());
    for k in [0, 2] {
        let alone = pipeline::run_pipeline(&points[k].apply(&template).unwrap());
        assert!(rows[k].failure.is_none());
        assert_eq!(rows[k].moved, alone.outcome.moved_ids().map(|s| s.into_iter().collect()));
    }
    let serial = pipeline::sweep(&template, &points, 1, false).unwrap();
    assert_eq!(pipeline::sweep_csv(&rows), pipeline::sweep_csv(&serial));
}

#[test]
fn empty_sweep_is_empty() {
    let rows = pipeline::sweep(&Scenario::default(), &[], 4, false).unwrap();
    assert!(rows.is_empty());
    assert_eq!(pipeline::sweep_csv(&rows).iter().filter(|&&b| b == b'\n').count(), 1);
}

#[test]
fn dangling_farm_fails_validation_at_load() {
    let b = pipeline::run_pipeline(&Scenario::with_farms("bad", &[(999, 100)]));
    let f = b.failure.unwrap();
    assert_eq!(f.stage, Stage::Load);
    assert!(b.files.contains_key("manifest.json"));
    assert!(!b.files.contains_key("partition.json"));
}

#[test]
fn scenario_files_reject_unknown_keys() {
    let s = Scenario::from_json(r#"{"name": "x", "farms": [{"bus": 66, "gamma": 650}], "r": 4}"#).unwrap();
    assert_eq!(s.r, 4);
    assert_eq!(s.farms[0].gamma, 650);
    assert!(Scenario::from_json(r#"{"name": "x", "gama": 3}"#).is_err());
}

#[test]
fn first_movers_stops_at_the_first_change() {
    let ramp: Vec<Scenario> = [900, 950, 1000, 1050]
        .iter()
        .map(|&g| Scenario::with_farms(&format!("bus66-{g}"), &[(66, g)]))
        .collect();
    let search = pipeline::first_movers(&ramp);
    let found = search.found.unwrap();
    assert_eq!(found.moved, vec![1]);
    assert_eq!(found.step, search.completed - 1);
}
