//! Scenario runs: power flow through PCA, with a fixed artifact layout.
//!
//! A run writes `partition.json`, `modes.csv`, `ledger/`, `traj.csv`,
//! `pca.csv` and `manifest.json`, each only when its stage ran. Wall-clock
//! timings go to a `timings.json` sidecar so the bundle itself is a pure
//! function of the inputs.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coherency::{self, CoherencyPartition, PartitionDistance, SlowEigenspace};
use crate::dynsim::{self, Disturbance, Integrator, Mode, Outputs, SimOptions, TrajectoryMatrix};
use crate::error::{Error, Result};
use crate::export;
use crate::linalg;
use crate::linearize::{self, JacobianSet, ReducedSwingModel};
use crate::netmodel::{self, NetworkCase, OperatingPoint, PowerFlowOptions};
use crate::pca::{self, ClusterComparison, PcaResult};
use crate::perturbation::{self, EquivalentLaplacian, PerturbationLedger};
use crate::windfarm::WindFarmSpec;

pub const MANIFEST: &str = "manifest.json";
pub const TIMINGS: &str = "timings.json";

/// A farm to attach for this scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FarmOverride {
    pub bus: usize,
    pub gamma: u32,
    /// Wind speed in m/s; the farm default when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind_speed: Option<f64>,
}

impl FarmOverride {
    pub fn new(bus: usize, gamma: u32) -> Self {
        Self { bus, gamma, wind_speed: None }
    }

    pub fn spec(&self) -> WindFarmSpec {
        let mut s = WindFarmSpec::new(self.bus, self.gamma);
        if let Some(v) = self.wind_speed {
            s.wind_speed = v;
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Analyses {
    pub coherency: bool,
    pub modal: bool,
    pub simulate: bool,
    /// Implies `simulate`.
    pub pca: bool,
}

impl Default for Analyses {
    fn default() -> Self {
        Self { coherency: true, modal: true, simulate: true, pca: true }
    }
}

/// Step on the mechanical power of a generator, by generator id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DisturbanceSpec {
    pub generator: usize,
    pub magnitude: f64,
}

impl Default for DisturbanceSpec {
    fn default() -> Self {
        Self { generator: 1, magnitude: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Case file; the bundled 68-bus case when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub case: Option<PathBuf>,
    pub farms: Vec<FarmOverride>,
    pub r: usize,
    pub analyses: Analyses,
    pub disturbance: DisturbanceSpec,
    pub horizon: f64,
    pub dt: f64,
    pub integrator: Integrator,
    /// Uniform damping per unit inertia for the modal table and simulation.
    pub damping: f64,
    /// Remove row means before the trajectory SVD.
    pub center: bool,
    /// Weighting axes for clustering; `r − 1` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub components: Option<usize>,
    /// Output directory; not part of the run's identity.
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "nominal".into(),
            case: None,
            farms: Vec::new(),
            r: 5,
            analyses: Analyses::default(),
            disturbance: DisturbanceSpec::default(),
            horizon: 100.0,
            dt: 0.01,
            integrator: Integrator::Zoh,
            damping: dynsim::DEFAULT_DAMPING,
            center: true,
            components: None,
            out: None,
        }
    }
}

impl Scenario {
    pub fn with_farms(name: &str, farms: &[(usize, u32)]) -> Self {
        Self {
            name: name.into(),
            farms: farms.iter().map(|&(b, g)| FarmOverride::new(b, g)).collect(),
            ..Self::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Case bytes and a label for the manifest.
    pub fn case_source(&self) -> Result<(String, Vec<u8>)> {
        match &self.case {
            Some(p) => Ok((p.display().to_string(), std::fs::read(p)?)),
            None => Ok(("bundled:ieee68".into(), netmodel::IEEE68_JSON.as_bytes().to_vec())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Load,
    PowerFlow,
    Linearize,
    Wind,
    Perturb,
    Coherency,
    Modal,
    Simulate,
    Pca,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureKind {
    Validation,
    Numerical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub kind: FailureKind,
    pub message: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageStatus {
    Ok,
    Failed,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub source: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub case: InputDigest,
    pub config_sha256: String,
    pub config: Scenario,
    pub stages: Vec<StageRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure: Option<StageFailure>,
    pub warnings: Vec<String>,
    /// sha256 of every other file in the bundle.
    pub artifacts: BTreeMap<String, String>,
    /// Per-stage wall clock lives in this sidecar.
    pub timings: String,
}

/// Everything a run computed; absent fields belong to stages that did not run.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub case: Option<NetworkCase>,
    pub nominal_op: Option<OperatingPoint>,
    pub op: Option<OperatingPoint>,
    pub nominal: Option<JacobianSet>,
    pub perturbed: Option<JacobianSet>,
    pub reduced: Option<ReducedSwingModel>,
    pub nominal_space: Option<SlowEigenspace>,
    pub nominal_partition: Option<CoherencyPartition>,
    pub ledger: Option<PerturbationLedger>,
    pub equivalent: Option<EquivalentLaplacian>,
    pub space: Option<SlowEigenspace>,
    pub partition: Option<CoherencyPartition>,
    pub distance: Option<PartitionDistance>,
    pub modes: Option<Vec<Mode>>,
    pub trajectory: Option<TrajectoryMatrix>,
    pub pca: Option<PcaResult>,
    pub comparison: Option<ClusterComparison>,
}

impl Outcome {
    /// The coupling matrix used for coherency: `ℒ_eq` with farms, `ℒ0` without.
    pub fn coupling(&self) -> Option<&nalgebra::DMatrix<f64>> {
        match (&self.equivalent, &self.reduced) {
            (Some(e), _) => Some(&e.l_eq),
            (None, Some(r)) => Some(&r.l0),
            _ => None,
        }
    }

    /// Areas as generator ids.
    pub fn area_ids(&self) -> Option<Vec<Vec<usize>>> {
        Some(linearize::area_ids(self.case.as_ref()?, &self.partition.as_ref()?.areas))
    }

    pub fn reference_ids(&self) -> Option<Vec<usize>> {
        let case = self.case.as_ref()?;
        Some(self.partition.as_ref()?.reference_machines.iter().map(|&i| case.generators[i].id).collect())
    }

    /// Generator ids that changed area relative to the nominal partition.
    pub fn moved_ids(&self) -> Option<BTreeSet<usize>> {
        let case = self.case.as_ref()?;
        Some(self.distance.as_ref()?.moved.iter().map(|&i| case.generators[i].id).collect())
    }
}

pub struct Bundle {
    pub scenario: Scenario,
    /// Relative path to contents; includes the manifest, not the timings.
    pub files: BTreeMap<String, Vec<u8>>,
    pub timings: Vec<(Stage, f64)>,
    pub failure: Option<StageFailure>,
    pub warnings: Vec<String>,
    pub outcome: Outcome,
}

impl Bundle {
    pub fn manifest(&self) -> Result<RunManifest> {
        let bytes = self.files.get(MANIFEST).ok_or_else(|| Error::Domain("bundle has no manifest".into()))?;
        Ok(serde_json::from_slice(bytes)?)
    }

    pub fn timings_json(&self) -> Result<Vec<u8>> {
        let map: BTreeMap<String, f64> = self
            .timings
            .iter()
            .map(|(s, t)| (serde_json::to_value(s).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default(), *t))
            .collect();
        export::json_bytes(&map)
    }

    /// Write the bundle and its timings sidecar under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, bytes) in &self.files {
            export::write_file(&dir.join(name), bytes)?;
        }
        export::write_file(&dir.join(TIMINGS), &self.timings_json()?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Serialize)]
struct PartitionReport<'a> {
    scenario: &'a str,
    farms: &'a [FarmOverride],
    r: usize,
    areas: Vec<Vec<usize>>,
    reference_machines: Vec<usize>,
    nominal_areas: Vec<Vec<usize>>,
    nominal_reference_machines: Vec<usize>,
    moved: Vec<usize>,
    reference_changes: Vec<(usize, usize)>,
    slow_eigenvalues: Vec<[String; 2]>,
    slow_frequencies_hz: Vec<String>,
    gap_ratio: String,
    hyperplane_error: String,
    assignment_margins: Vec<String>,
    ties: Vec<usize>,
    diagnostics: BTreeMap<&'static str, String>,
}

struct Runner {
    outcome: Outcome,
    stages: Vec<StageRecord>,
    timings: Vec<(Stage, f64)>,
    warnings: Vec<String>,
    failure: Option<StageFailure>,
}

impl Runner {
    /// Run `f` as `stage` unless an earlier stage failed.
    fn stage(&mut self, stage: Stage, wanted: bool, f: impl FnOnce(&mut Outcome, &mut Vec<String>) -> Result<()>) {
        if !wanted || self.failure.is_some() {
            self.stages.push(StageRecord { stage, status: StageStatus::Skipped, error: None });
            return;
        }
        let t0 = Instant::now();
        let res = f(&mut self.outcome, &mut self.warnings);
        self.timings.push((stage, t0.elapsed().as_secs_f64()));
        match res {
            Ok(()) => self.stages.push(StageRecord { stage, status: StageStatus::Ok, error: None }),
            Err(e) => {
                let kind = match (&e, stage) {
                    (Error::Structural(_) | Error::Domain(_) | Error::Json(_) | Error::Io(_), _) => FailureKind::Validation,
                    (_, Stage::Load) => FailureKind::Validation,
                    _ => FailureKind::Numerical,
                };
                let message = e.to_string();
                self.stages.push(StageRecord { stage, status: StageStatus::Failed, error: Some(message.clone()) });
                self.failure = Some(StageFailure { stage, kind, message });
            }
        }
    }
}

fn load(scenario: &Scenario, case_bytes: &[u8]) -> Result<NetworkCase> {
    let text = std::str::from_utf8(case_bytes).map_err(|e| Error::Structural(format!("case is not UTF-8: {e}")))?;
    let base = NetworkCase::from_json(text)?;
    let case = if scenario.farms.is_empty() {
        base
    } else {
        base.with_farms(&scenario.farms.iter().map(FarmOverride::spec).collect::<Vec<_>>())
    };
    let findings = netmodel::validate_case(&case);
    if !findings.is_empty() {
        let msgs: Vec<String> = findings.iter().map(|f| f.message.clone()).collect();
        return Err(Error::Structural(msgs.join("; ")));
    }
    if scenario.r < 1 || scenario.r > case.n() {
        return Err(Error::Domain(format!("r = {} outside 1..={}", scenario.r, case.n())));
    }
    if scenario.analyses.simulate || scenario.analyses.pca {
        if !case.generators.iter().any(|g| g.id == scenario.disturbance.generator) {
            return Err(Error::Domain(format!("disturbed generator {} not in case", scenario.disturbance.generator)));
        }
        if !(scenario.dt > 0.0 && scenario.horizon >= 0.0) {
            return Err(Error::Domain("need dt > 0 and horizon ≥ 0".into()));
        }
    }
    if let Some(c) = scenario.components {
        if c == 0 || c > case.n() {
            return Err(Error::Domain(format!("components = {c} outside 1..={}", case.n())));
        }
    }
    Ok(case)
}

/// Run every requested stage in dependency order and collect the artifacts.
///
/// Stage failures do not return `Err`: they end the run, are recorded in the
/// manifest and in [`Bundle::failure`], and later stages are skipped.
pub fn run_pipeline(scenario: &Scenario) -> Bundle {
    let (source, case_bytes, read_error) = match scenario.case_source() {
        Ok((s, b)) => (s, b, None),
        Err(e) => (scenario.case.as_ref().map(|p| p.display().to_string()).unwrap_or_default(), Vec::new(), Some(e)),
    };
    let mut run =
        Runner { outcome: Outcome::default(), stages: Vec::new(), timings: Vec::new(), warnings: Vec::new(), failure: None };
    let a = scenario.analyses.clone();
    let has_farms = scenario.farms.iter().any(|f| f.gamma > 0);
    let simulate = a.simulate || a.pca;
    let r = scenario.r;

    run.stage(Stage::Load, true, |o, _| {
        if let Some(e) = read_error {
            return Err(Error::Structural(format!("cannot read case {source}: {e}")));
        }
        o.case = Some(load(scenario, &case_bytes)?);
        Ok(())
    });

    run.stage(Stage::PowerFlow, true, |o, _| {
        let case = o.case.as_ref().expect("loaded");
        let opts = PowerFlowOptions::default();
        let nominal_case = case.with_farms(&[]);
        let nominal_op = netmodel::solve_power_flow(&nominal_case, &opts)?;
        if has_farms {
            o.op = Some(netmodel::solve_power_flow(case, &opts)?);
        }
        o.nominal_op = Some(nominal_op);
        Ok(())
    });

    run.stage(Stage::Linearize, true, |o, w| {
        let case = o.case.as_ref().expect("loaded");
        let nominal_case = case.with_farms(&[]);
        let jac = linearize::network_jacobians(&nominal_case, o.nominal_op.as_ref().expect("solved"))?;
        let l0 = linearize::kron_reduce(&jac.gen.k11, &jac.gen.k12, &jac.a1, &jac.a3)?;
        let m = case.inertia();
        let (space, part) = coherency::identify(&m, &l0, r)?;
        w.extend(space.warnings.iter().map(|s| format!("nominal: {s}")));
        let reduced = linearize::split_internal_external(&l0, &m, &part.areas)?;
        w.extend(reduced.warnings.iter().cloned());
        o.nominal = Some(jac);
        o.reduced = Some(reduced);
        o.nominal_space = Some(space);
        o.nominal_partition = Some(part);
        Ok(())
    });

    run.stage(Stage::Wind, has_farms, |o, _| {
        let case = o.case.as_ref().expect("loaded");
        o.perturbed = Some(linearize::network_jacobians(case, o.op.as_ref().expect("solved"))?);
        Ok(())
    });

    run.stage(Stage::Perturb, has_farms, |o, w| {
        let case = o.case.as_ref().expect("loaded");
        let nominal = o.nominal.as_ref().expect("linearized");
        let ledger = perturbation::perturbed_l(nominal, o.perturbed.as_ref().expect("wind"))?;
        let reduced = o.reduced.as_ref().expect("linearized");
        let areas = &o.nominal_partition.as_ref().expect("linearized").areas;
        let bus_area = linearize::bus_areas(&case.with_farms(&[]), areas)?;
        let tie = perturbation::tie_line_a3(case, o.nominal_op.as_ref().expect("solved"), &bus_area)?;
        let mut ledger = ledger;
        match perturbation::epsilon_split_perturbation(&ledger, nominal, &tie, reduced.epsilon) {
            Ok(split) => ledger.split = Some(split),
            Err(e @ Error::Expansion { .. }) => {
                w.push(format!("ε-split not available ({e}); using the block split of ℒ − ℒ0"));
            }
            Err(e) => return Err(e),
        }
        let farm_buses: Vec<usize> = case.wind_farms.iter().map(|f| f.bus).collect();
        let gammas: Vec<f64> = case.wind_farms.iter().map(|f| f.gamma as f64).collect();
        o.equivalent = Some(perturbation::equivalent_laplacian(&ledger.l, reduced, areas, gammas, farm_buses)?);
        w.extend(ledger.warnings.iter().cloned());
        o.ledger = Some(ledger);
        Ok(())
    });

    run.stage(Stage::Coherency, a.coherency, |o, w| {
        let case = o.case.as_ref().expect("loaded");
        let (space, part) = if has_farms {
            let l_eq = &o.equivalent.as_ref().expect("perturbed").l_eq;
            coherency::identify(&case.inertia(), l_eq, r)?
        } else {
            (o.nominal_space.clone().expect("linearized"), o.nominal_partition.clone().expect("linearized"))
        };
        w.extend(space.warnings.iter().cloned());
        if !part.ties.is_empty() {
            w.push(format!("{} machine(s) sit on an area boundary", part.ties.len()));
        }
        o.distance = Some(coherency::partition_distance(o.nominal_partition.as_ref().expect("linearized"), &part));
        o.space = Some(space);
        o.partition = Some(part);
        Ok(())
    });

    let needs_model = a.modal || simulate;
    let mut model = None;
    run.stage(Stage::Modal, needs_model, |o, _| {
        let case = o.case.as_ref().expect("loaded");
        let jac = if has_farms { o.perturbed.as_ref() } else { o.nominal.as_ref() }.expect("linearized");
        let ss = dynsim::assemble_full_model(case, jac, scenario.damping)?;
        if a.modal {
            o.modes = Some(dynsim::modal_table(&ss));
        }
        model = Some(ss);
        Ok(())
    });

    run.stage(Stage::Simulate, simulate, |o, w| {
        let case = o.case.as_ref().expect("loaded");
        let k = case.generators.iter().position(|g| g.id == scenario.disturbance.generator).expect("validated");
        let opts = SimOptions { horizon: scenario.horizon, dt: scenario.dt, integrator: scenario.integrator, outputs: Outputs::Machines };
        let t = dynsim::simulate(
            model.as_ref().expect("assembled"),
            &Disturbance { machine: k, magnitude: scenario.disturbance.magnitude },
            &opts,
        )?;
        if t.unstable {
            w.push(format!("trajectory grows beyond {:e}; the linear model is unstable", dynsim::BLOWUP));
        }
        o.trajectory = Some(t);
        Ok(())
    });

    run.stage(Stage::Pca, a.pca, |o, w| {
        let angles = o.trajectory.as_ref().expect("simulated").select("delta_");
        let c = scenario.components.unwrap_or(r.saturating_sub(1).max(1));
        let res = pca::pca_weightings(&angles.data, c, scenario.center)?;
        w.extend(res.warnings.iter().cloned());
        let parts = pca::cluster_coords(&res.coords, r);
        if let Some(p) = &o.partition {
            o.comparison = Some(pca::compare_partitions(&parts, &p.areas)?);
        } else {
            o.comparison = Some(ClusterComparison {
                pca_partition: parts,
                model_partition: Vec::new(),
                agreement: f64::NAN,
                moved_set: BTreeSet::new(),
            });
        }
        o.pca = Some(res);
        Ok(())
    });

    let Runner { outcome, stages, timings, mut warnings, failure } = run;
    let mut files = BTreeMap::new();
    if let Err(e) = collect_files(scenario, &outcome, &mut files) {
        warnings.push(format!("artifact export failed: {e}"));
    }
    let artifacts: BTreeMap<String, String> = files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect();
    let mut config = scenario.clone();
    config.out = None;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        case: InputDigest { source, sha256: sha256_hex(&case_bytes) },
        config_sha256: sha256_hex(&serde_json::to_vec(&config).unwrap_or_default()),
        config,
        stages,
        failure: failure.clone(),
        warnings: warnings.clone(),
        artifacts,
        timings: TIMINGS.into(),
    };
    match export::json_bytes(&manifest) {
        Ok(b) => {
            files.insert(MANIFEST.into(), b);
        }
        Err(e) => warnings.push(format!("manifest export failed: {e}")),
    }
    Bundle { scenario: scenario.clone(), files, timings, failure, warnings, outcome }
}

fn collect_files(scenario: &Scenario, o: &Outcome, files: &mut BTreeMap<String, Vec<u8>>) -> Result<()> {
    let f = export::fmt_f64;
    if let (Some(case), Some(part), Some(space), Some(nom)) = (&o.case, &o.partition, &o.space, &o.nominal_partition) {
        let ids = |v: &[usize]| v.iter().map(|&i| case.generators[i].id).collect::<Vec<_>>();
        let dist = o.distance.clone().unwrap_or(PartitionDistance { moved: BTreeSet::new(), reference_changes: Vec::new() });
        let mut diagnostics = BTreeMap::new();
        if let Some(l) = o.coupling() {
            diagnostics.insert("coupling_max_row_sum", f(perturbation::max_row_sum(l)));
            diagnostics.insert("coupling_asymmetry", f(linalg::asymmetry(l)));
        }
        diagnostics.insert("slow_subspace_residual", f(space.residual));
        if let Some(red) = &o.reduced {
            diagnostics.insert("epsilon", f(red.epsilon));
        }
        if let Some(led) = &o.ledger {
            diagnostics.insert("two_path_error", f(led.two_path_error()));
            diagnostics.insert("perturbed_max_row_sum", f(perturbation::max_row_sum(&led.l)));
        }
        let report = PartitionReport {
            scenario: &scenario.name,
            farms: &scenario.farms,
            r: part.r,
            areas: linearize::area_ids(case, &part.areas),
            reference_machines: ids(&part.reference_machines),
            nominal_areas: linearize::area_ids(case, &nom.areas),
            nominal_reference_machines: ids(&nom.reference_machines),
            moved: ids(&dist.moved.iter().copied().collect::<Vec<_>>()),
            reference_changes: dist
                .reference_changes
                .iter()
                .map(|&(a, b)| (case.generators[a].id, case.generators[b].id))
                .collect(),
            slow_eigenvalues: space.eigenvalues.iter().map(|l| [f(l.re), f(l.im)]).collect(),
            slow_frequencies_hz: space.frequencies_hz().into_iter().map(f).collect(),
            gap_ratio: f(space.gap_ratio),
            hyperplane_error: f(part.hyperplane_error()),
            assignment_margins: part.assignment_margins.iter().map(|&x| f(x)).collect(),
            ties: ids(&part.ties),
            diagnostics,
        };
        files.insert("partition.json".into(), export::json_bytes(&report)?);
    }
    if let Some(modes) = &o.modes {
        files.insert("modes.csv".into(), export::modes_csv(modes)?);
    }
    if let Some(ledger) = &o.ledger {
        for (name, bytes) in export::ledger_files(ledger)? {
            files.insert(format!("ledger/{name}"), bytes);
        }
        if let Some(eq) = &o.equivalent {
            files.insert("ledger/l_eq.csv".into(), export::matrix_csv(&eq.l_eq)?);
            files.insert("ledger/delta_l_eq_int.csv".into(), export::matrix_csv(&eq.delta_int)?);
            files.insert("ledger/delta_l_eq_ext.csv".into(), export::matrix_csv(&eq.delta_ext)?);
        }
    }
    if let Some(t) = &o.trajectory {
        files.insert("traj.csv".into(), export::trajectory_csv(t)?);
    }
    if let (Some(res), Some(t)) = (&o.pca, &o.trajectory) {
        let labels = t.select("delta_").labels;
        files.insert("pca.csv".into(), export::pca_csv(res, &labels)?);
    }
    Ok(())
}

/// One grid point of a sweep: overrides for the template's first farm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub bus: Option<usize>,
    pub gamma: Option<u32>,
}

impl SweepPoint {
    pub fn label(&self) -> String {
        match (self.bus, self.gamma) {
            (Some(b), Some(g)) => format!("bus{b}_gamma{g}"),
            (Some(b), None) => format!("bus{b}"),
            (None, Some(g)) => format!("gamma{g}"),
            (None, None) => "template".into(),
        }
    }

    pub fn apply(&self, template: &Scenario) -> Result<Scenario> {
        let mut s = template.clone();
        s.name = format!("{}-{}", template.name, self.label());
        if s.farms.is_empty() {
            let bus = self.bus.ok_or_else(|| Error::Domain("sweep point needs a bus when the template has no farm".into()))?;
            s.farms.push(FarmOverride::new(bus, self.gamma.unwrap_or(0)));
        } else {
            if let Some(b) = self.bus {
                s.farms[0].bus = b;
            }
            if let Some(g) = self.gamma {
                s.farms[0].gamma = g;
            }
        }
        if let Some(out) = &template.out {
            s.out = Some(out.join(self.label()));
        }
        Ok(s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub label: String,
    pub point: SweepPoint,
    /// Generator ids that left their nominal area.
    pub moved: Option<Vec<usize>>,
    pub reference_changes: Option<Vec<(usize, usize)>>,
    pub slow_frequencies_hz: Option<Vec<f64>>,
    pub failure: Option<StageFailure>,
}

/// Run the template at every point, at most `jobs` at a time.
///
/// Each point is isolated: a failure shows up in its row only. When
/// `write` is set and the template has an output directory, every point's
/// bundle goes to `<out>/<label>/`.
pub fn sweep(template: &Scenario, points: &[SweepPoint], jobs: usize, write: bool) -> Result<Vec<SweepRow>> {
    use rayon::prelude::*;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Domain(format!("thread pool: {e}")))?;
    let rows = pool.install(|| {
        points
            .par_iter()
            .map(|p| {
                let label = p.label();
                let scenario = match p.apply(template) {
                    Ok(s) => s,
                    Err(e) => {
                        return SweepRow {
                            label,
                            point: p.clone(),
                            moved: None,
                            reference_changes: None,
                            slow_frequencies_hz: None,
                            failure: Some(StageFailure { stage: Stage::Load, kind: FailureKind::Validation, message: e.to_string() }),
                        }
                    }
                };
                let bundle = run_pipeline(&scenario);
                let mut failure = bundle.failure.clone();
                if write {
                    if let Some(dir) = &scenario.out {
                        if let Err(e) = bundle.write(dir) {
                            failure.get_or_insert(StageFailure {
                                stage: Stage::Load,
                                kind: FailureKind::Validation,
                                message: format!("writing {}: {e}", dir.display()),
                            });
                        }
                    }
                }
                let o = &bundle.outcome;
                SweepRow {
                    label,
                    point: p.clone(),
                    moved: o.moved_ids().map(|s| s.into_iter().collect()),
                    reference_changes: match (&o.case, &o.distance) {
                        (Some(c), Some(d)) => Some(
                            d.reference_changes.iter().map(|&(a, b)| (c.generators[a].id, c.generators[b].id)).collect(),
                        ),
                        _ => None,
                    },
                    slow_frequencies_hz: o.space.as_ref().map(|s| s.frequencies_hz()),
                    failure,
                }
            })
            .collect()
    });
    Ok(rows)
}

/// Summary table of a sweep, one line per point.
pub fn sweep_csv(rows: &[SweepRow]) -> Vec<u8> {
    let mut out = String::from("point,moved,reference_changes,slow_frequencies_hz,failure\n");
    for r in rows {
        let join = |v: Vec<String>| v.join(" ");
        let moved = r.moved.as_ref().map(|m| join(m.iter().map(|x| x.to_string()).collect())).unwrap_or_default();
        let refs = r
            .reference_changes
            .as_ref()
            .map(|m| join(m.iter().map(|(a, b)| format!("{a}->{b}")).collect()))
            .unwrap_or_default();
        let freqs = r
            .slow_frequencies_hz
            .as_ref()
            .map(|m| join(m.iter().map(|x| format!("{x:.6}")).collect()))
            .unwrap_or_default();
        let fail = r.failure.as_ref().map(|f| format!("{:?}: {}", f.stage, f.message.replace(',', ";"))).unwrap_or_default();
        out.push_str(&format!("{},{moved},{refs},{freqs},{fail}\n", r.label));
    }
    out.into_bytes()
}

/// First step of a penetration ramp at which some generator changes area.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstMovers {
    /// Index into the ramp.
    pub step: usize,
    pub scenario: String,
    /// Generator ids that left their nominal area.
    pub moved: Vec<usize>,
    /// The partition at that step, as generator ids.
    pub areas: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoverSearch {
    pub found: Option<FirstMovers>,
    /// Steps that ran to completion.
    pub completed: usize,
    /// Why the ramp ended early, e.g. the power flow stopped converging.
    pub stopped: Option<String>,
}

/// Run a ramp of scenarios in order until a generator changes area.
///
/// Only the coherency stages run. The search ends at the first step with a
/// non-empty moved set or at the first failing step, whichever comes first.
pub fn first_movers(ramp: &[Scenario]) -> MoverSearch {
    let mut completed = 0;
    for (step, s) in ramp.iter().enumerate() {
        let mut s = s.clone();
        s.analyses = Analyses { coherency: true, modal: false, simulate: false, pca: false };
        s.out = None;
        let b = run_pipeline(&s);
        if let Some(f) = b.failure {
            let stage = serde_json::to_value(f.stage).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
            return MoverSearch { found: None, completed, stopped: Some(format!("{}: {stage} failed: {}", s.name, f.message)) };
        }
        completed += 1;
        let moved = b.outcome.moved_ids().unwrap_or_default();
        if !moved.is_empty() {
            let found = FirstMovers {
                step,
                scenario: s.name.clone(),
                moved: moved.into_iter().collect(),
                areas: b.outcome.area_ids().unwrap_or_default(),
            };
            return MoverSearch { found: Some(found), completed, stopped: None };
        }
    }
    MoverSearch { found: None, completed, stopped: None }
}
