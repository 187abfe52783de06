use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use windcoh::netmodel::{self, NetworkCase, PowerFlowOptions};
use windcoh::pipeline::{self, Analyses, Bundle, FailureKind, FarmOverride, Scenario, SweepPoint};

const EXIT_VALIDATION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_PARTIAL: u8 = 4;

/// Slow-coherency analysis of power systems with DFIG wind farms.
#[derive(Parser)]
#[command(name = "windcoh", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Case file (JSON); the bundled 68-bus case by default.
    #[arg(long, global = true)]
    case: Option<PathBuf>,
    /// Scenario file (JSON) with the same fields as the run manifest's config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for the artifact bundle.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent sweep points.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Accepted for interface stability; clustering is seeded deterministically.
    #[arg(long, global = true)]
    #[allow(dead_code)]
    seed: Option<u64>,
    /// Skip row-mean removal before the trajectory SVD.
    #[arg(long, global = true)]
    no_center: bool,
    /// Attach a farm, BUS:GAMMA or BUS:GAMMA:WIND_SPEED; repeatable.
    #[arg(long = "farm", global = true, value_parser = parse_farm)]
    farms: Vec<FarmOverride>,
    /// Number of coherent areas.
    #[arg(long, global = true)]
    r: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Check the case and report every problem found.
    Validate,
    /// Solve the power flow and print the operating point summary.
    Powerflow,
    /// Identify coherent areas (with the equivalent Laplacian when farms are attached).
    Coherency,
    /// Build the perturbation ledger and equivalent Laplacian.
    Perturb,
    /// Step response of the linear model.
    Simulate,
    /// PCA clustering of simulated angles against the model partition.
    Pca,
    /// Run the scenario over a grid of farm buses and/or penetration levels.
    Sweep(SweepArgs),
    /// Run every stage and print a summary.
    Report,
}

#[derive(Args)]
struct SweepArgs {
    /// Penetration levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    gammas: Vec<u32>,
    /// Farm buses, comma separated.
    #[arg(long, value_delimiter = ',')]
    buses: Vec<usize>,
    /// Explicit points BUS:GAMMA, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_point)]
    points: Vec<SweepPoint>,
}

fn parse_farm(s: &str) -> Result<FarmOverride, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |p: &str| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}"));
    match parts.as_slice() {
        [b, g] | [b, g, _] => {
            let mut f = FarmOverride::new(
                b.trim().parse().map_err(|e| format!("bus {b:?}: {e}"))?,
                g.trim().parse().map_err(|e| format!("gamma {g:?}: {e}"))?,
            );
            if let [_, _, v] = parts.as_slice() {
                f.wind_speed = Some(num(v)?);
            }
            Ok(f)
        }
        _ => Err(format!("expected BUS:GAMMA[:WIND_SPEED], got {s:?}")),
    }
}

fn parse_point(s: &str) -> Result<SweepPoint, String> {
    let (b, g) = s.split_once(':').ok_or_else(|| format!("expected BUS:GAMMA, got {s:?}"))?;
    Ok(SweepPoint {
        bus: Some(b.trim().parse().map_err(|e| format!("bus {b:?}: {e}"))?),
        gamma: Some(g.trim().parse().map_err(|e| format!("gamma {g:?}: {e}"))?),
    })
}

/// Failure that maps to a specific exit code.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn validation(msg: impl Into<String>) -> anyhow::Error {
    Exit(EXIT_VALIDATION, msg.into()).into()
}

fn scenario(g: &Global) -> anyhow::Result<Scenario> {
    let mut s = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))
                .map_err(|e| validation(format!("{e:#}")))?;
            Scenario::from_json(&text).map_err(|e| validation(format!("{}: {e}", p.display())))?
        }
        None => Scenario::default(),
    };
    if g.case.is_some() {
        s.case = g.case.clone();
    }
    if !g.farms.is_empty() {
        s.farms = g.farms.clone();
        if g.config.is_none() {
            s.name = "wind".into();
        }
    }
    if let Some(r) = g.r {
        s.r = r;
    }
    if g.no_center {
        s.center = false;
    }
    s.out = g.out.clone();
    Ok(s)
}

fn load_case(s: &Scenario) -> anyhow::Result<NetworkCase> {
    let (source, bytes) = s.case_source().map_err(|e| validation(format!("case: {e}")))?;
    let text = String::from_utf8(bytes).map_err(|e| validation(format!("{source}: {e}")))?;
    let case = NetworkCase::from_json(&text).map_err(|e| validation(format!("{source}: {e}")))?;
    let specs: Vec<_> = s.farms.iter().map(FarmOverride::spec).collect();
    Ok(if specs.is_empty() { case } else { case.with_farms(&specs) })
}

fn finish(bundle: &Bundle, out: Option<&Path>) -> anyhow::Result<()> {
    if let Some(dir) = out {
        bundle.write(dir).with_context(|| format!("writing {}", dir.display()))?;
        println!("bundle written to {}", dir.display());
    }
    for w in &bundle.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(f) = &bundle.failure {
        let code = match f.kind {
            FailureKind::Validation => EXIT_VALIDATION,
            FailureKind::Numerical => EXIT_NUMERICAL,
        };
        let stage = serde_json::to_value(f.stage)?.as_str().unwrap_or_default().to_string();
        return Err(Exit(code, format!("stage {stage} failed: {}", f.message)).into());
    }
    Ok(())
}

fn print_partition(bundle: &Bundle) {
    let o = &bundle.outcome;
    let (Some(areas), Some(refs)) = (o.area_ids(), o.reference_ids()) else { return };
    println!("areas (reference first):");
    for (k, a) in areas.iter().enumerate() {
        let list: Vec<String> = a.iter().map(|x| x.to_string()).collect();
        println!("  A{} [ref {}]: {}", k + 1, refs[k], list.join(","));
    }
    if let Some(s) = &o.space {
        let f: Vec<String> = s.frequencies_hz().iter().map(|x| format!("{x:.3}")).collect();
        println!("slow frequencies (Hz): {}", f.join(", "));
    }
    if let Some(m) = o.moved_ids() {
        if !bundle.scenario.farms.is_empty() {
            let list: Vec<String> = m.iter().map(|x| x.to_string()).collect();
            println!("moved vs nominal: {{{}}}", list.join(","));
        }
    }
}

fn run_stages(g: &Global, analyses: Analyses) -> anyhow::Result<Bundle> {
    let mut s = scenario(g)?;
    s.analyses = analyses;
    Ok(pipeline::run_pipeline(&s))
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    let none = Analyses { coherency: false, modal: false, simulate: false, pca: false };
    match cli.command {
        Command::Validate => {
            let case = load_case(&scenario(g)?)?;
            let findings = netmodel::validate_case(&case);
            if findings.is_empty() {
                println!("{}: ok ({} buses, {} lines, {} generators, {} farms)", case.name, case.m(), case.lines.len(), case.n(), case.wind_farms.len());
                return Ok(());
            }
            for f in &findings {
                println!("{:?}: {}", f.kind, f.message);
            }
            Err(validation(format!("{} finding(s)", findings.len())))
        }
        Command::Powerflow => {
            let case = load_case(&scenario(g)?)?;
            let findings = netmodel::validate_case(&case);
            if !findings.is_empty() {
                return Err(validation(findings.iter().map(|f| f.message.clone()).collect::<Vec<_>>().join("; ")));
            }
            let op = netmodel::solve_power_flow(&case, &PowerFlowOptions::default())
                .map_err(|e| Exit(EXIT_NUMERICAL, e.to_string()))?;
            let gen: f64 = op.p_m.iter().sum();
            let load: f64 = case.buses.iter().map(|b| b.load_p).sum();
            println!("converged in {} iterations, mismatch {:.3e} pu", op.iterations, op.mismatch);
            println!("generation {gen:.4} pu, load {load:.4} pu, balance {:.3e} pu", netmodel::balance_residual(&case, &op).map_err(|e| Exit(EXIT_NUMERICAL, e.to_string()))?);
            if let Some(dir) = &g.out {
                let path = dir.join("powerflow.json");
                windcoh::export::write_file(&path, &windcoh::export::json_bytes(&op)?)?;
                println!("operating point written to {}", path.display());
            }
            Ok(())
        }
        Command::Coherency => {
            let b = run_stages(g, Analyses { coherency: true, ..none })?;
            print_partition(&b);
            finish(&b, g.out.as_deref())
        }
        Command::Perturb => {
            let b = run_stages(g, none)?;
            if let Some(l) = &b.outcome.ledger {
                println!("two-path error {:.3e}", l.two_path_error());
                for (name, norm) in windcoh::perturbation::ledger_norms(l) {
                    println!("  {name:<16} {norm:.6e}");
                }
            } else if b.failure.is_none() {
                println!("no farms attached; nothing to perturb");
            }
            finish(&b, g.out.as_deref())
        }
        Command::Simulate => {
            let b = run_stages(g, Analyses { modal: true, simulate: true, ..none })?;
            if let Some(t) = &b.outcome.trajectory {
                println!("{} signals x {} samples, dt {} s{}", t.data.nrows(), t.samples(), t.dt, if t.unstable { " (unstable)" } else { "" });
            }
            if let Some(modes) = &b.outcome.modes {
                for m in windcoh::dynsim::slow_modes(modes, b.scenario.r.saturating_sub(1)) {
                    println!("  {:+.4} ± j{:.4}  {:.3} Hz  ζ = {:.3}", m.re, m.im, m.freq_hz, m.damping_ratio);
                }
            }
            finish(&b, g.out.as_deref())
        }
        Command::Pca => {
            let b = run_stages(g, Analyses { coherency: true, simulate: true, pca: true, ..none })?;
            if let Some(c) = &b.outcome.comparison {
                let case = b.outcome.case.as_ref().expect("loaded");
                let ids = |p: &[Vec<usize>]| windcoh::linearize::area_ids(case, p);
                println!("pca partition:   {:?}", ids(&c.pca_partition));
                println!("model partition: {:?}", ids(&c.model_partition));
                println!("agreement {:.4}", c.agreement);
            }
            finish(&b, g.out.as_deref())
        }
        Command::Report => {
            let b = run_stages(g, Analyses::default())?;
            print_partition(&b);
            if let Some(c) = &b.outcome.comparison {
                println!("pca agreement {:.4}", c.agreement);
            }
            finish(&b, g.out.as_deref())
        }
        Command::Sweep(args) => {
            let template = scenario(g)?;
            let mut points = args.points.clone();
            match (args.buses.is_empty(), args.gammas.is_empty()) {
                (false, false) => {
                    for &b in &args.buses {
                        points.extend(args.gammas.iter().map(|&x| SweepPoint { bus: Some(b), gamma: Some(x) }));
                    }
                }
                (false, true) => points.extend(args.buses.iter().map(|&b| SweepPoint { bus: Some(b), gamma: None })),
                (true, false) => points.extend(args.gammas.iter().map(|&x| SweepPoint { bus: None, gamma: Some(x) })),
                (true, true) => {}
            }
            if template.farms.is_empty() && points.iter().any(|p| p.bus.is_none()) {
                return Err(validation("a γ-only sweep needs a farm bus (--farm or config)"));
            }
            let rows = pipeline::sweep(&template, &points, g.jobs, g.out.is_some())?;
            let table = pipeline::sweep_csv(&rows);
            print!("{}", String::from_utf8_lossy(&table));
            if let Some(dir) = &g.out {
                windcoh::export::write_file(&dir.join("sweep.csv"), &table)?;
                windcoh::export::write_file(&dir.join("sweep.json"), &windcoh::export::json_bytes(&rows)?)?;
            }
            let failed = rows.iter().filter(|r| r.failure.is_some()).count();
            if failed > 0 {
                return Err(Exit(EXIT_PARTIAL, format!("{failed} of {} sweep point(s) failed", rows.len())).into());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Exit>().map_or(EXIT_NUMERICAL, |x| x.0);
            ExitCode::from(code)
        }
    }
}
