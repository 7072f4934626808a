//! Operator entry point: scenario loading, optimal/baseline sweeps, embedded
//! verification suites and plot-ready CSV exports.
//!
//! Everything here is plumbing around the library modules; the binary in
//! `src/bin` only forwards to [`main`].

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::baseline::{run_baseline, CarFollowingParams, SignalPlan};
use crate::error::{Error, Result};
use crate::metrics::{compare_volume, comparison_csv, per_vehicle_csv, run_means, RunMeans};
use crate::scenario::{Corridor, CorridorConfig, VehicleLimits};
use crate::sim::{simulate, FlowSpec, RunArtifacts, PLAYBACK_STEP};

/// Scenario description loaded from a JSON file.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub corridor: CorridorConfig,
    pub limits: VehicleLimits,
    pub entry_speed_mps: (f64, f64),
    pub horizon_s: f64,
    #[serde(default)]
    pub signal: Option<SignalPlan>,
    #[serde(default)]
    pub car_following: Option<CarFollowingParams>,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<ScenarioFile> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read scenario {}: {e}", path.display())))?;
        let scenario: ScenarioFile = serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("cannot parse scenario {}: {e}", path.display())))?;
        Corridor::build(&scenario.corridor)?;
        scenario.limits.validate()?;
        if let Some(signal) = &scenario.signal {
            signal.validate()?;
        }
        if let Some(cf) = &scenario.car_following {
            cf.validate()?;
        }
        Ok(scenario)
    }

    pub fn corridor(&self) -> Corridor {
        Corridor::build(&self.corridor).expect("validated at load")
    }

    pub fn flow(&self, volume: f64) -> FlowSpec {
        FlowSpec {
            volume_veh_per_h: volume,
            entry_speed_mps: self.entry_speed_mps,
            horizon_s: self.horizon_s,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "corridor",
    version,
    about = "Coordination and simulation of automated vehicles on signal-free intersection corridors"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Optimal,
    Baseline,
    Both,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a volume/seed sweep and write metrics artifacts.
    Run(RunArgs),
    /// Run the embedded verification suites against their oracles.
    Verify,
    /// Export the trajectories and speed envelope of one run.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Both)]
    mode: Mode,
    /// Traffic volumes in veh/h per lane per entry.
    #[arg(long, value_delimiter = ',', default_values_t = [600.0, 800.0, 1000.0, 1200.0, 1400.0])]
    volumes: Vec<f64>,
    /// Random seeds, one run per (volume, seed).
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2, 3, 4])]
    seeds: Vec<u64>,
    /// Output directory; defaults to $CORRIDOR_OUT or ./runs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the scenario's tracking-error bound epsilon, m.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Overrides the scenario's arrival horizon, s.
    #[arg(long)]
    horizon: Option<f64>,
}

#[derive(Debug, Args)]
struct ExportArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Optimal)]
    mode: Mode,
    #[arg(long)]
    volume: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parses arguments and runs the requested command. Exit status 2 marks a
/// configuration problem, 1 an execution or verification failure.
pub fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(&args),
        Command::Verify => cmd_verify(),
        Command::Export(args) => cmd_export(&args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.to_string() }));
            match e {
                Error::Config(_) | Error::InvalidCorridor(_) | Error::InvalidArgument(_) => {
                    ExitCode::from(2)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn out_dir(flag: &Option<PathBuf>) -> PathBuf {
    flag.clone()
        .or_else(|| std::env::var_os("CORRIDOR_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'a str,
    scenario: &'a ScenarioFile,
    mode: String,
    volumes: &'a [f64],
    seeds: &'a [u64],
    config_sha256: String,
}

fn write_manifest(
    dir: &Path,
    scenario: &ScenarioFile,
    mode: Mode,
    volumes: &[f64],
    seeds: &[u64],
) -> Result<()> {
    let config = serde_json::to_string(&(scenario, format!("{mode:?}"), volumes, seeds))
        .map_err(|e| Error::Config(e.to_string()))?;
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        scenario,
        mode: format!("{mode:?}"),
        volumes,
        seeds,
        config_sha256: format!("{:x}", Sha256::digest(config.as_bytes())),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?,
    )
    .map_err(|e| Error::Config(format!("cannot write manifest: {e}")))?;
    Ok(())
}

fn run_one(
    scenario: &ScenarioFile,
    corridor: &Corridor,
    mode: Mode,
    volume: f64,
    seed: u64,
) -> Result<RunArtifacts> {
    let flow = scenario.flow(volume);
    let artifacts = match mode {
        Mode::Optimal => simulate(corridor, &scenario.limits, &flow, seed)?,
        Mode::Baseline => run_baseline(
            corridor,
            &flow,
            &scenario.signal.clone().unwrap_or_default(),
            &scenario.car_following.clone().unwrap_or_default(),
            seed,
        )?,
        Mode::Both => unreachable!("expanded before dispatch"),
    };
    if let Some(v) = artifacts.violations.first() {
        return Err(Error::MonitorViolation {
            t: v.t,
            detail: format!(
                "{mode:?} run volume {volume} seed {seed}: {} violations, first: {}",
                artifacts.violations.len(),
                v.detail
            ),
        });
    }
    Ok(artifacts)
}

fn cmd_run(args: &RunArgs) -> Result<ExitCode> {
    if args.volumes.is_empty() || args.seeds.is_empty() {
        return Err(Error::Config("volumes and seeds must be nonempty".into()));
    }
    let mut scenario = ScenarioFile::load(&args.scenario)?;
    if let Some(eps) = args.epsilon {
        scenario.limits.tracking_error = eps;
        scenario.limits.validate()?;
    }
    if let Some(h) = args.horizon {
        scenario.horizon_s = h;
    }
    let corridor = scenario.corridor();
    let dir = out_dir(&args.out);
    fs::create_dir_all(&dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;

    let modes: &[Mode] = match args.mode {
        Mode::Both => &[Mode::Optimal, Mode::Baseline],
        Mode::Optimal => &[Mode::Optimal],
        Mode::Baseline => &[Mode::Baseline],
    };
    let jobs: Vec<(Mode, f64, u64)> = modes
        .iter()
        .flat_map(|&m| {
            args.volumes
                .iter()
                .flat_map(move |&v| args.seeds.iter().map(move |&s| (m, v, s)))
        })
        .collect();
    let results: Vec<(Mode, f64, u64, Result<RunArtifacts>)> = jobs
        .par_iter()
        .map(|&(m, v, s)| (m, v, s, run_one(&scenario, &corridor, m, v, s)))
        .collect();

    let mut means: std::collections::BTreeMap<(u8, u64), Vec<(u64, RunMeans)>> = Default::default();
    for (m, v, s, result) in results {
        let artifacts = result?;
        let tag = match m {
            Mode::Optimal => "optimal",
            Mode::Baseline => "baseline",
            Mode::Both => unreachable!(),
        };
        let rows: Vec<_> = artifacts
            .outcomes
            .iter()
            .map(|o| (o.id, o.metrics))
            .collect();
        fs::write(
            dir.join(format!("vehicles_{tag}_{v:.0}_{s}.csv")),
            per_vehicle_csv(&rows),
        )
        .map_err(|e| Error::Config(format!("cannot write artifact: {e}")))?;
        means
            .entry((matches!(m, Mode::Baseline) as u8, v.to_bits()))
            .or_default()
            .push((s, run_means(&artifacts.per_vehicle_metrics())));
    }

    if args.mode == Mode::Both {
        let mut rows = Vec::new();
        for &v in &args.volumes {
            let collect = |side: u8| {
                let mut runs = means.get(&(side, v.to_bits())).cloned().unwrap_or_default();
                runs.sort_by_key(|&(s, _)| s);
                runs.into_iter().map(|(_, m)| m).collect::<Vec<_>>()
            };
            rows.push(compare_volume(v, &collect(0), &collect(1))?);
        }
        let csv = comparison_csv(&rows);
        fs::write(dir.join("comparison.csv"), &csv)
            .map_err(|e| Error::Config(format!("cannot write comparison: {e}")))?;
        print!("{csv}");
    } else {
        for (&(_, vbits), runs) in &means {
            let v = f64::from_bits(vbits);
            let n = runs.len() as f64;
            let (tt, dl, fu) = runs.iter().fold((0.0, 0.0, 0.0), |acc, (_, r)| {
                (acc.0 + r.travel_time, acc.1 + r.delay, acc.2 + r.fuel_ml)
            });
            println!(
                "volume {v:.0}: travel {:.2} s, delay {:.2} s, fuel {:.3} ml (seed-averaged)",
                tt / n,
                dl / n,
                fu / n
            );
        }
    }
    write_manifest(&dir, &scenario, args.mode, &args.volumes, &args.seeds)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_export(args: &ExportArgs) -> Result<ExitCode> {
    if args.mode == Mode::Both {
        return Err(Error::Config("export needs a single mode".into()));
    }
    let scenario = ScenarioFile::load(&args.scenario)?;
    let corridor = scenario.corridor();
    let artifacts = run_one(&scenario, &corridor, args.mode, args.volume, args.seed)?;
    let dir = out_dir(&args.out);
    fs::create_dir_all(&dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))?;

    let mut traj = String::from("vehicle_id,t,p,v,u,lane,zone_flag\n");
    for o in &artifacts.outcomes {
        let steps = ((o.exit_time - o.entry_time) / PLAYBACK_STEP).ceil() as usize;
        for k in 0..=steps {
            let t = (o.entry_time + k as f64 * PLAYBACK_STEP).min(o.exit_time);
            let s = o.trajectory.evaluate_extrapolated(t);
            let lane = if s.p <= corridor.lane_change_zone_length {
                o.entry_lane
            } else {
                o.lane
            };
            let in_zone = o
                .path
                .zone_entry_offsets
                .iter()
                .any(|&off| s.p >= off && s.p <= off + corridor.merging_zone_length);
            traj.push_str(&format!(
                "{},{:.3},{:.6},{:.6},{:.6},{},{}\n",
                o.id,
                t,
                s.p,
                s.v,
                s.u,
                lane,
                in_zone as u8
            ));
        }
    }
    fs::write(dir.join("trajectories.csv"), traj)
        .map_err(|e| Error::Config(format!("cannot write trajectories: {e}")))?;

    let mut env = String::from("t,active,v_min,v_max\n");
    for e in &artifacts.envelope {
        env.push_str(&format!(
            "{:.3},{},{:.6},{:.6}\n",
            e.t, e.active, e.v_min, e.v_max
        ));
    }
    fs::write(dir.join("envelope.csv"), env)
        .map_err(|e| Error::Config(format!("cannot write envelope: {e}")))?;
    write_manifest(
        &dir,
        &scenario,
        args.mode,
        &[args.volume],
        &[args.seed],
    )?;
    println!(
        "exported {} vehicles to {}",
        artifacts.outcomes.len(),
        dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify() -> Result<ExitCode> {
    let mut all_ok = true;
    let mut report = |name: &str, ok: bool, detail: String| {
        all_ok &= ok;
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    };

    let suite = crate::oracle::verify_suites();
    report(
        "solver-exactness",
        suite.exactness.failures == 0,
        format!(
            "{} randomized instances, {} failures, max residual {:.2e}",
            suite.exactness.total, suite.exactness.failures, suite.exactness.max_residual
        ),
    );
    report(
        "qp-equivalence",
        suite.qp.failures == 0,
        format!(
            "{} instances ({} with speed-limit arcs, {} with rear-end arcs), max relative cost gap {:.2e}",
            suite.qp.total, suite.qp.vmax_active, suite.qp.rear_end_active, suite.qp.max_rel_gap
        ),
    );
    report(
        "scheduler-brute-force",
        suite.scheduler.failures == 0,
        format!(
            "{} randomized conflict configurations, {} mismatches",
            suite.scheduler.total, suite.scheduler.failures
        ),
    );
    report(
        "idle-time-reduction",
        suite.scheduler.idle_zero_mismatches == 0,
        format!(
            "{} configurations, {} bit mismatches between the idle-time path at zero and the plain recursion",
            suite.scheduler.total, suite.scheduler.idle_zero_mismatches
        ),
    );

    Ok(if all_ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
