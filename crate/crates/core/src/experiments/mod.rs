//! Config-driven experiment runner behind the `geoctrl` binary.
//!
//! A run reads one TOML file, validates it into an [`Experiment`], writes
//! CSV/JSON artifacts into the output directory and finishes with
//! `manifest.json` (config echo, versions, wall time). Data artifacts are
//! deterministic; only the manifest carries timing information.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use serde::Serialize;
use serde_json::{json, Value};

pub use config::{
    DecouplingSection, ExperimentConfig, ExperimentKind, InitialSection, LarcFields, LarcSection,
    OscillatorySection, PairGain, PlanSection, SeriesSection, SimulateSection,
};

use crate::dynamics::{simulate, IntegratorConfig, OpenLoop, State, TimeFn, ZeroControl};
use crate::error::{Error, Result};
use crate::geometry::{InputField, MechanicalSystem, SharedField};
use crate::kinematic::{
    decoupling_residual, kinematic_plan, larc_rank, ControllabilityReport, DecouplingCandidate,
    PlanSegment, TimeScaling,
};
use crate::models;
use crate::oscillatory::{
    averaged_system, coefficient_audit, convergence_study, synthesize_controls, AveragedGains,
    ConvergenceOptions, Gain, DEFAULT_PERIOD,
};
use crate::series::{truncation_study, ForcingField, DEFAULT_MAX_ORDER};
use crate::VERSION;

/// Environment variable capping the worker thread count.
pub const THREADS_ENV: &str = "GEOCTRL_THREADS";

pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Process exit status for an error: 2 for configuration problems, 1 for
/// I/O failures, 3 for numerical failures.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::UnknownModel(_) | Error::InvalidDescriptor(_) => EXIT_CONFIG,
        Error::Io(_) | Error::Json(_) => EXIT_IO,
        _ => EXIT_NUMERICAL,
    }
}

/// Structured error object printed on stderr by the binary.
pub fn error_report(err: &Error) -> Value {
    json!({
        "error": {
            "kind": err.kind(),
            "message": err.to_string(),
            "exit_code": exit_code(err),
        }
    })
}

/// Sizes the global rayon pool from [`THREADS_ENV`]; returns the worker
/// count in effect. Unset or empty keeps the default parallelism.
pub fn configure_threads() -> Result<usize> {
    let requested = match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => Some(
            v.trim()
                .parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "{THREADS_ENV} must be a positive integer, got `{v}`"
                    ))
                })?,
        ),
        _ => None,
    };
    if let Some(n) = requested {
        // a pool that already exists keeps its size
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(rayon::current_num_threads())
}

/// Experiment-specific parameters after validation.
enum Task {
    Simulate {
        cfg: IntegratorConfig,
        horizon: f64,
        control: OpenLoop,
    },
    Series {
        cfg: IntegratorConfig,
        horizon: f64,
        orders: Vec<usize>,
        epsilons: Vec<f64>,
        forcing: ForcingField,
    },
    Decoupling {
        depth: usize,
        rank_tol: f64,
        plan: Option<(PlanSection, TimeScaling, IntegratorConfig)>,
    },
    Larc {
        fields: LarcFields,
        depth: usize,
        rank_tol: f64,
        points: Vec<DVector<f64>>,
    },
    Track {
        gains: AveragedGains,
        period: f64,
        epsilon: f64,
        horizon: f64,
        cfg: IntegratorConfig,
        audit_times: Vec<f64>,
    },
    Convergence {
        gains: AveragedGains,
        epsilons: Vec<f64>,
        horizon: f64,
        opts: ConvergenceOptions,
        audit_times: Vec<f64>,
    },
}

/// A validated experiment, ready to run.
pub struct Experiment {
    config: ExperimentConfig,
    system: MechanicalSystem,
    initial: State,
    task: Task,
}

/// What a successful run produced.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    /// File names inside `output_dir`, manifest last.
    pub artifacts: Vec<String>,
    pub summary: Value,
    pub wall_time_s: f64,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// Keeps configuration errors, recasts anything else raised while
/// validating as one.
fn as_config(err: Error) -> Error {
    match err {
        Error::Config(_) | Error::UnknownModel(_) | Error::InvalidDescriptor(_) => err,
        other => Error::Config(other.to_string()),
    }
}

fn section<'a, T>(s: &'a Option<T>, name: &str, kind: ExperimentKind) -> Result<&'a T> {
    s.as_ref().ok_or_else(|| {
        config_err(format!(
            "experiment `{}` needs a [{name}] section",
            kind.name()
        ))
    })
}

fn integrator(config: &ExperimentConfig) -> Result<IntegratorConfig> {
    config.integrator.ok_or_else(|| {
        config_err(format!(
            "experiment `{}` needs an [integrator] section",
            config.experiment.name()
        ))
    })
}

fn positive(value: f64, what: &str) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(config_err(format!(
            "{what} must be positive and finite, got {value}"
        )))
    }
}

fn vector(values: &Option<Vec<f64>>, n: usize, what: &str) -> Result<DVector<f64>> {
    match values {
        None => Ok(DVector::zeros(n)),
        Some(v) if v.len() == n && v.iter().all(|x| x.is_finite()) => {
            Ok(DVector::from_column_slice(v))
        }
        Some(v) => Err(config_err(format!(
            "{what} needs {n} finite entries, got {}",
            v.len()
        ))),
    }
}

fn parse_gains(specs: &[String], m: usize, what: &str) -> Result<Vec<Gain>> {
    if specs.len() != m {
        return Err(config_err(format!(
            "{what} needs one gain per input ({m}), got {}",
            specs.len()
        )));
    }
    specs.iter().map(|s| s.parse::<Gain>()).collect()
}

fn gain_signal(gain: Gain) -> TimeFn {
    Arc::new(move |t| gain.eval(t))
}

fn averaged_gains(sec: &OscillatorySection, m: usize) -> Result<AveragedGains> {
    let mut gains = AveragedGains::new(m);
    for (a, g) in parse_gains(&sec.inputs, m, "oscillatory.inputs")?
        .into_iter()
        .enumerate()
    {
        gains = gains.with_input(a, g)?;
    }
    for pair in &sec.pairs {
        let [b, c] = pair.inputs;
        if !(1 <= b && b < c && c <= m) {
            return Err(config_err(format!(
                "pair inputs [{b}, {c}] must satisfy 1 <= b < c <= {m}"
            )));
        }
        gains = gains.with_pair(b - 1, c - 1, pair.gain.parse()?)?;
    }
    Ok(gains)
}

fn audit_times(sec: &OscillatorySection) -> Result<Vec<f64>> {
    if sec.audit_times.is_empty() {
        return Ok((0..20)
            .map(|i| sec.horizon * (i as f64 + 0.5) / 20.0)
            .collect());
    }
    if sec.audit_times.iter().any(|t| !t.is_finite()) {
        return Err(config_err("audit times must be finite"));
    }
    Ok(sec.audit_times.clone())
}

fn epsilon_list(values: &[f64], what: &str) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(config_err(format!("{what} must not be empty")));
    }
    values.iter().map(|&e| positive(e, what)).collect()
}

impl Experiment {
    /// Validates `config`: builds the model, parses gains and checks
    /// dimensions and numeric ranges. Every failure is a configuration error.
    pub fn prepare(config: &ExperimentConfig) -> Result<Self> {
        Self::prepare_inner(config).map_err(as_config)
    }

    fn prepare_inner(config: &ExperimentConfig) -> Result<Self> {
        let kind = config.experiment;
        let system = models::build(&config.model)?;
        let (n, m) = (system.dof(), system.input_count());
        let initial = State::new(
            vector(&config.initial.q, n, "initial.q")?,
            vector(&config.initial.qdot, n, "initial.qdot")?,
        );
        let task = match kind {
            ExperimentKind::Simulate => {
                let sec = section(&config.simulate, "simulate", kind)?;
                let cfg = integrator(config)?;
                let horizon = positive(sec.horizon, "simulate.horizon")?;
                cfg.steps(0.0, horizon)?;
                let control = if sec.inputs.is_empty() {
                    OpenLoop::constant(&vec![0.0; m])
                } else {
                    OpenLoop::new(
                        parse_gains(&sec.inputs, m, "simulate.inputs")?
                            .into_iter()
                            .map(gain_signal)
                            .collect(),
                    )
                };
                Task::Simulate {
                    cfg,
                    horizon,
                    control,
                }
            }
            ExperimentKind::SeriesCheck => {
                let sec = section(&config.series, "series", kind)?;
                let cfg = integrator(config)?;
                let horizon = positive(sec.horizon, "series.horizon")?;
                cfg.steps(0.0, horizon)?;
                if sec.orders.is_empty()
                    || sec.orders.iter().any(|&k| k == 0 || k > DEFAULT_MAX_ORDER)
                {
                    return Err(config_err(format!(
                        "series.orders must lie in 1..={DEFAULT_MAX_ORDER}"
                    )));
                }
                if system.has_potential() || system.has_damping() {
                    return Err(config_err(
                        "series-check needs a model without potential and damping",
                    ));
                }
                if initial.qdot.norm() != 0.0 {
                    return Err(config_err(
                        "series-check starts from rest; initial.qdot must be zero",
                    ));
                }
                let signals = parse_gains(&sec.inputs, m, "series.inputs")?
                    .into_iter()
                    .map(gain_signal)
                    .collect();
                Task::Series {
                    cfg,
                    horizon,
                    orders: sec.orders.clone(),
                    epsilons: epsilon_list(&sec.epsilons, "series.epsilons")?,
                    forcing: ForcingField::new(&system, signals)?,
                }
            }
            ExperimentKind::Decoupling => {
                let sec = section(&config.decoupling, "decoupling", kind)?;
                if sec.depth == 0 {
                    return Err(config_err("decoupling.depth must be at least 1"));
                }
                positive(sec.rank_tol, "decoupling.rank_tol")?;
                let plan = match &sec.plan {
                    None => None,
                    Some(p) => {
                        let cfg = integrator(config)?;
                        let scaling =
                            TimeScaling::new(p.profile, positive(p.duration, "plan.duration")?)?;
                        cfg.steps(0.0, p.duration)?;
                        if p.segments.is_empty() || p.segments.contains(&0) {
                            return Err(config_err(
                                "plan.segments must be non-empty signed 1-based field indices",
                            ));
                        }
                        Some((p.clone(), scaling, cfg))
                    }
                };
                Task::Decoupling {
                    depth: sec.depth,
                    rank_tol: sec.rank_tol,
                    plan,
                }
            }
            ExperimentKind::Larc => {
                let sec = section(&config.larc, "larc", kind)?;
                if sec.depth == 0 {
                    return Err(config_err("larc.depth must be at least 1"));
                }
                positive(sec.rank_tol, "larc.rank_tol")?;
                let points = if sec.points.is_empty() {
                    vec![initial.q.clone()]
                } else {
                    sec.points
                        .iter()
                        .map(|p| vector(&Some(p.clone()), n, "larc.points entry"))
                        .collect::<Result<_>>()?
                };
                Task::Larc {
                    fields: sec.fields,
                    depth: sec.depth,
                    rank_tol: sec.rank_tol,
                    points,
                }
            }
            ExperimentKind::OscillatoryTrack | ExperimentKind::Convergence => {
                let sec = section(&config.oscillatory, "oscillatory", kind)?;
                let gains = averaged_gains(sec, m)?;
                let period = positive(sec.period.unwrap_or(DEFAULT_PERIOD), "oscillatory.period")?;
                let horizon = positive(sec.horizon, "oscillatory.horizon")?;
                if sec.points_per_period < 50 {
                    return Err(config_err(
                        "oscillatory.points_per_period must be at least 50",
                    ));
                }
                let audit_times = audit_times(sec)?;
                if kind == ExperimentKind::OscillatoryTrack {
                    let epsilon = positive(
                        sec.epsilon.ok_or_else(|| {
                            config_err("oscillatory-track needs oscillatory.epsilon")
                        })?,
                        "oscillatory.epsilon",
                    )?;
                    synthesize_controls(&system, &gains, epsilon, period)?;
                    let cfg = match config.integrator {
                        Some(cfg) => cfg,
                        None => {
                            let fastest = epsilon * period / gains.max_frequency() as f64;
                            let steps = (horizon / (fastest / sec.points_per_period as f64)).ceil();
                            IntegratorConfig::rk4(horizon / steps)
                        }
                    };
                    cfg.steps(0.0, horizon)?;
                    Task::Track {
                        gains,
                        period,
                        epsilon,
                        horizon,
                        cfg,
                        audit_times,
                    }
                } else {
                    let epsilons = epsilon_list(&sec.epsilons, "oscillatory.epsilons")?;
                    for &e in &epsilons {
                        synthesize_controls(&system, &gains, e, period)?;
                    }
                    Task::Convergence {
                        gains,
                        epsilons,
                        horizon,
                        opts: ConvergenceOptions {
                            period,
                            points_per_period: sec.points_per_period,
                        },
                        audit_times,
                    }
                }
            }
        };
        Ok(Experiment {
            config: config.clone(),
            system,
            initial,
            task,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn system(&self) -> &MechanicalSystem {
        &self.system
    }

    /// Short description used by `validate`.
    pub fn describe(&self) -> Value {
        json!({
            "experiment": self.config.experiment.name(),
            "model": self.config.model.name,
            "dof": self.system.dof(),
            "inputs": self.system.input_count(),
        })
    }

    /// Runs the experiment, writing artifacts into `dir`. Returns the
    /// artifact names and a summary for the manifest.
    pub fn execute(&self, dir: &Path) -> Result<(Vec<String>, Value)> {
        fs::create_dir_all(dir)?;
        let sys = &self.system;
        let x0 = &self.initial;
        match &self.task {
            Task::Simulate {
                cfg,
                horizon,
                control,
            } => {
                let traj = simulate(sys, control, x0, 0.0, *horizon, cfg)?;
                traj.save_csv(&dir.join("trajectory.csv"))?;
                let end = traj.last();
                Ok((
                    vec!["trajectory.csv".into()],
                    json!({
                        "samples": traj.len(),
                        "final_q": end.q.as_slice(),
                        "final_qdot": end.qdot.as_slice(),
                    }),
                ))
            }
            Task::Series {
                cfg,
                horizon,
                orders,
                epsilons,
                forcing,
            } => {
                let mut artifacts = Vec::new();
                let mut rows = Vec::new();
                for &k in orders {
                    let table = truncation_study(sys, forcing, k, &x0.q, *horizon, epsilons, cfg)?;
                    let name = format!("series_order{k}.csv");
                    write_with(&dir.join(&name), |w| Ok(table.write_csv(w)?))?;
                    artifacts.push(name);
                    rows.push(json!({ "order": k, "slope": table.slope, "expected_slope": k + 1 }));
                }
                Ok((artifacts, json!({ "orders": rows })))
            }
            Task::Decoupling {
                depth,
                rank_tol,
                plan,
            } => {
                let (report, candidates) = decoupling_report(sys, &x0.q, *depth, *rank_tol)?;
                let mut artifacts = Vec::new();
                let mut plan_summary = Value::Null;
                if let Some((p, scaling, cfg)) = plan {
                    let segments = p
                        .segments
                        .iter()
                        .map(|&idx| {
                            let field = candidates
                                .get(idx.unsigned_abs() as usize - 1)
                                .ok_or_else(|| {
                                    Error::Precondition(format!(
                                        "plan segment {idx} refers to a missing field ({} found)",
                                        candidates.len()
                                    ))
                                })?;
                            Ok(PlanSegment::new(
                                field.clone(),
                                idx.signum() as f64,
                                *scaling,
                            ))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    let planned = kinematic_plan(&x0.q, &segments, cfg)?;
                    planned.trajectory.save_csv(&dir.join("plan.csv"))?;
                    artifacts.push("plan.csv".into());
                    plan_summary = json!({
                        "final_q": planned.final_configuration().as_slice(),
                        "max_residual": planned.reconstruction.max_residual(),
                        "boundaries": planned.boundaries,
                    });
                }
                let mut value = serde_json::to_value(&report)?;
                value["plan"] = plan_summary;
                write_json(&dir.join("decoupling.json"), &value)?;
                artifacts.insert(0, "decoupling.json".into());
                Ok((
                    artifacts,
                    json!({
                        "verdict": report.controllability.verdict,
                        "fields": report.fields.len(),
                        "rank": report.controllability.rank,
                        "plan": value["plan"],
                    }),
                ))
            }
            Task::Larc {
                fields,
                depth,
                rank_tol,
                points,
            } => {
                let mut entries = Vec::new();
                for q in points {
                    let report = match fields {
                        LarcFields::Inputs => {
                            let inputs = (0..sys.input_count())
                                .map(|a| Ok(Arc::new(InputField::new(sys, a)?) as SharedField))
                                .collect::<Result<Vec<_>>>()?;
                            larc_rank(&inputs, q, *depth, *rank_tol)?
                        }
                        LarcFields::Decoupling => {
                            decoupling_report(sys, q, *depth, *rank_tol)?
                                .0
                                .controllability
                        }
                    };
                    entries.push(json!({ "q": q.as_slice(), "report": report }));
                }
                let verdicts: Vec<bool> = entries
                    .iter()
                    .map(|e| e["report"]["verdict"] == true)
                    .collect();
                write_json(&dir.join("larc.json"), &Value::Array(entries))?;
                Ok((vec!["larc.json".into()], json!({ "verdicts": verdicts })))
            }
            Task::Track {
                gains,
                period,
                epsilon,
                horizon,
                cfg,
                audit_times,
            } => {
                let control = synthesize_controls(sys, gains, *epsilon, *period)?;
                let traj = simulate(sys, &control, x0, 0.0, *horizon, cfg)?;
                let averaged = averaged_system(sys, gains)?;
                let reference = simulate(&averaged, &ZeroControl(0), x0, 0.0, *horizon, cfg)?;
                let audit = coefficient_audit(gains, *period, audit_times)?;
                traj.save_csv(&dir.join("trajectory.csv"))?;
                reference.save_csv(&dir.join("averaged.csv"))?;
                write_with(&dir.join("audit.json"), |w| audit.write_json(w))?;
                Ok((
                    vec![
                        "trajectory.csv".into(),
                        "averaged.csv".into(),
                        "audit.json".into(),
                    ],
                    json!({
                        "epsilon": epsilon,
                        "dt": cfg.dt,
                        "max_err": traj.max_configuration_error(&reference)?,
                        "audit_max_self_difference": audit.max_self_difference(),
                        "audit_max_pair_difference": audit.max_pair_difference(),
                    }),
                ))
            }
            Task::Convergence {
                gains,
                epsilons,
                horizon,
                opts,
                audit_times,
            } => {
                let study = convergence_study(sys, gains, x0, *horizon, epsilons, opts)?;
                let audit = coefficient_audit(gains, opts.period, audit_times)?;
                write_with(&dir.join("convergence.csv"), |w| Ok(study.write_csv(w)?))?;
                study.reference.save_csv(&dir.join("averaged.csv"))?;
                write_with(&dir.join("audit.json"), |w| audit.write_json(w))?;
                Ok((
                    vec![
                        "convergence.csv".into(),
                        "averaged.csv".into(),
                        "audit.json".into(),
                    ],
                    json!({
                        "slope": study.slope,
                        "monotone": study.is_monotone(),
                        "dt": study.dt,
                        "audit_max_self_difference": audit.max_self_difference(),
                        "audit_max_pair_difference": audit.max_pair_difference(),
                    }),
                ))
            }
        }
    }
}

/// One decoupling field at the evaluation point.
#[derive(Debug, Clone, Serialize)]
pub struct FieldReport {
    pub coefficients: Vec<f64>,
    pub vector: Vec<f64>,
    pub residual: f64,
}

/// JSON report of the `decoupling` experiment.
#[derive(Debug, Clone, Serialize)]
pub struct DecouplingReport {
    pub q: Vec<f64>,
    /// Every input direction decouples (the quadratic forms vanish).
    pub all_directions: bool,
    pub fields: Vec<FieldReport>,
    #[serde(flatten)]
    pub controllability: ControllabilityReport,
}

fn decoupling_report(
    sys: &MechanicalSystem,
    q: &DVector<f64>,
    depth: usize,
    rank_tol: f64,
) -> Result<(DecouplingReport, Vec<DecouplingCandidate>)> {
    let all_directions = crate::kinematic::find_decoupling_fields(sys, q)?.is_all_directions();
    let candidates = DecouplingCandidate::all_at(sys, q)?;
    let mut fields = Vec::with_capacity(candidates.len());
    for c in &candidates {
        fields.push(FieldReport {
            coefficients: c.coefficients(q)?.as_slice().to_vec(),
            vector: crate::geometry::VectorField::eval(c, q)?
                .as_slice()
                .to_vec(),
            residual: decoupling_residual(sys, c, q)?,
        });
    }
    let shared: Vec<SharedField> = candidates
        .iter()
        .map(|c| Arc::new(c.clone()) as SharedField)
        .collect();
    let mut controllability = if shared.is_empty() {
        ControllabilityReport {
            rank: 0,
            depth: 1,
            verdict: false,
            residuals: Vec::new(),
        }
    } else {
        larc_rank(&shared, q, depth, rank_tol)?
    };
    controllability.residuals = fields.iter().map(|f| f.residual).collect();
    Ok((
        DecouplingReport {
            q: q.as_slice().to_vec(),
            all_directions,
            fields,
            controllability,
        },
        candidates,
    ))
}

fn write_with<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<File>) -> Result<()>,
{
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    write_with(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        writeln!(w)?;
        Ok(())
    })
}

/// Validates and runs `config`, writing artifacts and `manifest.json`
/// into the resolved output directory.
pub fn run(config: &ExperimentConfig, out_override: Option<&Path>) -> Result<RunOutcome> {
    let experiment = Experiment::prepare(config)?;
    let dir = config.output_dir(out_override);
    let started = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0.0, |d| d.as_secs_f64());
    let clock = Instant::now();
    let (mut artifacts, summary) = experiment.execute(&dir)?;
    let wall_time_s = clock.elapsed().as_secs_f64();
    let manifest = json!({
        "tool": "geoctrl",
        "version": VERSION,
        "experiment": config.experiment.name(),
        "config": config,
        "artifacts": artifacts,
        "summary": summary,
        "threads": rayon::current_num_threads(),
        "started_unix_s": started,
        "wall_time_s": wall_time_s,
    });
    write_json(&dir.join("manifest.json"), &manifest)?;
    artifacts.push("manifest.json".into());
    Ok(RunOutcome {
        output_dir: dir,
        artifacts,
        summary,
        wall_time_s,
    })
}

/// Loads, validates and runs the config file at `path`.
pub fn run_file(path: &Path, out_override: Option<&Path>) -> Result<RunOutcome> {
    run(&ExperimentConfig::load(path)?, out_override)
}

/// Loads and validates the config file at `path` without running it.
pub fn validate_file(path: &Path) -> Result<Experiment> {
    Experiment::prepare(&ExperimentConfig::load(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(text).unwrap()
    }

    #[test]
    fn flat_zero_input_stays_put() {
        let cfg = parse(
            "experiment = \"simulate\"\n[model]\nname = \"flat\"\n[integrator]\ndt = 0.1\n\
             [initial]\nq = [1.0, -2.0]\n[simulate]\nhorizon = 1.0\n",
        );
        let dir = tempfile::tempdir().unwrap();
        let out = run(&cfg, Some(dir.path())).unwrap();
        assert_eq!(out.artifacts, vec!["trajectory.csv", "manifest.json"]);
        let csv = fs::read_to_string(dir.path().join("trajectory.csv")).unwrap();
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 11);
        let first: Vec<&str> = rows[0].split(',').skip(1).collect();
        for row in &rows {
            assert_eq!(row.split(',').skip(1).collect::<Vec<_>>(), first);
        }
    }

    #[test]
    fn validation_failures_map_to_config_exit() {
        let cases = [
            "experiment = \"simulate\"\n[model]\nname = \"flat\"\n[integrator]\ndt = 0.3\n[simulate]\nhorizon = 1.0\n",
            "experiment = \"simulate\"\n[model]\nname = \"warp\"\n[integrator]\ndt = 0.1\n[simulate]\nhorizon = 1.0\n",
            "experiment = \"series-check\"\n[model]\nname = \"flat\"\n[integrator]\ndt = 0.1\n",
            "experiment = \"convergence\"\n[model]\nname = \"pvtol\"\n[oscillatory]\ninputs = [\"const(0)\", \"cosine(1)\"]\nhorizon = 1.0\nepsilons = [0.1]\n",
            "experiment = \"oscillatory-track\"\n[model]\nname = \"pvtol\"\n[oscillatory]\ninputs = [\"0\", \"0\"]\nhorizon = 1.0\nepsilon = 0.1\nperiod = 5.0\n",
        ];
        for text in cases {
            let err = Experiment::prepare(&parse(text)).err().expect(text);
            assert_eq!(exit_code(&err), EXIT_CONFIG, "{text}: {err}");
        }
    }

    #[test]
    fn numerical_errors_map_to_exit_three() {
        let err = Error::NonFiniteState { time: 1.0 };
        assert_eq!(exit_code(&err), EXIT_NUMERICAL);
        assert_eq!(error_report(&err)["error"]["kind"], "non-finite-state");
    }

    #[test]
    fn decoupling_report_on_three_link() {
        let cfg = parse(
            "experiment = \"decoupling\"\n[model]\nname = \"three-link\"\nactuators = [1, 2]\n\
             [initial]\nq = [0.3, 0.9, -0.6]\n[decoupling]\ndepth = 2\n",
        );
        let dir = tempfile::tempdir().unwrap();
        let out = run(&cfg, Some(dir.path())).unwrap();
        assert_eq!(out.summary["verdict"], true);
        assert_eq!(out.summary["fields"], 2);
        let report: Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("decoupling.json")).unwrap())
                .unwrap();
        assert_eq!(report["rank"], 3);
        assert!(report["residuals"]
            .as_array()
            .unwrap()
            .iter()
            .all(|r| r.as_f64().unwrap() < 1e-8));
    }
}
