//! Run configuration, the run driver, checkpoints and output writers.
//!
//! Output directory layout:
//!
//! ```text
//! diagnostics.csv      one DiagnosticsRecord per output step
//! monitor.csv          F against its lower bound (blow-up runs only)
//! ledger.json          blow-up constants and conditions (blow-up runs only)
//! snapshots/*.bin      field snapshots at the snapshot cadence
//! snapshots/*.csv      primitive fields of the same snapshots (small grids)
//! checkpoint.bin       final state, or the last good state after an abort
//! summary.json         drifts, audit, ledger verdicts, halt reason
//! ```

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::diagnostics::{BlowupLedger, DiagnosticsOptions, DiagnosticsRecord, Halt, MonitorPoint, Recorder};
use crate::eigen::{kawashima_check, KawashimaOptions, SurveyOptions};
use crate::entropy::EntropyAudit;
use crate::error::{Error, Result};
use crate::field::{Field, Totals};
use crate::grid::{Boundary, Grid, GridSpec};
use crate::scenarios::{
    blowup_initial_data, relaxation_sweep, small_data, sweep_base_field, well_prepared_data, BlowupProfileSpec,
    SweepTable, SWEEP_TAUS,
};
use crate::solver::{Closure, Solver, SolverConfig};
use crate::thermo::ModelParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Equilibrium,
    /// Compact bumps of size `amplitude`, plus optional seeded cell noise.
    SmallData {
        amplitude: f64,
        #[serde(default)]
        noise: f64,
    },
    Blowup(BlowupProfileSpec),
    /// Periodic 1D sine data with `q = −κ∇θ`, `S2 = λ div u`.
    WellPrepared { amplitude: f64 },
    /// Relaxation-limit sweep over `taus` from well-prepared sine data.
    Sweep(SweepSpec),
}

impl Default for Scenario {
    fn default() -> Self {
        Self::Equilibrium
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub amplitude: f64,
    pub taus: Vec<f64>,
    /// Common end time; a quarter of the crossing time when absent.
    pub t_end: Option<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            amplitude: 0.1,
            taus: SWEEP_TAUS.to_vec(),
            t_end: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsConfig {
    /// Steps between snapshot files; 0 writes none.
    pub snapshot_every: usize,
    pub sobolev: bool,
    pub theta_residual: bool,
    pub entropy: bool,
    pub support_tol: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        let o = DiagnosticsOptions::default();
        Self {
            snapshot_every: 0,
            sobolev: o.sobolev,
            theta_residual: o.theta_residual,
            entropy: o.entropy,
            support_tol: o.support_tol,
        }
    }
}

impl DiagnosticsConfig {
    pub fn options(&self) -> DiagnosticsOptions {
        DiagnosticsOptions {
            sobolev: self.sobolev,
            theta_residual: self.theta_residual,
            entropy: self.entropy,
            support_tol: self.support_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelParams,
    pub grid: GridSpec,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_closure")]
    pub closure: Closure,
    #[serde(default)]
    pub scenario: Scenario,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub hypercheck: SurveyOptions,
    #[serde(default)]
    pub kawashima: KawashimaOptions,
    /// Used when the command line gives no output directory.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn default_closure() -> Closure {
    Closure::Relaxed
}

/// A parsed configuration and the non-fatal findings about it.
#[derive(Debug, Clone)]
pub struct ParsedConfig {
    pub config: RunConfig,
    pub warnings: Vec<String>,
}

/// Parses and validates a JSON run configuration. Every unknown key,
/// type error and constraint violation is collected into one
/// [`Error::Config`].
pub fn parse_config(text: &str) -> Result<ParsedConfig> {
    let value: Value = serde_json::from_str(text)?;
    let mut errors = Vec::new();
    let parsed: std::result::Result<RunConfig, _> =
        serde_ignored::deserialize(&value, |path| errors.push(format!("{path}: unknown key")));
    let config = match parsed {
        Ok(c) => c,
        Err(e) => {
            errors.push(e.to_string());
            return Err(Error::Config(errors));
        }
    };
    let warnings = validate(&config, &mut errors);
    if errors.is_empty() {
        Ok(ParsedConfig { config, warnings })
    } else {
        Err(Error::Config(errors))
    }
}

/// Parses a bare model document with the same unknown-key and constraint
/// reporting as [`parse_config`].
pub fn parse_model(text: &str) -> Result<ModelParams> {
    let value: Value = serde_json::from_str(text)?;
    let mut errors = Vec::new();
    let parsed: std::result::Result<ModelParams, _> =
        serde_ignored::deserialize(&value, |path| errors.push(format!("model.{path}: unknown key")));
    match parsed {
        Ok(m) => {
            errors.extend(m.violations().into_iter().map(|v| format!("model.{v}")));
            if errors.is_empty() {
                Ok(m)
            } else {
                Err(Error::Config(errors))
            }
        }
        Err(e) => {
            errors.push(format!("model: {e}"));
            Err(Error::Config(errors))
        }
    }
}

pub fn load_config(path: &Path) -> Result<ParsedConfig> {
    parse_config(&fs::read_to_string(path)?)
}

fn validate(c: &RunConfig, errors: &mut Vec<String>) -> Vec<String> {
    let mut warnings = Vec::new();
    errors.extend(c.model.violations().into_iter().map(|v| format!("model.{v}")));
    errors.extend(c.solver.violations());
    if let Err(e) = Grid::from_spec(&c.grid, c.model.dim) {
        match e {
            Error::Config(v) => errors.extend(v.into_iter().map(|s| format!("grid: {s}"))),
            other => errors.push(format!("grid: {other}")),
        }
    }
    if !(c.diagnostics.support_tol >= 0.0) {
        errors.push("diagnostics.support_tol: must be non-negative".into());
    }
    match &c.scenario {
        Scenario::Equilibrium => {}
        Scenario::SmallData { amplitude, noise } => {
            if !(amplitude.is_finite() && noise.is_finite() && *noise >= 0.0) {
                errors.push("scenario.small_data: amplitude and noise must be finite, noise >= 0".into());
            }
        }
        Scenario::Blowup(s) => {
            errors.extend(s.violations().into_iter().map(|v| format!("scenario.blowup.{v}")));
            if c.model.dim < 2 {
                errors.push("scenario.blowup: needs model.dim 2 or 3".into());
            }
            if c.grid.boundary != Boundary::Constant {
                errors.push("scenario.blowup: grid.boundary must be constant".into());
            }
            if c.model.gamma() >= 5.0 / 3.0 {
                warnings.push(format!(
                    "gamma = {} >= 5/3: the blow-up ledger is inapplicable",
                    c.model.gamma()
                ));
            }
        }
        Scenario::WellPrepared { amplitude } | Scenario::Sweep(SweepSpec { amplitude, .. }) => {
            if c.model.dim != 1 || c.grid.boundary != Boundary::Periodic {
                errors.push("scenario: well-prepared and sweep data need a periodic 1D grid".into());
            }
            if !amplitude.is_finite() {
                errors.push("scenario: amplitude must be finite".into());
            }
            if let Scenario::Sweep(s) = &c.scenario {
                if s.taus.is_empty() || s.taus.iter().any(|t| !(*t > 0.0)) {
                    errors.push("scenario.sweep.taus: must be a non-empty list of positive values".into());
                }
            }
        }
    }
    warnings
}

impl RunConfig {
    pub fn grid(&self) -> Result<Grid> {
        Grid::from_spec(&self.grid, self.model.dim)
    }

    pub fn solver(&self) -> Result<Solver> {
        Solver::with_closure(self.model, self.solver.clone(), self.closure)
    }

    /// Thermodynamic constants matching the closure.
    pub fn thermo(&self) -> ModelParams {
        match self.closure {
            Closure::Relaxed => self.model,
            Closure::Classical => self.model.classical(),
        }
    }

    /// Initial field and, for blow-up data, its ledger.
    pub fn initial_field(&self) -> Result<(Field, Option<BlowupLedger>)> {
        let grid = self.grid()?;
        let p = self.thermo();
        match &self.scenario {
            Scenario::Equilibrium => Ok((Field::equilibrium(grid, &p)?, None)),
            Scenario::SmallData { amplitude, noise } => {
                let mut f = small_data(&grid, &p, *amplitude)?;
                if *noise > 0.0 {
                    add_noise(&mut f, &p, *noise, self.seed)?;
                }
                Ok((f, None))
            }
            Scenario::Blowup(s) => {
                let d = blowup_initial_data(s, &grid, &p, self.solver.end_time)?;
                Ok((d.field, Some(d.ledger)))
            }
            Scenario::WellPrepared { amplitude } | Scenario::Sweep(SweepSpec { amplitude, .. }) => {
                let base = sweep_base_field(&grid, &p, *amplitude)?;
                Ok((well_prepared_data(&base, &p)?, None))
            }
        }
    }
}

/// Seeded relative perturbation of density and temperature in every cell.
fn add_noise(f: &mut Field, p: &ModelParams, noise: f64, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..f.grid.len() {
        let mut w = f.primitive(i, p)?;
        w.rho *= 1.0 + noise * rng.random_range(-1.0..1.0);
        w.theta *= 1.0 + noise * rng.random_range(-1.0..1.0);
        f.set_conserved(i, &crate::thermo::primitive_to_conserved(&w, p)?);
    }
    Ok(())
}

const MAGIC: &[u8; 8] = b"HYPNSFLD";
pub const FORMAT_VERSION: u32 = 1;

/// JSON header of checkpoint and snapshot files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldHeader {
    pub kind: String,
    pub version: u32,
    pub t: f64,
    pub step: usize,
    pub grid: GridSpec,
    pub dim: usize,
    pub nvar: usize,
    pub exterior: Vec<f64>,
    pub model: ModelParams,
    pub closure: Closure,
    pub config: Option<RunConfig>,
    pub ledger: Option<BlowupLedger>,
}

/// Writes `magic | version (u32 LE) | header length (u64 LE) | header JSON |
/// cell data (f64 LE, cell-major)`.
pub fn write_field(path: &Path, header: &FieldHeader, f: &Field) -> Result<()> {
    let json = serde_json::to_vec(header)?;
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        w.write_all(&(json.len() as u64).to_le_bytes())?;
        w.write_all(&json)?;
        for x in &f.data {
            w.write_all(&x.to_le_bytes())?;
        }
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_field(path: &Path) -> Result<(FieldHeader, Field)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a field file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..20 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: FieldHeader = serde_json::from_slice(body)?;
    let grid = Grid::from_spec(&header.grid, header.dim)?;
    let n = grid.len() * header.nvar;
    let raw = &bytes[20 + hlen..];
    if raw.len() != 8 * n || header.nvar != 2 * header.dim + 3 || header.exterior.len() != header.nvar {
        return Err(bad("data size does not match the header"));
    }
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let field = Field {
        grid,
        t: header.t,
        data,
        exterior: header.exterior.clone(),
    };
    Ok((header, field))
}

/// Grids up to this many cells also get CSV snapshots.
pub const SNAPSHOT_CSV_MAX_CELLS: usize = 4096;

/// Cell centres and primitive fields, one row per cell.
pub fn snapshot_csv(f: &Field, p: &ModelParams) -> Result<String> {
    let n = f.grid.dim;
    let axes = ["x", "y", "z"];
    let mut cols: Vec<String> = axes[..n].iter().map(|a| a.to_string()).collect();
    cols.push("rho".into());
    cols.extend(axes[..n].iter().map(|a| format!("u_{a}")));
    cols.push("theta".into());
    cols.extend(axes[..n].iter().map(|a| format!("q_{a}")));
    cols.push("S2".into());
    let mut s = cols.join(",");
    s.push('\n');
    for (i, w) in f.primitives(p)?.iter().enumerate() {
        let x = f.grid.center(i);
        let mut row: Vec<f64> = x[..n].to_vec();
        row.push(w.rho);
        row.extend_from_slice(&w.u[..n]);
        row.push(w.theta);
        row.extend_from_slice(&w.q[..n]);
        row.push(w.s2);
        let row: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    Ok(s)
}

fn write_snapshot(dir: &Path, step: usize, f: &Field, cfg: &RunConfig, ledger: Option<&BlowupLedger>) -> Result<()> {
    let stem = dir.join("snapshots").join(format!("snap_{step:08}"));
    write_field(&stem.with_extension("bin"), &header("snapshot", step, f, cfg, ledger), f)?;
    if f.grid.len() <= SNAPSHOT_CSV_MAX_CELLS {
        fs::write(stem.with_extension("csv"), snapshot_csv(f, &cfg.thermo())?)?;
    }
    Ok(())
}

/// CSV text with a header row; floats use the shortest round-trip form.
pub fn records_csv(records: &[DiagnosticsRecord], with_header: bool) -> String {
    let mut s = String::new();
    if with_header {
        s.push_str(&DiagnosticsRecord::COLUMNS.join(","));
        s.push('\n');
    }
    for r in records {
        let row: Vec<String> = r.values().iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

pub fn monitor_csv(points: &[MonitorPoint]) -> String {
    let mut s = String::from("t,F,bound,satisfied,a_priori_assumption,cauchy_schwarz,dissipation_used\n");
    for m in points {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            m.t, m.f, m.bound, m.satisfied as u8, m.a_priori_assumption as u8, m.cauchy_schwarz as u8, m.dissipation_used
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Drifts {
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
    pub max_relative: f64,
}

fn drifts(now: &Totals, start: &Totals) -> Drifts {
    Drifts {
        mass: now.mass - start.mass,
        momentum: std::array::from_fn(|k| now.momentum[k] - start.momentum[k]),
        energy: now.energy - start.energy,
        max_relative: now.max_relative_drift(start),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub max_abs_residual: f64,
    pub max_relative_residual: f64,
    pub max_increase: f64,
    pub nonincreasing_up_to_residual: bool,
}

impl From<&EntropyAudit> for AuditSummary {
    fn from(a: &EntropyAudit) -> Self {
        Self {
            max_abs_residual: a.max_abs_residual(),
            max_relative_residual: a.max_relative_residual(),
            max_increase: a.max_increase(),
            nonincreasing_up_to_residual: a.nonincreasing_up_to_residual(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonitorVerdict {
    /// F stayed within 5% of the bound or above it at every record.
    pub bound_held: bool,
    pub cauchy_schwarz_held: bool,
    pub first_violation_t: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    /// Stopped early by `--until`.
    Paused,
    /// Stopped by the smoothness monitor.
    Halted,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub status: RunStatus,
    pub error: Option<String>,
    pub steps: usize,
    pub t_start: f64,
    pub t_final: f64,
    pub drifts: Drifts,
    pub audit: Option<AuditSummary>,
    pub ledger: Option<BlowupLedger>,
    pub monitor: Option<MonitorVerdict>,
    pub halt: Option<Halt>,
    pub sigma_run_max: f64,
    pub max_grad_u_initial: f64,
    pub max_grad_u_final: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Stop after the first step reaching this time (steps are not
    /// shortened, so a resumed run repeats the uninterrupted step sequence).
    pub until: Option<f64>,
    pub resume: Option<PathBuf>,
    pub warnings: Vec<String>,
}

fn header(kind: &str, step: usize, f: &Field, cfg: &RunConfig, ledger: Option<&BlowupLedger>) -> FieldHeader {
    FieldHeader {
        kind: kind.into(),
        version: FORMAT_VERSION,
        t: f.t,
        step,
        grid: f.grid.spec(),
        dim: f.grid.dim,
        nvar: f.nvar(),
        exterior: f.exterior.clone(),
        model: cfg.model,
        closure: cfg.closure,
        config: Some(cfg.clone()),
        ledger: ledger.cloned(),
    }
}

/// Simulates `cfg` and writes all outputs below `opts.out`. An abort still
/// writes the summary and the last good checkpoint before returning the
/// error.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let out = &opts.out;
    fs::create_dir_all(out)?;
    if cfg.diagnostics.snapshot_every > 0 {
        fs::create_dir_all(out.join("snapshots"))?;
    }
    let (mut f, ledger, step0) = match &opts.resume {
        Some(path) => {
            let (h, f) = read_field(path)?;
            if h.kind != "checkpoint" {
                return Err(Error::Checkpoint(format!("{} is a {}", path.display(), h.kind)));
            }
            if h.grid != cfg.grid || h.model != cfg.model {
                return Err(Error::Checkpoint("grid or model differs from the configuration".into()));
            }
            (f, h.ledger, h.step)
        }
        None => {
            let (f, l) = cfg.initial_field()?;
            (f, l, 0)
        }
    };
    let resumed = opts.resume.is_some();
    if let Some(l) = &ledger {
        fs::write(out.join("ledger.json"), serde_json::to_string_pretty(l)?)?;
    }
    let solver = cfg.solver()?;
    let thermo = cfg.thermo();
    let mut rec = Recorder::new(&f, &thermo, cfg.diagnostics.options(), ledger.clone())?;
    let start_totals = f.totals();
    let t_start = f.t;
    let grad0 = rec.records[0].max_grad_u;
    let csv_path = out.join("diagnostics.csv");
    let mut csv = if resumed && csv_path.exists() {
        fs::OpenOptions::new().append(true).open(&csv_path)?
    } else {
        let mut h = fs::File::create(&csv_path)?;
        h.write_all(records_csv(&rec.records, true).as_bytes())?;
        h
    };
    let mut step = step0;
    let mut written = rec.records.len();
    let mut paused = false;
    let every = cfg.solver.output_every;
    let snap_every = cfg.diagnostics.snapshot_every;
    if snap_every > 0 && !resumed {
        write_snapshot(out, step, &f, cfg, ledger.as_ref())?;
    }
    let until = opts.until;
    let t_end = cfg.solver.end_time;
    let mut io_err: Option<Error> = None;
    let result = solver.advance(&mut f, t_end, |g, info| {
        step += 1;
        let prims = rec.observe_step(g, info.sigma)?;
        let last = g.t >= t_end;
        let stop = until.is_some_and(|u| g.t >= u) || rec.halt.is_some();
        if step % every == 0 || last || stop {
            rec.record(g, &prims, info.sigma);
            if let Err(e) = csv.write_all(records_csv(&rec.records[written..], false).as_bytes()) {
                io_err = Some(e.into());
                return Ok(false);
            }
            written = rec.records.len();
        }
        if snap_every > 0 && step % snap_every == 0 {
            if let Err(e) = write_snapshot(out, step, g, cfg, ledger.as_ref()) {
                io_err = Some(e);
                return Ok(false);
            }
        }
        if stop && rec.halt.is_none() && !last {
            paused = true;
        }
        Ok(!stop)
    });
    if let Some(e) = io_err {
        return Err(e);
    }
    let status = match (&result, &rec.halt) {
        (Err(_), _) => RunStatus::Aborted,
        (Ok(_), Some(_)) => RunStatus::Halted,
        (Ok(_), None) if paused => RunStatus::Paused,
        _ => RunStatus::Completed,
    };
    write_field(&out.join("checkpoint.bin"), &header("checkpoint", step, &f, cfg, ledger.as_ref()), &f)?;
    if !rec.monitor.is_empty() {
        fs::write(out.join("monitor.csv"), monitor_csv(&rec.monitor))?;
    }
    let monitor = ledger.as_ref().map(|_| {
        let first = rec.monitor.iter().find(|m| !m.satisfied).map(|m| m.t);
        MonitorVerdict {
            bound_held: first.is_none(),
            cauchy_schwarz_held: rec.monitor.iter().all(|m| m.cauchy_schwarz),
            first_violation_t: first,
        }
    });
    let summary = RunSummary {
        status,
        error: result.as_ref().err().map(|e| e.to_string()),
        steps: step - step0,
        t_start,
        t_final: f.t,
        drifts: drifts(&f.totals(), &start_totals),
        audit: rec.audit().map(AuditSummary::from),
        ledger: ledger.clone(),
        monitor,
        halt: rec.halt.clone(),
        sigma_run_max: rec.sigma_run_max,
        max_grad_u_initial: grad0,
        max_grad_u_final: rec.records.last().map_or(f64::NAN, |r| r.max_grad_u),
        warnings: opts.warnings.clone(),
    };
    fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    match result {
        Err(e) => Err(e),
        Ok(_) => Ok(summary),
    }
}

/// Runs the relaxation sweep of a `sweep` scenario and writes `sweep.csv`
/// and `sweep.json`.
pub fn run_sweep(cfg: &RunConfig, out: &Path) -> Result<SweepTable> {
    let Scenario::Sweep(spec) = &cfg.scenario else {
        return Err(Error::Config(vec!["scenario: the sweep command needs a sweep scenario".into()]));
    };
    fs::create_dir_all(out)?;
    let base = sweep_base_field(&cfg.grid()?, &cfg.model, spec.amplitude)?;
    let table = relaxation_sweep(&base, &cfg.model, &cfg.solver, &spec.taus, spec.t_end)?;
    fs::write(out.join("sweep.csv"), table.to_csv())?;
    fs::write(out.join("sweep.json"), serde_json::to_string_pretty(&table)?)?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypercheckReport {
    pub survey: crate::eigen::SurveyReport,
    pub kawashima: crate::eigen::CompensatorReport,
    pub passed: bool,
}

pub const EIGEN_TOL: f64 = 1e-8;

/// Hyperbolicity survey and Kawashima check for `model`; writes both
/// reports to `hypercheck.jsonl`, one JSON object per line.
pub fn run_hypercheck(
    model: &ModelParams,
    survey: &SurveyOptions,
    kawashima: &KawashimaOptions,
    out: &Path,
) -> Result<HypercheckReport> {
    let v = model.violations();
    if !v.is_empty() {
        return Err(Error::Config(v.into_iter().map(|s| format!("model.{s}")).collect()));
    }
    fs::create_dir_all(out)?;
    let survey = crate::eigen::hyperbolicity_survey(model, survey)?;
    let kawashima = kawashima_check(model, kawashima)?;
    let passed = survey.passed(EIGEN_TOL) && kawashima.success;
    let lines = format!(
        "{}\n{}\n",
        serde_json::to_string(&survey)?,
        serde_json::to_string(&kawashima)?
    );
    fs::write(out.join("hypercheck.jsonl"), lines)?;
    Ok(HypercheckReport {
        survey,
        kawashima,
        passed,
    })
}

/// Generates the blow-up data of the configuration and writes
/// `ledger.json` without running the solver.
pub fn run_ledger(cfg: &RunConfig, out: &Path) -> Result<BlowupLedger> {
    if !matches!(cfg.scenario, Scenario::Blowup(_)) {
        return Err(Error::Config(vec!["scenario: the ledger command needs a blowup scenario".into()]));
    }
    fs::create_dir_all(out)?;
    let (_, ledger) = cfg.initial_field()?;
    let ledger = ledger.expect("blow-up scenarios carry a ledger");
    fs::write(out.join("ledger.json"), serde_json::to_string_pretty(&ledger)?)?;
    Ok(ledger)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub snapshots: usize,
    pub t_first: f64,
    pub t_last: f64,
    pub audit: Option<AuditSummary>,
    pub drifts: Drifts,
}

/// Recomputes the diagnostics from the snapshot files of `dir` (sorted by
/// name) and writes `audit.csv` and `audit.json` to `out`. Integrals in
/// time use the snapshot spacing.
pub fn run_audit(dir: &Path, out: &Path) -> Result<AuditReport> {
    let snap_dir = if dir.join("snapshots").is_dir() {
        dir.join("snapshots")
    } else {
        dir.to_path_buf()
    };
    let mut files: Vec<PathBuf> = fs::read_dir(&snap_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    let Some(first) = files.first() else {
        return Err(Error::Checkpoint(format!("no snapshots in {}", snap_dir.display())));
    };
    let (h0, f0) = read_field(first)?;
    let thermo = match h0.closure {
        Closure::Relaxed => h0.model,
        Closure::Classical => h0.model.classical(),
    };
    let opts = h0
        .config
        .as_ref()
        .map_or_else(DiagnosticsOptions::default, |c| c.diagnostics.options());
    let mut rec = Recorder::new(&f0, &thermo, opts, h0.ledger.clone())?;
    let totals0 = f0.totals();
    let mut last = f0;
    for path in &files[1..] {
        let (_, f) = read_field(path)?;
        let prims = rec.observe_step(&f, f64::NAN)?;
        rec.record(&f, &prims, f64::NAN);
        last = f;
    }
    fs::create_dir_all(out)?;
    fs::write(out.join("audit.csv"), records_csv(&rec.records, true))?;
    let report = AuditReport {
        snapshots: files.len(),
        t_first: rec.records[0].t,
        t_last: last.t,
        audit: rec.audit().map(AuditSummary::from),
        drifts: drifts(&last.totals(), &totals0),
    };
    fs::write(out.join("audit.json"), serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "model": {"tau1": 1, "tau3": 1, "kappa": 1, "lambda": 1, "cv": 1, "r_gas": 1, "dim": 1},
        "grid": {"cells": [16], "lower": [0], "upper": [1]}
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = parse_config(MINIMAL).unwrap().config;
        assert_eq!(c.solver, SolverConfig::default());
        assert_eq!(c.scenario, Scenario::Equilibrium);
        assert_eq!(c.closure, Closure::Relaxed);
        assert_eq!(c.model.mu, 0.0);
        assert_eq!(c.grid.boundary, Boundary::Periodic);
    }

    #[test]
    fn all_problems_are_reported() {
        let text = MINIMAL
            .replace("\"tau1\": 1", "\"tau1\": -1, \"tau_2\": 3")
            .replace("\"upper\": [1]", "\"upper\": [1], \"bounds\": 2");
        let Err(Error::Config(v)) = parse_config(&text) else {
            panic!("expected a config error")
        };
        assert!(v.iter().any(|s| s.contains("model.tau_2")), "{v:?}");
        assert!(v.iter().any(|s| s.contains("grid.bounds")), "{v:?}");
        assert!(v.iter().any(|s| s.contains("tau1")), "{v:?}");
    }

    #[test]
    fn stiff_gas_blowup_warns() {
        let text = r#"{
            "model": {"tau1": 1, "tau3": 1, "kappa": 1, "lambda": 1, "cv": 1, "r_gas": 1, "dim": 2},
            "grid": {"cells": [160, 160], "lower": [-10, -10], "upper": [10, 10], "boundary": "constant"},
            "solver": {"end_time": 0.1},
            "scenario": {"blowup": {"L": 0.5}}
        }"#;
        let p = parse_config(text).unwrap();
        assert_eq!(p.warnings.len(), 1);
        let (_, l) = p.config.initial_field().unwrap();
        assert!(!l.unwrap().applicable);
    }

    #[test]
    fn bare_model_document() {
        let m = parse_model(r#"{"tau1": 1, "tau3": 1, "kappa": 1, "lambda": 1, "cv": 1, "r_gas": 1, "dim": 2}"#).unwrap();
        assert_eq!(m.dim, 2);
        let Err(Error::Config(v)) = parse_model(r#"{"tau1": 0, "tau3": 1, "kappa": 1, "lambda": 1, "cv": 1, "r_gas": 1, "dim": 2, "mu2": 1}"#)
        else {
            panic!("expected a config error")
        };
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn field_file_round_trip() {
        let c = parse_config(MINIMAL).unwrap().config;
        let p = c.model;
        let g = c.grid().unwrap();
        let mut f = small_data(&g, &p, 0.01).unwrap();
        f.t = 0.1 + 0.2;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        write_field(&path, &header("checkpoint", 7, &f, &c, None), &f).unwrap();
        let (h, back) = read_field(&path).unwrap();
        assert_eq!(back, f);
        assert_eq!(h.step, 7);
        assert_eq!(h.config.unwrap(), c);
        fs::write(&path, b"garbage").unwrap();
        assert!(matches!(read_field(&path), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn equilibrium_run_has_zero_drift() {
        let mut c = parse_config(MINIMAL).unwrap().config;
        c.solver.end_time = 0.05;
        let dir = tempfile::tempdir().unwrap();
        let s = run(
            &c,
            &RunOptions {
                out: dir.path().to_path_buf(),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(s.status, RunStatus::Completed);
        assert_eq!(s.drifts.max_relative, 0.0);
        let csv = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
        assert!(csv.starts_with("t,mass,mom_x,mom_y,mom_z,etot,G,F,bound,"));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let mut c = parse_config(MINIMAL).unwrap().config;
        c.scenario = Scenario::SmallData {
            amplitude: 0.01,
            noise: 0.0,
        };
        c.solver.end_time = 0.2;
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let full = run(
            &c,
            &RunOptions {
                out: a.path().into(),
                ..Default::default()
            },
        )
        .unwrap();
        let part = run(
            &c,
            &RunOptions {
                out: b.path().into(),
                until: Some(0.07),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(part.status, RunStatus::Paused);
        let rest = run(
            &c,
            &RunOptions {
                out: b.path().into(),
                resume: Some(b.path().join("checkpoint.bin")),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(part.steps + rest.steps, full.steps);
        let (_, fa) = read_field(&a.path().join("checkpoint.bin")).unwrap();
        let (_, fb) = read_field(&b.path().join("checkpoint.bin")).unwrap();
        assert_eq!(fa, fb);
    }
}
