//! Command-line front end: parse scenario configs, run the engines, emit
//! tables as CSV or structured text (TOML).
//!
//! Exit codes: 0 success, 2 bad config or arguments, 3 invalid scenario,
//! 4 postselection/denominator floor or regime breakdown, 5 I/O failure.
//! Diagnostics go to stderr; data files carry only data plus `#` header
//! comments (tool version, scenario hash, grid resolution).

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use weakmeas::exact::{exact_conditional_average_with_floor, exact_joint};
use weakmeas::harness::{lambda_sweep, negativity_search, property_campaign};
use weakmeas::model::config::{self, ScenarioSource};
use weakmeas::model::presets::{preset, PresetParams};
use weakmeas::perturbation::{
    conditional_average_main_with_floor, modified_kubo_with_floor, ordinary_kubo,
    weak_value_trace_with_floor,
};
use weakmeas::tol::TOL;
use weakmeas::{Error as CoreError, Scenario};

#[derive(Parser)]
#[command(
    name = "weakmeas",
    version,
    about = "Weak-measurement simulation: exact evolution and rational-form estimators with postselection"
)]
struct Cli {
    /// Output file (stdout when omitted)
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    /// Output format: csv table or structured text (TOML)
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,

    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, ValueEnum)]
enum Format {
    Csv,
    Text,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Shipped preset: qubit_qubit, aav_gaussian, random_seeded, taylor_negativity
    #[arg(long)]
    preset: Option<String>,

    /// Scenario file (TOML, see docs/scenario_format.md)
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    #[command(flatten)]
    source: Source,

    /// Coupling strength override
    #[arg(long)]
    lambda: Option<f64>,

    /// Pre/postselection overlap angle (aav_gaussian only)
    #[arg(long)]
    epsilon: Option<f64>,

    /// Preset RNG seed (random_seeded only)
    #[arg(long)]
    seed: Option<u64>,

    /// Time-grid resolution override
    #[arg(long)]
    n_t: Option<usize>,

    /// Truncated pointer dimension (aav_gaussian only)
    #[arg(long)]
    detector_dim: Option<usize>,

    /// Coupling pulse width in grid samples (aav_gaussian only)
    #[arg(long)]
    boxcar_width: Option<usize>,
}

#[derive(Args)]
struct OutcomeArgs {
    /// Postselection outcome label (default: first system outcome)
    #[arg(long)]
    f_label: Option<String>,

    /// Postselection/denominator floor override
    #[arg(long, default_value_t = TOL.denominator_floor)]
    floor: f64,
}

#[derive(Copy, Clone, ValueEnum)]
enum ExactTable {
    /// One row per system outcome: P(f) and the conditional readout mean
    Conditional,
    /// One row per (detector, system) outcome pair
    Joint,
}

#[derive(Subcommand)]
enum Command {
    /// Check every scenario invariant and report findings
    Validate {
        #[command(flatten)]
        scenario: ScenarioArgs,
    },
    /// Exact joint distribution and conditional averages
    Exact {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        outcome: OutcomeArgs,
        #[arg(long, value_enum, default_value_t = ExactTable::Conditional)]
        table: ExactTable,
    },
    /// Time-dependent weak values A_w(t) (or B_w(t,t') with --bw)
    Weakvalues {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        outcome: OutcomeArgs,
        /// Emit the second-order kernel B_w(t,t') instead of A_w(t)
        #[arg(long)]
        bw: bool,
    },
    /// Conditional average: exact vs main formula vs Kubo estimates
    Eq3 {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        outcome: OutcomeArgs,
    },
    /// Modified and ordinary linear-response estimates
    Kubo {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        outcome: OutcomeArgs,
    },
    /// Estimator comparison across coupling strengths with slope fits
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        outcome: OutcomeArgs,
        /// Comma-separated coupling strengths, e.g. 0.16,0.08,0.04,0.02
        #[arg(long, value_delimiter = ',', required = true)]
        lambdas: Vec<f64>,
    },
    /// Search for a scenario where the Taylor truncation goes negative
    SearchNegativity {
        /// Master search seed
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        trials: u32,
    },
    /// Run the invariant suite over seeded random scenarios
    Campaign {
        /// Master campaign seed
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 50)]
        scenarios: u32,
    },
}

enum CliError {
    Core(CoreError),
    Io(std::io::Error),
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        Self::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Core(e) => match e {
                CoreError::InvalidScenario(_) => 3,
                CoreError::PostselectionFloor { .. }
                | CoreError::DenominatorFloor { .. }
                | CoreError::RegimeBreakdown { .. }
                | CoreError::ZeroTraceEffect(_) => 4,
                _ => 2,
            },
            Self::Io(_) => 5,
        }
    }

    fn message(&self) -> String {
        match self {
            Self::Core(e) => e.to_string(),
            Self::Io(e) => format!("i/o error: {e}"),
        }
    }
}

impl ScenarioArgs {
    fn params(&self) -> PresetParams {
        PresetParams {
            lambda: self.lambda,
            epsilon: self.epsilon,
            seed: self.seed,
            n_t: self.n_t,
            detector_dim: self.detector_dim,
            boxcar_width: self.boxcar_width,
        }
    }

    fn build(&self) -> Result<Scenario, CliError> {
        if let Some(name) = &self.source.preset {
            return Ok(preset(name, &self.params())?);
        }
        let path = self.source.config.as_ref().expect("clap enforces one source");
        let text = std::fs::read_to_string(path)?;
        match config::parse(&text)? {
            ScenarioSource::Preset { name, params } => {
                // command-line overrides win over file-level ones
                let flags = self.params();
                let merged = PresetParams {
                    lambda: flags.lambda.or(params.lambda),
                    epsilon: flags.epsilon.or(params.epsilon),
                    seed: flags.seed.or(params.seed),
                    n_t: flags.n_t.or(params.n_t),
                    detector_dim: flags.detector_dim.or(params.detector_dim),
                    boxcar_width: flags.boxcar_width.or(params.boxcar_width),
                };
                Ok(preset(&name, &merged)?)
            }
            ScenarioSource::Explicit(mut s) => {
                for (name, set) in [
                    ("epsilon", self.epsilon.is_some()),
                    ("seed", self.seed.is_some()),
                    ("detector-dim", self.detector_dim.is_some()),
                    ("boxcar-width", self.boxcar_width.is_some()),
                ] {
                    if set {
                        return Err(CoreError::InvalidParam(format!(
                            "--{name} applies to presets, not explicit scenario files"
                        ))
                        .into());
                    }
                }
                if let Some(lambda) = self.lambda {
                    s = s.with_lambda(lambda);
                }
                if let Some(n_t) = self.n_t {
                    s = s.with_n_t(n_t);
                }
                Ok(s)
            }
        }
    }
}

impl OutcomeArgs {
    fn label(&self, s: &Scenario) -> String {
        self.f_label
            .clone()
            .unwrap_or_else(|| s.sys_povm.outcomes()[0].label.clone())
    }
}

/// 17 significant digits: lossless for f64.
fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn header(command: &str, scenario: Option<&Scenario>, extra: &[(&str, String)]) -> String {
    let mut line = format!("# weakmeas {}\n# command={command}", env!("CARGO_PKG_VERSION"));
    if let Some(s) = scenario {
        line.push_str(&format!(" scenario_hash={} n_t={}", config::digest(s), s.n_t));
    }
    for (k, v) in extra {
        line.push_str(&format!(" {k}={v}"));
    }
    line.push('\n');
    line
}

fn emit(cli: &Cli, content: &str) -> Result<(), CliError> {
    match &cli.output {
        Some(path) => std::fs::write(path, content)?,
        None => std::io::stdout().write_all(content.as_bytes())?,
    }
    Ok(())
}

fn to_text<T: Serialize>(value: &T) -> String {
    toml::to_string(value).expect("result serialization cannot fail")
}

#[derive(Serialize)]
struct ValidateOut {
    valid: bool,
    findings: Vec<FindingOut>,
}

#[derive(Serialize)]
struct FindingOut {
    code: String,
    message: String,
}

#[derive(Serialize)]
struct ConditionalRow {
    f_label: String,
    p_f: f64,
    mean_exact: Option<f64>,
    note: String,
}

#[derive(Serialize)]
struct JointRow {
    det_label: String,
    sys_label: String,
    p: f64,
}

#[derive(Serialize)]
struct Eq3Out {
    f_label: String,
    lambda: f64,
    exact: f64,
    eq3: f64,
    kubo_modified: f64,
    kubo_ordinary: f64,
    nonperturbative: bool,
}

#[derive(Serialize)]
struct KuboOut {
    f_label: String,
    lambda: f64,
    kubo_modified: f64,
    kubo_ordinary: f64,
    max_im_a_w: f64,
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    match &cli.command {
        Command::Validate { scenario } => {
            let s = scenario.build()?;
            let report = s.validate();
            let out = ValidateOut {
                valid: report.is_valid(),
                findings: report
                    .findings()
                    .iter()
                    .map(|f| FindingOut {
                        code: f.code.clone(),
                        message: f.message.clone(),
                    })
                    .collect(),
            };
            let body = match cli.format {
                Format::Csv => {
                    let mut b = String::from("code,message\n");
                    for f in &out.findings {
                        b.push_str(&format!(
                            "{},{}\n",
                            csv_field(&f.code),
                            csv_field(&f.message)
                        ));
                    }
                    b
                }
                Format::Text => to_text(&out),
            };
            emit(cli, &format!("{}{body}", header("validate", Some(&s), &[])))?;
            if !out.valid {
                eprintln!("scenario invalid: {} finding(s)", out.findings.len());
                return Ok(3);
            }
            Ok(0)
        }

        Command::Exact {
            scenario,
            outcome,
            table,
        } => {
            let s = scenario.build()?;
            let joint = exact_joint(&s)?;
            let body = match table {
                ExactTable::Joint => {
                    let mut rows = Vec::new();
                    for k in 0..joint.n_det() {
                        for j in 0..joint.n_sys() {
                            rows.push(JointRow {
                                det_label: joint.det_labels()[k].clone(),
                                sys_label: joint.sys_labels()[j].clone(),
                                p: joint.prob(k, j),
                            });
                        }
                    }
                    match cli.format {
                        Format::Csv => {
                            let mut b = String::from("det_label,sys_label,p\n");
                            for r in &rows {
                                b.push_str(&format!(
                                    "{},{},{}\n",
                                    csv_field(&r.det_label),
                                    csv_field(&r.sys_label),
                                    fmt(r.p)
                                ));
                            }
                            b
                        }
                        Format::Text => {
                            #[derive(Serialize)]
                            struct JointOut {
                                rows: Vec<JointRow>,
                            }
                            to_text(&JointOut { rows })
                        }
                    }
                }
                ExactTable::Conditional => {
                    let mut rows = Vec::new();
                    for (j, label) in joint.sys_labels().iter().enumerate() {
                        let p_f = joint.sys_marginal(j);
                        let (mean, note) = match joint.conditional_mean(j, outcome.floor) {
                            Ok(m) => (Some(m), String::new()),
                            Err(e) => (None, e.to_string()),
                        };
                        rows.push(ConditionalRow {
                            f_label: label.clone(),
                            p_f,
                            mean_exact: mean,
                            note,
                        });
                    }
                    match cli.format {
                        Format::Csv => {
                            let mut b = String::from("f_label,p_f,mean_exact,note\n");
                            for r in &rows {
                                b.push_str(&format!(
                                    "{},{},{},{}\n",
                                    csv_field(&r.f_label),
                                    fmt(r.p_f),
                                    fmt_opt(r.mean_exact),
                                    csv_field(&r.note),
                                ));
                            }
                            b
                        }
                        Format::Text => {
                            #[derive(Serialize)]
                            struct CondOut {
                                rows: Vec<ConditionalRow>,
                            }
                            to_text(&CondOut { rows })
                        }
                    }
                }
            };
            emit(cli, &format!("{}{body}", header("exact", Some(&s), &[])))?;
            Ok(0)
        }

        Command::Weakvalues {
            scenario,
            outcome,
            bw,
        } => {
            let s = scenario.build()?;
            let label = outcome.label(&s);
            let wvt = weak_value_trace_with_floor(&s, &label, outcome.floor)?;
            let grid = s.grid();
            let extra = [("f_label", label.clone()), ("denom", fmt(wvt.denom()))];
            // rows only on the coupling support; A_w and B_w vanish elsewhere
            let body = if *bw {
                let mut b = String::from("k,l,t_k,t_l,re_b_w,im_b_w\n");
                for &k in wvt.support() {
                    for &l in wvt.support() {
                        let v = wvt.b_w(k, l);
                        b.push_str(&format!(
                            "{k},{l},{},{},{},{}\n",
                            fmt(grid.midpoints[k]),
                            fmt(grid.midpoints[l]),
                            fmt(v.re),
                            fmt(v.im)
                        ));
                    }
                }
                b
            } else {
                let mut b = String::from("k,t,g,re_a_w,im_a_w\n");
                for &k in wvt.support() {
                    let v = wvt.a_w(k);
                    b.push_str(&format!(
                        "{k},{},{},{},{}\n",
                        fmt(grid.midpoints[k]),
                        fmt(grid.g[k]),
                        fmt(v.re),
                        fmt(v.im)
                    ));
                }
                b
            };
            emit(
                cli,
                &format!("{}{body}", header("weakvalues", Some(&s), &extra)),
            )?;
            Ok(0)
        }

        Command::Eq3 { scenario, outcome } => {
            let s = scenario.build()?;
            let label = outcome.label(&s);
            let exact = exact_conditional_average_with_floor(&s, &label, outcome.floor)?;
            let est = conditional_average_main_with_floor(&s, &label, outcome.floor)?;
            if est.nonperturbative {
                eprintln!(
                    "warning: second-order terms are large; the expansion is outside its regime"
                );
            }
            let out = Eq3Out {
                f_label: label.clone(),
                lambda: s.lambda(),
                exact,
                eq3: est.value,
                kubo_modified: modified_kubo_with_floor(&s, &label, outcome.floor)?,
                kubo_ordinary: ordinary_kubo(&s)?,
                nonperturbative: est.nonperturbative,
            };
            let body = match cli.format {
                Format::Csv => format!(
                    "f_label,lambda,exact,eq3,kubo_modified,kubo_ordinary,nonperturbative\n{},{},{},{},{},{},{}\n",
                    csv_field(&out.f_label),
                    fmt(out.lambda),
                    fmt(out.exact),
                    fmt(out.eq3),
                    fmt(out.kubo_modified),
                    fmt(out.kubo_ordinary),
                    out.nonperturbative
                ),
                Format::Text => to_text(&out),
            };
            emit(cli, &format!("{}{body}", header("eq3", Some(&s), &[])))?;
            Ok(0)
        }

        Command::Kubo { scenario, outcome } => {
            let s = scenario.build()?;
            let label = outcome.label(&s);
            let wvt = weak_value_trace_with_floor(&s, &label, outcome.floor)?;
            let out = KuboOut {
                f_label: label.clone(),
                lambda: s.lambda(),
                kubo_modified: modified_kubo_with_floor(&s, &label, outcome.floor)?,
                kubo_ordinary: ordinary_kubo(&s)?,
                max_im_a_w: wvt.max_im_a_w(),
            };
            let body = match cli.format {
                Format::Csv => format!(
                    "f_label,lambda,kubo_modified,kubo_ordinary,max_im_a_w\n{},{},{},{},{}\n",
                    csv_field(&out.f_label),
                    fmt(out.lambda),
                    fmt(out.kubo_modified),
                    fmt(out.kubo_ordinary),
                    fmt(out.max_im_a_w)
                ),
                Format::Text => to_text(&out),
            };
            emit(cli, &format!("{}{body}", header("kubo", Some(&s), &[])))?;
            Ok(0)
        }

        Command::Sweep {
            scenario,
            outcome,
            lambdas,
        } => {
            let s = scenario.build()?;
            let label = outcome.label(&s);
            let sweep = lambda_sweep(&s, &label, lambdas)?;
            for row in &sweep.rows {
                if row.nonperturbative {
                    eprintln!("warning: lambda {} flagged nonperturbative", row.lambda);
                }
                if !row.note.is_empty() {
                    eprintln!("warning: lambda {}: {}", row.lambda, row.note);
                }
            }
            let body = match cli.format {
                Format::Csv => sweep.to_csv(),
                Format::Text => to_text(&sweep),
            };
            emit(cli, &format!("{}{body}", header("sweep", Some(&s), &[])))?;
            Ok(0)
        }

        Command::SearchNegativity { seed, trials } => {
            let finding = negativity_search(*seed, *trials)?;
            #[derive(Serialize)]
            struct SearchOut {
                found: bool,
                seed: u64,
                trials: u32,
                #[serde(skip_serializing_if = "Option::is_none")]
                finding: Option<weakmeas::harness::NegativityFinding>,
            }
            let out = SearchOut {
                found: finding.is_some(),
                seed: *seed,
                trials: *trials,
                finding,
            };
            let body = match cli.format {
                Format::Csv => {
                    let mut b = String::from(
                        "found,trial,scenario_seed,lambda,min_taylor_entry,min_rational_entry\n",
                    );
                    match &out.finding {
                        Some(f) => b.push_str(&format!(
                            "true,{},{},{},{},{}\n",
                            f.trial,
                            f.scenario_seed,
                            fmt(f.lambda),
                            fmt(f.min_taylor_entry),
                            fmt(f.min_rational_entry)
                        )),
                        None => b.push_str("false,,,,,\n"),
                    }
                    b
                }
                Format::Text => to_text(&out),
            };
            let extra = [
                ("seed", out.seed.to_string()),
                ("trials", out.trials.to_string()),
            ];
            emit(
                cli,
                &format!("{}{body}", header("search-negativity", None, &extra)),
            )?;
            Ok(0)
        }

        Command::Campaign { seed, scenarios } => {
            let report = property_campaign(*seed, *scenarios)?;
            let failures = report.total_failures();
            if failures > 0 {
                eprintln!(
                    "campaign found {failures} failing check(s); failing seeds: {:?}",
                    report.failing_seeds()
                );
            }
            let body = match cli.format {
                Format::Csv => report.to_csv(),
                Format::Text => to_text(&report),
            };
            let extra = [
                ("seed", seed.to_string()),
                ("scenarios", scenarios.to_string()),
            ];
            emit(cli, &format!("{}{body}", header("campaign", None, &extra)))?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
