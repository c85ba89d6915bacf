use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use selcert::calibration::{apply_temperature, ece, fit_temperature, DEFAULT_BINS, DEFAULT_T_RANGE, DEFAULT_T_TOL};
use selcert::datagen::{save, DataFormat, SyntheticSpec};
use selcert::selection::sweep;
use selcert::{risk_profile, stratified_split, RiskBudget, ThresholdGrid};

use selcert_harness::config::{DataSource, ExperimentConfig, MethodSpec};
use selcert_harness::experiments::{
    run_ablation, run_conformal_comparison, run_per_intent, run_progressive_trust, run_size_curve, write_results_csv,
    write_table, SizeVariant,
};
use selcert_harness::validity::run_validity_suite;
use selcert_harness::{HarnessError, Manifest, Result};

/// Risk-controlled selective prediction: certified thresholds, experiment
/// tables and a Monte Carlo validity suite.
#[derive(Parser, Debug)]
#[command(name = "selcert", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Certify a threshold per (method, alpha, delta) and write the certificates.
    Sweep(Common),
    /// Full (method, alpha, delta) ablation table.
    Ablate(Common),
    /// Coverage against calibration size over resampled subsets.
    Progressive {
        #[command(flatten)]
        common: Common,
        /// Calibration subset sizes.
        #[arg(long, value_delimiter = ',', default_values_t = [50usize, 100, 150, 200, 300, 400, 549])]
        sizes: Vec<usize>,
    },
    /// Correction term as a function of n (no data needed).
    SizeCurve {
        #[command(flatten)]
        common: Common,
        /// Risk level whose first crossing is reported.
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, default_value_t = 10)]
        n_min: usize,
        #[arg(long, default_value_t = 2000)]
        n_max: usize,
    },
    /// Split conformal sets next to the selective sweep.
    Conformal(Common),
    /// Fit temperature scaling and report ECE before and after.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
    /// One certificate per gold class.
    PerIntent(Common),
    /// Generate a synthetic prediction log.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Override the record count of the preset or spec.
        #[arg(long)]
        n: Option<usize>,
        /// Output file; format from the extension (.csv or .jsonl).
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Emit the per-threshold risk profile used as a transfer source.
    Profile {
        #[command(flatten)]
        common: Common,
        /// Profile the whole dataset instead of the calibration split.
        #[arg(long)]
        full: bool,
    },
    /// Run the Monte Carlo validity suite; exits with 2 on any failure.
    Validate {
        #[arg(long, default_value_t = 5000)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

/// Flags mirroring `ExperimentConfig`; each overrides the config file.
#[derive(Args, Debug)]
struct Common {
    /// TOML or JSON experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Prediction log (.jsonl or .csv).
    #[arg(long, conflicts_with = "preset")]
    data: Option<PathBuf>,
    #[arg(long)]
    format: Option<DataFormat>,
    /// clinc-like, banking77-like, massive-like, nyaya-like or accurate.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    deltas: Option<Vec<f64>>,
    /// Methods as family[:param], e.g. ltt_hoeffding,dro_union:0.05.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<MethodSpec>>,
    /// Uniform grid 0, 1/steps, ..., (steps-1)/steps.
    #[arg(long)]
    grid_steps: Option<usize>,
    #[arg(long)]
    split_frac: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// RiskProfile JSON for the transfer families.
    #[arg(long)]
    source_profile: Option<PathBuf>,
    /// Sweep temperature-scaled scores instead of raw ones.
    #[arg(long)]
    calibrated_scores: bool,
    #[arg(long)]
    min_class_size: Option<usize>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = &self.data {
            cfg.data = DataSource::file(p);
        }
        if let Some(name) = &self.preset {
            cfg.data = DataSource::preset(name);
        }
        if let Some(f) = self.format {
            cfg.data.format = Some(f);
        }
        if let Some(v) = &self.alphas {
            cfg.alphas = v.clone();
        }
        if let Some(v) = &self.deltas {
            cfg.deltas = v.clone();
        }
        if let Some(v) = &self.methods {
            cfg.methods = v.clone();
        }
        if let Some(steps) = self.grid_steps {
            cfg.grid = ThresholdGrid::uniform(steps)?;
        }
        if let Some(v) = self.split_frac {
            cfg.split_frac = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(p) = &self.source_profile {
            cfg.source_profile = Some(p.clone());
        }
        cfg.calibrated_scores |= self.calibrated_scores;
        if let Some(v) = self.min_class_size {
            cfg.min_class_size = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(dir: &Path) -> Result<&Path> {
    fs::create_dir_all(dir)?;
    Ok(dir)
}

fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn finish<C: Serialize>(command: &str, seed: u64, cfg: &C, dir: &Path, outputs: &[&str]) -> Result<()> {
    let mut m = Manifest::new(command, seed, cfg);
    m.outputs = outputs.iter().map(|s| s.to_string()).collect();
    m.write(dir)?;
    for o in outputs {
        println!("wrote {}", dir.join(o).display());
    }
    Ok(())
}

#[derive(Serialize)]
struct CalibrationSummary {
    temperature: f64,
    cal_ece_before: f64,
    cal_ece_after: f64,
    test_ece_before: f64,
    test_ece_after: f64,
    bins: usize,
}

#[derive(Serialize)]
struct SizeCurveArgs<'a> {
    deltas: &'a [f64],
    alpha: f64,
    n_min: usize,
    n_max: usize,
}

#[derive(Serialize)]
struct ValidateArgs {
    trials: usize,
    seed: u64,
}

/// Returns whether the run succeeded in the validity sense.
fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Sweep(c) => {
            let cfg = c.config()?;
            let dir = out_dir(&c.out)?;
            let (cal, test) = cfg.split()?;
            let source = cfg.source()?;
            let mut certs = Vec::new();
            for m in &cfg.methods {
                let spec = m.resolve(source.as_ref())?;
                for &alpha in &cfg.alphas {
                    for &delta in &cfg.deltas {
                        let cert = sweep(&spec, &cal, &cfg.grid, RiskBudget::new(alpha, delta)?)?;
                        println!(
                            "{:<28} alpha={alpha:<5} delta={delta:<5} tau*={} ucb={:.4}",
                            cert.method,
                            cert.tau_star.map_or_else(|| "---".into(), |t| format!("{t:.2}")),
                            cert.ucb_at_tau
                        );
                        certs.push(cert);
                    }
                }
            }
            let rows = selcert_harness::experiments::run_ablation_on(
                &cal,
                &test,
                &cfg.grid,
                &cfg.methods,
                &cfg.alphas,
                &cfg.deltas,
                source.as_ref(),
            )?;
            write_json(&certs, &dir.join("certificates.json"))?;
            write_results_csv(&rows, &dir.join("results.csv"))?;
            finish("sweep", cfg.seed, &cfg, dir, &["certificates.json", "results.csv"])?;
        }
        Command::Ablate(c) => {
            let cfg = c.config()?;
            let dir = out_dir(&c.out)?;
            let rows = run_ablation(&cfg)?;
            write_results_csv(&rows, &dir.join("results.csv"))?;
            let errors = rows.iter().filter(|r| r.error.is_some()).count();
            if errors > 0 {
                eprintln!("{errors} rows carry errors; see the error column");
            }
            finish("ablate", cfg.seed, &cfg, dir, &["results.csv"])?;
        }
        Command::Progressive { common, sizes } => {
            let cfg = common.config()?;
            let dir = out_dir(&common.out)?;
            write_table(&run_progressive_trust(&cfg, &sizes)?, &dir.join("results.csv"))?;
            finish("progressive", cfg.seed, &cfg, dir, &["results.csv"])?;
        }
        Command::SizeCurve {
            common,
            alpha,
            n_min,
            n_max,
        } => {
            let deltas = common.deltas.clone().unwrap_or_else(|| vec![0.1]);
            let dir = out_dir(&common.out)?;
            let (points, crossings) = run_size_curve(&deltas, &SizeVariant::defaults(), (n_min, n_max), alpha)?;
            write_table(&points, &dir.join("results.csv"))?;
            write_table(&crossings, &dir.join("crossings.csv"))?;
            for x in &crossings {
                let n = x.first_n.map_or_else(|| "---".into(), |n| n.to_string());
                println!("{:<28} delta={:<5} first n with correction <= {alpha}: {n}", x.variant, x.delta);
            }
            let args = SizeCurveArgs {
                deltas: &deltas,
                alpha,
                n_min,
                n_max,
            };
            finish("size-curve", 0, &args, dir, &["results.csv", "crossings.csv"])?;
        }
        Command::Conformal(c) => {
            let cfg = c.config()?;
            let dir = out_dir(&c.out)?;
            write_table(&run_conformal_comparison(&cfg)?, &dir.join("results.csv"))?;
            finish("conformal", cfg.seed, &cfg, dir, &["results.csv"])?;
        }
        Command::Calibrate { common, bins } => {
            let cfg = common.config()?;
            let dir = out_dir(&common.out)?;
            let ds = cfg.data.load(cfg.seed)?;
            let (cal, test) = stratified_split(&ds, cfg.split_frac, cfg.seed)?;
            let t = fit_temperature(&cal, DEFAULT_T_RANGE, DEFAULT_T_TOL)?;
            let (cal_t, test_t) = (apply_temperature(&cal, t)?, apply_temperature(&test, t)?);
            let after = ece(&test_t, bins)?;
            let summary = CalibrationSummary {
                temperature: t,
                cal_ece_before: ece(&cal, bins)?.ece,
                cal_ece_after: ece(&cal_t, bins)?.ece,
                test_ece_before: ece(&test, bins)?.ece,
                test_ece_after: after.ece,
                bins,
            };
            println!(
                "T = {t:.4}; test ECE {:.4} -> {:.4}",
                summary.test_ece_before, summary.test_ece_after
            );
            write_json(&summary, &dir.join("calibration.json"))?;
            write_table(&after.bins, &dir.join("reliability.csv"))?;
            finish("calibrate", cfg.seed, &cfg, dir, &["calibration.json", "reliability.csv"])?;
        }
        Command::PerIntent(c) => {
            let cfg = c.config()?;
            let dir = out_dir(&c.out)?;
            write_table(&run_per_intent(&cfg)?, &dir.join("results.csv"))?;
            finish("per-intent", cfg.seed, &cfg, dir, &["results.csv"])?;
        }
        Command::Simulate { common, n, output } => {
            let mut cfg = common.config()?;
            if let Some(n) = n {
                let mut spec = match (&cfg.data.preset, &cfg.data.synthetic) {
                    (Some(name), None) => SyntheticSpec::preset(name, cfg.seed)?,
                    (None, Some(spec)) => spec.clone(),
                    _ => return Err(HarnessError::Config("--n needs a preset or synthetic spec".into())),
                };
                spec.n = n;
                cfg.data = DataSource::synthetic(spec);
            }
            let ds = cfg.data.load(cfg.seed)?;
            let dir = out_dir(&common.out)?;
            let path = output.unwrap_or_else(|| dir.join("data.jsonl"));
            save(&ds, &path, DataFormat::from_path(&path))?;
            println!("wrote {} records to {}", ds.len(), path.display());
            finish("simulate", cfg.seed, &cfg, dir, &[])?;
        }
        Command::Profile { common, full } => {
            let cfg = common.config()?;
            let dir = out_dir(&common.out)?;
            let ds = if full { cfg.data.load(cfg.seed)? } else { cfg.split()?.0 };
            write_json(&risk_profile(&ds, &cfg.grid)?, &dir.join("profile.json"))?;
            finish("profile", cfg.seed, &cfg, dir, &["profile.json"])?;
        }
        Command::Validate { trials, seed, out } => {
            if trials < 2 {
                return Err(HarnessError::Config("trials must be at least 2".into()));
            }
            let dir = out_dir(&out)?;
            let report = run_validity_suite(trials, seed)?;
            let text = report.to_text();
            print!("{text}");
            fs::write(dir.join("validity.txt"), &text)?;
            write_json(&report, &dir.join("validity.json"))?;
            finish("validate", seed, &ValidateArgs { trials, seed }, dir, &["validity.txt", "validity.json"])?;
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
