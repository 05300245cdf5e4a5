//! The `qstat` command line: `witness`, `forward`, `fit` and `simulate`.
//!
//! Every command writes into `--out` and leaves a `manifest.json` next to its
//! outputs. Exit codes: 0 success, 1 usage or input error, 2 numerical
//! failure, 3 fit finished with a convergence warning.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::detect::{
    click_distribution, heralded_g2_from_probs, heralded_g2_from_record, probabilities_from_record, sample_record,
    save_records, ClickRecord, DetectorSetup, G2Form, JointDistribution,
};
use crate::error::{Error, Result};
use crate::fit::{fit, forward_with, FitConfig, FitResult, IntensityRange, ObservableCurve, ObservableKind};
use crate::fock::FockConfig;
use crate::model::{ModelParams, StateBuilder};
use crate::witness::{nc_witness, propagate_counts, qng_depth, qng_witness, rates_to_witness_input};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_WARNING: i32 = 3;

/// Thread count of the worker pool; unset means one per core.
pub const THREADS_ENV: &str = "QSTAT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "qstat", version, about = "Click-detector photon statistics, witnesses and model fits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Witnesses and photon statistics of measured click records.
    Witness {
        /// Click-record CSV.
        csv: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Observable curves of a parameter set over the intensity grid.
    Forward {
        #[arg(long)]
        params: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Fits model parameters to observable curves in a directory.
    Fit {
        /// Directory holding `<observable>.csv` files.
        data_dir: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Samples click records of a parameter set over the intensity grid.
    Simulate {
        #[arg(long)]
        params: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, clap::Args)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Defaults to 0 (or the seed in a fit config).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Settings of `witness`, `forward` and `simulate`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fock: FockConfig,
    pub detector: DetectorSetup,
    pub intensity: IntensityRange,
    /// `forward` also writes `extras.csv`.
    pub extras: bool,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(&fs::read_to_string(path)?)?;
        cfg.fock.validate()?;
        cfg.detector.validate()?;
        cfg.intensity.grid()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: Vec<PathBuf>,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub version: String,
    /// UTC, RFC 3339. Taken from `SOURCE_DATE_EPOCH` when set.
    pub timestamp: String,
}

impl RunManifest {
    fn new(command: &str, inputs: Vec<PathBuf>, common: &Common, seed: u64) -> Self {
        Self {
            command: command.to_string(),
            inputs,
            config: common.config.clone(),
            seed,
            output_dir: common.out.clone(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: timestamp(),
        }
    }

    fn write(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

fn timestamp() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(chrono::Utc::now);
    now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Twelve significant digits; `nan`, `inf` and `-inf` for non-finite values.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else if v == 0.0 {
        "0".into()
    } else {
        format!("{v:.11e}")
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|s| s.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_USAGE
            }
        }
    }
}

pub fn run(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Witness { csv, common } => cmd_witness(csv, common),
        Command::Forward { params, common } => cmd_forward(params, common),
        Command::Fit { data_dir, common } => cmd_fit(data_dir, common),
        Command::Simulate { params, common } => cmd_simulate(params, common),
    }
}

fn run_config(common: &Common) -> Result<RunConfig> {
    common.config.as_deref().map_or_else(|| Ok(RunConfig::default()), RunConfig::load)
}

fn out_dir(common: &Common) -> Result<&Path> {
    fs::create_dir_all(&common.out)?;
    Ok(&common.out)
}

type Quantity = (&'static str, fn(&ClickRecord) -> Result<f64>);

const WITNESS_QUANTITIES: [Quantity; 12] = [
    ("P_S", |r| Ok(rates_to_witness_input(r)?.p_s)),
    ("P_C", |r| Ok(rates_to_witness_input(r)?.p_c)),
    ("W_NC", |r| Ok(nc_witness(&rates_to_witness_input(r)?))),
    ("p0", |r| Ok(probabilities_from_record(r)?.p0)),
    ("p1", |r| Ok(probabilities_from_record(r)?.p1)),
    ("p2plus", |r| Ok(probabilities_from_record(r)?.p2plus)),
    ("g2_rate", heralded_g2_from_record),
    ("g2_form_a", |r| heralded_g2_from_probs(&probabilities_from_record(r)?, G2Form::A)),
    ("g2_form_b", |r| heralded_g2_from_probs(&probabilities_from_record(r)?, G2Form::B)),
    ("delta_w", |r| Ok(qng_witness(&probabilities_from_record(r)?).delta_w)),
    ("a_opt", |r| Ok(qng_witness(&probabilities_from_record(r)?).a_opt)),
    ("qng_depth_db", |r| Ok(qng_depth(&probabilities_from_record(r)?)?.depth_db)),
];

/// One output row of `witness`: value and one-sigma error per quantity, plus a
/// status that is `ok` or lists why some quantities are undefined.
pub fn witness_row(rec: &ClickRecord) -> (Vec<(f64, f64)>, String) {
    let mut problems: Vec<String> = Vec::new();
    let values = WITNESS_QUANTITIES
        .iter()
        .map(|(_, f)| match propagate_counts(rec, f) {
            Ok(u) => (u.value, u.sigma),
            Err(e) => {
                let msg = e.to_string();
                if !problems.contains(&msg) {
                    problems.push(msg);
                }
                (f64::NAN, f64::NAN)
            }
        })
        .collect();
    let status = if problems.is_empty() {
        "ok".to_string()
    } else {
        problems.join("; ")
    };
    (values, status)
}

fn cmd_witness(csv_path: &Path, common: &Common) -> Result<i32> {
    if let Some(path) = &common.config {
        RunConfig::load(path)?;
    }
    let rows = crate::detect::load_records(csv_path)?;
    let out = out_dir(common)?;
    if rows.is_empty() {
        log::warn!("{} holds no records", csv_path.display());
    }
    let mut w = csv::Writer::from_path(out.join("witness.csv"))?;
    let mut header = vec!["intensity".to_string(), "status".to_string()];
    for (name, _) in WITNESS_QUANTITIES {
        header.push(name.to_string());
        header.push(format!("{name}_sigma"));
    }
    w.write_record(&header)?;
    for (intensity, rec) in &rows {
        let (values, status) = witness_row(rec);
        if status != "ok" {
            log::warn!("intensity {intensity}: {status}");
        }
        let mut row = vec![format_value(*intensity), status];
        for (v, s) in values {
            row.push(format_value(v));
            row.push(format_value(s));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    RunManifest::new("witness", vec![csv_path.to_path_buf()], common, common.seed.unwrap_or(0)).write(out)?;
    Ok(EXIT_OK)
}

fn cmd_forward(params_path: &Path, common: &Common) -> Result<i32> {
    let cfg = run_config(common)?;
    let params = ModelParams::load(params_path)?;
    let result = forward_with(&params, &cfg.intensity.grid()?, &cfg.detector, &cfg.fock, cfg.extras)?;
    let out = out_dir(common)?;
    for kind in ObservableKind::ALL {
        let rows: Vec<_> = result.points.iter().map(|p| (p.intensity, p.x(kind), p.value(kind))).collect();
        write_curve_csv(&out.join(format!("{kind}.csv")), &rows, None)?;
    }
    if cfg.extras {
        let mut w = csv::Writer::from_path(out.join("extras.csv"))?;
        w.write_record([
            "x",
            "mean_signal",
            "mean_herald",
            "delta_w_heralded",
            "a_opt_heralded",
            "delta_w_unheralded",
            "g2_form_a",
            "g2_form_b",
            "log_negativity",
        ])?;
        for p in &result.points {
            let e = p.extras.ok_or_else(|| Error::Config("extras were not computed".into()))?;
            let vals = [
                p.intensity,
                p.mean_signal,
                p.mean_herald,
                e.delta_w_heralded,
                e.a_opt_heralded,
                e.delta_w_unheralded,
                e.g2_form_a,
                e.g2_form_b,
                e.log_negativity,
            ];
            w.write_record(vals.iter().map(|&v| format_value(v)))?;
        }
        w.flush()?;
    }
    RunManifest::new("forward", vec![params_path.to_path_buf()], common, common.seed.unwrap_or(0)).write(out)?;
    Ok(EXIT_OK)
}

fn cmd_simulate(params_path: &Path, common: &Common) -> Result<i32> {
    let cfg = run_config(common)?;
    let params = ModelParams::load(params_path)?;
    let seed = common.seed.unwrap_or(0);
    let rows = simulate_records(&params, &cfg, seed)?;
    let out = out_dir(common)?;
    save_records(&out.join("records.csv"), &rows)?;
    RunManifest::new("simulate", vec![params_path.to_path_buf()], common, seed).write(out)?;
    Ok(EXIT_OK)
}

/// Sampled click records, one per grid intensity, from a single seeded stream.
pub fn simulate_records(params: &ModelParams, cfg: &RunConfig, seed: u64) -> Result<Vec<(f64, ClickRecord)>> {
    let builder = StateBuilder::new(params, &cfg.fock)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cfg.intensity
        .grid()?
        .values()
        .iter()
        .map(|&i| {
            let dist = JointDistribution::from_ensemble(&builder.ensemble(i)?)?;
            let clicks = click_distribution(&dist, &cfg.detector)?;
            Ok((i, sample_record(&clicks, cfg.detector.n_pulses, &mut rng)?))
        })
        .collect()
}

fn cmd_fit(data_dir: &Path, common: &Common) -> Result<i32> {
    let mut cfg = match &common.config {
        Some(path) => FitConfig::load(path)?,
        None => FitConfig::new(0),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let (data, inputs) = read_data_dir(data_dir)?;
    let result = fit(&data, &cfg)?;
    let out = out_dir(common)?;
    write_fit(out, &result, &cfg)?;
    RunManifest::new("fit", inputs, common, cfg.seed).write(out)?;
    for w in &result.warnings {
        log::warn!("{w}");
    }
    Ok(if result.stalled() { EXIT_WARNING } else { EXIT_OK })
}

/// Reads every `<observable>.csv` present in `dir`. The curves use the
/// `mean_photons` column as abscissa.
pub fn read_data_dir(dir: &Path) -> Result<(Vec<ObservableCurve>, Vec<PathBuf>)> {
    if !dir.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", dir.display())));
    }
    let mut curves = Vec::new();
    let mut paths = Vec::new();
    for kind in ObservableKind::ALL {
        let path = dir.join(format!("{kind}.csv"));
        if path.is_file() {
            let rows = read_curve_csv(&path)?;
            let x = rows.iter().map(|r| r.1).collect();
            let y = rows.iter().map(|r| r.2).collect();
            let sigma = rows.iter().map(|r| r.3).collect::<Option<Vec<f64>>>();
            curves.push(ObservableCurve::new(kind, x, y, sigma)?);
            paths.push(path);
        }
    }
    Ok((curves, paths))
}

/// `(x, mean_photons, value, sigma)`; `sigma` is optional in the file.
pub type CurveRow = (f64, f64, f64, Option<f64>);

pub fn read_curve_csv(path: &Path) -> Result<Vec<CurveRow>> {
    let schema = |line: u64, message: String| Error::Schema {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let (Some(cx), Some(cm), Some(cv)) = (col("x"), col("mean_photons"), col("value")) else {
        return Err(schema(1, "expected columns x, mean_photons, value".into()));
    };
    let cs = col("sigma");
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |c: usize| -> Result<f64> {
            let s = rec.get(c).ok_or_else(|| schema(line, format!("missing column {}", header[c])))?;
            s.parse().map_err(|_| schema(line, format!("{}: cannot parse {s:?}", header[c])))
        };
        rows.push((field(cx)?, field(cm)?, field(cv)?, cs.map(field).transpose()?));
    }
    Ok(rows)
}

pub fn write_curve_csv(path: &Path, rows: &[(f64, f64, f64)], sigma: Option<&[f64]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if sigma.is_some() {
        w.write_record(["x", "mean_photons", "value", "sigma"])?;
    } else {
        w.write_record(["x", "mean_photons", "value"])?;
    }
    for (k, &(x, m, v)) in rows.iter().enumerate() {
        let mut row = vec![format_value(x), format_value(m), format_value(v)];
        if let Some(s) = sigma {
            row.push(format_value(s[k]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_fit(out: &Path, result: &FitResult, cfg: &FitConfig) -> Result<()> {
    result.params.save(&out.join("params.toml"))?;
    fs::write(out.join("config.toml"), cfg.to_toml_string()?)?;
    fs::write(out.join("summary.json"), result.summary_json()? + "\n")?;
    let mut w = csv::Writer::from_path(out.join("stage_trace.csv"))?;
    w.write_record(["stage", "step", "best_loss"])?;
    for s in &result.stage_trace {
        let name = serde_json::to_value(s.stage)?;
        for (k, l) in s.trace.iter().enumerate() {
            w.write_record([name.as_str().unwrap_or_default().to_string(), k.to_string(), format_value(*l)])?;
        }
    }
    w.flush()?;
    let model = forward_with(&result.params, &cfg.intensity.grid()?, &cfg.detector, &cfg.fock, false)?;
    let curves = out.join("model");
    fs::create_dir_all(&curves)?;
    for kind in ObservableKind::ALL {
        let rows: Vec<_> = model.points.iter().map(|p| (p.intensity, p.x(kind), p.value(kind))).collect();
        write_curve_csv(&curves.join(format!("{kind}.csv")), &rows, None)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_format() {
        assert_eq!(format_value(0.1), "1.00000000000e-1");
        assert_eq!(format_value(-2.5e7), "-2.50000000000e7");
        assert_eq!(format_value(0.0), "0");
        assert_eq!(format_value(f64::NAN), "nan");
        assert_eq!(format_value(f64::NEG_INFINITY), "-inf");
        for v in [0.1, 1.0 / 3.0, 123456.789, -7e-300] {
            let s = format_value(v);
            assert_eq!(format_value(s.parse().unwrap()), s);
        }
        assert!("nan".parse::<f64>().unwrap().is_nan());
    }

    #[test]
    fn worked_record_row() {
        let rec = ClickRecord {
            r0: 1e6,
            r1a: 1e4,
            r1b: 1e4,
            r2: 10.0,
            rs_a: 1e5,
            rs_b: 1e5,
            rc: 100.0,
            n_pulses: 1e8,
        };
        let (values, status) = witness_row(&rec);
        assert_eq!(status, "ok");
        let get = |name: &str| values[WITNESS_QUANTITIES.iter().position(|q| q.0 == name).unwrap()];
        assert!((get("g2_rate").0 - 0.1).abs() < 1e-12);
        assert!((get("p0").0 - 0.97999).abs() < 1e-12);
        assert!(get("g2_rate").1 > 0.0);
    }

    #[test]
    fn degenerate_row_is_flagged() {
        let rec = ClickRecord {
            r0: 0.0,
            r1a: 0.0,
            r1b: 0.0,
            r2: 0.0,
            rs_a: 10.0,
            rs_b: 10.0,
            rc: 0.0,
            n_pulses: 100.0,
        };
        let (values, status) = witness_row(&rec);
        assert_ne!(status, "ok");
        assert!(values[0].0.is_finite() && values[3].0.is_nan());
    }

    #[test]
    fn parses_flags() {
        let cli = Cli::try_parse_from(["qstat", "simulate", "--params", "p.toml", "--seed", "7", "--out", "o"]).unwrap();
        match cli.command {
            Command::Simulate { params, common } => {
                assert_eq!(params, PathBuf::from("p.toml"));
                assert_eq!(common.seed, Some(7));
                assert!(common.config.is_none());
            }
            _ => panic!("wrong command"),
        }
        assert!(Cli::try_parse_from(["qstat", "forward", "--out", "o"]).is_err());
    }

    #[test]
    fn run_config_rejects_unknown_keys() {
        assert!(toml::from_str::<RunConfig>("extras = true\n[fock]\nn_max = 12").is_ok());
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
    }
}
