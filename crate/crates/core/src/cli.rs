//! Command-line front end: `run`, `experiment` and `plot`.
//!
//! Settings resolve as defaults, then a `key = value` config file, then
//! command-line flags. Exit codes: 0 success, 1 invalid input, 2 runtime
//! failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
use crate::harness::{
    default_scene_plan, experiment_grid, plot_path, run_trial, three_source_plan, write_run_csv,
    write_run_sidecar, ExperimentPreset, GridOptions, Manifest, ManifestCell, PreparedScene,
    SceneBuilder, SourceSignal, TrialConfig,
};
use crate::scene::ScenePlan;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_FAILURE: i32 = 2;

/// Every key accepted in a config file or by `--set`.
pub const CONFIG_KEYS: &[&str] = &[
    "theta_est",
    "seed",
    "scene_seed",
    "duration_s",
    "scene",
    "out",
    "runs",
    "eta",
    "beta_m",
    "beta_v",
    "epsilon",
    "bias_correction",
    "warmup_s",
    "q_ceiling",
    "t_h",
    "t_w",
    "t_vad",
    "alpha",
    "vad_energy_threshold_db",
    "estimator",
    "noise_sigma_db",
    "dropout_prob",
    "phase_tolerance_rad",
    "mask_floor",
    "reference_channel",
    "aliasing_policy",
    "window_len",
];

/// Fully resolved settings for one invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub trial: TrialConfig,
    pub theta_est: f64,
    /// Trial seed for `run`; master seed for `experiment`.
    pub seed: u64,
    pub scene_seed: u64,
    pub duration_s: f64,
    pub scene: String,
    pub out: PathBuf,
    pub runs: Option<usize>,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            trial: TrialConfig::default(),
            theta_est: 15.0,
            seed: 1,
            scene_seed: 0,
            duration_s: 90.0,
            scene: "default".into(),
            out: PathBuf::from("out"),
            runs: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: expected true or false, got {value:?}"
        ))),
    }
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.trial;
        match key {
            "theta_est" => self.theta_est = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "scene_seed" => self.scene_seed = parse(key, value)?,
            "duration_s" => self.duration_s = parse(key, value)?,
            "scene" => self.scene = value.to_string(),
            "out" => self.out = PathBuf::from(value),
            "runs" => self.runs = Some(parse(key, value)?),
            "eta" => t.corrector.eta = parse(key, value)?,
            "beta_m" => t.corrector.beta_m = parse(key, value)?,
            "beta_v" => t.corrector.beta_v = parse(key, value)?,
            "epsilon" => t.corrector.epsilon = parse(key, value)?,
            "bias_correction" => t.corrector.bias_correction = parse_bool(key, value)?,
            "warmup_s" => t.corrector.warmup_s = parse(key, value)?,
            "q_ceiling" => t.corrector.q_ceiling = parse(key, value)?,
            "t_h" => t.quality.t_h = parse(key, value)?,
            "t_w" => t.quality.t_w = parse(key, value)?,
            "t_vad" => t.quality.t_vad = parse(key, value)?,
            "alpha" => t.quality.alpha = parse(key, value)?,
            "vad_energy_threshold_db" => t.quality.vad_energy_threshold_db = parse(key, value)?,
            "estimator" => t.quality.estimator = value.parse()?,
            "noise_sigma_db" => t.quality.noise_sigma_db = parse(key, value)?,
            "dropout_prob" => t.quality.dropout_prob = parse(key, value)?,
            "phase_tolerance_rad" => t.beamformer.phase_tolerance_rad = parse(key, value)?,
            "mask_floor" => t.beamformer.mask_floor = parse(key, value)?,
            "reference_channel" => t.beamformer.reference_channel = parse(key, value)?,
            "aliasing_policy" => t.beamformer.aliasing_policy = value.parse()?,
            "window_len" => t.window_len = parse(key, value)?,
            other => {
                return Err(Error::Config(format!(
                    "unknown key {other:?}; known keys: {}",
                    CONFIG_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.trial.validate()?;
        if !self.theta_est.is_finite() {
            return Err(Error::Config("theta_est must be finite".into()));
        }
        if !(self.duration_s.is_finite() && self.duration_s > 0.0) {
            return Err(Error::Config(format!(
                "duration_s must be positive, got {}",
                self.duration_s
            )));
        }
        if self.runs == Some(0) {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str, origin: &Path) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "{}:{}: expected key = value",
                origin.display(),
                i + 1
            ))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

pub fn load_config_file(settings: &mut Settings, path: &Path) -> Result<()> {
    for (k, v) in parse_key_values(&read_text(path)?, path)? {
        settings
            .set(&k, &v)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

/// Parses a scene description file:
///
/// ```text
/// fs = 16000
/// diffuse_noise_db = off
/// seed = 0
/// soi = 0
/// source = synth:1 0
/// source = wav:talker.wav 90 0.5
/// ```
///
/// Relative WAV paths resolve against the file's directory. A source without
/// a gain is scaled to the power of the source of interest.
pub fn parse_scene_file(path: &Path, duration_s: f64) -> Result<ScenePlan> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut builder = SceneBuilder::new(duration_s, 0);
    let mut soi = 0;
    let bad = |msg: String| Error::Scene(format!("{}: {msg}", path.display()));
    for (k, v) in parse_key_values(&read_text(path)?, path)? {
        match k.as_str() {
            "fs" => builder.fs = parse(&k, &v).map_err(|e| bad(e.to_string()))?,
            "seed" => builder.seed = parse(&k, &v).map_err(|e| bad(e.to_string()))?,
            "soi" => soi = parse(&k, &v).map_err(|e| bad(e.to_string()))?,
            "diffuse_noise_db" => {
                builder.diffuse_noise_db = if v == "off" {
                    None
                } else {
                    Some(parse(&k, &v).map_err(|e| bad(e.to_string()))?)
                }
            }
            "source" => {
                let parts: Vec<&str> = v.split_whitespace().collect();
                if !(2..=3).contains(&parts.len()) {
                    return Err(bad(format!(
                        "source needs `<signal> <doa> [gain]`, got {v:?}"
                    )));
                }
                let signal = match parts[0].parse::<SourceSignal>()? {
                    SourceSignal::Wav(p) if p.is_relative() => SourceSignal::Wav(base.join(p)),
                    s => s,
                };
                let doa = parse("source doa", parts[1]).map_err(|e| bad(e.to_string()))?;
                let gain = parts
                    .get(2)
                    .map(|g| parse("source gain", g))
                    .transpose()
                    .map_err(|e| bad(e.to_string()))?;
                builder = builder.source(signal, doa, gain);
            }
            other => return Err(bad(format!("unknown scene key {other:?}"))),
        }
    }
    builder.soi(soi).build()
}

/// Resolves a scene argument: `default[:<soi>]`, `near-interference`,
/// `three-source[:<soi>]`, or a path to a scene file.
pub fn resolve_scene(spec: &str, duration_s: f64, seed: u64) -> Result<ScenePlan> {
    let (name, soi) = match spec.split_once(':') {
        Some((n, s)) if matches!(n, "default" | "three-source") => {
            (n, Some(parse::<f64>("scene", s)?))
        }
        _ => (spec, None),
    };
    match name {
        "default" => default_scene_plan(duration_s, seed, soi.unwrap_or(0.0)),
        "near-interference" => default_scene_plan(duration_s, seed, 90.0),
        "three-source" => three_source_plan(duration_s, seed, soi.unwrap_or(0.0)),
        path => {
            let p = Path::new(path);
            if !p.is_file() {
                return Err(Error::Config(format!(
                    "scene {path:?} is neither a preset (default, near-interference, three-source) nor a file"
                )));
            }
            parse_scene_file(p, duration_s)
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "doa-feedback",
    version,
    about = "Quality-driven DOA correction on a simulated microphone array"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one closed-loop trial and write its record.
    Run(CommonArgs),
    /// Run a preset experiment grid.
    Experiment {
        /// eta-sweep, bias-ablation, theta-sweep, near-interference or three-source.
        preset: String,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Render an SVG from a run CSV, a directory with aggregate.csv, or a
    /// directory of run CSVs.
    Plot {
        path: PathBuf,
        /// Output file; defaults to plot.svg inside the directory, or the
        /// CSV's name with an .svg extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// key = value settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene preset or scene file.
    #[arg(long)]
    scene: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    theta_est: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    eta: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Simulated seconds per run.
    #[arg(long, allow_negative_numbers = true)]
    duration: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    bias_correction: bool,
    #[arg(long, allow_negative_numbers = true)]
    dropout_prob: Option<f64>,
    /// oracle or noisy-oracle.
    #[arg(long)]
    estimator: Option<String>,
    /// Runs per cell (experiment only).
    #[arg(long)]
    runs: Option<usize>,
    /// Any config key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<Settings> {
        let mut s = Settings::default();
        if let Some(path) = &self.config {
            load_config_file(&mut s, path)?;
        }
        if let Some(v) = &self.scene {
            s.scene = v.clone();
        }
        if let Some(v) = self.theta_est {
            s.theta_est = v;
        }
        if let Some(v) = self.eta {
            s.trial.corrector.eta = v;
        }
        if let Some(v) = self.alpha {
            s.trial.quality.alpha = v;
        }
        if let Some(v) = self.seed {
            s.seed = v;
        }
        if let Some(v) = self.duration {
            s.duration_s = v;
        }
        if let Some(v) = &self.out {
            s.out = v.clone();
        }
        if self.bias_correction {
            s.trial.corrector.bias_correction = true;
        }
        if let Some(v) = self.dropout_prob {
            s.trial.quality.dropout_prob = v;
        }
        if let Some(v) = &self.estimator {
            s.trial.quality.estimator = v.parse()?;
        }
        if let Some(v) = self.runs {
            s.runs = Some(v);
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
            s.set(k.trim(), v.trim())?;
        }
        s.validate()?;
        Ok(s)
    }
}

fn is_invalid_input(e: &Error) -> bool {
    matches!(
        e,
        Error::Config(_) | Error::Scene(_) | Error::UnknownPreset { .. }
    )
}

fn cmd_run(args: &CommonArgs) -> Result<()> {
    let s = args.resolve()?;
    let plan = resolve_scene(&s.scene, s.duration_s, s.scene_seed)?;
    let scene = PreparedScene::new(&plan, &s.trial.beamformer, s.trial.window_len)?;
    let record = run_trial(&scene, &s.trial, s.theta_est, s.seed)?;
    let csv = s.out.join(format!("run-{}.csv", s.seed));
    write_run_csv(&csv, &record)?;
    write_run_sidecar(&s.out.join(format!("run-{}.json", s.seed)), &record)?;
    let svg = plot_path(&csv)?;
    let svg_path = s.out.join(format!("run-{}.svg", s.seed));
    std::fs::write(&svg_path, svg)
        .map_err(|e| Error::io(format!("writing {}", svg_path.display()), e))?;
    let label = format!("run-{}", s.seed);
    let cell = ManifestCell {
        label: label.clone(),
        complete: true,
        runs_planned: 1,
        runs_done: 1,
        good_run_count: Some(usize::from(record.good)),
        theta_est_deg: Some(s.theta_est),
        true_doa_deg: Some(scene.true_doa_deg()),
        files: ["csv", "json", "svg"]
            .iter()
            .map(|x| format!("{label}.{x}"))
            .collect(),
    };
    let mut manifest = match Manifest::read(&s.out) {
        Ok(m) if m.experiment == "run" => m,
        _ => Manifest {
            experiment: "run".into(),
            master_seed: s.seed,
            scene_seed: s.scene_seed,
            duration_s: s.duration_s,
            cells: Vec::new(),
        },
    };
    manifest.cells.retain(|c| c.label != label);
    manifest.cells.push(cell);
    manifest.cells.sort_by(|a, b| a.label.cmp(&b.label));
    manifest.write(&s.out)?;
    println!(
        "{}: {} run, final-third mean {:.2} deg, true {:.2} deg, {} warnings, wrote {}",
        record.run_id,
        if record.good { "good" } else { "bad" },
        record.final_third_mean_theta,
        scene.true_doa_deg(),
        record.warnings.len(),
        csv.display()
    );
    Ok(())
}

fn cmd_experiment(name: &str, args: &CommonArgs) -> Result<()> {
    let preset: ExperimentPreset = name.parse()?;
    let s = args.resolve()?;
    let opts = GridOptions {
        base: s.trial,
        master_seed: s.seed,
        scene_seed: s.scene_seed,
        duration_s: s.duration_s,
        runs: s.runs,
        out_dir: Some(s.out.clone()),
    };
    let cells = experiment_grid(preset, &opts)?;
    for c in &cells {
        println!(
            "{:<16} good {:>2}/{:<2} start {:>7.2} deg, true {:>7.2} deg, final mean {:>7.2} deg",
            c.label,
            c.stats.good_run_count,
            c.stats.n_runs,
            c.theta_est,
            c.true_doa_deg,
            c.stats.mean_theta.last().copied().unwrap_or(f64::NAN)
        );
    }
    println!("wrote {}", s.out.join(preset.name()).display());
    Ok(())
}

fn cmd_plot(path: &Path, out: Option<&Path>) -> Result<()> {
    let svg = plot_path(path)?;
    let target = match out {
        Some(p) => p.to_path_buf(),
        None if path.is_dir() => path.join("plot.svg"),
        None => path.with_extension("svg"),
    };
    std::fs::write(&target, svg)
        .map_err(|e| Error::io(format!("writing {}", target.display()), e))?;
    println!("wrote {}", target.display());
    Ok(())
}

/// Parses `args` (including the program name), runs the command, and
/// returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_OK
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Experiment { preset, common } => cmd_experiment(preset, common),
        Command::Plot { path, out } => cmd_plot(path, out.as_deref()),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if is_invalid_input(&e) {
                EXIT_INVALID
            } else {
                EXIT_FAILURE
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn precedence_defaults_file_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.conf");
        std::fs::write(
            &cfg,
            "# comment\neta = 0.2\nalpha = 0.5 # trailing\nseed=9\n",
        )
        .unwrap();
        let args = CommonArgs {
            config: Some(cfg),
            scene: None,
            theta_est: None,
            eta: Some(0.3),
            alpha: None,
            seed: None,
            duration: None,
            out: None,
            bias_correction: false,
            dropout_prob: None,
            estimator: None,
            runs: None,
            set: vec!["t_w=2.5".into()],
        };
        let s = args.resolve().unwrap();
        assert_eq!(s.trial.corrector.eta, 0.3);
        assert_eq!(s.trial.quality.alpha, 0.5);
        assert_eq!(s.seed, 9);
        assert_eq!(s.trial.quality.t_w, 2.5);
        assert_eq!(s.theta_est, 15.0);
    }

    #[test]
    fn every_listed_key_is_accepted() {
        let samples = [
            ("scene", "default"),
            ("out", "x"),
            ("bias_correction", "true"),
            ("estimator", "oracle"),
            ("aliasing_policy", "lowpass-only"),
        ];
        for key in CONFIG_KEYS {
            let v = samples
                .iter()
                .find(|(k, _)| k == key)
                .map(|p| p.1)
                .unwrap_or("1");
            Settings::default()
                .set(key, v)
                .unwrap_or_else(|e| panic!("{key}: {e}"));
        }
        let err = Settings::default()
            .set("etta", "1")
            .unwrap_err()
            .to_string();
        assert!(err.contains("etta") && err.contains("eta"));
    }

    #[test]
    fn malformed_config_line_is_reported() {
        let err = parse_key_values("eta 0.1\n", Path::new("c.conf"))
            .unwrap_err()
            .to_string();
        assert!(err.contains("c.conf:1"), "{err}");
    }

    #[test]
    fn scene_file_parsing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.scene");
        std::fs::write(
            &path,
            "fs = 16000\ndiffuse_noise_db = -40\nseed = 4\nsource = synth:1 30\nsource = synth:2 120 0.5\n",
        )
        .unwrap();
        let plan = parse_scene_file(&path, 4.0).unwrap();
        assert_eq!(plan.sources.len(), 2);
        assert_eq!(plan.soi().true_doa_deg, 30.0);
        assert_eq!(plan.sources[1].gain, 0.5);
        assert_eq!(plan.diffuse_noise_db, Some(-40.0));
        assert_eq!(plan.seed, 4);

        std::fs::write(&path, "source = synth:1\n").unwrap();
        assert!(matches!(parse_scene_file(&path, 4.0), Err(Error::Scene(_))));
        std::fs::write(&path, "colour = red\n").unwrap();
        assert!(parse_scene_file(&path, 4.0).is_err());
    }

    #[test]
    fn scene_presets_resolve() {
        assert_eq!(
            resolve_scene("default", 3.0, 0).unwrap().soi().true_doa_deg,
            0.0
        );
        assert_eq!(
            resolve_scene("near-interference", 3.0, 0)
                .unwrap()
                .soi()
                .true_doa_deg,
            90.0
        );
        assert_eq!(
            resolve_scene("three-source:180", 3.0, 0)
                .unwrap()
                .soi()
                .true_doa_deg,
            180.0
        );
        assert!(resolve_scene("no-such-scene", 3.0, 0).is_err());
    }
}
