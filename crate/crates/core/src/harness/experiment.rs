//! Experiment presets: each is a list of cells, each cell a batch of seeded
//! trials that share one configuration and one scene.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::persist::{self, Manifest, ManifestCell};
use super::record::{aggregate, RunRecord, TrajectoryStats};
use super::scenes::{default_scene_plan, three_source_plan};
use super::{run_trial, PreparedScene, TrialConfig};
use crate::error::{Error, Result};

pub const PRESETS: &[&str] = &[
    "eta-sweep",
    "bias-ablation",
    "theta-sweep",
    "near-interference",
    "three-source",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentPreset {
    EtaSweep,
    BiasAblation,
    ThetaSweep,
    NearInterference,
    ThreeSource,
}

impl std::str::FromStr for ExperimentPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "eta-sweep" => Self::EtaSweep,
            "bias-ablation" => Self::BiasAblation,
            "theta-sweep" => Self::ThetaSweep,
            "near-interference" => Self::NearInterference,
            "three-source" => Self::ThreeSource,
            other => {
                return Err(Error::UnknownPreset {
                    name: other.to_string(),
                    available: PRESETS.join(", "),
                })
            }
        })
    }
}

/// Which synthetic scene a cell runs on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SceneKind {
    /// Sources at 0° and 90°.
    TwoSource { soi_doa_deg: f64 },
    /// Sources at 0°, 90° and 180°.
    ThreeSource { soi_doa_deg: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub label: String,
    pub scene: SceneKind,
    pub theta_est: f64,
    pub config: TrialConfig,
    pub runs: usize,
}

fn angle_label(deg: f64) -> String {
    let s = format!("{}", deg.abs());
    if deg < 0.0 {
        format!("m{s}")
    } else {
        s
    }
}

impl ExperimentPreset {
    pub fn name(&self) -> &'static str {
        match self {
            Self::EtaSweep => "eta-sweep",
            Self::BiasAblation => "bias-ablation",
            Self::ThetaSweep => "theta-sweep",
            Self::NearInterference => "near-interference",
            Self::ThreeSource => "three-source",
        }
    }

    /// The cells of this preset, derived from `base`.
    pub fn cells(&self, base: &TrialConfig) -> Vec<CellSpec> {
        let two = |soi| SceneKind::TwoSource { soi_doa_deg: soi };
        match self {
            Self::EtaSweep => [0.01, 0.1, 0.2, 0.3]
                .iter()
                .map(|&eta| {
                    let mut config = base.clone();
                    config.corrector.eta = eta;
                    CellSpec {
                        label: format!("eta-{eta}"),
                        scene: two(0.0),
                        theta_est: 15.0,
                        config,
                        runs: 5,
                    }
                })
                .collect(),
            Self::BiasAblation => [true, false]
                .iter()
                .map(|&on| {
                    let mut config = base.clone();
                    config.corrector.bias_correction = on;
                    CellSpec {
                        label: if on { "bias-on" } else { "bias-off" }.to_string(),
                        scene: two(0.0),
                        theta_est: 15.0,
                        config,
                        runs: 30,
                    }
                })
                .collect(),
            Self::ThetaSweep => [1.0, 5.0, 10.0, 15.0, 20.0, 25.0]
                .iter()
                .map(|&theta| CellSpec {
                    label: format!("theta-est-{}", angle_label(theta)),
                    scene: two(0.0),
                    theta_est: theta,
                    config: base.clone(),
                    runs: 30,
                })
                .collect(),
            Self::NearInterference => vec![CellSpec {
                label: "theta-est-105".to_string(),
                scene: two(90.0),
                theta_est: 105.0,
                config: base.clone(),
                runs: 5,
            }],
            Self::ThreeSource => [(105.0, 90.0), (195.0, 180.0), (-15.0, 0.0)]
                .iter()
                .map(|&(theta, soi)| CellSpec {
                    label: format!("theta-est-{}", angle_label(theta)),
                    scene: SceneKind::ThreeSource { soi_doa_deg: soi },
                    theta_est: theta,
                    config: base.clone(),
                    runs: 5,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GridOptions {
    pub base: TrialConfig,
    /// Run `k` (0-based) of every cell uses seed `master_seed + k`.
    pub master_seed: u64,
    /// Seed of the synthetic recording; fixed across runs.
    pub scene_seed: u64,
    pub duration_s: f64,
    /// Overrides every cell's run count.
    pub runs: Option<usize>,
    /// Where to persist records, aggregates, plots and the manifest.
    pub out_dir: Option<PathBuf>,
}

impl Default for GridOptions {
    fn default() -> Self {
        Self {
            base: TrialConfig::default(),
            master_seed: 1,
            scene_seed: 0,
            duration_s: 90.0,
            runs: None,
            out_dir: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub label: String,
    pub theta_est: f64,
    pub true_doa_deg: f64,
    pub stats: TrajectoryStats,
    pub records: Vec<RunRecord>,
    pub plot_svg: String,
}

impl CellResult {
    pub fn good_rate(&self) -> f64 {
        self.stats.good_run_count as f64 / self.stats.n_runs as f64
    }
}

fn prepare(kind: SceneKind, opts: &GridOptions, config: &TrialConfig) -> Result<PreparedScene> {
    let plan = match kind {
        SceneKind::TwoSource { soi_doa_deg } => {
            default_scene_plan(opts.duration_s, opts.scene_seed, soi_doa_deg)?
        }
        SceneKind::ThreeSource { soi_doa_deg } => {
            three_source_plan(opts.duration_s, opts.scene_seed, soi_doa_deg)?
        }
    };
    PreparedScene::new(&plan, &config.beamformer, config.window_len)
}

/// Runs every trial of one cell against an already prepared scene.
pub fn run_cell(scene: &PreparedScene, spec: &CellSpec, opts: &GridOptions) -> Result<CellResult> {
    let runs = opts.runs.unwrap_or(spec.runs);
    let records = (0..runs as u64)
        .into_par_iter()
        .map(|k| run_trial(scene, &spec.config, spec.theta_est, opts.master_seed + k))
        .collect::<Result<Vec<_>>>()?;
    let stats = aggregate(&records)?;
    let plot_svg = super::plot::render_band_svg(
        &spec.label,
        &stats.time,
        &stats.mean_theta,
        &stats.std_theta,
    );
    Ok(CellResult {
        label: spec.label.clone(),
        theta_est: spec.theta_est,
        true_doa_deg: scene.true_doa_deg(),
        stats,
        records,
        plot_svg,
    })
}

/// Runs a preset grid. With an output directory, every record, aggregate and
/// plot is written under `<out>/<preset>/<cell>/` and indexed by a manifest
/// that is rewritten after each completed cell.
pub fn experiment_grid(preset: ExperimentPreset, opts: &GridOptions) -> Result<Vec<CellResult>> {
    opts.base.validate()?;
    let cells = preset.cells(&opts.base);
    let root = opts.out_dir.as_ref().map(|d| d.join(preset.name()));
    let mut manifest = Manifest {
        experiment: preset.name().to_string(),
        master_seed: opts.master_seed,
        scene_seed: opts.scene_seed,
        duration_s: opts.duration_s,
        cells: cells
            .iter()
            .map(|c| ManifestCell::pending(&c.label, opts.runs.unwrap_or(c.runs)))
            .collect(),
    };
    if let Some(root) = &root {
        manifest.write(root)?;
    }

    let mut cache: Vec<(SceneKind, TrialConfig, PreparedScene)> = Vec::new();
    let mut results = Vec::with_capacity(cells.len());
    for (i, spec) in cells.iter().enumerate() {
        let hit = cache.iter().position(|(k, c, _)| {
            *k == spec.scene
                && c.beamformer == spec.config.beamformer
                && c.window_len == spec.config.window_len
        });
        let idx = match hit {
            Some(idx) => idx,
            None => {
                let scene = prepare(spec.scene, opts, &spec.config)?;
                cache.push((spec.scene, spec.config.clone(), scene));
                cache.len() - 1
            }
        };
        let result = run_cell(&cache[idx].2, spec, opts)?;
        if let Some(root) = &root {
            manifest.cells[i] = persist_cell(root, &result)?;
            manifest.write(root)?;
        }
        results.push(result);
    }
    Ok(results)
}

fn persist_cell(root: &Path, cell: &CellResult) -> Result<ManifestCell> {
    let dir = root.join(&cell.label);
    std::fs::create_dir_all(&dir)
        .map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut files = Vec::new();
    for (k, record) in cell.records.iter().enumerate() {
        let stem = format!("run-{}", k + 1);
        persist::write_run_csv(&dir.join(format!("{stem}.csv")), record)?;
        persist::write_run_sidecar(&dir.join(format!("{stem}.json")), record)?;
        files.push(format!("{}/{stem}.csv", cell.label));
        files.push(format!("{}/{stem}.json", cell.label));
    }
    let agg = dir.join("aggregate.csv");
    persist::write_aggregate_csv(&agg, &cell.stats)?;
    let svg = super::plot::plot_path(&dir)?;
    persist::write_text(&dir.join("plot.svg"), &svg)?;
    files.push(format!("{}/aggregate.csv", cell.label));
    files.push(format!("{}/plot.svg", cell.label));
    Ok(ManifestCell {
        label: cell.label.clone(),
        complete: true,
        runs_planned: cell.records.len(),
        runs_done: cell.records.len(),
        good_run_count: Some(cell.stats.good_run_count),
        theta_est_deg: Some(cell.theta_est),
        true_doa_deg: Some(cell.true_doa_deg),
        files,
    })
}
