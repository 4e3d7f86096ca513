#![allow(dead_code)]

use doa_feedback::harness::{default_scene_plan, PreparedScene, TrialConfig};
use doa_feedback::quality::si_sdr;

pub fn prepare_default(duration_s: f64, soi_doa_deg: f64) -> PreparedScene {
    let cfg = TrialConfig::default();
    let plan = default_scene_plan(duration_s, 0, soi_doa_deg).unwrap();
    PreparedScene::new(&plan, &cfg.beamformer, cfg.window_len).unwrap()
}

/// Mean oracle SI-SDR of the output steered at `doa_deg`, over trailing 3 s
/// windows every 0.1 s. Windows with a silent reference are skipped.
pub fn mean_si_sdr(scene: &PreparedScene, doa_deg: f64) -> f64 {
    let out = scene.beamform_fixed(doa_deg);
    let r = scene.reference();
    let fs = scene.fs() as usize;
    let (w, stride) = (3 * fs, fs / 10);
    let mut qs = Vec::new();
    let mut end = w;
    while end <= out.len() {
        if let Ok(q) = si_sdr(&out[end - w..end], &r[end - w..end]) {
            qs.push(q);
        }
        end += stride;
    }
    assert!(!qs.is_empty());
    qs.iter().sum::<f64>() / qs.len() as f64
}

/// Per-tick mean and population standard deviation by Welford's update.
pub fn mean_std_oracle(series: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let ticks = series[0].len();
    let mut mean = vec![0.0; ticks];
    let mut std = vec![0.0; ticks];
    for i in 0..ticks {
        let (mut m, mut m2) = (0.0, 0.0);
        for (k, s) in series.iter().enumerate() {
            let d = s[i] - m;
            m += d / (k + 1) as f64;
            m2 += d * (s[i] - m);
        }
        mean[i] = m;
        std[i] = (m2 / series.len() as f64).sqrt();
    }
    (mean, std)
}
