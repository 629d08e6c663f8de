use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::landmarks::{per_landmark_errors, FrameTag, LandmarkSet, MetricConfig};
use crate::model::Network;
use crate::numerics::Real;

use super::data::{gather_batch, Session, WindowIndex};

/// Anything that maps windows to interleaved normalized landmark coordinates.
pub trait Predictor {
    fn predict(&self, sessions: &[Session], idx: &[WindowIndex]) -> Result<Vec<Vec<f64>>>;
}

pub struct NetworkPredictor<'a, T> {
    pub net: &'a Network<T>,
    pub batch: usize,
}

impl<'a, T: Real> NetworkPredictor<'a, T> {
    pub fn new(net: &'a Network<T>) -> Self {
        NetworkPredictor { net, batch: 256 }
    }
}

impl<T: Real> Predictor for NetworkPredictor<'_, T> {
    fn predict(&self, sessions: &[Session], idx: &[WindowIndex]) -> Result<Vec<Vec<f64>>> {
        let seq = self.net.config().seq_len;
        let mut out = Vec::with_capacity(idx.len());
        for chunk in idx.chunks(self.batch.max(1)) {
            let (x, _) = gather_batch::<T>(sessions, chunk, seq)?;
            let y = self.net.predict(x)?;
            let d = y.shape()[1];
            out.extend(y.data().chunks(d).map(|r| r.iter().map(|v| v.f64()).collect()));
        }
        Ok(out)
    }
}

/// Returns the recorded target of each window's last frame.
pub struct GroundTruthPredictor;

impl Predictor for GroundTruthPredictor {
    fn predict(&self, sessions: &[Session], idx: &[WindowIndex]) -> Result<Vec<Vec<f64>>> {
        Ok(idx
            .iter()
            .map(|w| sessions[w.session].targets[w.last].to_interleaved())
            .collect())
    }
}

/// Predicts the same landmark set for every window.
pub struct ConstantPredictor {
    pub value: Vec<f64>,
}

impl ConstantPredictor {
    /// Mean target over the given windows.
    pub fn fit(sessions: &[Session], idx: &[WindowIndex]) -> Result<Self> {
        if idx.is_empty() {
            return Err(Error::Insufficient("no windows to average".into()));
        }
        let mut value = vec![0.0; sessions[idx[0].session].targets[0].points.len() * 2];
        for w in idx {
            for (m, v) in value.iter_mut().zip(sessions[w.session].targets[w.last].to_interleaved()) {
                *m += v;
            }
        }
        value.iter_mut().for_each(|m| *m /= idx.len() as f64);
        Ok(ConstantPredictor { value })
    }
}

impl Predictor for ConstantPredictor {
    fn predict(&self, _: &[Session], idx: &[WindowIndex]) -> Result<Vec<Vec<f64>>> {
        Ok(vec![self.value.clone(); idx.len()])
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct Report {
    pub mae_mm: f64,
    pub nme_pct: f64,
    pub std_mae_mm: f64,
    pub std_nme_pct: f64,
    pub p50_latency_ms: f64,
    pub p95_latency_ms: f64,
    #[serde(skip)]
    pub windows: usize,
    #[serde(skip)]
    pub per_landmark_mm: Vec<f64>,
    /// Per-window MAE, ascending.
    #[serde(skip)]
    pub cdf_mae_mm: Vec<f64>,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Wall-clock time of single-window predictions on up to `samples` evenly
/// spaced windows; returns (p50, p95) in milliseconds.
pub fn measure_latency(pred: &dyn Predictor, sessions: &[Session], idx: &[WindowIndex], samples: usize) -> Result<(f64, f64)> {
    if idx.is_empty() || samples == 0 {
        return Err(Error::Insufficient("no windows to time".into()));
    }
    let n = samples.min(idx.len());
    let mut times = Vec::with_capacity(n);
    for i in 0..n {
        let w = idx[i * idx.len() / n];
        let t = Instant::now();
        pred.predict(sessions, &[w])?;
        times.push(t.elapsed().as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    Ok((percentile(&times, 50.0), percentile(&times, 95.0)))
}

/// Scores `pred` on the given windows.
pub fn evaluate(
    pred: &dyn Predictor,
    sessions: &[Session],
    idx: &[WindowIndex],
    metric: &MetricConfig,
    latency_samples: usize,
) -> Result<Report> {
    metric.validate()?;
    if idx.is_empty() {
        return Err(Error::Insufficient("no test windows".into()));
    }
    let predictions = pred.predict(sessions, idx)?;
    let mut truth = Vec::with_capacity(idx.len());
    let mut guess = Vec::with_capacity(idx.len());
    for (w, p) in idx.iter().zip(&predictions) {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "prediction for session {} frame {}",
                sessions[w.session].id, w.last
            )));
        }
        truth.push(sessions[w.session].targets[w.last].clone());
        guess.push(LandmarkSet::from_interleaved(p, FrameTag::Normalized)?);
    }
    let errs = per_landmark_errors(&truth, &guess, metric)?;
    let n = errs.frame_mae_sorted.len() as f64;
    let mae = errs.frame_mae_sorted.iter().sum::<f64>() / n;
    let var = errs.frame_mae_sorted.iter().map(|v| (v - mae).powi(2)).sum::<f64>() / n;
    let to_nme = 100.0 / metric.d_real_mm;
    let (p50, p95) = if latency_samples > 0 {
        measure_latency(pred, sessions, idx, latency_samples)?
    } else {
        (0.0, 0.0)
    };
    Ok(Report {
        mae_mm: mae,
        nme_pct: mae * to_nme,
        std_mae_mm: var.sqrt(),
        std_nme_pct: var.sqrt() * to_nme,
        p50_latency_ms: p50,
        p95_latency_ms: p95,
        windows: idx.len(),
        per_landmark_mm: errs.per_landmark_mm,
        cdf_mae_mm: errs.frame_mae_sorted,
    })
}

/// Writes `summary.json`, `per_landmark.csv` and `cdf.csv` into `dir`.
pub fn write_report(dir: &Path, report: &Report) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(dir.join("summary.json"), json + "\n")?;
    let mut per = String::from("landmark_id,mean_mae_mm\n");
    for (i, v) in report.per_landmark_mm.iter().enumerate() {
        per.push_str(&format!("{i},{v}\n"));
    }
    std::fs::write(dir.join("per_landmark.csv"), per)?;
    let mut cdf = String::from("mae_mm,cdf\n");
    let n = report.cdf_mae_mm.len() as f64;
    for (i, v) in report.cdf_mae_mm.iter().enumerate() {
        cdf.push_str(&format!("{v},{}\n", (i + 1) as f64 / n));
    }
    std::fs::write(dir.join("cdf.csv"), cdf)?;
    Ok(())
}
