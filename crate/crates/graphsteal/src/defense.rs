//! Defender-side countermeasures: response-label noise and a pluggable
//! generated-graph detector with a statistic-feature logistic baseline.

use crate::graph::Graph;
use crate::stats;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

const LOGISTIC_ITERS: usize = 500;
const LOGISTIC_LR: f64 = 0.5;
const HOLDOUT_FRACTION: f64 = 0.2;

#[derive(Debug, Error)]
pub enum DefenseError {
    #[error("detector needs non-empty real and generated sets")]
    EmptySet,
}

/// With probability `p` returns a uniformly random class other than the true
/// label, otherwise the true label.
pub fn noisy_label(
    true_label: usize,
    num_classes: usize,
    p: f64,
    rng: &mut impl Rng,
) -> usize {
    assert!(num_classes >= 2, "label noise needs at least 2 classes");
    if rng.gen::<f64>() < p {
        let offset = rng.gen_range(1..num_classes);
        (true_label + offset) % num_classes
    } else {
        true_label
    }
}

/// Anything that can assign a suspicion score in [0, 1] to a graph; a
/// calibrated threshold turns scores into detections. External detectors
/// plug in through this trait.
pub trait GraphScorer {
    fn score(&self, g: &Graph) -> f64;
    fn threshold(&self) -> f64;
}

/// Logistic scorer over fixed-length summaries of the graph statistics
/// vector (size, density, degree moments, triangle/clique rates,
/// clustering, transitivity, connectivity).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Detector {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub threshold: f64,
    /// Per-feature standardization (mean, stddev) fit on training data.
    pub norm: Vec<(f64, f64)>,
}

impl GraphScorer for Detector {
    fn score(&self, g: &Graph) -> f64 {
        let z = self.standardize(&detector_features(g));
        sigmoid(dot(&self.weights, &z) + self.bias)
    }

    fn threshold(&self) -> f64 {
        self.threshold
    }
}

impl Detector {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.norm)
            .map(|(v, (mean, std))| if *std > 0.0 { (v - mean) / std } else { 0.0 })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("detector serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Fixed-length feature vector derived from the statistic vector; counts are
/// rate-normalized by node count so sizes mix.
pub fn detector_features(g: &Graph) -> Vec<f64> {
    let n = g.n() as f64;
    let s = stats::stat_vector(g);
    let degs: Vec<f64> = g.degrees().iter().map(|&d| d as f64).collect();
    let mean_deg = degs.iter().sum::<f64>() / n;
    let var_deg = degs.iter().map(|d| (d - mean_deg) * (d - mean_deg)).sum::<f64>() / n;
    let possible = n * (n - 1.0) / 2.0;
    let density = if possible > 0.0 { g.num_edges() as f64 / possible } else { 0.0 };
    vec![
        n,
        density,
        mean_deg,
        var_deg.sqrt(),
        s.triangles / n,
        s.clustering,
        s.transitivity,
        s.cliques / n,
        s.connectivity,
    ]
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fits the baseline logistic detector on real (label 0) versus generated
/// (label 1) graphs and calibrates the threshold to maximize balanced
/// accuracy on a 20% tail holdout of each set.
pub fn baseline_detector_fit(
    real: &[&Graph],
    generated: &[&Graph],
) -> Result<Detector, DefenseError> {
    if real.is_empty() || generated.is_empty() {
        return Err(DefenseError::EmptySet);
    }
    fn split<'a>(set: &[&'a Graph]) -> (Vec<&'a Graph>, Vec<&'a Graph>) {
        let holdout = ((set.len() as f64 * HOLDOUT_FRACTION) as usize).min(set.len() - 1);
        let cut = set.len() - holdout;
        (set[..cut].to_vec(), set[cut..].to_vec())
    }
    let (real_train, real_held) = split(real);
    let (gen_train, gen_held) = split(generated);

    let mut xs: Vec<Vec<f64>> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for g in &real_train {
        xs.push(detector_features(g));
        ys.push(0.0);
    }
    for g in &gen_train {
        xs.push(detector_features(g));
        ys.push(1.0);
    }
    let dim = xs[0].len();
    let norm: Vec<(f64, f64)> = (0..dim)
        .map(|j| {
            let mean = xs.iter().map(|x| x[j]).sum::<f64>() / xs.len() as f64;
            let var =
                xs.iter().map(|x| (x[j] - mean) * (x[j] - mean)).sum::<f64>() / xs.len() as f64;
            (mean, var.sqrt())
        })
        .collect();
    let zs: Vec<Vec<f64>> = xs
        .iter()
        .map(|x| {
            x.iter()
                .zip(&norm)
                .map(|(v, (m, s))| if *s > 0.0 { (v - m) / s } else { 0.0 })
                .collect()
        })
        .collect();

    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    for _ in 0..LOGISTIC_ITERS {
        let mut gw = vec![0.0; dim];
        let mut gb = 0.0;
        for (z, &y) in zs.iter().zip(&ys) {
            let err = sigmoid(dot(&weights, z) + bias) - y;
            for (gwj, zj) in gw.iter_mut().zip(z) {
                *gwj += err * zj;
            }
            gb += err;
        }
        let scale = LOGISTIC_LR / zs.len() as f64;
        for (w, g) in weights.iter_mut().zip(&gw) {
            *w -= scale * g;
        }
        bias -= scale * gb;
    }

    let mut detector = Detector { weights, bias, threshold: 0.5, norm };
    // Calibrate on the holdout (falling back to training data when a set is
    // too small to spare any graphs).
    let cal_real = if real_held.is_empty() { real_train.clone() } else { real_held };
    let cal_gen = if gen_held.is_empty() { gen_train.clone() } else { gen_held };
    let mut candidates: Vec<f64> = cal_real
        .iter()
        .chain(&cal_gen)
        .map(|g| detector.score(g))
        .collect();
    candidates.push(0.0);
    candidates.push(1.0);
    candidates.sort_by(f64::total_cmp);
    let mut best = (f64::MIN, 0.5);
    for &t in &candidates {
        let acc = balanced_accuracy_at(&detector, t, &cal_real, &cal_gen);
        if acc > best.0 {
            best = (acc, t);
        }
    }
    detector.threshold = best.1;
    Ok(detector)
}

fn balanced_accuracy_at(
    scorer: &dyn GraphScorer,
    threshold: f64,
    real: &[&Graph],
    generated: &[&Graph],
) -> f64 {
    let tn = real.iter().filter(|g| scorer.score(g) < threshold).count() as f64;
    let tp = generated.iter().filter(|g| scorer.score(g) >= threshold).count() as f64;
    (tp / generated.len() as f64 + tn / real.len() as f64) / 2.0
}

/// Balanced accuracy of a detector at its calibrated threshold, with
/// generated graphs as the positive class.
pub fn detection_accuracy(
    scorer: &dyn GraphScorer,
    real: &[&Graph],
    generated: &[&Graph],
) -> f64 {
    balanced_accuracy_at(scorer, scorer.threshold(), real, generated)
}
