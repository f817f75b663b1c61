//! Uncertainty scores over confidence vectors, clone-versus-target
//! agreement measures, and the consecutive-round diversity statistic.
//!
//! All three uncertainty metrics are oriented so that larger means more
//! uncertain: they peak on the uniform vector and bottom out on one-hot
//! vectors.

use crate::gnn::{top_two, GnnError, GnnModel};
use crate::graph::Graph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("need at least 2 classes")]
    TooFewClasses,
    #[error("evaluation set is empty")]
    EmptySet,
    #[error("graph {index} has no ground-truth label")]
    MissingLabel { index: usize },
    #[error("sequences have different lengths: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error(transparent)]
    Gnn(#[from] GnnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UncertaintyMetric {
    Margin,
    Max,
    Entropy,
}

impl UncertaintyMetric {
    pub const ALL: [UncertaintyMetric; 3] =
        [UncertaintyMetric::Margin, UncertaintyMetric::Max, UncertaintyMetric::Entropy];

    pub fn name(&self) -> &'static str {
        match self {
            UncertaintyMetric::Margin => "margin",
            UncertaintyMetric::Max => "max",
            UncertaintyMetric::Entropy => "entropy",
        }
    }
}

impl std::fmt::Display for UncertaintyMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Second-largest minus largest probability; in [-1, 0].
pub fn margin(probs: &[f64]) -> Result<f64, MetricsError> {
    if probs.len() < 2 {
        return Err(MetricsError::TooFewClasses);
    }
    let (y1, y2) = top_two(probs);
    Ok(probs[y2] - probs[y1])
}

/// Negated top probability; in [-1, -1/C].
pub fn max_conf(probs: &[f64]) -> f64 {
    -probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Shannon entropy with natural log; zero-probability terms contribute 0.
pub fn entropy(probs: &[f64]) -> f64 {
    probs.iter().map(|&p| if p > 0.0 { -p * p.ln() } else { 0.0 }).sum()
}

/// Scores a confidence vector with the chosen metric.
pub fn uncertainty_score(metric: UncertaintyMetric, probs: &[f64]) -> Result<f64, MetricsError> {
    match metric {
        UncertaintyMetric::Margin => margin(probs),
        UncertaintyMetric::Max => Ok(max_conf(probs)),
        UncertaintyMetric::Entropy => Ok(entropy(probs)),
    }
}

/// Uncertainty of a graph under a model.
pub fn model_uncertainty(
    model: &GnnModel,
    g: &Graph,
    metric: UncertaintyMetric,
) -> Result<f64, MetricsError> {
    let trace = model.forward(g, None)?;
    uncertainty_score(metric, &trace.probs_vec())
}

/// Fraction of graphs on which clone and target hard predictions agree.
pub fn fidelity(
    clone: &GnnModel,
    target: &GnnModel,
    eval_set: &[&Graph],
) -> Result<f64, MetricsError> {
    if eval_set.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut agree = 0usize;
    for g in eval_set {
        if clone.predict_hard(g)? == target.predict_hard(g)? {
            agree += 1;
        }
    }
    Ok(agree as f64 / eval_set.len() as f64)
}

/// Fraction of graphs whose hard prediction matches the ground-truth label.
pub fn accuracy(model: &GnnModel, eval_set: &[&Graph]) -> Result<f64, MetricsError> {
    if eval_set.is_empty() {
        return Err(MetricsError::EmptySet);
    }
    let mut correct = 0usize;
    for (i, g) in eval_set.iter().enumerate() {
        let label = g.label.ok_or(MetricsError::MissingLabel { index: i })?;
        if model.predict_hard(g)? == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / eval_set.len() as f64)
}

/// Per-position squared Euclidean distance between the target model's logit
/// vectors on two aligned generated batches.
///
/// This is a researcher-side diagnostic with full-output access to the
/// target; it sits outside the attacker's hard-label query surface.
pub fn diversity_stat(
    target: &GnnModel,
    gen_t: &[Graph],
    gen_t1: &[Graph],
) -> Result<Vec<f64>, MetricsError> {
    if gen_t.len() != gen_t1.len() {
        return Err(MetricsError::LengthMismatch { a: gen_t.len(), b: gen_t1.len() });
    }
    gen_t
        .iter()
        .zip(gen_t1)
        .map(|(a, b)| {
            let la = target.forward(a, None)?.logits_vec();
            let lb = target.forward(b, None)?.logits_vec();
            Ok(la.iter().zip(&lb).map(|(x, y)| (x - y) * (x - y)).sum())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Exec;
    use crate::gnn::ModelConfig;
    use ndarray::Array2;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn margin_examples() {
        assert_eq!(margin(&[0.5, 0.5]).unwrap(), 0.0);
        assert_eq!(margin(&[1.0, 0.0]).unwrap(), -1.0);
        assert!((margin(&[0.6, 0.3, 0.1]).unwrap() + 0.3).abs() < 1e-12);
        assert!(margin(&[1.0]).is_err());
    }

    #[test]
    fn max_conf_examples() {
        assert_eq!(max_conf(&[1.0, 0.0]), -1.0);
        assert_eq!(max_conf(&[0.25; 4]), -0.25);
        assert_eq!(max_conf(&[0.7, 0.3]), -0.7);
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&[0.25; 4]) - 4.0f64.ln()).abs() < 1e-12);
        assert_eq!(entropy(&[1.0, 0.0, 0.0]), 0.0);
        assert!((entropy(&[0.5, 0.25, 0.25]) - 1.5 * 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn metrics_peak_at_uniform_and_bottom_at_onehot() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = 4;
        let uniform = vec![1.0 / c as f64; c];
        let mut onehot = vec![0.0; c];
        onehot[1] = 1.0;
        for _ in 0..200 {
            let mut p: Vec<f64> = (0..c).map(|_| rng.gen_range(0.0..1.0)).collect();
            let sum: f64 = p.iter().sum();
            p.iter_mut().for_each(|x| *x /= sum);
            for metric in UncertaintyMetric::ALL {
                let v = uncertainty_score(metric, &p).unwrap();
                let hi = uncertainty_score(metric, &uniform).unwrap();
                let lo = uncertainty_score(metric, &onehot).unwrap();
                assert!(v <= hi + 1e-12, "{metric}: {v} > {hi}");
                assert!(v >= lo - 1e-12, "{metric}: {v} < {lo}");
            }
        }
    }

    fn toy_graph(seed: u64) -> Graph {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats = Array2::from_shape_fn((5, 3), |_| rng.gen_range(-1.0..1.0));
        Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4)], feats, Some(0))
    }

    #[test]
    fn fidelity_of_model_with_itself_is_one() {
        let m = GnnModel::init(ModelConfig::new(3, 2), &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        let graphs: Vec<Graph> = (0..6).map(toy_graph).collect();
        let refs: Vec<&Graph> = graphs.iter().collect();
        assert_eq!(fidelity(&m, &m, &refs).unwrap(), 1.0);
    }

    #[test]
    fn fidelity_of_opposed_constant_models_is_zero() {
        // Zero parameters predict class 0 by tie-break; the target is
        // trained to predict class 1 on these graphs.
        let mut clone =
            GnnModel::init(ModelConfig::new(3, 2), &mut ChaCha8Rng::seed_from_u64(2))
                .unwrap();
        clone.zero_params();
        let mut target =
            GnnModel::init(ModelConfig::new(3, 2), &mut ChaCha8Rng::seed_from_u64(3))
                .unwrap();
        let graphs: Vec<Graph> = (0..4).map(toy_graph).collect();
        let refs: Vec<&Graph> = graphs.iter().collect();
        let labels = vec![1usize; refs.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        target.fit(&refs, &labels, 150, 0.01, &mut rng, Exec::Seq).unwrap();
        for g in &refs {
            assert_eq!(target.predict_hard(g).unwrap(), 1);
        }
        assert_eq!(fidelity(&clone, &target, &refs).unwrap(), 0.0);
    }

    #[test]
    fn accuracy_of_memorizing_model() {
        let mut m =
            GnnModel::init(ModelConfig::new(3, 2), &mut ChaCha8Rng::seed_from_u64(5))
                .unwrap();
        let g = toy_graph(9);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        m.fit(&[&g], &[1], 200, 0.01, &mut rng, Exec::Seq).unwrap();
        let mut labeled = g.clone();
        labeled.label = Some(1);
        assert_eq!(accuracy(&m, &[&labeled]).unwrap(), 1.0);
    }

    #[test]
    fn constant_model_accuracy_on_balanced_set() {
        let mut m =
            GnnModel::init(ModelConfig::new(3, 2), &mut ChaCha8Rng::seed_from_u64(7))
                .unwrap();
        m.zero_params();
        let graphs: Vec<Graph> = (0..10)
            .map(|i| {
                let mut g = toy_graph(i as u64);
                g.label = Some(i % 2);
                g
            })
            .collect();
        let refs: Vec<&Graph> = graphs.iter().collect();
        assert_eq!(accuracy(&m, &refs).unwrap(), 0.5);
    }

    #[test]
    fn accuracy_requires_labels() {
        let m = GnnModel::init(ModelConfig::new(3, 2), &mut ChaCha8Rng::seed_from_u64(8))
            .unwrap();
        let mut g = toy_graph(0);
        g.label = None;
        assert!(matches!(
            accuracy(&m, &[&g]),
            Err(MetricsError::MissingLabel { index: 0 })
        ));
        assert!(matches!(accuracy(&m, &[]), Err(MetricsError::EmptySet)));
    }

    #[test]
    fn diversity_zero_on_identical_batches() {
        let m = GnnModel::init(ModelConfig::new(3, 2), &mut ChaCha8Rng::seed_from_u64(9))
            .unwrap();
        let graphs: Vec<Graph> = (0..4).map(toy_graph).collect();
        let d = diversity_stat(&m, &graphs, &graphs).unwrap();
        assert!(d.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn diversity_flags_single_differing_pair() {
        let m = GnnModel::init(ModelConfig::new(3, 2), &mut ChaCha8Rng::seed_from_u64(10))
            .unwrap();
        let a: Vec<Graph> = (0..4).map(toy_graph).collect();
        let mut b = a.clone();
        b[2].set_edge(0, 2, true);
        let d = diversity_stat(&m, &a, &b).unwrap();
        let nonzero: Vec<usize> =
            d.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(i, _)| i).collect();
        assert_eq!(nonzero, vec![2]);
    }

    #[test]
    fn diversity_invariant_under_shared_reordering() {
        let m = GnnModel::init(ModelConfig::new(3, 2), &mut ChaCha8Rng::seed_from_u64(11))
            .unwrap();
        let a: Vec<Graph> = (0..5).map(toy_graph).collect();
        let b: Vec<Graph> = (5..10).map(toy_graph).collect();
        let d1 = diversity_stat(&m, &a, &b).unwrap();
        let perm = [3usize, 0, 4, 1, 2];
        let ap: Vec<Graph> = perm.iter().map(|&i| a[i].clone()).collect();
        let bp: Vec<Graph> = perm.iter().map(|&i| b[i].clone()).collect();
        let d2 = diversity_stat(&m, &ap, &bp).unwrap();
        let mut s1 = d1.clone();
        let mut s2 = d2.clone();
        s1.sort_by(f64::total_cmp);
        s2.sort_by(f64::total_cmp);
        for (x, y) in s1.iter().zip(&s2) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn diversity_rejects_length_mismatch() {
        let m = GnnModel::init(ModelConfig::new(3, 2), &mut ChaCha8Rng::seed_from_u64(12))
            .unwrap();
        let a: Vec<Graph> = (0..3).map(toy_graph).collect();
        let b: Vec<Graph> = (0..2).map(toy_graph).collect();
        assert!(matches!(
            diversity_stat(&m, &a, &b),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }
}
