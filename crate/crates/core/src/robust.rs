//! Generic RANSAC and robust losses.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// RANSAC parameters. Sampling uses ChaCha8 seeded from `seed`, so results
/// reproduce across platforms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacConfig {
    /// Inlier threshold on the residual norm, in pixels.
    pub threshold: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        Self {
            threshold: 4.0,
            confidence: 0.999,
            max_iterations: 1000,
            min_inliers: 20,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(Error::Invalid(format!("confidence must be in (0,1), got {}", self.confidence)));
        }
        if !(self.threshold > 0.0) {
            return Err(Error::Invalid(format!("threshold must be positive, got {}", self.threshold)));
        }
        Ok(())
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }
}

/// A model family plugged into [`ransac`]: minimal sampling size, the minimal
/// solver, the residual and an optional refit on an inlier set.
pub trait Estimator {
    type Model: Clone;

    fn sample_size(&self) -> usize;

    fn num_data(&self) -> usize;

    /// Candidate models from a minimal sample (may be empty).
    fn estimate(&self, sample: &[usize]) -> Vec<Self::Model>;

    /// Residual norm of datum `index`; `None` marks it as unusable for this model.
    fn residual(&self, model: &Self::Model, index: usize) -> Option<f64>;

    /// Re-estimate from an inlier set, starting from `model`.
    fn refit(&self, _model: &Self::Model, _inliers: &[usize]) -> Option<Self::Model> {
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RansacResult<M> {
    pub model: M,
    pub inlier_mask: Vec<bool>,
    pub iterations_used: usize,
    /// Root mean square residual over inliers.
    pub inlier_rms: f64,
}

impl<M> RansacResult<M> {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|b| **b).count()
    }

    pub fn inlier_indices(&self) -> Vec<usize> {
        self.inlier_mask
            .iter()
            .enumerate()
            .filter_map(|(k, b)| b.then_some(k))
            .collect()
    }
}

struct Score {
    count: usize,
    sum_sq: f64,
    mask: Vec<bool>,
}

impl Score {
    fn rms(&self) -> f64 {
        if self.count == 0 {
            f64::INFINITY
        } else {
            (self.sum_sq / self.count as f64).sqrt()
        }
    }

    fn better_than(&self, other: &Score) -> bool {
        self.count > other.count || (self.count == other.count && self.rms() < other.rms())
    }
}

fn score<E: Estimator>(est: &E, model: &E::Model, threshold: f64) -> Score {
    let n = est.num_data();
    let mut mask = vec![false; n];
    let mut count = 0;
    let mut sum_sq = 0.0;
    for (k, m) in mask.iter_mut().enumerate() {
        if let Some(r) = est.residual(model, k) {
            if r <= threshold {
                *m = true;
                count += 1;
                sum_sq += r * r;
            }
        }
    }
    Score { count, sum_sq, mask }
}

/// Number of iterations needed to draw one all-inlier sample with the given
/// confidence.
pub fn required_iterations(inlier_ratio: f64, sample_size: usize, confidence: f64) -> usize {
    let good = inlier_ratio.clamp(0.0, 1.0).powi(sample_size as i32);
    if good >= 1.0 {
        return 1;
    }
    if good <= 0.0 {
        return usize::MAX;
    }
    let n = (1.0 - confidence).ln() / (1.0 - good).ln();
    if n.is_finite() {
        n.ceil().max(1.0) as usize
    } else {
        usize::MAX
    }
}

/// Hypothesize-and-verify with adaptive stopping, followed by up to five rounds
/// of refit and inlier re-classification. Ties in inlier count go to the lower
/// inlier RMS. Deterministic for a fixed seed.
pub fn ransac<E: Estimator>(est: &E, config: &RansacConfig) -> Result<RansacResult<E::Model>> {
    config.validate()?;
    let n = est.num_data();
    let s = est.sample_size();
    if n < s {
        return Err(Error::Precondition(format!(
            "{n} data points but the minimal sample needs {s}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut best: Option<(E::Model, Score)> = None;
    let mut needed = config.max_iterations;
    let mut iterations = 0;
    while iterations < needed.min(config.max_iterations) {
        iterations += 1;
        let sample = index::sample(&mut rng, n, s).into_vec();
        for model in est.estimate(&sample) {
            let sc = score(est, &model, config.threshold);
            if best.as_ref().is_none_or(|(_, b)| sc.better_than(b)) {
                needed = required_iterations(sc.count as f64 / n as f64, s, config.confidence);
                best = Some((model, sc));
            }
        }
    }
    let Some((mut model, mut sc)) = best else {
        return Err(Error::NotEnoughInliers {
            found: 0,
            required: config.min_inliers.max(s),
        });
    };

    for _ in 0..5 {
        let inliers: Vec<usize> = (0..n).filter(|k| sc.mask[*k]).collect();
        let Some(refined) = est.refit(&model, &inliers) else { break };
        let rsc = score(est, &refined, config.threshold);
        if rsc.better_than(&sc) {
            let same_set = rsc.mask == sc.mask;
            model = refined;
            sc = rsc;
            if same_set {
                break;
            }
        } else {
            break;
        }
    }

    if sc.count < config.min_inliers {
        return Err(Error::NotEnoughInliers {
            found: sc.count,
            required: config.min_inliers,
        });
    }
    let inlier_rms = sc.rms();
    Ok(RansacResult {
        model,
        inlier_mask: sc.mask,
        iterations_used: iterations,
        inlier_rms,
    })
}

/// Robust loss applied to a squared residual norm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RobustLoss {
    /// Plain least squares, `ρ(s) = s`.
    Trivial,
    /// `ρ(s) = c² ln(1 + s / c²)`.
    Cauchy { scale: f64 },
}

impl Default for RobustLoss {
    fn default() -> Self {
        RobustLoss::Cauchy { scale: 1.0 }
    }
}

impl RobustLoss {
    /// `[ρ(s), ρ'(s), ρ''(s)]` for a squared norm `s`.
    pub fn evaluate(&self, s: f64) -> [f64; 3] {
        match *self {
            RobustLoss::Trivial => [s, 1.0, 0.0],
            RobustLoss::Cauchy { scale } => {
                let c2 = scale * scale;
                let sum = 1.0 + s / c2;
                let inv = 1.0 / sum;
                [c2 * sum.ln(), inv, -inv * inv / c2]
            }
        }
    }

    pub fn cost(&self, s: f64) -> f64 {
        self.evaluate(s)[0]
    }
}

/// Cauchy loss with unit scale, `ln(1 + s²)` of a squared residual `s²`.
pub fn cauchy_cost(squared_residual: f64) -> f64 {
    RobustLoss::Cauchy { scale: 1.0 }.cost(squared_residual)
}
