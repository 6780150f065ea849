//! Progressive regression over a decomposition tree.
//!
//! Given head probabilities from the classifier, the probability that the
//! watch time lands in leaf `k` is the product of the chosen branch
//! probabilities along the root-to-leaf path, so the predicted watch time is
//! a multinomial random variable over the leaves. Its expectation uses the
//! leaf interval midpoints, and its variance doubles as an explicit
//! uncertainty measure.
//!
//! The training objective combines three terms, maximized in its original
//! form and minimized here as the negation:
//!
//! ```text
//! loss = alpha1 * nll(target leaf)
//!      + alpha2 * sqrt(variance + 1e-12)
//!      + alpha3 * (expectation - target)^2
//! ```
//!
//! The squared regression term keeps the gradient smooth; training logs
//! report the absolute error alongside it.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Dataset;
use crate::net::{GradientBuffer, MultiHeadNet, Optimizer, OptimizerConfig, PROB_EPS};
use crate::ranks::{DecompositionTree, OrdinalScale};

/// Smoothing constant inside the standard-deviation square root; the bare
/// sqrt has an unbounded gradient at zero variance.
pub const STD_SMOOTHING: f64 = 1e-12;

/// Multinomial distribution of the predicted watch time over the leaves.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafDistribution {
    /// One probability per leaf, summing to 1.
    pub probs: Vec<f64>,
    /// Expected watch time in seconds.
    pub expectation: f64,
    /// Variance of the predicted watch time, clamped at zero.
    pub variance: f64,
}

impl LeafDistribution {
    /// Smoothed standard deviation, the uncertainty term of the objective.
    pub fn std_dev(&self) -> f64 {
        (self.variance + STD_SMOOTHING).sqrt()
    }
}

/// Weights of the three objective components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Path log-likelihood weight.
    pub alpha1: f64,
    /// Uncertainty (standard deviation) weight.
    pub alpha2: f64,
    /// Regression-error weight.
    pub alpha3: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 1.0,
            alpha3: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.alpha1, self.alpha2, self.alpha3];
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        if ws.iter().all(|w| *w == 0.0) {
            return Err(Error::InvalidArgument(
                "at least one loss weight must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Batch training settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub weights: LossWeights,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            weights: LossWeights::default(),
            batch_size: 256,
            epochs: 10,
            optimizer: OptimizerConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Per-epoch mean loss components.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean negative path log-likelihood.
    pub nll: f64,
    /// Mean smoothed standard deviation of the leaf distribution.
    pub std_term: f64,
    /// Mean absolute regression error |expectation - target|.
    pub mse_term: f64,
    /// Mean total minimized loss.
    pub total: f64,
}

/// Line-per-epoch training record.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochStats>,
}

/// Per-sample loss parts produced by a method-specific loss closure.
#[derive(Clone, Copy, Debug)]
pub(crate) struct SampleLoss {
    pub total: f64,
    pub nll: f64,
    pub std_term: f64,
    pub mse_term: f64,
}

/// Leaf probabilities and moments implied by the head outputs.
///
/// Inputs are clamped into `[PROB_EPS, 1 - PROB_EPS]`, matching the network's
/// output contract, so every leaf keeps strictly positive probability.
pub fn leaf_distribution(
    tree: &DecompositionTree,
    head_probs: &[f64],
) -> Result<LeafDistribution> {
    check_heads(tree, head_probs)?;
    let mids = tree.leaf_midpoints();
    let mut probs = vec![0.0; tree.leaf_count()];
    let mut expectation = 0.0;
    let mut second_moment = 0.0;
    for leaf in 0..tree.leaf_count() {
        let mut p = 1.0;
        for step in tree.path_and_labels(leaf)? {
            p *= branch_prob(head_probs[step.head], step.right);
        }
        probs[leaf] = p;
        expectation += p * mids[leaf];
        second_moment += p * mids[leaf] * mids[leaf];
    }
    let variance = (second_moment - expectation * expectation).max(0.0);
    Ok(LeafDistribution {
        probs,
        expectation,
        variance,
    })
}

/// Sum of log branch probabilities along the target leaf's path; equals the
/// log of that leaf's probability.
pub fn log_likelihood(
    tree: &DecompositionTree,
    head_probs: &[f64],
    target_leaf: usize,
) -> Result<f64> {
    check_heads(tree, head_probs)?;
    let mut ll = 0.0;
    for step in tree.path_and_labels(target_leaf)? {
        ll += branch_prob(head_probs[step.head], step.right).ln();
    }
    Ok(ll)
}

/// Loss components of one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    /// Total minimized objective.
    pub total: f64,
    /// Negative path log-likelihood.
    pub nll: f64,
    /// Smoothed standard deviation.
    pub std_dev: f64,
    /// Squared regression error, the term actually optimized.
    pub sq_err: f64,
    /// Absolute regression error, the value reported in logs.
    pub abs_err: f64,
}

/// Minimized loss for one sample plus its exact gradient with respect to
/// each head output, ready to chain into the network's backward pass.
pub fn loss_and_grads(
    tree: &DecompositionTree,
    head_probs: &[f64],
    target_leaf: usize,
    target: f64,
    weights: &LossWeights,
) -> Result<(LossBreakdown, Vec<f64>)> {
    check_heads(tree, head_probs)?;
    weights.validate()?;
    if target_leaf >= tree.leaf_count() {
        return Err(Error::InvalidArgument(format!(
            "target leaf {target_leaf} out of range"
        )));
    }
    if !target.is_finite() {
        return Err(Error::NonFinite("regression target must be finite".into()));
    }
    Ok(loss_parts(tree, head_probs, target_leaf, target, weights))
}

/// Core loss computation; inputs validated by the caller.
fn loss_parts(
    tree: &DecompositionTree,
    head_probs: &[f64],
    target_leaf: usize,
    target: f64,
    weights: &LossWeights,
) -> (LossBreakdown, Vec<f64>) {
    let mids = tree.leaf_midpoints();
    let num_heads = tree.num_heads();
    let mut d_expect = vec![0.0; num_heads];
    let mut d_second = vec![0.0; num_heads];

    let mut expectation = 0.0;
    let mut second_moment = 0.0;
    for leaf in 0..tree.leaf_count() {
        let path = tree.path_and_labels(leaf).expect("leaf in range");
        let mut p = 1.0;
        for step in path {
            p *= branch_prob(head_probs[step.head], step.right);
        }
        let mid = mids[leaf];
        expectation += p * mid;
        second_moment += p * mid * mid;
        for step in path {
            // d p / d o_h = +- p / branch, sign by turn direction.
            let branch = branch_prob(head_probs[step.head], step.right);
            let slope = if step.right { p / branch } else { -p / branch };
            d_expect[step.head] += mid * slope;
            d_second[step.head] += mid * mid * slope;
        }
    }

    let variance = (second_moment - expectation * expectation).max(0.0);
    let std_dev = (variance + STD_SMOOTHING).sqrt();
    let err = expectation - target;

    let mut nll = 0.0;
    let mut grads = vec![0.0; num_heads];
    for step in tree.path_and_labels(target_leaf).expect("leaf in range") {
        let branch = branch_prob(head_probs[step.head], step.right);
        nll -= branch.ln();
        // d(-ln branch)/d o_h: right turn -1/o, left turn +1/(1-o).
        grads[step.head] += if step.right {
            -weights.alpha1 / branch
        } else {
            weights.alpha1 / branch
        };
    }

    for h in 0..num_heads {
        let d_var = d_second[h] - 2.0 * expectation * d_expect[h];
        let d_std = d_var / (2.0 * std_dev);
        grads[h] += weights.alpha2 * d_std + weights.alpha3 * 2.0 * err * d_expect[h];
    }

    let breakdown = LossBreakdown {
        total: weights.alpha1 * nll + weights.alpha2 * std_dev + weights.alpha3 * err * err,
        nll,
        std_dev,
        sq_err: err * err,
        abs_err: err.abs(),
    };
    (breakdown, grads)
}

fn branch_prob(head: f64, right: bool) -> f64 {
    let o = head.clamp(PROB_EPS, 1.0 - PROB_EPS);
    if right {
        o
    } else {
        1.0 - o
    }
}

fn check_heads(tree: &DecompositionTree, head_probs: &[f64]) -> Result<()> {
    if head_probs.len() != tree.num_heads() {
        return Err(Error::LengthMismatch {
            left: head_probs.len(),
            right: tree.num_heads(),
        });
    }
    Ok(())
}

/// Generic mini-batch loop shared by every method in this crate.
///
/// `per_sample` receives the row index, the forward head probabilities, and
/// a zeroed upstream-gradient slot to fill; it returns the sample's loss
/// parts. Per-sample gradients are averaged over each batch, batches follow
/// a seeded shuffle per epoch, and a non-finite loss or gradient aborts with
/// [`Error::Diverged`].
pub(crate) fn run_training<R, F>(
    features: &[R],
    net: &mut MultiHeadNet,
    config: &TrainConfig,
    mut per_sample: F,
) -> Result<TrainingLog>
where
    R: AsRef<[f64]>,
    F: FnMut(usize, &[f64], &mut [f64]) -> SampleLoss,
{
    config.validate()?;
    if features.is_empty() {
        return Err(Error::InvalidArgument("training data is empty".into()));
    }

    let n = features.len();
    let mut optimizer = Optimizer::new(config.optimizer.clone(), net);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut grads = GradientBuffer::zeros_like(net);
    let mut upstream = vec![0.0; net.num_heads()];
    let mut log = TrainingLog::default();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = (0.0, 0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_size) {
            grads.zero();
            for &i in batch {
                let cache = net.forward_cache(features[i].as_ref())?;
                upstream.fill(0.0);
                let loss = per_sample(i, cache.head_probs(), &mut upstream);
                if !loss.total.is_finite() {
                    return Err(Error::Diverged(format!(
                        "non-finite loss at epoch {epoch}, sample {i}"
                    )));
                }
                net.accumulate_gradients(&cache, &upstream, &mut grads);
                sums.0 += loss.nll;
                sums.1 += loss.std_term;
                sums.2 += loss.mse_term;
                sums.3 += loss.total;
            }
            grads.scale(1.0 / batch.len() as f64);
            optimizer.step(net, &grads)?;
        }
        let inv = 1.0 / n as f64;
        log.epochs.push(EpochStats {
            epoch,
            nll: sums.0 * inv,
            std_term: sums.1 * inv,
            mse_term: sums.2 * inv,
            total: sums.3 * inv,
        });
    }
    Ok(log)
}

/// Trains the multi-head net on a dataset: each sample is assigned to its
/// leaf, to the classifiers along the leaf's path, and contributes the
/// three-term loss.
pub fn train(
    data: &Dataset,
    scale: &OrdinalScale,
    tree: &DecompositionTree,
    net: &mut MultiHeadNet,
    config: &TrainConfig,
) -> Result<TrainingLog> {
    data.validate()?;
    if net.num_heads() != tree.num_heads() {
        return Err(Error::LengthMismatch {
            left: net.num_heads(),
            right: tree.num_heads(),
        });
    }
    let leaves: Vec<usize> = data
        .watch_time
        .iter()
        .map(|t| scale.leaf_of(*t))
        .collect::<Result<_>>()?;
    let weights = config.weights;
    run_training(&data.features, net, config, |i, probs, upstream| {
        let (parts, grad) = loss_parts(tree, probs, leaves[i], data.watch_time[i], &weights);
        upstream.copy_from_slice(&grad);
        SampleLoss {
            total: parts.total,
            nll: parts.nll,
            std_term: parts.std_dev,
            mse_term: parts.abs_err,
        }
    })
}

/// A trained scale/tree/net triple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TpmModel {
    pub scale: OrdinalScale,
    pub tree: DecompositionTree,
    pub net: MultiHeadNet,
}

impl TpmModel {
    /// Full leaf distribution for one feature vector.
    pub fn predict(&self, x: &[f64]) -> Result<LeafDistribution> {
        let head_probs = self.net.forward(x)?;
        leaf_distribution(&self.tree, &head_probs)
    }
}

/// Prior-weighted expectation over several trees.
///
/// With a single model and prior `[1.0]` this is exactly
/// `predict(x).expectation`.
pub fn ensemble_predict(models: &[&TpmModel], prior: &[f64], x: &[f64]) -> Result<f64> {
    if models.len() != prior.len() {
        return Err(Error::LengthMismatch {
            left: models.len(),
            right: prior.len(),
        });
    }
    if models.is_empty() {
        return Err(Error::InvalidArgument("ensemble is empty".into()));
    }
    if prior.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::InvalidArgument("prior must be non-negative".into()));
    }
    let total: f64 = prior.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "prior must sum to 1, got {total}"
        )));
    }
    let mut expectation = 0.0;
    for (model, p) in models.iter().zip(prior) {
        expectation += p * model.predict(x)?.expectation;
    }
    Ok(expectation)
}
