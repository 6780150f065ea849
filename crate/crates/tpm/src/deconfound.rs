//! Backdoor adjustment over a scalar confounder.
//!
//! Video duration (or any scalar column) confounds watch-time prediction by
//! driving both the features and the label. Blocking the confounder-to-
//! feature edge replaces `E[T | X]` with the adjusted estimate
//!
//! ```text
//! E[T | do(X)] = sum_d P(D = d) * E[T | X, D = d]
//! ```
//!
//! over an equal-frequency partition of the confounder. The conditional
//! models `E[T | X, D = d]` are ordinary decomposition-tree models trained
//! per group: either one shared net that receives the group id as a one-hot
//! feature (the default; hidden layers stay shared across groups exactly as
//! they are shared across tree tasks) or fully independent nets per group.
//!
//! The group prior `P(D = d)` is estimated from training data only.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Dataset;
use crate::model::{run_training, LeafDistribution, SampleLoss, TrainConfig, TrainingLog};
use crate::model::{leaf_distribution, loss_and_grads};
use crate::net::{MultiHeadNet, NetConfig};
use crate::ranks::{DecompositionTree, OrdinalScale, TreeKind};
use crate::stats::quantile_sorted;

/// Equal-frequency grouping of a scalar confounder with its empirical prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfounderPartition {
    /// Internal cut points, strictly increasing, length `num_groups - 1`.
    cuts: Vec<f64>,
    /// `P(D = d)` per group, estimated from the training values.
    prior: Vec<f64>,
}

impl ConfounderPartition {
    /// Builds an equal-frequency partition at the quantiles `g / num_groups`.
    ///
    /// Duplicate cut points are nudged to keep strict ordering; fewer
    /// distinct values than groups is an error.
    pub fn from_values(values: &[f64], num_groups: usize) -> Result<Self> {
        if num_groups == 0 {
            return Err(Error::InvalidArgument("num_groups must be at least 1".into()));
        }
        if values.is_empty() {
            return Err(Error::InvalidArgument(
                "cannot build a partition from no values".into(),
            ));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "confounder values must be finite, got {bad}"
            )));
        }

        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut distinct = 1usize;
        for w in sorted.windows(2) {
            if w[1] > w[0] {
                distinct += 1;
            }
        }
        if distinct < num_groups {
            return Err(Error::InsufficientLabelDiversity {
                distinct,
                required: num_groups,
            });
        }

        let mut cuts: Vec<f64> = (1..num_groups)
            .map(|g| quantile_sorted(&sorted, g as f64 / num_groups as f64))
            .collect();
        for i in 1..cuts.len() {
            if cuts[i] <= cuts[i - 1] {
                cuts[i] = cuts[i - 1].next_up();
            }
        }

        let mut counts = vec![0usize; num_groups];
        let partition = Self {
            cuts,
            prior: Vec::new(),
        };
        for v in values {
            counts[partition.group_index(*v)] += 1;
        }
        let prior = counts
            .iter()
            .map(|c| *c as f64 / values.len() as f64)
            .collect();
        Ok(Self {
            prior,
            ..partition
        })
    }

    pub fn num_groups(&self) -> usize {
        self.prior.len().max(self.cuts.len() + 1)
    }

    pub fn prior(&self) -> &[f64] {
        &self.prior
    }

    pub fn cuts(&self) -> &[f64] {
        &self.cuts
    }

    fn group_index(&self, value: f64) -> usize {
        self.cuts.partition_point(|c| *c <= value)
    }

    /// Group of a confounder value; out-of-range values clamp to the extreme
    /// groups, NaN is rejected.
    pub fn group_of(&self, value: f64) -> Result<usize> {
        if value.is_nan() {
            return Err(Error::NonFinite("confounder value is NaN".into()));
        }
        Ok(self.group_index(value))
    }
}

/// How conditional models share parameters across groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Conditioning {
    /// One net for all groups; the group id enters as a one-hot feature.
    SharedOneHot,
    /// One independent net per group.
    PerGroupNets,
}

/// Whether ordinal scales are fitted per group or once globally.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleScope {
    PerGroup,
    Shared,
}

/// Settings for backdoor-adjusted training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeconfoundConfig {
    pub num_groups: usize,
    pub conditioning: Conditioning,
    pub scale_scope: ScaleScope,
    pub num_leaves: usize,
    pub tree_kind: TreeKind,
}

impl Default for DeconfoundConfig {
    fn default() -> Self {
        Self {
            num_groups: 32,
            conditioning: Conditioning::SharedOneHot,
            scale_scope: ScaleScope::PerGroup,
            num_leaves: 32,
            tree_kind: TreeKind::Balanced,
        }
    }
}

/// Inference mode for a deconfounded model: aggregate over the confounder
/// prior, or condition on a known confounder value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PredictMode {
    Do,
    Conditional,
}

/// Group-conditional decomposition-tree models plus the confounder prior.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeconfoundedModel {
    pub partition: ConfounderPartition,
    pub conditioning: Conditioning,
    /// One scale per group, or a single shared scale.
    pub scales: Vec<OrdinalScale>,
    /// Trees matching `scales`.
    pub trees: Vec<DecompositionTree>,
    /// One net ([`Conditioning::SharedOneHot`]) or one per group.
    pub nets: Vec<MultiHeadNet>,
}

impl DeconfoundedModel {
    pub fn num_groups(&self) -> usize {
        self.partition.num_groups()
    }

    fn uses_one_hot(&self) -> bool {
        self.conditioning == Conditioning::SharedOneHot && self.num_groups() > 1
    }

    pub fn scale_for(&self, group: usize) -> &OrdinalScale {
        if self.scales.len() == 1 {
            &self.scales[0]
        } else {
            &self.scales[group]
        }
    }

    pub fn tree_for(&self, group: usize) -> &DecompositionTree {
        if self.trees.len() == 1 {
            &self.trees[0]
        } else {
            &self.trees[group]
        }
    }

    /// Conditional leaf distribution given the sample's confounder value.
    pub fn predict_conditional(&self, x: &[f64], confounder: f64) -> Result<LeafDistribution> {
        let group = self.partition.group_of(confounder)?;
        self.predict_group(x, group)
    }

    /// Conditional leaf distribution for an explicit group id.
    pub fn predict_group(&self, x: &[f64], group: usize) -> Result<LeafDistribution> {
        if group >= self.num_groups() {
            return Err(Error::InvalidArgument(format!(
                "unknown confounder group {group}"
            )));
        }
        let tree = self.tree_for(group);
        let probs = if self.uses_one_hot() {
            let augmented = augment_one_hot(x, group, self.num_groups());
            self.nets[0].forward(&augmented)?
        } else if self.nets.len() == 1 {
            self.nets[0].forward(x)?
        } else {
            self.nets[group].forward(x)?
        };
        leaf_distribution(tree, &probs)
    }

    /// Backdoor-adjusted expectation: the prior-weighted sum of conditional
    /// expectations over every group. Never reads the sample's own
    /// confounder.
    pub fn predict_do(&self, x: &[f64]) -> Result<f64> {
        let mut expectation = 0.0;
        for group in 0..self.num_groups() {
            expectation += self.partition.prior()[group] * self.predict_group(x, group)?.expectation;
        }
        Ok(expectation)
    }
}

/// Appends a one-hot group indicator to a feature vector.
pub(crate) fn augment_one_hot(x: &[f64], group: usize, num_groups: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() + num_groups);
    out.extend_from_slice(x);
    for g in 0..num_groups {
        out.push(if g == group { 1.0 } else { 0.0 });
    }
    out
}

/// Trains a deconfounded model: partition the confounder, fit scales per
/// group (or one shared scale), and minimize the three-term objective with
/// every sample conditioned on its own group.
///
/// With a single group this is exactly the plain pipeline: same scale, same
/// net shape, same optimizer trajectory, bit-identical parameters for a
/// fixed seed.
pub fn train_deconfounded(
    data: &Dataset,
    confounder: &[f64],
    cfg: &DeconfoundConfig,
    net_cfg: &NetConfig,
    train_cfg: &TrainConfig,
) -> Result<(DeconfoundedModel, TrainingLog)> {
    data.validate()?;
    if confounder.len() != data.len() {
        return Err(Error::LengthMismatch {
            left: confounder.len(),
            right: data.len(),
        });
    }
    let partition = ConfounderPartition::from_values(confounder, cfg.num_groups)?;
    let groups: Vec<usize> = confounder
        .iter()
        .map(|v| partition.group_of(*v))
        .collect::<Result<_>>()?;

    let num_groups = partition.num_groups();
    let mut counts = vec![0usize; num_groups];
    for g in &groups {
        counts[*g] += 1;
    }
    if let Some(empty) = counts.iter().position(|c| *c == 0) {
        return Err(Error::EmptyGroup { group: empty });
    }

    // Single group: the adjustment is the identity, run the plain pipeline.
    if num_groups == 1 {
        let scale = OrdinalScale::from_watch_times(&data.watch_time, cfg.num_leaves)?;
        let tree = DecompositionTree::build(&scale, cfg.tree_kind)?;
        let mut net = MultiHeadNet::new(&NetConfig {
            num_heads: tree.num_heads(),
            ..net_cfg.clone()
        })?;
        let log = crate::model::train(data, &scale, &tree, &mut net, train_cfg)?;
        return Ok((
            DeconfoundedModel {
                partition,
                conditioning: cfg.conditioning,
                scales: vec![scale],
                trees: vec![tree],
                nets: vec![net],
            },
            log,
        ));
    }

    let scales = match cfg.scale_scope {
        ScaleScope::Shared => vec![OrdinalScale::from_watch_times(
            &data.watch_time,
            cfg.num_leaves,
        )?],
        ScaleScope::PerGroup => {
            let mut scales = Vec::with_capacity(num_groups);
            for g in 0..num_groups {
                let labels: Vec<f64> = data
                    .watch_time
                    .iter()
                    .zip(&groups)
                    .filter(|(_, gi)| **gi == g)
                    .map(|(t, _)| *t)
                    .collect();
                let scale = OrdinalScale::from_watch_times(&labels, cfg.num_leaves)
                    .map_err(|e| match e {
                        Error::InsufficientLabelDiversity { distinct, required } => {
                            Error::InvalidArgument(format!(
                                "group {g}: insufficient label diversity \
                                 ({distinct} distinct values, {required} required)"
                            ))
                        }
                        other => other,
                    })?;
                scales.push(scale);
            }
            scales
        }
    };
    let trees: Vec<DecompositionTree> = scales
        .iter()
        .map(|s| DecompositionTree::build(s, cfg.tree_kind))
        .collect::<Result<_>>()?;

    let scale_for = |g: usize| -> &OrdinalScale {
        if scales.len() == 1 {
            &scales[0]
        } else {
            &scales[g]
        }
    };
    let tree_for = |g: usize| -> &DecompositionTree {
        if trees.len() == 1 {
            &trees[0]
        } else {
            &trees[g]
        }
    };

    let leaves: Vec<usize> = data
        .watch_time
        .iter()
        .zip(&groups)
        .map(|(t, g)| scale_for(*g).leaf_of(*t))
        .collect::<Result<_>>()?;

    match cfg.conditioning {
        Conditioning::SharedOneHot => {
            let augmented: Vec<Vec<f64>> = data
                .features
                .iter()
                .zip(&groups)
                .map(|(x, g)| augment_one_hot(x, *g, num_groups))
                .collect();
            let mut net = MultiHeadNet::new(&NetConfig {
                input_dim: net_cfg.input_dim + num_groups,
                num_heads: cfg.num_leaves - 1,
                ..net_cfg.clone()
            })?;
            let weights = train_cfg.weights;
            let log = run_training(&augmented, &mut net, train_cfg, |i, probs, upstream| {
                let (parts, grad) = loss_and_grads(
                    tree_for(groups[i]),
                    probs,
                    leaves[i],
                    data.watch_time[i],
                    &weights,
                )
                .expect("validated inputs");
                upstream.copy_from_slice(&grad);
                SampleLoss {
                    total: parts.total,
                    nll: parts.nll,
                    std_term: parts.std_dev,
                    mse_term: parts.abs_err,
                }
            })?;
            Ok((
                DeconfoundedModel {
                    partition,
                    conditioning: cfg.conditioning,
                    scales,
                    trees,
                    nets: vec![net],
                },
                log,
            ))
        }
        Conditioning::PerGroupNets => {
            let mut nets = Vec::with_capacity(num_groups);
            let mut merged = TrainingLog::default();
            for g in 0..num_groups {
                let rows: Vec<usize> = (0..data.len()).filter(|i| groups[*i] == g).collect();
                let features: Vec<&[f64]> =
                    rows.iter().map(|i| data.features[*i].as_slice()).collect();
                let mut net = MultiHeadNet::new(&NetConfig {
                    num_heads: cfg.num_leaves - 1,
                    seed: net_cfg.seed.wrapping_add(g as u64),
                    ..net_cfg.clone()
                })?;
                let group_cfg = TrainConfig {
                    seed: train_cfg.seed.wrapping_add(g as u64),
                    ..train_cfg.clone()
                };
                let weights = group_cfg.weights;
                let tree = tree_for(g);
                let log = run_training(&features, &mut net, &group_cfg, |i, probs, upstream| {
                    let row = rows[i];
                    let (parts, grad) = loss_and_grads(
                        tree,
                        probs,
                        leaves[row],
                        data.watch_time[row],
                        &weights,
                    )
                    .expect("validated inputs");
                    upstream.copy_from_slice(&grad);
                    SampleLoss {
                        total: parts.total,
                        nll: parts.nll,
                        std_term: parts.std_dev,
                        mse_term: parts.abs_err,
                    }
                })?;
                merge_weighted(&mut merged, &log, rows.len() as f64 / data.len() as f64);
                nets.push(net);
            }
            Ok((
                DeconfoundedModel {
                    partition,
                    conditioning: cfg.conditioning,
                    scales,
                    trees,
                    nets,
                },
                merged,
            ))
        }
    }
}

/// Accumulates per-group epoch stats into a sample-weighted overall log.
fn merge_weighted(into: &mut TrainingLog, log: &TrainingLog, weight: f64) {
    if into.epochs.len() < log.epochs.len() {
        into.epochs.resize(
            log.epochs.len(),
            crate::model::EpochStats {
                epoch: 0,
                nll: 0.0,
                std_term: 0.0,
                mse_term: 0.0,
                total: 0.0,
            },
        );
    }
    for (acc, e) in into.epochs.iter_mut().zip(&log.epochs) {
        acc.epoch = e.epoch;
        acc.nll += weight * e.nll;
        acc.std_term += weight * e.std_term;
        acc.mse_term += weight * e.mse_term;
        acc.total += weight * e.total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{generate_synthetic, mae, SyntheticSpec};
    use crate::net::Activation;

    fn net_cfg(input_dim: usize, seed: u64) -> NetConfig {
        NetConfig {
            input_dim,
            hidden_dims: vec![16],
            num_heads: 1, // overwritten by training
            seed,
            activation: Activation::Relu,
        }
    }

    #[test]
    fn uniform_values_get_uniform_priors() {
        let values: Vec<f64> = (0..32_000).map(|i| (i as f64 + 0.5) / 100.0).collect();
        let partition = ConfounderPartition::from_values(&values, 32).unwrap();
        assert_eq!(partition.num_groups(), 32);
        for p in partition.prior() {
            assert!((p - 1.0 / 32.0).abs() < 1e-3, "prior {p}");
        }
        let total: f64 = partition.prior().iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_group_partition_is_trivial() {
        let partition = ConfounderPartition::from_values(&[3.0, 9.0, 27.0], 1).unwrap();
        assert_eq!(partition.prior(), &[1.0]);
        assert_eq!(partition.group_of(1e9).unwrap(), 0);
    }

    #[test]
    fn degenerate_values_are_rejected() {
        let err = ConfounderPartition::from_values(&[1.0, 1.0, 1.0], 2).unwrap_err();
        assert!(err.to_string().contains("insufficient label diversity"));
    }

    #[test]
    fn group_lookup_clamps_and_rejects_nan() {
        let values: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let partition = ConfounderPartition::from_values(&values, 4).unwrap();
        assert_eq!(partition.group_of(-50.0).unwrap(), 0);
        assert_eq!(partition.group_of(1e6).unwrap(), 3);
        assert!(partition.group_of(f64::NAN).is_err());
        // Every value maps to exactly one group.
        let mut counts = vec![0usize; 4];
        for v in &values {
            counts[partition.group_of(*v).unwrap()] += 1;
        }
        assert_eq!(counts.iter().sum::<usize>(), values.len());
    }

    #[test]
    fn single_group_training_is_bit_identical_to_plain() {
        let spec = SyntheticSpec {
            num_samples: 400,
            input_dim: 3,
            noise_scale: 2.0,
            confounding_strength: 0.5,
            seed: 17,
        };
        let data = generate_synthetic(&spec).unwrap().dataset;
        let confounder = data.duration.clone().unwrap();

        let cfg = DeconfoundConfig {
            num_groups: 1,
            num_leaves: 4,
            ..DeconfoundConfig::default()
        };
        let train_cfg = TrainConfig {
            epochs: 8,
            batch_size: 64,
            seed: 3,
            ..TrainConfig::default()
        };
        let (model, log) =
            train_deconfounded(&data, &confounder, &cfg, &net_cfg(3, 3), &train_cfg).unwrap();

        let scale = OrdinalScale::from_watch_times(&data.watch_time, 4).unwrap();
        let tree = DecompositionTree::balanced(&scale).unwrap();
        let mut plain = MultiHeadNet::new(&NetConfig {
            num_heads: tree.num_heads(),
            ..net_cfg(3, 3)
        })
        .unwrap();
        let plain_log = crate::model::train(&data, &scale, &tree, &mut plain, &train_cfg).unwrap();

        assert_eq!(log, plain_log);
        assert_eq!(model.nets[0].params(), plain.params());
        for x in data.features.iter().take(20) {
            let a = model.predict_group(x, 0).unwrap();
            let b = crate::model::leaf_distribution(&tree, &plain.forward(x).unwrap()).unwrap();
            assert_eq!(a.expectation.to_bits(), b.expectation.to_bits());
        }
        // Both modes coincide when there is only one group.
        let x = &data.features[0];
        assert_eq!(
            model.predict_do(x).unwrap(),
            model.predict_group(x, 0).unwrap().expectation
        );
    }

    #[test]
    fn do_mode_is_the_prior_weighted_conditional_sum() {
        let spec = SyntheticSpec {
            num_samples: 1200,
            input_dim: 3,
            noise_scale: 1.5,
            confounding_strength: 0.8,
            seed: 5,
        };
        let data = generate_synthetic(&spec).unwrap().dataset;
        let confounder = data.duration.clone().unwrap();
        let cfg = DeconfoundConfig {
            num_groups: 4,
            num_leaves: 4,
            ..DeconfoundConfig::default()
        };
        let train_cfg = TrainConfig {
            epochs: 4,
            batch_size: 128,
            seed: 9,
            ..TrainConfig::default()
        };
        let (model, _) =
            train_deconfounded(&data, &confounder, &cfg, &net_cfg(3, 9), &train_cfg).unwrap();

        for x in data.features.iter().take(25) {
            let by_hand: f64 = (0..model.num_groups())
                .map(|g| {
                    model.partition.prior()[g]
                        * model.predict_group(x, g).unwrap().expectation
                })
                .sum();
            let do_mode = model.predict_do(x).unwrap();
            assert!((do_mode - by_hand).abs() < 1e-9);
        }
        // Per-group leaf distributions stay normalized.
        let x = &data.features[0];
        for g in 0..model.num_groups() {
            let sum: f64 = model.predict_group(x, g).unwrap().probs.iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn empty_group_is_reported_with_its_id() {
        let data = Dataset {
            features: vec![vec![0.0], vec![1.0], vec![0.5], vec![0.25]],
            watch_time: vec![1.0, 2.0, 3.0, 4.0],
            duration: None,
            feature_names: None,
        };
        // Quantile cut of [1,1,1,2] at the median is 1.0; the half-open
        // convention sends every value right, leaving group 0 empty.
        let confounder = [1.0, 1.0, 1.0, 2.0];
        let cfg = DeconfoundConfig {
            num_groups: 2,
            num_leaves: 2,
            ..DeconfoundConfig::default()
        };
        let err = train_deconfounded(
            &data,
            &confounder,
            &cfg,
            &net_cfg(1, 0),
            &TrainConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyGroup { group: 0 }), "{err}");
    }

    #[test]
    fn independent_confounder_keeps_do_and_conditional_close() {
        // With zero confounding the generator enforces D independent of
        // (X, T), so conditioning on a group changes nothing beyond noise.
        let spec = SyntheticSpec {
            num_samples: 6000,
            input_dim: 4,
            noise_scale: 1.0,
            confounding_strength: 0.0,
            seed: 23,
        };
        let data = generate_synthetic(&spec).unwrap().dataset;
        let confounder = data.duration.clone().unwrap();
        let cfg = DeconfoundConfig {
            num_groups: 4,
            num_leaves: 8,
            ..DeconfoundConfig::default()
        };
        let train_cfg = TrainConfig {
            epochs: 20,
            batch_size: 128,
            seed: 1,
            ..TrainConfig::default()
        };
        let (model, _) =
            train_deconfounded(&data, &confounder, &cfg, &net_cfg(4, 1), &train_cfg).unwrap();

        let mut gap = 0.0;
        let mut scale_ref = 0.0;
        for (x, d) in data.features.iter().zip(&confounder).take(500) {
            let cond = model.predict_conditional(x, *d).unwrap().expectation;
            let do_mode = model.predict_do(x).unwrap();
            gap += (cond - do_mode).abs();
            scale_ref += do_mode.abs();
        }
        let mean_gap = gap / 500.0;
        let mean_ref = scale_ref / 500.0;
        assert!(
            mean_gap < 0.08 * mean_ref,
            "mean |conditional - do| = {mean_gap} vs scale {mean_ref}"
        );
    }

    #[test]
    fn grouping_helps_on_confounded_data() {
        let train_spec = SyntheticSpec {
            num_samples: 5000,
            input_dim: 4,
            noise_scale: 1.5,
            confounding_strength: 1.0,
            seed: 40,
        };
        let test_spec = SyntheticSpec {
            seed: 41,
            ..train_spec.clone()
        };
        let train_data = generate_synthetic(&train_spec).unwrap().dataset;
        let test_data = generate_synthetic(&test_spec).unwrap().dataset;
        let confounder = train_data.duration.clone().unwrap();

        let train_cfg = TrainConfig {
            epochs: 25,
            batch_size: 128,
            seed: 2,
            ..TrainConfig::default()
        };

        let cfg = DeconfoundConfig {
            num_groups: 4,
            num_leaves: 8,
            ..DeconfoundConfig::default()
        };
        let (grouped, _) =
            train_deconfounded(&train_data, &confounder, &cfg, &net_cfg(4, 2), &train_cfg)
                .unwrap();

        let scale = OrdinalScale::from_watch_times(&train_data.watch_time, 8).unwrap();
        let tree = DecompositionTree::balanced(&scale).unwrap();
        let mut plain_net = MultiHeadNet::new(&NetConfig {
            num_heads: tree.num_heads(),
            ..net_cfg(4, 2)
        })
        .unwrap();
        crate::model::train(&train_data, &scale, &tree, &mut plain_net, &train_cfg).unwrap();
        let plain = crate::model::TpmModel {
            scale,
            tree,
            net: plain_net,
        };

        let test_conf = test_data.duration.as_ref().unwrap();
        let grouped_preds: Vec<f64> = test_data
            .features
            .iter()
            .zip(test_conf)
            .map(|(x, d)| grouped.predict_conditional(x, *d).unwrap().expectation)
            .collect();
        let plain_preds: Vec<f64> = test_data
            .features
            .iter()
            .map(|x| plain.predict(x).unwrap().expectation)
            .collect();
        let grouped_mae = mae(&grouped_preds, &test_data.watch_time).unwrap();
        let plain_mae = mae(&plain_preds, &test_data.watch_time).unwrap();
        assert!(
            grouped_mae < plain_mae,
            "conditional MAE {grouped_mae} should beat unconditional {plain_mae}"
        );
    }

    #[test]
    fn per_group_nets_reduce_identically_at_one_group() {
        let spec = SyntheticSpec {
            num_samples: 300,
            input_dim: 2,
            noise_scale: 1.0,
            confounding_strength: 0.3,
            seed: 7,
        };
        let data = generate_synthetic(&spec).unwrap().dataset;
        let confounder = data.duration.clone().unwrap();
        let train_cfg = TrainConfig {
            epochs: 5,
            batch_size: 50,
            seed: 4,
            ..TrainConfig::default()
        };
        let shared = DeconfoundConfig {
            num_groups: 1,
            num_leaves: 4,
            conditioning: Conditioning::SharedOneHot,
            ..DeconfoundConfig::default()
        };
        let per_group = DeconfoundConfig {
            conditioning: Conditioning::PerGroupNets,
            ..shared.clone()
        };
        let (a, log_a) =
            train_deconfounded(&data, &confounder, &shared, &net_cfg(2, 4), &train_cfg).unwrap();
        let (b, log_b) =
            train_deconfounded(&data, &confounder, &per_group, &net_cfg(2, 4), &train_cfg)
                .unwrap();
        assert_eq!(log_a, log_b);
        assert_eq!(a.nets[0].params(), b.nets[0].params());
    }

    #[test]
    fn per_group_nets_train_and_predict() {
        let spec = SyntheticSpec {
            num_samples: 2000,
            input_dim: 3,
            noise_scale: 1.0,
            confounding_strength: 0.8,
            seed: 33,
        };
        let data = generate_synthetic(&spec).unwrap().dataset;
        let confounder = data.duration.clone().unwrap();
        let cfg = DeconfoundConfig {
            num_groups: 4,
            num_leaves: 4,
            conditioning: Conditioning::PerGroupNets,
            ..DeconfoundConfig::default()
        };
        let train_cfg = TrainConfig {
            epochs: 6,
            batch_size: 64,
            seed: 11,
            ..TrainConfig::default()
        };
        let (model, log) =
            train_deconfounded(&data, &confounder, &cfg, &net_cfg(3, 11), &train_cfg).unwrap();
        assert_eq!(model.nets.len(), 4);
        assert_eq!(log.epochs.len(), 6);
        let x = &data.features[0];
        let d = confounder[0];
        let cond = model.predict_conditional(x, d).unwrap();
        assert!((cond.probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        assert!(model.predict_do(x).unwrap().is_finite());
    }
}
