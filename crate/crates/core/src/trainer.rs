//! Seeded full-graph training: k-means centroid init, Adam updates,
//! periodic target refresh, early stopping on a validation probe, sweeps.

use std::sync::Arc;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{record_forward, Dropout, EncoderDims, EncoderInputs, EncoderParams};
use crate::error::{Error, Result};
use crate::evalbench::{kmeans, probe_accuracy, synthetic_meta_paths, ProbeConfig};
use crate::hingraph::{metapath_neighbors, split_labels, HeteroGraph, LabelSplit, MetaPath, MetaPathNeighborhoods};
use crate::hypergraph::{adjacency_of, augment, build_hypergraph, Hypergraph, Weighting, MAX_AUGMENT_RATE};
use crate::numkern::{DenseMatrix, Tape};
use crate::objectives::{soft_assignment, target_distribution, total_loss_var, ContrastiveSpec, LossReport, LossWeights};
use crate::rng::{self, Stream};

pub const LEARNING_RATE_RANGE: (f64, f64) = (1e-4, 5e-3);
pub const PATIENCE_RANGE: (usize, usize) = (5, 100);
pub const DROPOUT_RANGE: (f64, f64) = (0.1, 0.5);
pub const KMEANS_ITERATIONS: usize = 20;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Positives {
    /// The same node in the other view.
    #[default]
    #[serde(rename = "self")]
    SelfOnly,
    /// Also the `topk` meta-path neighbors with the most connecting paths.
    #[serde(rename = "self+topk")]
    SelfTopk,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub dropout: f64,
    pub temperature: f64,
    pub lambda_co: f64,
    pub lambda_kl: f64,
    pub clusters: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub conv_depth: usize,
    pub feature_mask_rate: f64,
    pub edge_drop_rate: f64,
    pub refresh_period: usize,
    pub positives: Positives,
    pub topk: usize,
    pub weighting: Weighting,
    pub meta_paths: Vec<Vec<String>>,
    /// Labeled fraction per class used to train the validation probe.
    pub label_ratio: f64,
    /// Labeled fraction per class held out for early stopping.
    pub val_fraction: f64,
    pub probe_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            patience: 20,
            max_epochs: 100,
            dropout: 0.1,
            temperature: 0.5,
            lambda_co: 1.0,
            lambda_kl: 0.1,
            clusters: 3,
            hidden_dim: 64,
            embed_dim: 64,
            conv_depth: 2,
            feature_mask_rate: 0.1,
            edge_drop_rate: 0.1,
            refresh_period: 5,
            positives: Positives::SelfOnly,
            topk: 3,
            weighting: Weighting::Unit,
            meta_paths: synthetic_meta_paths(),
            label_ratio: 0.2,
            val_fraction: 0.1,
            probe_epochs: 2000,
            seed: 0,
        }
    }
}

fn in_range<T: PartialOrd + std::fmt::Display>(key: &str, v: T, lo: T, hi: T) -> Result<()> {
    if v >= lo && v <= hi {
        Ok(())
    } else {
        Err(Error::config(format!("train.{key}"), format!("{v} outside [{lo}, {hi}]")))
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        in_range("learning_rate", self.learning_rate, LEARNING_RATE_RANGE.0, LEARNING_RATE_RANGE.1)?;
        in_range("patience", self.patience, PATIENCE_RANGE.0, PATIENCE_RANGE.1)?;
        in_range("dropout", self.dropout, DROPOUT_RANGE.0, DROPOUT_RANGE.1)?;
        in_range("feature_mask_rate", self.feature_mask_rate, 0.0, MAX_AUGMENT_RATE)?;
        in_range("edge_drop_rate", self.edge_drop_rate, 0.0, MAX_AUGMENT_RATE)?;
        let bad = |key: &str, detail: String| Err(Error::config(format!("train.{key}"), detail));
        if self.max_epochs < self.patience {
            return bad("max_epochs", format!("{} is below patience {}", self.max_epochs, self.patience));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature", format!("{} must be positive", self.temperature));
        }
        for (key, v) in [("lambda_co", self.lambda_co), ("lambda_kl", self.lambda_kl)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(key, format!("{v} must be non-negative"));
            }
        }
        for (key, v) in [
            ("clusters", self.clusters),
            ("hidden_dim", self.hidden_dim),
            ("embed_dim", self.embed_dim),
            ("refresh_period", self.refresh_period),
            ("probe_epochs", self.probe_epochs),
        ] {
            if v == 0 {
                return bad(key, "must be at least 1".into());
            }
        }
        if self.meta_paths.is_empty() {
            return bad("meta_paths", "at least one meta-path is required".into());
        }
        for mp in &self.meta_paths {
            MetaPath::new(mp.iter().cloned()).map_err(|e| Error::config("train.meta_paths", e.to_string()))?;
        }
        if !(self.label_ratio > 0.0 && self.label_ratio < 1.0) {
            return bad("label_ratio", format!("{} outside (0, 1)", self.label_ratio));
        }
        if !(self.val_fraction > 0.0 && self.label_ratio + self.val_fraction < 1.0) {
            return bad("val_fraction", format!("{} must be positive and leave test nodes", self.val_fraction));
        }
        Ok(())
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            hidden_dim: self.hidden_dim,
            embed_dim: self.embed_dim,
            conv_depth: self.conv_depth,
            clusters: self.clusters,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            contrastive: self.lambda_co,
            kl: self.lambda_kl,
        }
    }
}

/// Everything derived once from the graph and the meta-paths.
#[derive(Clone)]
pub struct TrainContext {
    pub inputs: EncoderInputs,
    pub hypergraph: Hypergraph,
    pub neighborhoods: Vec<MetaPathNeighborhoods>,
    pub contrastive: ContrastiveSpec,
    pub labels: Option<Vec<Option<usize>>>,
    pub num_classes: usize,
}

impl TrainContext {
    pub fn new(g: &HeteroGraph, config: &TrainConfig) -> Result<Self> {
        let neighborhoods = config
            .meta_paths
            .iter()
            .map(|types| metapath_neighbors(g, &MetaPath::new(types.iter().cloned())?))
            .collect::<Result<Vec<_>>>()?;
        let hypergraph = build_hypergraph(&neighborhoods, config.weighting)?;
        let inputs = EncoderInputs::new(g, adjacency_of(&hypergraph)?)?;
        let n = g.num_anchors();
        let contrastive = match config.positives {
            Positives::SelfOnly => ContrastiveSpec::self_positives(n, config.temperature),
            Positives::SelfTopk => {
                ContrastiveSpec::with_extra_positives(&rank_by_paths(&neighborhoods, n), config.topk, config.temperature)
            }
        };
        Ok(Self {
            inputs,
            hypergraph,
            neighborhoods,
            contrastive,
            labels: g.labels().map(<[_]>::to_vec),
            num_classes: g.num_classes(),
        })
    }

    pub fn meta_path_names(&self) -> Vec<String> {
        self.neighborhoods.iter().map(|h| h.name.clone()).collect()
    }
}

/// Meta-path neighbors of each node, most connecting paths first.
fn rank_by_paths(hoods: &[MetaPathNeighborhoods], n: usize) -> Vec<Vec<usize>> {
    (0..n)
        .map(|i| {
            let mut counts = std::collections::BTreeMap::<usize, u64>::new();
            for h in hoods {
                for (&j, &c) in h.neighbors[i].iter().zip(&h.path_counts[i]) {
                    *counts.entry(j).or_default() += c;
                }
            }
            let mut ranked: Vec<(usize, u64)> = counts.into_iter().filter(|&(j, _)| j != i).collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            ranked.into_iter().map(|(j, _)| j).collect()
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: EncoderParams,
    pub first_moments: Vec<DenseMatrix>,
    pub second_moments: Vec<DenseMatrix>,
    pub epoch: usize,
    pub best_val: Option<f64>,
    pub best_epoch: usize,
    /// Frozen target distribution, refreshed every `refresh_period` epochs.
    pub target: Option<DenseMatrix>,
    dropout_rng: ChaCha8Rng,
    augment_rng: ChaCha8Rng,
}

/// Seeded parameters with centroids from k-means over the untrained fused
/// embeddings.
pub fn init(ctx: &TrainContext, config: &TrainConfig) -> Result<TrainState> {
    let mut params = EncoderParams::init(
        &ctx.inputs.schema,
        config.dims(),
        ctx.meta_path_names(),
        config.weighting,
        config.seed,
    )?;
    let z = ctx.inputs.forward(&params)?;
    let km = kmeans(&z.fused, config.clusters, KMEANS_ITERATIONS, config.seed)?;
    params.set("centroids", km.centroids)?;
    let zeros: Vec<DenseMatrix> = params
        .tensors()
        .iter()
        .map(|t| DenseMatrix::zeros(t.rows(), t.cols()))
        .collect();
    Ok(TrainState {
        params,
        first_moments: zeros.clone(),
        second_moments: zeros,
        epoch: 0,
        best_val: None,
        best_epoch: 0,
        target: None,
        dropout_rng: rng::stream(config.seed, Stream::Dropout),
        augment_rng: rng::stream(config.seed, Stream::Augment),
    })
}

/// Fused-embedding soft assignment under evaluation mode.
pub fn current_assignment(ctx: &TrainContext, params: &EncoderParams) -> Result<DenseMatrix> {
    let z = ctx.inputs.forward(params)?;
    soft_assignment(&z.fused, params.get("centroids").expect("centroids"))
}

/// One epoch: augment, forward with dropout, loss, backward, Adam update.
pub fn step(state: &mut TrainState, ctx: &TrainContext, config: &TrainConfig) -> Result<LossReport> {
    let epoch = state.epoch + 1;
    if state.target.is_none() || (epoch - 1).is_multiple_of(config.refresh_period.max(1)) {
        state.target = Some(target_distribution(&current_assignment(ctx, &state.params)?)?);
    }
    let features = &ctx.inputs.features;
    let augment_seed = state.augment_rng.next_u64();
    let (aug_h, aug_x) = augment(
        &ctx.hypergraph,
        features,
        config.feature_mask_rate,
        config.edge_drop_rate,
        augment_seed,
    )?;
    let adjacency = Arc::new(adjacency_of(&aug_h)?);

    let mut tape = Tape::new();
    let dropout = (config.dropout > 0.0).then(|| Dropout {
        rate: config.dropout,
        rng: &mut state.dropout_rng,
    });
    let vars = record_forward(
        &mut tape,
        &ctx.inputs.schema,
        features,
        &aug_x,
        adjacency,
        &state.params,
        dropout,
    )?;
    let loss = total_loss_var(
        &mut tape,
        vars.z_nep,
        vars.z_mpp,
        vars.centroids,
        &ctx.contrastive,
        state.target.as_ref(),
        config.loss_weights(),
    )?;
    let report = LossReport {
        epoch,
        l_co: tape.scalar(loss.contrastive),
        l_kl: tape.scalar(loss.kl),
        total: tape.scalar(loss.total),
        val_metric: None,
    };
    if !report.is_finite() {
        return Err(divergence(&report));
    }
    let grads = tape.backward(loss.total)?;

    let t = epoch as i32;
    let (c1, c2) = (1.0 - ADAM_BETA1.powi(t), 1.0 - ADAM_BETA2.powi(t));
    let lr = config.learning_rate;
    for (k, var) in vars.params.iter().enumerate() {
        let shape = state.params.tensors()[k].shape();
        let g = grads.get_or_zeros(*var, shape);
        let m = &mut state.first_moments[k];
        let v = &mut state.second_moments[k];
        let p = &mut state.params.tensors_mut()[k];
        for (((pv, mv), vv), &gv) in p
            .values_mut()
            .iter_mut()
            .zip(m.values_mut())
            .zip(v.values_mut())
            .zip(g.values())
        {
            *mv = ADAM_BETA1 * *mv + (1.0 - ADAM_BETA1) * gv;
            *vv = ADAM_BETA2 * *vv + (1.0 - ADAM_BETA2) * gv * gv;
            *pv -= lr * (*mv / c1) / ((*vv / c2).sqrt() + ADAM_EPS);
        }
    }
    if !state.params.is_finite() {
        return Err(divergence(&report));
    }
    state.epoch = epoch;
    Ok(report)
}

fn divergence(r: &LossReport) -> Error {
    Error::Divergence {
        epoch: r.epoch,
        l_co: r.l_co,
        l_kl: r.l_kl,
        total: r.total,
    }
}

/// Patience-based stopping on a metric where larger is better.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
        }
    }

    /// Records the metric of `epoch` (1-based); returns `true` when training
    /// should stop after this epoch.
    pub fn observe(&mut self, epoch: usize, value: f64) -> bool {
        if self.best.is_none_or(|b| value > b) {
            self.best = Some(value);
            self.best_epoch = epoch;
        }
        epoch - self.best_epoch >= self.patience
    }

    pub fn improved_at(&self, epoch: usize) -> bool {
        self.best_epoch == epoch
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub final_params: EncoderParams,
    pub best_params: EncoderParams,
    pub best_val: f64,
    pub best_epoch: usize,
    pub log: Vec<LossReport>,
}

/// Trains until `max_epochs` or until `metric` has not improved for
/// `patience` epochs. `on_epoch` sees each report as soon as it exists.
pub fn train_with_metric(
    ctx: &TrainContext,
    config: &TrainConfig,
    mut metric: impl FnMut(&EncoderParams, usize) -> Result<f64>,
    mut on_epoch: impl FnMut(&LossReport) -> Result<()>,
) -> Result<TrainOutcome> {
    let mut state = init(ctx, config)?;
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_params = state.params.clone();
    let mut log = Vec::new();
    for _ in 0..config.max_epochs {
        let mut report = step(&mut state, ctx, config)?;
        let value = metric(&state.params, report.epoch)?;
        report.val_metric = Some(value);
        on_epoch(&report)?;
        log.push(report);
        let stop = stopper.observe(report.epoch, value);
        if stopper.improved_at(report.epoch) {
            best_params = state.params.clone();
        }
        state.best_val = stopper.best();
        state.best_epoch = stopper.best_epoch();
        if stop {
            break;
        }
    }
    Ok(TrainOutcome {
        final_params: state.params,
        best_params,
        best_val: stopper.best().unwrap_or(f64::NAN),
        best_epoch: stopper.best_epoch(),
        log,
    })
}

/// Validation split used for early stopping.
pub fn validation_split(g: &HeteroGraph, config: &TrainConfig) -> Result<LabelSplit> {
    split_labels(g, config.label_ratio, config.val_fraction, config.seed)
}

/// Probe accuracy on the validation split of the fused embedding.
pub fn validation_metric(
    ctx: &TrainContext,
    split: &LabelSplit,
    config: &TrainConfig,
    params: &EncoderParams,
) -> Result<f64> {
    let labels = ctx
        .labels
        .as_ref()
        .ok_or_else(|| Error::Protocol("early stopping needs labels".into()))?;
    let dense: Vec<usize> = labels.iter().map(|l| l.unwrap_or(usize::MAX)).collect();
    let z = ctx.inputs.forward(params)?;
    let probe = ProbeConfig {
        epochs: config.probe_epochs,
        ..ProbeConfig::default()
    };
    probe_accuracy(&z.fused, &dense, ctx.num_classes, &split.train, &split.val, probe, config.seed)
}

pub fn train_logged(
    g: &HeteroGraph,
    config: &TrainConfig,
    on_epoch: impl FnMut(&LossReport) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    let ctx = TrainContext::new(g, config)?;
    let split = validation_split(g, config)?;
    train_with_metric(&ctx, config, |p, _| validation_metric(&ctx, &split, config, p), on_epoch)
}

pub fn train(g: &HeteroGraph, config: &TrainConfig) -> Result<TrainOutcome> {
    train_logged(g, config, |_| Ok(()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub learning_rate: f64,
    pub dropout: f64,
    pub best_val: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    /// In grid order: learning rates outer, dropouts inner.
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    /// Rows best first; ties go to the smaller learning rate, then the
    /// smaller dropout.
    pub fn ranked(&self) -> Vec<&SweepRow> {
        let mut rows: Vec<&SweepRow> = self.rows.iter().collect();
        rows.sort_by(|a, b| {
            b.best_val
                .total_cmp(&a.best_val)
                .then(a.learning_rate.total_cmp(&b.learning_rate))
                .then(a.dropout.total_cmp(&b.dropout))
        });
        rows
    }

    pub fn best(&self) -> &SweepRow {
        self.ranked()[0]
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("rank\tlearning_rate\tdropout\tbest_val\tbest_epoch\tepochs_run\n");
        for (i, r) in self.ranked().into_iter().enumerate() {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                i + 1,
                r.learning_rate,
                r.dropout,
                r.best_val,
                r.best_epoch,
                r.epochs_run
            ));
        }
        s
    }
}

/// One training run per (learning rate, dropout) pair, all sharing the base
/// seed. Runs execute on up to `threads` workers; results are merged in grid
/// order.
pub fn sweep(
    g: &HeteroGraph,
    base: &TrainConfig,
    learning_rates: &[f64],
    dropouts: &[f64],
    threads: usize,
) -> Result<SweepResult> {
    if learning_rates.is_empty() || dropouts.is_empty() {
        return Err(Error::config("sweep", "grid is empty"));
    }
    let configs: Vec<TrainConfig> = learning_rates
        .iter()
        .flat_map(|&lr| {
            dropouts.iter().map(move |&d| TrainConfig {
                learning_rate: lr,
                dropout: d,
                ..base.clone()
            })
        })
        .collect();
    for c in &configs {
        c.validate()?;
    }
    let run = |c: &TrainConfig| -> Result<SweepRow> {
        let out = train(g, c)?;
        Ok(SweepRow {
            learning_rate: c.learning_rate,
            dropout: c.dropout,
            best_val: out.best_val,
            best_epoch: out.best_epoch,
            epochs_run: out.log.len(),
        })
    };
    let threads = threads.clamp(1, configs.len());
    let rows: Vec<Result<SweepRow>> = if threads == 1 {
        configs.iter().map(run).collect()
    } else {
        let next = std::sync::atomic::AtomicUsize::new(0);
        let slots: Vec<std::sync::Mutex<Option<Result<SweepRow>>>> =
            configs.iter().map(|_| std::sync::Mutex::new(None)).collect();
        std::thread::scope(|s| {
            for _ in 0..threads {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                    if i >= configs.len() {
                        break;
                    }
                    let r = run(&configs[i]);
                    *slots[i].lock().expect("slot") = Some(r);
                });
            }
        });
        slots
            .into_iter()
            .map(|m| m.into_inner().expect("slot").expect("every grid point ran"))
            .collect()
    };
    Ok(SweepResult {
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

/// `start:stop:step` inclusive grid, or a comma-separated list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let bad = || Error::config("grid", format!("cannot parse {text:?}"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let nums: Vec<f64> = parts.iter().map(|p| p.trim().parse().map_err(|_| bad())).collect::<Result<_>>()?;
        let (start, stop, step) = (nums[0], nums[1], nums[2]);
        if !(step > 0.0) || stop < start {
            return Err(bad());
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
        // Rounded to 12 decimals so 0.1 + 4 * 0.05 prints as 0.3.
        return Ok((0..count)
            .map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12)
            .collect());
    }
    text.split(',')
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evalbench::{synth_hin, SyntheticSpec};

    fn tiny_graph() -> HeteroGraph {
        synth_hin(&SyntheticSpec {
            num_classes: 2,
            anchors_per_class: 3,
            num_a: 4,
            num_s: 2,
            p_in: 0.8,
            p_out: 0.1,
            feature_dim: 4,
            ..SyntheticSpec::default()
        })
        .unwrap()
    }

    fn tiny_config(seed: u64) -> TrainConfig {
        TrainConfig {
            hidden_dim: 8,
            embed_dim: 4,
            clusters: 2,
            seed,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_ranges_are_enforced() {
        TrainConfig::default().validate().unwrap();
        for c in [
            TrainConfig { learning_rate: 1e-2, ..Default::default() },
            TrainConfig { patience: 4, ..Default::default() },
            TrainConfig { dropout: 0.55, ..Default::default() },
            TrainConfig { max_epochs: 10, patience: 20, ..Default::default() },
            TrainConfig { clusters: 0, ..Default::default() },
            TrainConfig { meta_paths: vec![vec!["P".into(), "A".into()]], ..Default::default() },
        ] {
            assert_eq!(c.validate().unwrap_err().kind(), "config", "{c:?}");
        }
    }

    #[test]
    fn init_is_deterministic_and_k1_centroid_is_mean() {
        let g = tiny_graph();
        let config = TrainConfig { clusters: 1, ..tiny_config(3) };
        let ctx = TrainContext::new(&g, &config).unwrap();
        let a = init(&ctx, &config).unwrap();
        let b = init(&ctx, &config).unwrap();
        assert_eq!(a, b);
        let z = ctx.inputs.forward(&a.params).unwrap().fused;
        let c = a.params.get("centroids").unwrap();
        for col in 0..z.cols() {
            let mean = (0..z.rows()).map(|r| z[(r, col)]).sum::<f64>() / z.rows() as f64;
            assert!((c[(0, col)] - mean).abs() < 1e-12);
        }
        let too_many = TrainConfig { clusters: 7, ..tiny_config(3) };
        assert_eq!(init(&ctx, &too_many).unwrap_err().kind(), "config");
    }

    #[test]
    fn zero_learning_rate_leaves_params() {
        let g = tiny_graph();
        let config = TrainConfig { learning_rate: 0.0, ..tiny_config(1) };
        let ctx = TrainContext::new(&g, &config).unwrap();
        let mut state = init(&ctx, &config).unwrap();
        let before = state.params.clone();
        let report = step(&mut state, &ctx, &config).unwrap();
        assert_eq!(state.params, before);
        assert!(report.total.is_finite() && report.epoch == 1);
    }

    #[test]
    fn steps_are_deterministic() {
        let g = tiny_graph();
        let config = tiny_config(5);
        let ctx = TrainContext::new(&g, &config).unwrap();
        let mut a = init(&ctx, &config).unwrap();
        let mut b = init(&ctx, &config).unwrap();
        assert_eq!(step(&mut a, &ctx, &config).unwrap(), step(&mut b, &ctx, &config).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn single_step_usually_lowers_clean_loss() {
        let g = tiny_graph();
        let mut lowered = 0;
        for seed in 0..10 {
            let config = tiny_config(seed);
            let ctx = TrainContext::new(&g, &config).unwrap();
            let mut state = init(&ctx, &config).unwrap();
            let clean = |s: &TrainState| {
                let z = ctx.inputs.forward(&s.params).unwrap();
                let mut tape = Tape::new();
                let a = tape.leaf(z.z_nep);
                let b = tape.leaf(z.z_mpp);
                let c = tape.leaf(s.params.get("centroids").unwrap().clone());
                let t = total_loss_var(&mut tape, a, b, c, &ctx.contrastive, s.target.as_ref(), config.loss_weights()).unwrap();
                tape.scalar(t.total)
            };
            state.target = Some(target_distribution(&current_assignment(&ctx, &state.params).unwrap()).unwrap());
            let before = clean(&state);
            step(&mut state, &ctx, &config).unwrap();
            if clean(&state) < before {
                lowered += 1;
            }
        }
        assert!(lowered >= 8, "{lowered}/10");
    }

    #[test]
    fn early_stopping_rule() {
        let mut s = EarlyStopping::new(5);
        let metric = [0.1, 0.2, 0.3, 0.3, 0.2, 0.1, 0.3, 0.25, 0.9];
        let stop = (1..=metric.len()).find(|&e| s.observe(e, metric[e - 1]));
        assert_eq!(stop, Some(8));
        assert_eq!(s.best_epoch(), 3);
    }

    #[test]
    fn stub_metric_stops_patience_after_best() {
        let g = tiny_graph();
        let config = TrainConfig { patience: 5, max_epochs: 30, ..tiny_config(2) };
        let ctx = TrainContext::new(&g, &config).unwrap();
        let out = train_with_metric(&ctx, &config, |_, e| Ok(if e <= 3 { e as f64 } else { 0.0 }), |_| Ok(())).unwrap();
        assert_eq!(out.log.len(), 8);
        assert_eq!(out.best_epoch, 3);

        let config = TrainConfig { patience: 10, max_epochs: 10, ..tiny_config(2) };
        let out = train_with_metric(&ctx, &config, |_, e| Ok(e as f64), |_| Ok(())).unwrap();
        assert_eq!(out.log.len(), 10);
        assert_eq!(out.final_params, out.best_params);
    }

    #[test]
    fn grid_shorthand() {
        let g = parse_grid("0.1:0.5:0.05").unwrap();
        assert_eq!(g.len(), 9);
        assert_eq!(g[4], 0.3);
        assert_eq!(g[8], 0.5);
        assert_eq!(parse_grid("0.001,0.005").unwrap(), vec![0.001, 0.005]);
        assert!(parse_grid("a:b").is_err());
    }

    #[test]
    fn sweep_rejects_out_of_range_points_before_running() {
        let g = tiny_graph();
        let err = sweep(&g, &tiny_config(0), &[1e-3, 1.0], &[0.1], 1).unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn sweep_ranking_breaks_ties() {
        let row = |lr, d, v| SweepRow { learning_rate: lr, dropout: d, best_val: v, best_epoch: 1, epochs_run: 1 };
        let r = SweepResult {
            rows: vec![row(2e-3, 0.2, 50.0), row(1e-3, 0.3, 50.0), row(1e-3, 0.2, 50.0), row(5e-3, 0.1, 40.0)],
        };
        assert_eq!(r.best(), &row(1e-3, 0.2, 50.0));
    }
}
