//! Planted-partition synthetic HIN, linear probe, k-means + NMI, and result
//! table emission.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hingraph::{GraphRecords, HeteroGraph, LabelSplit};
use crate::numkern::{dot, DenseMatrix};
use crate::rng::{self, Stream};

/// Parameters of the planted benchmark: anchor type `P`, auxiliary types
/// `A` and `S`. Auxiliary node `j` is affiliated with class `j % classes`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub anchors_per_class: usize,
    pub num_a: usize,
    pub num_s: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub feature_dim: usize,
    /// Distance of each class mean from the origin along its own axes.
    pub class_separation: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 3,
            anchors_per_class: 100,
            num_a: 30,
            num_s: 30,
            p_in: 0.2,
            p_out: 0.02,
            feature_dim: 32,
            class_separation: 0.25,
            noise: 0.5,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, detail: String| Err(Error::config(format!("synth.{key}"), detail));
        if self.num_classes < 2 {
            return bad("num_classes", format!("{} < 2", self.num_classes));
        }
        if self.anchors_per_class == 0 {
            return bad("anchors_per_class", "must be at least 1".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim", "must be at least 1".into());
        }
        for (key, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(key, format!("{p} outside [0, 1]"));
            }
        }
        if self.p_in <= self.p_out {
            return bad("p_in", format!("{} must exceed p_out {}", self.p_in, self.p_out));
        }
        if self.num_a == 0 || self.num_s == 0 {
            return bad(
                if self.num_a == 0 { "num_a" } else { "num_s" },
                "auxiliary types need at least one node when p_in > 0".into(),
            );
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise", format!("{} must be a finite non-negative deviation", self.noise));
        }
        if !self.class_separation.is_finite() {
            return bad("class_separation", "must be finite".into());
        }
        Ok(())
    }

    pub fn num_anchors(&self) -> usize {
        self.num_classes * self.anchors_per_class
    }
}

/// Default meta-paths over the synthetic schema.
pub fn synthetic_meta_paths() -> Vec<Vec<String>> {
    vec![
        vec!["P".into(), "A".into(), "P".into()],
        vec!["P".into(), "S".into(), "P".into()],
    ]
}

/// Builds the planted graph. Ids: anchors `0..n`, then `A`, then `S`.
/// Anchor `i` has class `i % num_classes`.
pub fn synth_hin(spec: &SyntheticSpec) -> Result<HeteroGraph> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, Stream::Synth);
    let n = spec.num_anchors();
    let c = spec.num_classes;
    let mut nodes: Vec<(u64, String)> = (0..n as u64).map(|i| (i, "P".into())).collect();
    let a0 = n as u64;
    let s0 = a0 + spec.num_a as u64;
    nodes.extend((0..spec.num_a as u64).map(|j| (a0 + j, "A".into())));
    nodes.extend((0..spec.num_s as u64).map(|j| (s0 + j, "S".into())));

    let mut edges = Vec::new();
    for i in 0..n {
        for (base, count, name) in [(a0, spec.num_a, "P-A"), (s0, spec.num_s, "P-S")] {
            for j in 0..count {
                let p = if j % c == i % c { spec.p_in } else { spec.p_out };
                if rng.random::<f64>() < p {
                    edges.push((i as u64, base + j as u64, name.to_string()));
                }
            }
        }
    }

    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::config("synth.noise", e.to_string()))?;
    let features = (0..n)
        .map(|i| {
            let row = (0..spec.feature_dim)
                .map(|d| {
                    let mean = if d % c == i % c { spec.class_separation } else { 0.0 };
                    mean + noise.sample(&mut rng)
                })
                .collect();
            (i as u64, row)
        })
        .collect();
    let labels = (0..n).map(|i| (i as u64, i % c)).collect();
    HeteroGraph::from_records(GraphRecords {
        nodes,
        edges,
        features,
        labels: Some(labels),
    })
}

/// Gradient-descent settings of the logistic-regression probe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 0.5,
            l2: 1e-2,
        }
    }
}

/// Multinomial logistic regression on standardized `z`, trained on
/// `train` rows and scored on `eval` rows. Returns accuracy in percent.
pub fn probe_accuracy(
    z: &DenseMatrix,
    labels: &[usize],
    num_classes: usize,
    train: &[usize],
    eval: &[usize],
    config: ProbeConfig,
    seed: u64,
) -> Result<f64> {
    if eval.is_empty() {
        return Err(Error::Protocol("probe has no evaluation nodes".into()));
    }
    if train.is_empty() {
        return Err(Error::Protocol("probe has no training nodes".into()));
    }
    if labels.len() != z.rows() {
        return Err(Error::Contract(format!("{} labels for {} rows", labels.len(), z.rows())));
    }
    if let Some(&bad) = train.iter().chain(eval).find(|&&i| i >= z.rows()) {
        return Err(Error::Protocol(format!("split id {bad} outside {} rows", z.rows())));
    }
    let d = z.cols();
    let k = num_classes.max(1);

    // Standardize with training statistics; constant columns become zero.
    let mut mean = vec![0.0; d];
    for &i in train {
        for (m, v) in mean.iter_mut().zip(z.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    let mut std = vec![0.0; d];
    for &i in train {
        for ((s, v), m) in std.iter_mut().zip(z.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std: Vec<f64> = std
        .into_iter()
        .map(|s| {
            let s = (s / train.len() as f64).sqrt();
            if s > 1e-12 {
                s
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let standardize = |i: usize| -> Vec<f64> {
        z.row(i)
            .iter()
            .zip(&mean)
            .zip(&std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    };
    let xs: Vec<Vec<f64>> = train.iter().map(|&i| standardize(i)).collect();

    let mut rng = rng::stream(seed, Stream::Probe);
    let mut w: Vec<Vec<f64>> = (0..k)
        .map(|_| (0..d).map(|_| rng.random_range(-0.01..0.01)).collect())
        .collect();
    let mut b = vec![0.0; k];
    let scale = 1.0 / train.len() as f64;
    let mut probs = vec![0.0; k];
    for _ in 0..config.epochs {
        let mut gw = vec![vec![0.0; d]; k];
        let mut gb = vec![0.0; k];
        for (x, &i) in xs.iter().zip(train) {
            softmax_scores(&w, &b, x, &mut probs);
            for c in 0..k {
                let err = probs[c] - if labels[i] == c { 1.0 } else { 0.0 };
                gb[c] += err;
                for (g, v) in gw[c].iter_mut().zip(x) {
                    *g += err * v;
                }
            }
        }
        for c in 0..k {
            for (wv, g) in w[c].iter_mut().zip(&gw[c]) {
                *wv -= config.learning_rate * (g * scale + config.l2 * *wv);
            }
            b[c] -= config.learning_rate * gb[c] * scale;
        }
    }

    let correct = eval
        .iter()
        .filter(|&&i| {
            let x = standardize(i);
            softmax_scores(&w, &b, &x, &mut probs);
            argmax(&probs) == labels[i]
        })
        .count();
    Ok(100.0 * correct as f64 / eval.len() as f64)
}

fn softmax_scores(w: &[Vec<f64>], b: &[f64], x: &[f64], out: &mut [f64]) {
    for (o, (wc, bc)) in out.iter_mut().zip(w.iter().zip(b)) {
        *o = dot(wc, x) + bc;
    }
    let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

fn split_labels_of(labels: &[Option<usize>], ids: &[usize]) -> Result<()> {
    if let Some(&i) = ids.iter().find(|&&i| labels.get(i).copied().flatten().is_none()) {
        return Err(Error::Protocol(format!("split node {i} has no label")));
    }
    Ok(())
}

/// Test-set accuracy (percent) of a probe trained on `split.train`.
pub fn linear_probe(
    z: &DenseMatrix,
    labels: &[Option<usize>],
    num_classes: usize,
    split: &LabelSplit,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    split_labels_of(labels, &split.train)?;
    split_labels_of(labels, &split.test)?;
    let dense: Vec<usize> = labels.iter().map(|l| l.unwrap_or(usize::MAX)).collect();
    let config = ProbeConfig {
        epochs,
        ..ProbeConfig::default()
    };
    probe_accuracy(z, &dense, num_classes, &split.train, &split.test, config, seed)
}

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: DenseMatrix,
    pub assignments: Vec<usize>,
}

/// Lloyd iterations from `k` distinct sampled rows. Empty clusters keep
/// their previous centroid; ties go to the lower cluster index.
pub fn kmeans(z: &DenseMatrix, k: usize, iterations: usize, seed: u64) -> Result<KMeans> {
    let n = z.rows();
    if k == 0 {
        return Err(Error::config("clusters", "must be at least 1"));
    }
    if k > n {
        return Err(Error::config("clusters", format!("{k} clusters for {n} points")));
    }
    let mut rng = rng::stream(seed, Stream::KMeans);
    let picks = sample(&mut rng, n, k).into_vec();
    let mut centroids = z.select_rows(&picks);
    let mut assignments = assign(z, &centroids);
    for _ in 0..iterations {
        let mut sums = DenseMatrix::zeros(k, z.cols());
        let mut counts = vec![0usize; k];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(z.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                let inv = counts[c] as f64;
                for (o, s) in centroids.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *o = s / inv;
                }
            }
        }
        let next = assign(z, &centroids);
        if next == assignments {
            break;
        }
        assignments = next;
    }
    Ok(KMeans { centroids, assignments })
}

fn assign(z: &DenseMatrix, centroids: &DenseMatrix) -> Vec<usize> {
    (0..z.rows())
        .map(|i| {
            let mut best = (f64::INFINITY, 0);
            for c in 0..centroids.rows() {
                let d: f64 = z.row(i).iter().zip(centroids.row(c)).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
            best.1
        })
        .collect()
}

/// Normalized mutual information `2·I(a;b) / (H(a) + H(b))`; `0/0` is 0.
pub fn nmi(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("partitions of {} and {} items", a.len(), b.len())));
    }
    let n = a.len();
    if n == 0 {
        return Err(Error::EmptyInput("empty partitions".into()));
    }
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut joint = vec![vec![0usize; kb]; ka];
    let mut ca = vec![0usize; ka];
    let mut cb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x][y] += 1;
        ca[x] += 1;
        cb[y] += 1;
    }
    let nf = n as f64;
    let entropy = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / nf;
                -p * p.ln()
            })
            .sum()
    };
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x][y];
            if c > 0 {
                let pxy = c as f64 / nf;
                mi += pxy * (pxy * nf * nf / (ca[x] as f64 * cb[y] as f64)).ln();
            }
        }
    }
    let h = entropy(&ca) + entropy(&cb);
    if h <= 0.0 {
        return Ok(0.0);
    }
    Ok((2.0 * mi / h).clamp(0.0, 1.0))
}

/// k-means on `z` followed by NMI against `labels`.
pub fn clustering_nmi(z: &DenseMatrix, labels: &[usize], k: usize, seed: u64) -> Result<f64> {
    if k < 2 {
        return Err(Error::config("clusters", format!("{k} < 2")));
    }
    if labels.len() != z.rows() {
        return Err(Error::Contract(format!("{} labels for {} rows", labels.len(), z.rows())));
    }
    let km = kmeans(z, k, 100, seed)?;
    nmi(labels, &km.assignments)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultRow {
    pub model: String,
    /// Percent, rounded to two decimals.
    pub acc: f64,
    /// Label ratio in percent.
    pub setting: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResultTable {
    rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn new(rows: Vec<ResultRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Report("no results to report".into()));
        }
        let mut seen = BTreeSet::new();
        let mut rows: Vec<ResultRow> = rows
            .into_iter()
            .map(|mut r| {
                if !(0.0..=100.0).contains(&r.acc) {
                    return Err(Error::Report(format!("accuracy {} of {} outside [0, 100]", r.acc, r.model)));
                }
                if r.model.is_empty() || r.model.contains(['\t', '\n']) {
                    return Err(Error::Report(format!("invalid model name {:?}", r.model)));
                }
                if !seen.insert((r.model.clone(), r.setting)) {
                    return Err(Error::Report(format!("duplicate result for {} at {}%", r.model, r.setting)));
                }
                r.acc = (r.acc * 100.0).round() / 100.0;
                Ok(r)
            })
            .collect::<Result<_>>()?;
        rows.sort_by(|x, y| {
            x.setting
                .cmp(&y.setting)
                .then(y.acc.total_cmp(&x.acc))
                .then_with(|| x.model.cmp(&y.model))
        });
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ResultRow] {
        &self.rows
    }

    /// `model <TAB> acc <TAB> setting` with a header line.
    pub fn to_results_tsv(&self) -> String {
        let mut s = String::from("model\tacc\tsetting\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}\t{:.2}\t{}%", r.model, r.acc, r.setting);
        }
        s
    }

    /// `setting <TAB> model <TAB> acc`, grouped by setting.
    pub fn to_bars_tsv(&self) -> String {
        let mut s = String::from("setting\tmodel\tacc\n");
        for r in &self.rows {
            let _ = writeln!(s, "{}%\t{}\t{:.2}", r.setting, r.model, r.acc);
        }
        s
    }

    pub fn parse_results_tsv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("model\tacc\tsetting") {
            return Err(Error::Report("results table lacks its header".into()));
        }
        let rows = lines
            .filter(|l| !l.is_empty())
            .map(|line| {
                let bad = || Error::Report(format!("malformed result line {line:?}"));
                let mut parts = line.split('\t');
                let (Some(model), Some(acc), Some(setting), None) = (parts.next(), parts.next(), parts.next(), parts.next())
                else {
                    return Err(bad());
                };
                Ok(ResultRow {
                    model: model.to_string(),
                    acc: acc.parse().map_err(|_| bad())?,
                    setting: setting.strip_suffix('%').and_then(|s| s.parse().ok()).ok_or_else(bad)?,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(rows)
    }
}

/// Builds the table and writes `results.tsv` and `results_bars.tsv` into `dir`.
pub fn emit_tables(rows: Vec<ResultRow>, dir: &Path) -> Result<ResultTable> {
    let table = ResultTable::new(rows)?;
    for (name, text) in [("results.tsv", table.to_results_tsv()), ("results_bars.tsv", table.to_bars_tsv())] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(table)
}
