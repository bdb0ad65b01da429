//! Meta-path hyperedges, incidence and degree matrices, the normalized
//! hypergraph adjacency, and stochastic augmentation.
//!
//! The adjacency is `M = N^{-1/2} S W A^{-1} Sᵀ N^{-1/2}` where `S` is the
//! node × hyperedge incidence, `W` the hyperedge weights, `A` the hyperedge
//! sizes and `N` the (unweighted) node degrees. Writing
//! `B = N^{-1/2} S (W A^{-1})^{1/2}` gives `M = B Bᵀ`, so `M` is symmetric
//! positive semidefinite.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::hingraph::MetaPathNeighborhoods;
use crate::numkern::{DenseMatrix, LinearOperator, ScaledSparse, SparseBinaryMatrix};
use crate::rng::{self, Stream};

/// Overall sign applied to the propagation operator.
pub const ADJACENCY_SIGN: f64 = 1.0;

/// Largest node count for which `M` is stored densely.
pub const DENSE_LIMIT: usize = 4096;

/// Upper bound accepted for both augmentation rates.
pub const MAX_AUGMENT_RATE: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    #[default]
    Unit,
    /// Weight = number of (anchor, meta-path) pairs that produced the set.
    Multiplicity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypergraph {
    n: usize,
    hyperedges: Vec<Vec<usize>>,
    weights: Vec<f64>,
    provenance: Vec<String>,
}

impl Hypergraph {
    /// Validates and canonicalizes (sorted members) a hyperedge list.
    pub fn new(
        n: usize,
        hyperedges: Vec<Vec<usize>>,
        weights: Vec<f64>,
        provenance: Vec<String>,
    ) -> Result<Self> {
        if weights.len() != hyperedges.len() || provenance.len() != hyperedges.len() {
            return Err(Error::Contract(format!(
                "{} hyperedges but {} weights and {} provenance tags",
                hyperedges.len(),
                weights.len(),
                provenance.len()
            )));
        }
        let mut seen = HashMap::new();
        let mut canonical = Vec::with_capacity(hyperedges.len());
        for (e, mut members) in hyperedges.into_iter().enumerate() {
            members.sort_unstable();
            members.dedup();
            if members.is_empty() {
                return Err(Error::Contract(format!("hyperedge {e} is empty")));
            }
            if let Some(&bad) = members.iter().find(|&&v| v >= n) {
                return Err(Error::Contract(format!(
                    "hyperedge {e} contains node {bad} but n = {n}"
                )));
            }
            if !(weights[e] > 0.0 && weights[e].is_finite()) {
                return Err(Error::Contract(format!(
                    "hyperedge {e} has non-positive weight {}",
                    weights[e]
                )));
            }
            if let Some(prev) = seen.insert(members.clone(), e) {
                return Err(Error::Contract(format!(
                    "hyperedges {prev} and {e} have identical members"
                )));
            }
            canonical.push(members);
        }
        Ok(Self {
            n,
            hyperedges: canonical,
            weights,
            provenance,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.hyperedges.len()
    }

    pub fn hyperedges(&self) -> &[Vec<usize>] {
        &self.hyperedges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn provenance(&self) -> &[String] {
        &self.provenance
    }

    /// Nodes that belong to no hyperedge.
    pub fn isolated_nodes(&self) -> Vec<usize> {
        let mut covered = vec![false; self.n];
        for e in &self.hyperedges {
            for &v in e {
                covered[v] = true;
            }
        }
        (0..self.n).filter(|&v| !covered[v]).collect()
    }

    /// Copy with a weight-1 singleton hyperedge added for every isolated node.
    pub fn pad_isolated(&self) -> (Hypergraph, Vec<usize>) {
        let isolated = self.isolated_nodes();
        let mut padded = self.clone();
        for &v in &isolated {
            padded.hyperedges.push(vec![v]);
            padded.weights.push(1.0);
            padded.provenance.push("isolated".into());
        }
        (padded, isolated)
    }

    /// Writes `edge_index <TAB> weight <TAB> members` lines.
    pub fn write_tsv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("# edge_index\tweight\tmembers\n");
        for (e, members) in self.hyperedges.iter().enumerate() {
            let m: Vec<String> = members.iter().map(usize::to_string).collect();
            out += &format!("{e}\t{}\t{}\n", self.weights[e], m.join(","));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// One hyperedge per (anchor, meta-path): the anchor plus its meta-path
/// neighbors. Identical sets collapse in first-seen order.
pub fn build_hypergraph(
    neighborhoods: &[MetaPathNeighborhoods],
    weighting: Weighting,
) -> Result<Hypergraph> {
    let n = neighborhoods
        .first()
        .map(|nb| nb.neighbors.len())
        .ok_or_else(|| Error::EmptyInput("no meta-path neighborhoods".into()))?;
    if n == 0 {
        return Err(Error::EmptyInput("anchor universe is empty".into()));
    }
    if let Some(bad) = neighborhoods.iter().find(|nb| nb.neighbors.len() != n) {
        return Err(Error::Contract(format!(
            "meta-path {} covers {} anchors, expected {n}",
            bad.name,
            bad.neighbors.len()
        )));
    }
    let mut index: HashMap<Vec<usize>, usize> = HashMap::new();
    let mut hyperedges = Vec::new();
    let mut counts: Vec<f64> = Vec::new();
    let mut provenance = Vec::new();
    for nb in neighborhoods {
        for (anchor, members) in nb.neighbors.iter().enumerate() {
            let mut set = members.clone();
            if let Err(pos) = set.binary_search(&anchor) {
                set.insert(pos, anchor);
            }
            match index.get(&set) {
                Some(&e) => counts[e] += 1.0,
                None => {
                    index.insert(set.clone(), hyperedges.len());
                    hyperedges.push(set);
                    counts.push(1.0);
                    provenance.push(nb.name.clone());
                }
            }
        }
    }
    let weights = match weighting {
        Weighting::Unit => vec![1.0; hyperedges.len()],
        Weighting::Multiplicity => counts,
    };
    Hypergraph::new(n, hyperedges, weights, provenance)
}

/// Incidence matrix and degree vectors of a (padded) hypergraph.
#[derive(Clone, Debug, PartialEq)]
pub struct Incidence {
    pub s: SparseBinaryMatrix,
    /// `N(v) = Σ_e S(v, e)`, unweighted.
    pub node_degrees: Vec<f64>,
    /// `A(e) = |e|`.
    pub edge_degrees: Vec<f64>,
    pub weights: Vec<f64>,
    /// Nodes that had no hyperedge and received a singleton.
    pub isolated: Vec<usize>,
}

pub fn incidence_and_degrees(h: &Hypergraph) -> Result<Incidence> {
    let (h, isolated) = h.pad_isolated();
    let coords = h
        .hyperedges
        .iter()
        .enumerate()
        .flat_map(|(e, members)| members.iter().map(move |&v| (v, e)));
    let s = SparseBinaryMatrix::from_coords(h.n, h.num_edges(), coords)?;
    let node_degrees = s.row_counts().into_iter().map(|c| c as f64).collect();
    let edge_degrees = s.col_counts().into_iter().map(|c| c as f64).collect();
    Ok(Incidence {
        s,
        node_degrees,
        edge_degrees,
        weights: h.weights,
        isolated,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Materialize {
    /// Dense when `n ≤ DENSE_LIMIT`, factored otherwise.
    Auto,
    Dense,
    Factored,
}

#[derive(Clone, Debug)]
enum Storage {
    Dense(DenseMatrix),
    Factored {
        s: SparseBinaryMatrix,
        inv_sqrt_node: Vec<f64>,
        edge_scale: Vec<f64>,
    },
}

/// The propagation operator `M` together with its degree vectors.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency {
    storage: Storage,
    n: usize,
    pub node_degrees: Vec<f64>,
    pub edge_degrees: Vec<f64>,
}

pub fn normalized_adjacency(
    s: &SparseBinaryMatrix,
    weights: &[f64],
    node_degrees: &[f64],
    edge_degrees: &[f64],
) -> Result<NormalizedAdjacency> {
    normalized_adjacency_with(s, weights, node_degrees, edge_degrees, Materialize::Auto)
}

pub fn normalized_adjacency_with(
    s: &SparseBinaryMatrix,
    weights: &[f64],
    node_degrees: &[f64],
    edge_degrees: &[f64],
    mode: Materialize,
) -> Result<NormalizedAdjacency> {
    let n = s.rows();
    if node_degrees.len() != n || edge_degrees.len() != s.cols() || weights.len() != s.cols() {
        return Err(Error::Contract(format!(
            "incidence is {n}x{} but got {} node degrees, {} edge degrees, {} weights",
            s.cols(),
            node_degrees.len(),
            edge_degrees.len(),
            weights.len()
        )));
    }
    if let Some(v) = node_degrees.iter().position(|&d| d <= 0.0) {
        return Err(Error::Contract(format!("node {v} has zero degree")));
    }
    if let Some(e) = edge_degrees.iter().position(|&d| d <= 0.0) {
        return Err(Error::Contract(format!("hyperedge {e} has zero degree")));
    }
    let inv_sqrt_node: Vec<f64> = node_degrees.iter().map(|d| 1.0 / d.sqrt()).collect();
    let edge_scale: Vec<f64> = weights
        .iter()
        .zip(edge_degrees)
        .map(|(w, a)| ADJACENCY_SIGN * w / a)
        .collect();
    let dense = match mode {
        Materialize::Auto => n <= DENSE_LIMIT,
        Materialize::Dense => true,
        Materialize::Factored => false,
    };
    let storage = if dense {
        // Σ_e (w_e / |e|) · d_u d_v over member pairs.
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); s.cols()];
        for (v, e) in s.coords() {
            members[e].push(v);
        }
        let mut m = DenseMatrix::zeros(n, n);
        for (e, nodes) in members.iter().enumerate() {
            for &u in nodes {
                let cu = edge_scale[e] * inv_sqrt_node[u];
                let row = m.row_mut(u);
                for &v in nodes {
                    row[v] += cu * inv_sqrt_node[v];
                }
            }
        }
        Storage::Dense(m)
    } else {
        Storage::Factored {
            s: s.clone(),
            inv_sqrt_node,
            edge_scale,
        }
    };
    Ok(NormalizedAdjacency {
        storage,
        n,
        node_degrees: node_degrees.to_vec(),
        edge_degrees: edge_degrees.to_vec(),
    })
}

/// Incidence, padding and adjacency in one call.
pub fn adjacency_of(h: &Hypergraph) -> Result<NormalizedAdjacency> {
    let inc = incidence_and_degrees(h)?;
    normalized_adjacency(&inc.s, &inc.weights, &inc.node_degrees, &inc.edge_degrees)
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.storage, Storage::Dense(_))
    }

    pub fn to_dense(&self) -> DenseMatrix {
        match &self.storage {
            Storage::Dense(m) => m.clone(),
            Storage::Factored { .. } => self
                .apply(&DenseMatrix::identity(self.n))
                .expect("identity has matching shape"),
        }
    }
}

impl LinearOperator for NormalizedAdjacency {
    fn rows(&self) -> usize {
        self.n
    }

    fn cols(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        match &self.storage {
            Storage::Dense(m) => m.matmul(x),
            Storage::Factored {
                s,
                inv_sqrt_node,
                edge_scale,
            } => {
                let left = ScaledSparse::new(s).with_row_scale(inv_sqrt_node);
                let t = left.spmm_transpose(x)?;
                let t = ScaledSparse::new(s).with_col_scale(edge_scale).spmm(&t)?;
                Ok(DenseMatrix::from_fn(t.rows(), t.cols(), |r, c| {
                    t[(r, c)] * inv_sqrt_node[r]
                }))
            }
        }
    }

    fn apply_transpose(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.apply(x)
    }
}

/// Randomly masks feature entries and drops hyperedges.
///
/// A hyperedge is only dropped if every member keeps at least one other
/// hyperedge, so no node becomes isolated by augmentation.
pub fn augment(
    h: &Hypergraph,
    x: &DenseMatrix,
    feature_mask_rate: f64,
    edge_drop_rate: f64,
    seed: u64,
) -> Result<(Hypergraph, DenseMatrix)> {
    for (key, rate) in [
        ("feature_mask_rate", feature_mask_rate),
        ("edge_drop_rate", edge_drop_rate),
    ] {
        if !(0.0..=MAX_AUGMENT_RATE).contains(&rate) {
            return Err(Error::config(
                key,
                format!("{rate} is outside [0, {MAX_AUGMENT_RATE}]"),
            ));
        }
    }
    let mut rng = rng::stream(seed, Stream::Augment);
    let mut masked = x.clone();
    if feature_mask_rate > 0.0 {
        for v in masked.values_mut() {
            if rng.random::<f64>() < feature_mask_rate {
                *v = 0.0;
            }
        }
    }
    if edge_drop_rate == 0.0 {
        return Ok((h.clone(), masked));
    }
    let mut coverage = vec![0usize; h.n];
    for e in &h.hyperedges {
        for &v in e {
            coverage[v] += 1;
        }
    }
    let mut kept = h.clone();
    kept.hyperedges.clear();
    kept.weights.clear();
    kept.provenance.clear();
    for (e, members) in h.hyperedges.iter().enumerate() {
        let drop = rng.random::<f64>() < edge_drop_rate;
        if drop && members.iter().all(|&v| coverage[v] >= 2) {
            for &v in members {
                coverage[v] -= 1;
            }
            continue;
        }
        kept.hyperedges.push(members.clone());
        kept.weights.push(h.weights[e]);
        kept.provenance.push(h.provenance[e].clone());
    }
    Ok((kept, masked))
}
