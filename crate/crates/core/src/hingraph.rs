//! Heterogeneous graph model, TSV ingestion, meta-path neighborhoods and
//! stratified label splits.
//!
//! Nodes are stored type-contiguously: internal index `type_range(t).start + k`
//! is the `k`-th node of type `t` in ascending external-id order. The anchor
//! type is the one that carries feature rows; anchor nodes are addressed by
//! their local index `0..num_anchors()` everywhere outside this module.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numkern::DenseMatrix;
use crate::rng::{self, Stream};

/// Longest accepted meta-path, in node types.
pub const MAX_METAPATH_LEN: usize = 5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeType {
    pub name: String,
    pub src_type: usize,
    pub dst_type: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub edge_type: usize,
}

#[derive(Clone, Debug)]
pub struct HeteroGraph {
    type_names: Vec<String>,
    type_ranges: Vec<Range<usize>>,
    anchor_type: usize,
    node_ids: Vec<u64>,
    node_type: Vec<usize>,
    id_index: HashMap<u64, usize>,
    edge_types: Vec<EdgeType>,
    edges: Vec<Edge>,
    adjacency: Vec<Vec<usize>>,
    features: DenseMatrix,
    labels: Option<Vec<Option<usize>>>,
    num_classes: usize,
}

/// Raw records accepted by [`HeteroGraph::from_records`].
#[derive(Clone, Debug, Default)]
pub struct GraphRecords {
    pub nodes: Vec<(u64, String)>,
    pub edges: Vec<(u64, u64, String)>,
    pub features: Vec<(u64, Vec<f64>)>,
    pub labels: Option<Vec<(u64, usize)>>,
}

impl HeteroGraph {
    /// Validates and assembles a graph from in-memory records.
    pub fn from_records(records: GraphRecords) -> Result<Self> {
        let mut located = LocatedRecords::default();
        located.nodes = records.nodes.into_iter().map(|n| (0, n)).collect();
        located.edges = records.edges.into_iter().map(|e| (0, e)).collect();
        located.features = records.features.into_iter().map(|f| (0, f)).collect();
        located.labels = records
            .labels
            .map(|ls| ls.into_iter().map(|l| (0, l)).collect());
        Self::assemble(located, &SourceNames::in_memory()).map(|(g, _)| g)
    }

    fn assemble(rec: LocatedRecords, src: &SourceNames) -> Result<(Self, Vec<String>)> {
        let mut warnings = Vec::new();

        let mut type_names: Vec<String> = Vec::new();
        let mut by_type: Vec<Vec<u64>> = Vec::new();
        let mut seen = BTreeSet::new();
        for (line, (id, ty)) in &rec.nodes {
            if !seen.insert(*id) {
                return Err(Error::Format {
                    file: src.nodes.clone(),
                    line: *line,
                    detail: format!("duplicate node id {id}"),
                });
            }
            let t = match type_names.iter().position(|n| n == ty) {
                Some(t) => t,
                None => {
                    type_names.push(ty.clone());
                    by_type.push(Vec::new());
                    type_names.len() - 1
                }
            };
            by_type[t].push(*id);
        }
        if type_names.is_empty() {
            return Err(Error::EmptyInput(format!("{} declares no nodes", src.nodes)));
        }

        let mut node_ids = Vec::with_capacity(rec.nodes.len());
        let mut node_type = Vec::with_capacity(rec.nodes.len());
        let mut type_ranges = Vec::with_capacity(type_names.len());
        for (t, ids) in by_type.iter_mut().enumerate() {
            ids.sort_unstable();
            let start = node_ids.len();
            node_ids.extend_from_slice(ids);
            node_type.extend(std::iter::repeat_n(t, ids.len()));
            type_ranges.push(start..node_ids.len());
        }
        let id_index: HashMap<u64, usize> =
            node_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();

        let lookup = |id: u64, file: &str, line: usize| {
            id_index.get(&id).copied().ok_or_else(|| Error::Referential {
                file: file.to_string(),
                line,
                detail: format!("unknown node id {id}"),
            })
        };

        // Anchor type: the (single) type carrying feature rows.
        let mut anchor_type = None;
        for (line, (id, _)) in &rec.features {
            let t = node_type[lookup(*id, &src.features, *line)?];
            match anchor_type {
                None => anchor_type = Some(t),
                Some(a) if a != t => {
                    return Err(Error::Format {
                        file: src.features.clone(),
                        line: *line,
                        detail: format!(
                            "features given for types `{}` and `{}`; only one anchor type is supported",
                            type_names[a], type_names[t]
                        ),
                    })
                }
                Some(_) => {}
            }
        }
        let anchor_type = anchor_type
            .ok_or_else(|| Error::EmptyInput(format!("{} has no feature rows", src.features)))?;
        let anchor_range = type_ranges[anchor_type].clone();
        let dim = rec.features[0].1 .1.len();
        if dim == 0 {
            return Err(Error::Format {
                file: src.features.clone(),
                line: rec.features[0].0,
                detail: "empty feature vector".into(),
            });
        }
        let mut feature_rows: Vec<Option<Vec<f64>>> = vec![None; anchor_range.len()];
        for (line, (id, values)) in rec.features {
            if values.len() != dim {
                return Err(Error::Format {
                    file: src.features.clone(),
                    line,
                    detail: format!("expected {dim} values, found {}", values.len()),
                });
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Format {
                    file: src.features.clone(),
                    line,
                    detail: "non-finite feature value".into(),
                });
            }
            let local = id_index[&id] - anchor_range.start;
            if feature_rows[local].replace(values).is_some() {
                return Err(Error::Format {
                    file: src.features.clone(),
                    line,
                    detail: format!("duplicate feature row for node {id}"),
                });
            }
        }
        if let Some(missing) = feature_rows.iter().position(Option::is_none) {
            return Err(Error::Format {
                file: src.features.clone(),
                line: 0,
                detail: format!(
                    "anchor node {} has no feature row",
                    node_ids[anchor_range.start + missing]
                ),
            });
        }
        let features = DenseMatrix::from_rows(
            &feature_rows.into_iter().map(Option::unwrap).collect::<Vec<_>>(),
        )?;

        let mut edge_types: Vec<EdgeType> = Vec::new();
        let mut edges = Vec::with_capacity(rec.edges.len());
        let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); node_ids.len()];
        for (line, (s, d, name)) in &rec.edges {
            let src_idx = lookup(*s, &src.edges, *line)?;
            let dst_idx = lookup(*d, &src.edges, *line)?;
            let (st, dt) = (node_type[src_idx], node_type[dst_idx]);
            let et = match edge_types.iter().position(|e| &e.name == name) {
                Some(et) => {
                    let decl = &edge_types[et];
                    if decl.src_type != st || decl.dst_type != dt {
                        return Err(Error::Referential {
                            file: src.edges.clone(),
                            line: *line,
                            detail: format!(
                                "edge type `{name}` connects {}->{} but this edge is {}->{}",
                                type_names[decl.src_type],
                                type_names[decl.dst_type],
                                type_names[st],
                                type_names[dt]
                            ),
                        });
                    }
                    et
                }
                None => {
                    edge_types.push(EdgeType {
                        name: name.clone(),
                        src_type: st,
                        dst_type: dt,
                    });
                    edge_types.len() - 1
                }
            };
            if src_idx == dst_idx {
                warnings.push(format!("{}:{line}: self loop on node {s}", src.edges));
            }
            if !adjacency[src_idx].insert(dst_idx) {
                warnings.push(format!("{}:{line}: duplicate edge {s} -> {d}", src.edges));
            }
            adjacency[dst_idx].insert(src_idx);
            edges.push(Edge {
                src: src_idx,
                dst: dst_idx,
                edge_type: et,
            });
        }

        let mut num_classes = 0;
        let labels = match rec.labels {
            None => None,
            Some(rows) => {
                let mut table = vec![None; anchor_range.len()];
                for (line, (id, class)) in rows {
                    let idx = lookup(id, &src.labels, line)?;
                    if node_type[idx] != anchor_type {
                        return Err(Error::Referential {
                            file: src.labels.clone(),
                            line,
                            detail: format!("node {id} is not of anchor type"),
                        });
                    }
                    if table[idx - anchor_range.start].replace(class).is_some() {
                        return Err(Error::Format {
                            file: src.labels.clone(),
                            line,
                            detail: format!("duplicate label for node {id}"),
                        });
                    }
                    num_classes = num_classes.max(class + 1);
                }
                let unlabeled = table.iter().filter(|l| l.is_none()).count();
                if unlabeled > 0 {
                    warnings.push(format!("{}: {unlabeled} anchor nodes unlabeled", src.labels));
                }
                Some(table)
            }
        };

        let graph = HeteroGraph {
            type_names,
            type_ranges,
            anchor_type,
            node_ids,
            node_type,
            id_index,
            edge_types,
            edges,
            adjacency: adjacency.into_iter().map(|s| s.into_iter().collect()).collect(),
            features,
            labels,
            num_classes,
        };
        Ok((graph, warnings))
    }

    pub fn type_names(&self) -> &[String] {
        &self.type_names
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.type_names.iter().position(|n| n == name)
    }

    pub fn type_range(&self, t: usize) -> Range<usize> {
        self.type_ranges[t].clone()
    }

    pub fn type_count(&self, t: usize) -> usize {
        self.type_ranges[t].len()
    }

    /// Node counts keyed by type name.
    pub fn node_counts(&self) -> BTreeMap<String, usize> {
        self.type_names
            .iter()
            .zip(&self.type_ranges)
            .map(|(n, r)| (n.clone(), r.len()))
            .collect()
    }

    pub fn num_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn anchor_type(&self) -> usize {
        self.anchor_type
    }

    pub fn num_anchors(&self) -> usize {
        self.type_ranges[self.anchor_type].len()
    }

    /// Internal index of anchor `local`.
    pub fn anchor_node(&self, local: usize) -> usize {
        self.type_ranges[self.anchor_type].start + local
    }

    pub fn node_id(&self, internal: usize) -> u64 {
        self.node_ids[internal]
    }

    pub fn node_type(&self, internal: usize) -> usize {
        self.node_type[internal]
    }

    pub fn internal_index(&self, id: u64) -> Option<usize> {
        self.id_index.get(&id).copied()
    }

    pub fn edge_types(&self) -> &[EdgeType] {
        &self.edge_types
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Undirected neighbors of an internal node, ascending.
    pub fn neighbors(&self, internal: usize) -> &[usize] {
        &self.adjacency[internal]
    }

    /// Whether some edge type joins types `a` and `b` (either direction).
    pub fn types_connected(&self, a: usize, b: usize) -> bool {
        self.edge_types
            .iter()
            .any(|e| (e.src_type == a && e.dst_type == b) || (e.src_type == b && e.dst_type == a))
    }

    /// Anchor feature matrix, one row per anchor in local order.
    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[Option<usize>]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Writes the graph in the TSV layout read by [`load_graph`].
    pub fn write_tsv(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(path, e))
        };

        let mut nodes = String::from("# global_id\ttype\n");
        for i in 0..self.num_nodes() {
            nodes += &format!("{}\t{}\n", self.node_ids[i], self.type_names[self.node_type[i]]);
        }
        write("nodes.tsv", nodes)?;

        let mut edges = String::from("# src_id\tdst_id\tedge_type\n");
        for e in &self.edges {
            edges += &format!(
                "{}\t{}\t{}\n",
                self.node_ids[e.src], self.node_ids[e.dst], self.edge_types[e.edge_type].name
            );
        }
        write("edges.tsv", edges)?;

        let mut feats = String::from("# anchor_id\tvalues\n");
        for local in 0..self.num_anchors() {
            let row: Vec<String> = self.features.row(local).iter().map(f64::to_string).collect();
            feats += &format!("{}\t{}\n", self.node_ids[self.anchor_node(local)], row.join(","));
        }
        write("features.tsv", feats)?;

        if let Some(labels) = &self.labels {
            let mut out = String::from("# anchor_id\tclass_index\n");
            for (local, class) in labels.iter().enumerate() {
                if let Some(c) = class {
                    out += &format!("{}\t{c}\n", self.node_ids[self.anchor_node(local)]);
                }
            }
            write("labels.tsv", out)?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct LocatedRecords {
    nodes: Vec<(usize, (u64, String))>,
    edges: Vec<(usize, (u64, u64, String))>,
    features: Vec<(usize, (u64, Vec<f64>))>,
    labels: Option<Vec<(usize, (u64, usize))>>,
}

struct SourceNames {
    nodes: String,
    edges: String,
    features: String,
    labels: String,
}

impl SourceNames {
    fn in_memory() -> Self {
        Self {
            nodes: "<nodes>".into(),
            edges: "<edges>".into(),
            features: "<features>".into(),
            labels: "<labels>".into(),
        }
    }

    fn files() -> Self {
        Self {
            nodes: "nodes.tsv".into(),
            edges: "edges.tsv".into(),
            features: "features.tsv".into(),
            labels: "labels.tsv".into(),
        }
    }
}

/// Reads a graph directory (`nodes.tsv`, `edges.tsv`, `features.tsv`,
/// optional `labels.tsv`).
pub fn load_graph(dir: &Path) -> Result<HeteroGraph> {
    load_graph_with_warnings(dir).map(|(g, _)| g)
}

/// Like [`load_graph`], also returning non-fatal findings such as duplicate
/// edges or unlabeled anchors.
pub fn load_graph_with_warnings(dir: &Path) -> Result<(HeteroGraph, Vec<String>)> {
    let read = |name: &str| -> Result<Vec<(usize, Vec<String>)>> {
        let path = dir.join(name);
        if !path.is_file() {
            return Err(Error::MissingFile(path));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|(i, l)| (i + 1, l.split('\t').map(|f| f.trim().to_string()).collect()))
            .collect())
    };
    let fields = |file: &str, line: usize, row: &[String], n: usize| -> Result<()> {
        if row.len() != n {
            return Err(Error::Format {
                file: file.into(),
                line,
                detail: format!("expected {n} tab-separated fields, found {}", row.len()),
            });
        }
        Ok(())
    };
    let parse_id = |file: &str, line: usize, s: &str| -> Result<u64> {
        s.parse().map_err(|_| Error::Format {
            file: file.into(),
            line,
            detail: format!("invalid node id `{s}`"),
        })
    };

    let mut rec = LocatedRecords::default();
    for (line, row) in read("nodes.tsv")? {
        fields("nodes.tsv", line, &row, 2)?;
        rec.nodes.push((line, (parse_id("nodes.tsv", line, &row[0])?, row[1].clone())));
    }
    for (line, row) in read("edges.tsv")? {
        fields("edges.tsv", line, &row, 3)?;
        let s = parse_id("edges.tsv", line, &row[0])?;
        let d = parse_id("edges.tsv", line, &row[1])?;
        rec.edges.push((line, (s, d, row[2].clone())));
    }
    for (line, row) in read("features.tsv")? {
        fields("features.tsv", line, &row, 2)?;
        let id = parse_id("features.tsv", line, &row[0])?;
        let values = row[1]
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Format {
                file: "features.tsv".into(),
                line,
                detail: format!("bad feature value: {e}"),
            })?;
        rec.features.push((line, (id, values)));
    }
    if dir.join("labels.tsv").is_file() {
        let mut labels = Vec::new();
        for (line, row) in read("labels.tsv")? {
            fields("labels.tsv", line, &row, 2)?;
            let id = parse_id("labels.tsv", line, &row[0])?;
            let class = row[1].parse().map_err(|_| Error::Format {
                file: "labels.tsv".into(),
                line,
                detail: format!("invalid class index `{}`", row[1]),
            })?;
            labels.push((line, (id, class)));
        }
        rec.labels = Some(labels);
    }
    HeteroGraph::assemble(rec, &SourceNames::files())
}

/// A typed node sequence beginning and ending at the anchor type.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaPath {
    types: Vec<String>,
}

impl MetaPath {
    pub fn new<S: Into<String>>(types: impl IntoIterator<Item = S>) -> Result<Self> {
        let types: Vec<String> = types.into_iter().map(Into::into).collect();
        let name = types.join("-");
        if types.len() < 3 {
            return Err(Error::Schema(format!(
                "meta-path `{name}` needs at least 3 types"
            )));
        }
        if types.len() > MAX_METAPATH_LEN {
            return Err(Error::Schema(format!(
                "meta-path `{name}` exceeds {MAX_METAPATH_LEN} types"
            )));
        }
        if types.first() != types.last() {
            return Err(Error::Schema(format!(
                "meta-path `{name}` must start and end at the same type"
            )));
        }
        Ok(Self { types })
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    pub fn name(&self) -> String {
        self.types.join("-")
    }

    /// Resolves type names against `g` and checks each hop has an edge type.
    ///
    /// A graph with no edges declares no edge types; any hop is accepted
    /// there and enumeration yields singleton neighborhoods.
    pub fn resolve(&self, g: &HeteroGraph) -> Result<Vec<usize>> {
        let ids = self
            .types
            .iter()
            .map(|t| {
                g.type_index(t)
                    .ok_or_else(|| Error::Schema(format!("unknown node type `{t}` in {self}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if ids[0] != g.anchor_type() {
            return Err(Error::Schema(format!(
                "meta-path {self} must start at anchor type `{}`",
                g.type_names()[g.anchor_type()]
            )));
        }
        for pair in ids.windows(2) {
            if !g.edges().is_empty() && !g.types_connected(pair[0], pair[1]) {
                return Err(Error::Schema(format!(
                    "no edge type joins `{}` and `{}` in {self}",
                    g.type_names()[pair[0]],
                    g.type_names()[pair[1]]
                )));
            }
        }
        Ok(ids)
    }
}

impl fmt::Display for MetaPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Anchor neighborhoods induced by one meta-path.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaPathNeighborhoods {
    pub name: String,
    /// Per anchor: reachable anchors (always including itself), ascending.
    pub neighbors: Vec<Vec<usize>>,
    /// Number of distinct typed walks realizing each pair, parallel to `neighbors`.
    pub path_counts: Vec<Vec<u64>>,
}

/// Enumerates, for every anchor, the anchors reachable along `mp`.
pub fn metapath_neighbors(g: &HeteroGraph, mp: &MetaPath) -> Result<MetaPathNeighborhoods> {
    let types = mp.resolve(g)?;
    let n = g.num_anchors();
    let mut neighbors = Vec::with_capacity(n);
    let mut path_counts = Vec::with_capacity(n);
    for local in 0..n {
        let mut frontier: BTreeMap<usize, u64> = BTreeMap::from([(g.anchor_node(local), 1)]);
        for &next_type in &types[1..] {
            let mut next: BTreeMap<usize, u64> = BTreeMap::new();
            for (&u, &count) in &frontier {
                for &w in g.neighbors(u) {
                    if g.node_type(w) == next_type {
                        *next.entry(w).or_default() += count;
                    }
                }
            }
            frontier = next;
        }
        let mut reached: BTreeMap<usize, u64> = frontier
            .into_iter()
            .map(|(internal, c)| (internal - g.anchor_node(0), c))
            .collect();
        reached.entry(local).or_insert(0);
        let (ids, counts) = reached.into_iter().unzip();
        neighbors.push(ids);
        path_counts.push(counts);
    }
    Ok(MetaPathNeighborhoods {
        name: mp.name(),
        neighbors,
        path_counts,
    })
}

/// Disjoint train/validation/test anchor sets.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub ratio: f64,
}

/// Stratified split of labeled anchors: per class, `round(ratio·size)` go to
/// train, `round(val_fraction·size)` to validation, the rest to test.
pub fn split_labels(g: &HeteroGraph, ratio: f64, val_fraction: f64, seed: u64) -> Result<LabelSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::config("ratio", format!("{ratio} is outside (0, 1)")));
    }
    if !(0.0..1.0).contains(&val_fraction) || ratio + val_fraction >= 1.0 {
        return Err(Error::config(
            "val_fraction",
            format!("{val_fraction} with ratio {ratio} leaves no test nodes"),
        ));
    }
    let labels = g
        .labels()
        .ok_or_else(|| Error::EmptyInput("graph has no labels".into()))?;
    let mut classes: Vec<Vec<usize>> = vec![Vec::new(); g.num_classes()];
    for (local, label) in labels.iter().enumerate() {
        if let Some(c) = label {
            classes[*c].push(local);
        }
    }
    let mut rng = rng::stream(seed, Stream::Split);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (class, members) in classes.iter_mut().enumerate() {
        if members.is_empty() {
            continue;
        }
        let size = members.len();
        let n_train = ((ratio * size as f64).round() as usize).max(1);
        let n_val = if val_fraction > 0.0 {
            ((val_fraction * size as f64).round() as usize).max(1)
        } else {
            0
        };
        if n_train + n_val > size {
            return Err(Error::InsufficientLabels {
                class,
                available: size,
                needed: n_train + n_val,
            });
        }
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..n_train]);
        val.extend_from_slice(&members[n_train..n_train + n_val]);
        test.extend_from_slice(&members[n_train + n_val..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(LabelSplit {
        train,
        val,
        test,
        ratio,
    })
}
