//! Two-view encoder.
//!
//! The schema view attends over each anchor's typed neighbors (node-level
//! attention per neighbor type, then a type-level attention that mixes the
//! per-type aggregates). The meta-path view propagates projected anchor
//! features through the normalized hypergraph adjacency. Each view ends in a
//! linear projection head; the fused embedding is their sum.
//!
//! Non-anchor node types carry identity one-hot features, so their input
//! projection is an embedding table with one row per node.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hingraph::HeteroGraph;
use crate::hypergraph::{NormalizedAdjacency, Weighting};
use crate::numkern::{AttentionInputs, DenseMatrix, LinearOperator, RowMask, Tape, Var};
use crate::rng::{self, Stream};

/// Slope of the LeakyReLU applied to attention scores.
pub const ATTENTION_SLOPE: f64 = 0.2;

const CHECKPOINT_MAGIC: &str = "hinge-checkpoint v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderDims {
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub conv_depth: usize,
    pub clusters: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            embed_dim: 64,
            conv_depth: 2,
            clusters: 3,
        }
    }
}

/// Graph-derived structure the schema view needs: per neighbor type, the
/// neighbor list of every anchor (local indices within that type).
#[derive(Clone, Debug)]
pub struct SchemaView {
    anchor_type: String,
    /// Projected types with their input widths; the anchor type comes first.
    inputs: Vec<(String, usize)>,
    /// Per neighbor type: index into `inputs` and the neighbor lists.
    neighbor_types: Vec<(usize, Arc<Vec<Vec<usize>>>)>,
    num_anchors: usize,
}

impl SchemaView {
    /// The anchor type is always a neighbor type of itself (each anchor is in
    /// its own list). Every other type directly connected to the anchor type
    /// follows in type order. An anchor with no neighbor of some type falls
    /// back to its own row for that type.
    pub fn from_graph(g: &HeteroGraph) -> Result<Self> {
        let anchor = g.anchor_type();
        let n = g.num_anchors();
        if n == 0 {
            return Err(Error::EmptyInput("graph has no anchor nodes".into()));
        }
        let anchor_range = g.type_range(anchor);
        let mut inputs = vec![(g.type_names()[anchor].clone(), g.features().cols())];
        let mut neighbor_types = Vec::new();

        let own: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                let mut list: Vec<usize> = g
                    .neighbors(g.anchor_node(i))
                    .iter()
                    .filter(|&&j| anchor_range.contains(&j))
                    .map(|&j| j - anchor_range.start)
                    .collect();
                list.push(i);
                list.sort_unstable();
                list.dedup();
                list
            })
            .collect();
        neighbor_types.push((0, Arc::new(own)));

        for t in 0..g.type_names().len() {
            if t == anchor || !g.types_connected(anchor, t) {
                continue;
            }
            let range = g.type_range(t);
            inputs.push((g.type_names()[t].clone(), range.len()));
            // Stacked layout: anchors first, then this type's rows.
            let lists: Vec<Vec<usize>> = (0..n)
                .map(|i| {
                    let list: Vec<usize> = g
                        .neighbors(g.anchor_node(i))
                        .iter()
                        .filter(|&&j| range.contains(&j))
                        .map(|&j| n + j - range.start)
                        .collect();
                    if list.is_empty() {
                        vec![i]
                    } else {
                        list
                    }
                })
                .collect();
            neighbor_types.push((inputs.len() - 1, Arc::new(lists)));
        }
        Ok(Self {
            anchor_type: g.type_names()[anchor].clone(),
            inputs,
            neighbor_types,
            num_anchors: n,
        })
    }

    pub fn anchor_type(&self) -> &str {
        &self.anchor_type
    }

    pub fn inputs(&self) -> &[(String, usize)] {
        &self.inputs
    }

    pub fn num_anchors(&self) -> usize {
        self.num_anchors
    }

    pub fn neighbor_type_names(&self) -> Vec<&str> {
        self.neighbor_types
            .iter()
            .map(|(k, _)| self.inputs[*k].0.as_str())
            .collect()
    }
}

/// Shapes and provenance stored alongside the tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamMeta {
    pub dims: EncoderDims,
    pub anchor_type: String,
    pub inputs: Vec<(String, usize)>,
    pub neighbor_types: Vec<String>,
    pub meta_paths: Vec<String>,
    pub weighting: Weighting,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    meta: ParamMeta,
    names: Vec<String>,
    tensors: Vec<DenseMatrix>,
}

fn tensor_layout(meta: &ParamMeta) -> Vec<(String, usize, usize, usize)> {
    let EncoderDims {
        hidden_dim: h,
        embed_dim: e,
        conv_depth,
        clusters,
    } = meta.dims;
    let mut out = Vec::new();
    for (name, rows) in &meta.inputs {
        out.push((format!("proj.{name}"), *rows, h, *rows));
    }
    for name in &meta.neighbor_types {
        out.push((format!("att.{name}"), 1, 2 * h, 2 * h));
    }
    out.push(("type.v".into(), h, h, h));
    out.push(("type.b".into(), 1, h, h));
    out.push(("type.q".into(), h, 1, h));
    for l in 0..conv_depth {
        out.push((format!("conv.{l}"), h, h, h));
    }
    for view in ["nep", "mpp"] {
        out.push((format!("head.{view}.w"), h, e, h));
        out.push((format!("head.{view}.b"), 1, e, h));
    }
    out.push(("centroids".into(), clusters, e, e));
    out
}

impl EncoderParams {
    /// Uniform `±1/√fan_in` initialization from the init stream of `seed`.
    pub fn init(
        schema: &SchemaView,
        dims: EncoderDims,
        meta_paths: Vec<String>,
        weighting: Weighting,
        seed: u64,
    ) -> Result<Self> {
        if dims.hidden_dim == 0 || dims.embed_dim == 0 || dims.clusters == 0 {
            return Err(Error::config("dims", "hidden, embed and cluster counts must be positive"));
        }
        let meta = ParamMeta {
            dims,
            anchor_type: schema.anchor_type.clone(),
            inputs: schema.inputs.clone(),
            neighbor_types: schema.neighbor_type_names().into_iter().map(String::from).collect(),
            meta_paths,
            weighting,
        };
        let mut rng = rng::stream(seed, Stream::Init);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, rows, cols, fan_in) in tensor_layout(&meta) {
            let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
            let values = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
            names.push(name);
            tensors.push(DenseMatrix::from_vec(rows, cols, values)?);
        }
        Ok(Self { meta, names, tensors })
    }

    pub fn meta(&self) -> &ParamMeta {
        &self.meta
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[DenseMatrix] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [DenseMatrix] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&DenseMatrix> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    /// Replaces a tensor, keeping its shape.
    pub fn set(&mut self, name: &str, value: DenseMatrix) -> Result<()> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Contract(format!("no parameter named {name}")))?;
        if value.shape() != self.tensors[i].shape() {
            return Err(self.tensors[i].mismatch("set_param", &value));
        }
        self.tensors[i] = value;
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(DenseMatrix::is_finite)
    }

    /// Errors unless the parameters were built for a graph with this schema.
    pub fn check_compatible(&self, schema: &SchemaView) -> Result<()> {
        let ours = describe_inputs(&self.meta.inputs);
        let theirs = describe_inputs(&schema.inputs);
        if self.meta.anchor_type != schema.anchor_type || ours != theirs {
            return Err(Error::Compatibility(format!(
                "checkpoint inputs [{ours}] vs graph inputs [{theirs}]"
            )));
        }
        let expected: Vec<&str> = schema.neighbor_type_names();
        if self.meta.neighbor_types.iter().map(String::as_str).ne(expected.iter().copied()) {
            return Err(Error::Compatibility(format!(
                "checkpoint neighbor types {:?} vs graph neighbor types {:?}",
                self.meta.neighbor_types, expected
            )));
        }
        Ok(())
    }

    /// Text checkpoint; tensor entries are stored as IEEE-754 bit patterns
    /// so a reload reproduces every value exactly.
    pub fn to_checkpoint_string(&self) -> String {
        let m = &self.meta;
        let mut s = String::new();
        let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(s, "hidden_dim\t{}", m.dims.hidden_dim);
        let _ = writeln!(s, "embed_dim\t{}", m.dims.embed_dim);
        let _ = writeln!(s, "conv_depth\t{}", m.dims.conv_depth);
        let _ = writeln!(s, "clusters\t{}", m.dims.clusters);
        let _ = writeln!(s, "anchor_type\t{}", m.anchor_type);
        let _ = writeln!(s, "inputs\t{}", describe_inputs(&m.inputs));
        let _ = writeln!(s, "neighbor_types\t{}", m.neighbor_types.join(","));
        let _ = writeln!(s, "meta_paths\t{}", m.meta_paths.join(","));
        let _ = writeln!(s, "weighting\t{}", weighting_name(m.weighting));
        let _ = writeln!(s, "tensors\t{}", self.tensors.len());
        for (name, t) in self.names.iter().zip(&self.tensors) {
            let _ = writeln!(s, "tensor\t{name}\t{}\t{}", t.rows(), t.cols());
            for r in 0..t.rows() {
                let row: Vec<String> = t.row(r).iter().map(|v| format!("{:016x}", v.to_bits())).collect();
                let _ = writeln!(s, "{}", row.join(" "));
            }
        }
        s
    }

    pub fn from_checkpoint_str(text: &str, file: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let fmt_err = |line: usize, detail: String| Error::Format {
            file: file.display().to_string(),
            line,
            detail,
        };
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| fmt_err(0, format!("unexpected end of file, expected {what}")))
        };
        let (ln, magic) = next("header")?;
        if magic != CHECKPOINT_MAGIC {
            return Err(fmt_err(ln, format!("unknown header {magic:?}")));
        }
        let mut field = |key: &str| -> Result<(usize, String)> {
            let (ln, line) = next(key)?;
            match line.split_once('\t') {
                Some((k, v)) if k == key => Ok((ln, v.to_string())),
                _ => Err(fmt_err(ln, format!("expected field {key}"))),
            }
        };
        let parse_usize = |(ln, v): (usize, String)| {
            v.parse::<usize>().map_err(|_| fmt_err(ln, format!("{v:?} is not a count")))
        };
        let dims = EncoderDims {
            hidden_dim: parse_usize(field("hidden_dim")?)?,
            embed_dim: parse_usize(field("embed_dim")?)?,
            conv_depth: parse_usize(field("conv_depth")?)?,
            clusters: parse_usize(field("clusters")?)?,
        };
        let anchor_type = field("anchor_type")?.1;
        let (ln, inputs_text) = field("inputs")?;
        let inputs = parse_inputs(&inputs_text).ok_or_else(|| fmt_err(ln, "malformed inputs".into()))?;
        let split_list = |v: String| -> Vec<String> {
            if v.is_empty() {
                Vec::new()
            } else {
                v.split(',').map(String::from).collect()
            }
        };
        let neighbor_types = split_list(field("neighbor_types")?.1);
        let meta_paths = split_list(field("meta_paths")?.1);
        let (ln, w) = field("weighting")?;
        let weighting = match w.as_str() {
            "unit" => Weighting::Unit,
            "multiplicity" => Weighting::Multiplicity,
            _ => return Err(fmt_err(ln, format!("unknown weighting {w:?}"))),
        };
        let count = parse_usize(field("tensors")?)?;
        let meta = ParamMeta {
            dims,
            anchor_type,
            inputs,
            neighbor_types,
            meta_paths,
            weighting,
        };
        let layout = tensor_layout(&meta);
        if layout.len() != count {
            return Err(fmt_err(ln, format!("{count} tensors, layout needs {}", layout.len())));
        }
        let mut names = Vec::with_capacity(count);
        let mut tensors = Vec::with_capacity(count);
        for (name, rows, cols, _) in layout {
            let (ln, head) = next("tensor header")?;
            let expected = format!("tensor\t{name}\t{rows}\t{cols}");
            if head != expected {
                return Err(fmt_err(ln, format!("expected {expected:?}, found {head:?}")));
            }
            let mut values = Vec::with_capacity(rows * cols);
            for _ in 0..rows {
                let (ln, row) = next("tensor row")?;
                let parsed: Option<Vec<f64>> = row
                    .split(' ')
                    .map(|w| u64::from_str_radix(w, 16).ok().map(f64::from_bits))
                    .collect();
                match parsed {
                    Some(v) if v.len() == cols => values.extend(v),
                    _ => return Err(fmt_err(ln, format!("row of {name} needs {cols} hex values"))),
                }
            }
            tensors.push(
                DenseMatrix::from_vec(rows, cols, values)
                    .map_err(|_| fmt_err(ln, format!("{name} holds non-finite values")))?,
            );
            names.push(name);
        }
        if let Some((ln, extra)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(fmt_err(ln, format!("trailing content {extra:?}")));
        }
        Ok(Self { meta, names, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        Self::from_checkpoint_str(&text, path)
    }
}

fn describe_inputs(inputs: &[(String, usize)]) -> String {
    inputs
        .iter()
        .map(|(t, d)| format!("{t}:{d}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_inputs(text: &str) -> Option<Vec<(String, usize)>> {
    text.split(',')
        .map(|part| {
            let (t, d) = part.rsplit_once(':')?;
            Some((t.to_string(), d.parse().ok()?))
        })
        .collect()
}

pub(crate) fn weighting_name(w: Weighting) -> &'static str {
    match w {
        Weighting::Unit => "unit",
        Weighting::Multiplicity => "multiplicity",
    }
}

/// Output of one encoder pass over all anchors.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewEmbeddings {
    pub z_nep: DenseMatrix,
    pub z_mpp: DenseMatrix,
    pub fused: DenseMatrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Elu,
    Identity,
}

/// Training-mode dropout: rate plus the stream the masks are drawn from.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut ChaCha8Rng,
}

fn check_dropout(rate: f64) -> Result<()> {
    if !(0.0..=0.5).contains(&rate) {
        return Err(Error::config("dropout", format!("{rate} outside [0, 0.5]")));
    }
    Ok(())
}

fn keep_multiplier(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    if rng.random::<f64>() < rate {
        0.0
    } else {
        1.0 / (1.0 - rate)
    }
}

fn dropout_mask(rows: usize, cols: usize, rate: f64, rng: &mut ChaCha8Rng) -> DenseMatrix {
    DenseMatrix::from_fn(rows, cols, |_, _| keep_multiplier(rng, rate))
}

/// Result of [`node_attention`]: aggregated rows and the per-anchor weights.
#[derive(Clone, Debug)]
pub struct AttentionOutput {
    pub features: DenseMatrix,
    pub weights: Vec<Vec<f64>>,
}

/// `F_i = elu(Σ_j α_ij h_j)` with `α_i = softmax_j leaky(aᵀ[anchor_i ‖ h_j])`.
///
/// `neighbors[i]` indexes rows of `neighbor_feats`.
pub fn node_attention(
    anchor_feats: &DenseMatrix,
    neighbor_feats: &DenseMatrix,
    neighbors: &[Vec<usize>],
    a: &DenseMatrix,
) -> Result<AttentionOutput> {
    if anchor_feats.cols() != neighbor_feats.cols() {
        return Err(anchor_feats.mismatch("node_attention", neighbor_feats));
    }
    if neighbors.len() != anchor_feats.rows() {
        return Err(Error::Contract(format!(
            "{} neighbor lists for {} anchors",
            neighbors.len(),
            anchor_feats.rows()
        )));
    }
    let n = anchor_feats.rows();
    let mut tape = Tape::new();
    let x = tape.leaf(anchor_feats.clone());
    let y = tape.leaf(neighbor_feats.clone());
    let h = tape.vstack(&[x, y])?;
    let av = tape.leaf(a.clone());
    let lists = neighbors.iter().map(|l| l.iter().map(|&j| j + n).collect()).collect();
    let out = tape.neighbor_attention(h, av, attention_inputs(n, Arc::new(lists), None))?;
    Ok(AttentionOutput {
        features: tape.value(out).clone(),
        weights: tape.attention_weights(out).map(<[_]>::to_vec).unwrap_or_default(),
    })
}

fn attention_inputs(n: usize, neighbors: Arc<Vec<Vec<usize>>>, keep: Option<Vec<Vec<f64>>>) -> AttentionInputs {
    AttentionInputs {
        centers: Arc::new((0..n).collect()),
        neighbors,
        keep,
        slope: ATTENTION_SLOPE,
    }
}

/// Type-level weights `β_k = softmax_k mean_i qᵀ tanh(V F_i^k + b)` and the
/// mixture `Σ_k β_k F^k`.
pub fn type_attention(
    per_type: &[DenseMatrix],
    v: &DenseMatrix,
    b: &DenseMatrix,
    q: &DenseMatrix,
) -> Result<(DenseMatrix, Vec<f64>)> {
    let mut tape = Tape::new();
    let fs: Vec<Var> = per_type.iter().map(|f| tape.leaf(f.clone())).collect();
    let (vv, bv, qv) = (tape.leaf(v.clone()), tape.leaf(b.clone()), tape.leaf(q.clone()));
    let (out, beta) = record_type_attention(&mut tape, &fs, vv, bv, qv)?;
    Ok((tape.value(out).clone(), tape.value(beta).values().to_vec()))
}

fn record_type_attention(tape: &mut Tape, fs: &[Var], v: Var, b: Var, q: Var) -> Result<(Var, Var)> {
    if fs.is_empty() {
        return Err(Error::Contract("type attention needs at least one type".into()));
    }
    let mut scores = Vec::with_capacity(fs.len());
    for &f in fs {
        let lin = tape.matmul(f, v)?;
        let shifted = tape.add_row(lin, b)?;
        let act = tape.tanh(shifted);
        let s = tape.matmul(act, q)?;
        scores.push(tape.mean_all(s));
    }
    let row = tape.concat_cols(&scores)?;
    let beta = tape.softmax_rows(row, Arc::new(RowMask::Full))?;
    let mut out = None;
    for (k, &f) in fs.iter().enumerate() {
        let bk = tape.select(beta, 0, k);
        let term = tape.scalar_mul(bk, f)?;
        out = Some(match out {
            None => term,
            Some(acc) => tape.add(acc, term)?,
        });
    }
    Ok((out.expect("at least one type"), beta))
}

/// One hypergraph convolution layer, `σ(M · drop(H) · Θ)`.
pub fn hyperconv(
    m: &NormalizedAdjacency,
    h: &DenseMatrix,
    theta: &DenseMatrix,
    dropout: f64,
    seed: u64,
    activation: Activation,
) -> Result<DenseMatrix> {
    check_dropout(dropout)?;
    let mut input = h.clone();
    if dropout > 0.0 {
        let mut rng = rng::stream(seed, Stream::Dropout);
        let mask = dropout_mask(h.rows(), h.cols(), dropout, &mut rng);
        input = input.zip_map(&mask, |a, b| a * b)?;
    }
    let propagated = m.apply(&input)?.matmul(theta)?;
    Ok(match activation {
        Activation::Elu => propagated.map(crate::numkern::elu_scalar),
        Activation::Identity => propagated,
    })
}

/// Handles of one forward pass recorded on a tape.
pub struct ForwardVars {
    /// One leaf per parameter tensor, in [`EncoderParams::tensors`] order.
    pub params: Vec<Var>,
    pub z_nep: Var,
    pub z_mpp: Var,
    pub centroids: Var,
}

/// Records the full forward pass onto `tape`.
///
/// `schema_x` feeds the schema view and `mpp_x` the meta-path view (they
/// differ when the caller augments one view). With `dropout`, masks are
/// drawn for attention weights and for every convolution input.
pub fn record_forward(
    tape: &mut Tape,
    schema: &SchemaView,
    schema_x: &DenseMatrix,
    mpp_x: &DenseMatrix,
    adjacency: Arc<dyn LinearOperator>,
    params: &EncoderParams,
    mut dropout: Option<Dropout<'_>>,
) -> Result<ForwardVars> {
    params.check_compatible(schema)?;
    if let Some(d) = &dropout {
        check_dropout(d.rate)?;
    }
    let n = schema.num_anchors;
    for x in [schema_x, mpp_x] {
        if x.shape() != (n, schema.inputs[0].1) {
            return Err(Error::Dimension {
                op: "forward",
                left_rows: x.rows(),
                left_cols: x.cols(),
                right_rows: n,
                right_cols: schema.inputs[0].1,
            });
        }
    }
    if adjacency.rows() != n {
        return Err(Error::Contract(format!("adjacency is {}x{}, graph has {n} anchors", adjacency.rows(), adjacency.cols())));
    }
    let vars: Vec<Var> = params.tensors.iter().map(|t| tape.leaf(t.clone())).collect();
    let p = |name: &str| vars[params.index_of(name).expect("layout name")];

    // Schema view.
    let xs = tape.leaf(schema_x.clone());
    let anchor_h = tape.matmul(xs, p(&format!("proj.{}", schema.inputs[0].0)))?;
    let mut per_type = Vec::with_capacity(schema.neighbor_types.len());
    for (k, (input, lists)) in schema.neighbor_types.iter().enumerate() {
        let stacked = if *input == 0 {
            anchor_h
        } else {
            // One-hot inputs: the projection is the table itself.
            let table = p(&format!("proj.{}", schema.inputs[*input].0));
            tape.vstack(&[anchor_h, table])?
        };
        let keep = dropout.as_mut().filter(|d| d.rate > 0.0).map(|d| {
            lists
                .iter()
                .map(|l| l.iter().map(|_| keep_multiplier(d.rng, d.rate)).collect())
                .collect()
        });
        let att = p(&format!("att.{}", params.meta.neighbor_types[k]));
        per_type.push(tape.neighbor_attention(stacked, att, attention_inputs(n, lists.clone(), keep))?);
    }
    let (mixed, _) = record_type_attention(tape, &per_type, p("type.v"), p("type.b"), p("type.q"))?;
    let nep_lin = tape.matmul(mixed, p("head.nep.w"))?;
    let z_nep = tape.add_row(nep_lin, p("head.nep.b"))?;

    // Meta-path view.
    let xm = tape.leaf(mpp_x.clone());
    let mut h = tape.matmul(xm, p(&format!("proj.{}", schema.inputs[0].0)))?;
    for l in 0..params.meta.dims.conv_depth {
        if let Some(d) = dropout.as_mut().filter(|d| d.rate > 0.0) {
            let (rows, cols) = tape.value(h).shape();
            let mask = dropout_mask(rows, cols, d.rate, d.rng);
            h = tape.mul_const(h, Arc::new(mask))?;
        }
        let propagated = tape.left_apply(adjacency.clone(), h)?;
        let mixed = tape.matmul(propagated, p(&format!("conv.{l}")))?;
        h = tape.elu(mixed);
    }
    let mpp_lin = tape.matmul(h, p("head.mpp.w"))?;
    let z_mpp = tape.add_row(mpp_lin, p("head.mpp.b"))?;

    Ok(ForwardVars {
        centroids: p("centroids"),
        params: vars,
        z_nep,
        z_mpp,
    })
}

/// Evaluation-mode forward: no dropout, no augmentation.
pub fn forward(
    schema: &SchemaView,
    features: &DenseMatrix,
    adjacency: Arc<dyn LinearOperator>,
    params: &EncoderParams,
) -> Result<ViewEmbeddings> {
    let mut tape = Tape::new();
    let vars = record_forward(&mut tape, schema, features, features, adjacency, params, None)?;
    let z_nep = tape.value(vars.z_nep).clone();
    let z_mpp = tape.value(vars.z_mpp).clone();
    let fused = z_nep.zip_map(&z_mpp, |a, b| a + b)?;
    if !fused.is_finite() {
        return Err(Error::NonFinite("encoder forward"));
    }
    Ok(ViewEmbeddings { z_nep, z_mpp, fused })
}

/// Everything a forward pass needs that is derived from the graph.
#[derive(Clone)]
pub struct EncoderInputs {
    pub schema: SchemaView,
    pub features: DenseMatrix,
    pub adjacency: Arc<NormalizedAdjacency>,
}

impl EncoderInputs {
    pub fn new(g: &HeteroGraph, adjacency: NormalizedAdjacency) -> Result<Self> {
        if adjacency.n() != g.num_anchors() {
            return Err(Error::Contract(format!(
                "adjacency over {} nodes, graph has {} anchors",
                adjacency.n(),
                g.num_anchors()
            )));
        }
        Ok(Self {
            schema: SchemaView::from_graph(g)?,
            features: g.features().clone(),
            adjacency: Arc::new(adjacency),
        })
    }

    pub fn forward(&self, params: &EncoderParams) -> Result<ViewEmbeddings> {
        forward(&self.schema, &self.features, self.adjacency.clone(), params)
    }
}
