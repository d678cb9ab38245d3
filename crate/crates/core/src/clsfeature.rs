//! Feature-guided classifier: CART decision trees with Gini splits, one
//! binary tree per class (binary relevance, plus a dummy NONE class for
//! matrices not worth optimizing), leave-one-out evaluation and a versioned
//! text model format.

use crate::bounds::{self, BenchConfig, BoundsError, MachineProfile};
use crate::clsprofile::{classify, Class, ClassSet, RuleParams};
use crate::featext::{self, FeatureId, FeatureVector, ALL_FEATURES};
use crate::matcore::CsrMatrix;
use serde::Serialize;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("feature subset is empty")]
    EmptyFeatureSubset,
    #[error("sample '{0}' has non-finite features")]
    NonFiniteFeatures(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt model file: {0}")]
    CorruptModel(String),
    #[error("model version mismatch: expected '{expected}', found '{found}'")]
    VersionMismatch { expected: String, found: String },
    #[error("unknown feature name '{0}'")]
    UnknownFeature(String),
    #[error("profiling failed: {0}")]
    Bounds(#[from] BoundsError),
    #[error("feature extraction failed: {0}")]
    Feat(#[from] featext::FeatError),
}

/// Binary targets: the four bottleneck classes plus the dummy NONE class.
pub const TARGETS: [&str; 5] = ["MB", "ML", "IMB", "CMP", "NONE"];

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub features: FeatureVector,
    pub labels: ClassSet,
    pub matrix_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    /// Maximum tree depth; `usize::MAX` disables the limit.
    pub max_depth: usize,
    /// Minimum samples per leaf.
    pub min_leaf: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams { max_depth: 8, min_leaf: 3 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split { feature: FeatureId, threshold: f64, left: usize, right: usize },
    Leaf { p: f64 },
}

/// One binary CART tree; nodes stored in preorder, root at index 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], id: usize) -> usize {
            match nodes[id] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Leaf probability for one feature vector. Values <= threshold go left.
    pub fn prob(&self, f: &FeatureVector) -> f64 {
        let mut id = 0usize;
        loop {
            match self.nodes[id] {
                Node::Leaf { p } => return p,
                Node::Split { feature, threshold, left, right } => {
                    id = if f.get(feature) <= threshold { left } else { right };
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub feature_subset: Vec<FeatureId>,
    /// In TARGETS order: MB, ML, IMB, CMP, NONE.
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub exact_match_ratio: f64,
    pub partial_match_ratio: f64,
    pub per_class_precision: HashMap<String, f64>,
    pub per_class_recall: HashMap<String, f64>,
}

/// The two published feature presets; "dispersion" maps to scatter.
pub fn feature_preset(name: &str) -> Option<Vec<FeatureId>> {
    match name {
        // O(N) extraction cost
        "preset-n" => Some(vec![
            FeatureId::NnzMin,
            FeatureId::NnzMax,
            FeatureId::NnzSd,
            FeatureId::BwAvg,
            FeatureId::ScatterAvg,
            FeatureId::ScatterSd,
        ]),
        // O(NNZ) extraction cost
        "preset-nnz" => Some(vec![
            FeatureId::Size,
            FeatureId::BwAvg,
            FeatureId::BwSd,
            FeatureId::NnzMin,
            FeatureId::NnzMax,
            FeatureId::NnzAvg,
            FeatureId::NnzSd,
            FeatureId::MissesAvg,
            FeatureId::ScatterSd,
        ]),
        _ => None,
    }
}

/// Parses a preset name or a comma-separated feature list.
pub fn parse_feature_subset(s: &str) -> Result<Vec<FeatureId>, TreeError> {
    if let Some(p) = feature_preset(s) {
        return Ok(p);
    }
    if s == "all" {
        return Ok(ALL_FEATURES.to_vec());
    }
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| FeatureId::from_name(p).ok_or_else(|| TreeError::UnknownFeature(p.to_string())))
        .collect()
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

struct Builder<'a> {
    values: &'a [Vec<f64>], // per feature-subset index, per sample
    labels: &'a [bool],
    features: &'a [FeatureId],
    params: TreeParams,
    nodes: Vec<Node>,
}

impl Builder<'_> {
    fn leaf(&mut self, idx: &[usize]) -> usize {
        let pos = idx.iter().filter(|&&i| self.labels[i]).count();
        self.nodes.push(Node::Leaf { p: pos as f64 / idx.len() as f64 });
        self.nodes.len() - 1
    }

    fn build(&mut self, idx: &mut Vec<usize>, depth: usize) -> usize {
        let n = idx.len();
        let pos = idx.iter().filter(|&&i| self.labels[i]).count();
        if depth >= self.params.max_depth
            || pos == 0
            || pos == n
            || n < 2 * self.params.min_leaf
        {
            return self.leaf(idx);
        }
        // Exhaustive scan: every feature, every midpoint of adjacent
        // distinct values. Ties in gain break toward the lower feature index
        // and lower threshold via strict comparison in enumeration order.
        let parent = gini(pos, n);
        let mut best: Option<(f64, usize, f64)> = None; // gain, feat idx, thr
        let mut order: Vec<usize> = idx.clone();
        for fi in 0..self.features.len() {
            let col = &self.values[fi];
            order.sort_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap());
            let mut pos_left = 0usize;
            for k in 0..n - 1 {
                if self.labels[order[k]] {
                    pos_left += 1;
                }
                let (va, vb) = (col[order[k]], col[order[k + 1]]);
                if va == vb {
                    continue;
                }
                let nl = k + 1;
                let nr = n - nl;
                if nl < self.params.min_leaf || nr < self.params.min_leaf {
                    continue;
                }
                let gain = parent
                    - (nl as f64 / n as f64) * gini(pos_left, nl)
                    - (nr as f64 / n as f64) * gini(pos - pos_left, nr);
                if gain > 0.0 && best.map_or(true, |(g, _, _)| gain > g) {
                    best = Some((gain, fi, (va + vb) / 2.0));
                }
            }
        }
        let Some((_, fi, thr)) = best else {
            // No positive-gain split (e.g. identical feature vectors with
            // conflicting labels): majority leaf.
            if pos != 0 && pos != n {
                eprintln!(
                    "warning: unsplittable node with mixed labels ({pos}/{n} positive); \
                     emitting majority leaf"
                );
            }
            return self.leaf(idx);
        };
        let col = &self.values[fi];
        let mut left: Vec<usize> = idx.iter().copied().filter(|&i| col[i] <= thr).collect();
        let mut right: Vec<usize> = idx.iter().copied().filter(|&i| col[i] > thr).collect();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { p: 0.0 }); // patched below
        let l = self.build(&mut left, depth + 1);
        let r = self.build(&mut right, depth + 1);
        self.nodes[id] =
            Node::Split { feature: self.features[fi], threshold: thr, left: l, right: r };
        id
    }
}

fn train_binary(
    values: &[Vec<f64>],
    labels: &[bool],
    features: &[FeatureId],
    params: TreeParams,
) -> Tree {
    let mut b = Builder { values, labels, features, params, nodes: Vec::new() };
    let mut idx: Vec<usize> = (0..labels.len()).collect();
    b.build(&mut idx, 0);
    Tree { nodes: b.nodes }
}

/// Trains one CART tree per target class (binary relevance).
pub fn train(
    samples: &[LabeledSample],
    feature_subset: &[FeatureId],
    params: TreeParams,
) -> Result<TreeModel, TreeError> {
    if samples.len() < 2 {
        return Err(TreeError::TooFewSamples { need: 2, got: samples.len() });
    }
    if feature_subset.is_empty() {
        return Err(TreeError::EmptyFeatureSubset);
    }
    for s in samples {
        if !s.features.is_finite() {
            return Err(TreeError::NonFiniteFeatures(s.matrix_id.clone()));
        }
    }
    // Column-major feature matrix over the subset.
    let values: Vec<Vec<f64>> = feature_subset
        .iter()
        .map(|&f| samples.iter().map(|s| s.features.get(f)).collect())
        .collect();
    let trees = TARGETS
        .iter()
        .map(|&t| {
            let labels: Vec<bool> = samples
                .iter()
                .map(|s| match Class::from_name(t) {
                    Some(c) => s.labels.contains(c),
                    None => s.labels.is_empty(), // NONE
                })
                .collect();
            train_binary(&values, &labels, feature_subset, params)
        })
        .collect();
    Ok(TreeModel { feature_subset: feature_subset.to_vec(), trees })
}

/// Walks every per-class tree; a class is predicted iff its leaf probability
/// strictly exceeds 0.5. NONE is dropped when any real class fires.
pub fn predict(model: &TreeModel, f: &FeatureVector) -> ClassSet {
    let mut set = ClassSet::EMPTY;
    for (t, tree) in TARGETS.iter().zip(&model.trees) {
        if tree.prob(f) > 0.5 {
            if let Some(c) = Class::from_name(t) {
                set.insert(c);
            }
            // NONE fires into the empty set.
        }
    }
    set
}

/// Labels a corpus by running the bounds profiler and the profile-guided
/// classifier on every matrix, pairing the result with its features.
pub fn bootstrap_labels(
    corpus: &[(String, CsrMatrix)],
    prof: &MachineProfile,
    params: &RuleParams,
    nthreads: usize,
    cfg: BenchConfig,
) -> Result<Vec<LabeledSample>, TreeError> {
    corpus
        .iter()
        .map(|(id, m)| {
            let report = bounds::profile(m, prof, nthreads, cfg)?;
            let labels = classify(&report, params);
            let features = featext::extract(m, prof)?;
            Ok(LabeledSample { features, labels, matrix_id: id.clone() })
        })
        .collect()
}

/// Leave-one-out cross validation: k rounds of train-on-(k-1), predict-one.
/// NONE counts as a class for partial matching, so empty-vs-empty matches.
pub fn loo_evaluate(
    samples: &[LabeledSample],
    feature_subset: &[FeatureId],
    params: TreeParams,
) -> Result<EvalReport, TreeError> {
    if samples.len() < 3 {
        return Err(TreeError::TooFewSamples { need: 3, got: samples.len() });
    }
    let k = samples.len();
    let mut exact = 0usize;
    let mut partial = 0usize;
    let mut tp: HashMap<&str, usize> = HashMap::new();
    let mut fp: HashMap<&str, usize> = HashMap::new();
    let mut fnn: HashMap<&str, usize> = HashMap::new();
    for i in 0..k {
        let fold: Vec<LabeledSample> = samples
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, s)| s.clone())
            .collect();
        let model = train(&fold, feature_subset, params)?;
        let pred = predict(&model, &samples[i].features);
        let truth = samples[i].labels;
        if pred == truth {
            exact += 1;
        }
        if pred.intersects(&truth) || (pred.is_empty() && truth.is_empty()) {
            partial += 1;
        }
        for &t in &TARGETS {
            let (p, a) = match Class::from_name(t) {
                Some(c) => (pred.contains(c), truth.contains(c)),
                None => (pred.is_empty(), truth.is_empty()),
            };
            match (p, a) {
                (true, true) => *tp.entry(t).or_default() += 1,
                (true, false) => *fp.entry(t).or_default() += 1,
                (false, true) => *fnn.entry(t).or_default() += 1,
                (false, false) => {}
            }
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 1.0 } else { num as f64 / den as f64 };
    let mut precision = HashMap::new();
    let mut recall = HashMap::new();
    for &t in &TARGETS {
        let tpv = tp.get(t).copied().unwrap_or(0);
        precision.insert(t.to_string(), ratio(tpv, tpv + fp.get(t).copied().unwrap_or(0)));
        recall.insert(t.to_string(), ratio(tpv, tpv + fnn.get(t).copied().unwrap_or(0)));
    }
    Ok(EvalReport {
        exact_match_ratio: exact as f64 / k as f64,
        partial_match_ratio: partial as f64 / k as f64,
        per_class_precision: precision,
        per_class_recall: recall,
    })
}

// ---------------------------------------------------------------------------
// Model persistence: line-oriented, versioned text format.
// ---------------------------------------------------------------------------

const MODEL_HEADER: &str = "spmv-tree-model v1";

pub fn model_to_string(model: &TreeModel) -> String {
    let mut s = String::new();
    s.push_str(MODEL_HEADER);
    s.push('\n');
    let names: Vec<&str> = model.feature_subset.iter().map(|f| f.name()).collect();
    let _ = writeln!(s, "features {}", names.join(","));
    for (t, tree) in TARGETS.iter().zip(&model.trees) {
        let _ = writeln!(s, "class {t}");
        for (id, node) in tree.nodes().iter().enumerate() {
            match node {
                Node::Split { feature, threshold, left, right } => {
                    let _ = writeln!(
                        s,
                        "node {id} feat={} thr={threshold:.16e} left={left} right={right}",
                        feature.name()
                    );
                }
                Node::Leaf { p } => {
                    let _ = writeln!(s, "leaf {id} p={p:.16e}");
                }
            }
        }
    }
    s
}

pub fn save_model(model: &TreeModel, path: &Path) -> Result<(), TreeError> {
    fs::write(path, model_to_string(model))?;
    Ok(())
}

pub fn model_from_str(content: &str) -> Result<TreeModel, TreeError> {
    let corrupt = |msg: String| TreeError::CorruptModel(msg);
    let mut lines = content.lines();
    let header = lines.next().ok_or_else(|| corrupt("empty file".into()))?;
    if header != MODEL_HEADER {
        return Err(TreeError::VersionMismatch {
            expected: MODEL_HEADER.into(),
            found: header.into(),
        });
    }
    let feat_line = lines.next().ok_or_else(|| corrupt("missing features line".into()))?;
    let names = feat_line
        .strip_prefix("features ")
        .ok_or_else(|| corrupt("missing features line".into()))?;
    let feature_subset: Vec<FeatureId> = names
        .split(',')
        .map(|n| FeatureId::from_name(n.trim()).ok_or_else(|| TreeError::UnknownFeature(n.into())))
        .collect::<Result<_, _>>()?;
    let mut sections: Vec<(String, Vec<(usize, Node)>)> = Vec::new();
    for (ln, line) in lines.enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: &str| corrupt(format!("line {}: {msg}", ln + 3));
        if let Some(class) = line.strip_prefix("class ") {
            sections.push((class.to_string(), Vec::new()));
        } else if let Some(rest) = line.strip_prefix("node ") {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            if toks.len() != 5 {
                return Err(err("malformed node line"));
            }
            let id: usize = toks[0].parse().map_err(|_| err("bad node id"))?;
            let feat_name =
                toks[1].strip_prefix("feat=").ok_or_else(|| err("missing feat="))?;
            let feature = FeatureId::from_name(feat_name)
                .ok_or_else(|| TreeError::UnknownFeature(feat_name.into()))?;
            let threshold: f64 = toks[2]
                .strip_prefix("thr=")
                .ok_or_else(|| err("missing thr="))?
                .parse()
                .map_err(|_| err("bad threshold"))?;
            let left: usize = toks[3]
                .strip_prefix("left=")
                .ok_or_else(|| err("missing left="))?
                .parse()
                .map_err(|_| err("bad left id"))?;
            let right: usize = toks[4]
                .strip_prefix("right=")
                .ok_or_else(|| err("missing right="))?
                .parse()
                .map_err(|_| err("bad right id"))?;
            sections
                .last_mut()
                .ok_or_else(|| err("node before any class"))?
                .1
                .push((id, Node::Split { feature, threshold, left, right }));
        } else if let Some(rest) = line.strip_prefix("leaf ") {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            if toks.len() != 2 {
                return Err(err("malformed leaf line"));
            }
            let id: usize = toks[0].parse().map_err(|_| err("bad leaf id"))?;
            let p: f64 = toks[1]
                .strip_prefix("p=")
                .ok_or_else(|| err("missing p="))?
                .parse()
                .map_err(|_| err("bad probability"))?;
            if !(0.0..=1.0).contains(&p) {
                return Err(err("probability out of range"));
            }
            sections
                .last_mut()
                .ok_or_else(|| err("leaf before any class"))?
                .1
                .push((id, Node::Leaf { p }));
        } else {
            return Err(err("unrecognized line"));
        }
    }
    if sections.len() != TARGETS.len() {
        return Err(corrupt(format!(
            "expected {} class sections, found {}",
            TARGETS.len(),
            sections.len()
        )));
    }
    let mut trees = Vec::with_capacity(TARGETS.len());
    for (t, (name, mut nodes)) in TARGETS.iter().zip(sections) {
        if name != *t {
            return Err(corrupt(format!("expected class {t}, found {name}")));
        }
        nodes.sort_by_key(|(id, _)| *id);
        for (want, (id, _)) in nodes.iter().enumerate() {
            if *id != want {
                return Err(corrupt(format!("class {t}: non-contiguous node id {id}")));
            }
        }
        let flat: Vec<Node> = nodes.into_iter().map(|(_, n)| n).collect();
        if flat.is_empty() {
            return Err(corrupt(format!("class {t}: no nodes")));
        }
        for n in &flat {
            if let Node::Split { left, right, .. } = n {
                if *left >= flat.len() || *right >= flat.len() {
                    return Err(corrupt(format!("class {t}: child id out of range")));
                }
            }
        }
        trees.push(Tree { nodes: flat });
    }
    Ok(TreeModel { feature_subset, trees })
}

pub fn load_model(path: &Path) -> Result<TreeModel, TreeError> {
    model_from_str(&fs::read_to_string(path)?)
}

// ---------------------------------------------------------------------------
// Labeled-sample CSV exchange.
// ---------------------------------------------------------------------------

pub fn samples_to_csv(samples: &[LabeledSample]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "matrix_id,{},labels", FeatureVector::csv_header());
    for sample in samples {
        let labels = if sample.labels.is_empty() {
            "NONE".to_string()
        } else {
            sample.labels.iter().map(|c| c.name()).collect::<Vec<_>>().join(";")
        };
        let _ = writeln!(s, "{},{},{}", sample.matrix_id, sample.features.csv_row(), labels);
    }
    s
}

pub fn samples_from_csv(content: &str) -> Result<Vec<LabeledSample>, TreeError> {
    let corrupt = |msg: String| TreeError::CorruptModel(msg);
    let mut lines = content.lines();
    let _header = lines.next().ok_or_else(|| corrupt("empty CSV".into()))?;
    let mut out = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != ALL_FEATURES.len() + 2 {
            return Err(corrupt(format!(
                "line {}: expected {} fields, got {}",
                ln + 2,
                ALL_FEATURES.len() + 2,
                fields.len()
            )));
        }
        let matrix_id = fields[0].to_string();
        let vals: Vec<f64> = fields[1..=ALL_FEATURES.len()]
            .iter()
            .map(|v| v.parse().map_err(|e| corrupt(format!("line {}: {e}", ln + 2))))
            .collect::<Result<_, _>>()?;
        let features = FeatureVector {
            size_flag: vals[0] as u8,
            density: vals[1],
            nnz_min: vals[2],
            nnz_max: vals[3],
            nnz_avg: vals[4],
            nnz_sd: vals[5],
            bw_min: vals[6],
            bw_max: vals[7],
            bw_avg: vals[8],
            bw_sd: vals[9],
            scatter_avg: vals[10],
            scatter_sd: vals[11],
            clustering_avg: vals[12],
            misses_avg: vals[13],
        };
        let label_field = fields[ALL_FEATURES.len() + 1].trim();
        let labels = if label_field.is_empty() || label_field == "NONE" {
            ClassSet::EMPTY
        } else {
            ClassSet::from_names(&label_field.replace(';', ","))
                .ok_or_else(|| corrupt(format!("line {}: bad labels '{label_field}'", ln + 2)))?
        };
        out.push(LabeledSample { features, labels, matrix_id });
    }
    Ok(out)
}
