//! Gradient-boosted regression trees with exact greedy splits.

use ivos_metrics::average_precision_of;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::BaselineError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Squared error, for forecasting.
    Squared,
    /// Binomial deviance on log-odds, for classification.
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeNode {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        /// Rows with `x[feature] <= threshold` go left.
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { value } => return *value,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub loss: Loss,
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl GbdtParams {
    pub fn new(loss: Loss, n_estimators: usize, max_depth: usize, learning_rate: f64) -> Self {
        GbdtParams {
            loss,
            n_estimators,
            max_depth,
            learning_rate,
            min_samples_leaf: DEFAULT_MIN_SAMPLES_LEAF,
        }
    }
}

pub const DEFAULT_MIN_SAMPLES_LEAF: usize = 20;

/// Shrunken trees are stored with the learning rate already applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub params: GbdtParams,
    /// Mean target (squared) or prior log-odds (logistic).
    pub base_score: f64,
    pub trees: Vec<TreeNode>,
}

impl GbdtModel {
    pub fn predict_raw(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }

    /// Regression value, or probability for the logistic loss.
    pub fn predict(&self, x: &[f64]) -> f64 {
        let raw = self.predict_raw(x);
        match self.params.loss {
            Loss::Squared => raw,
            Loss::Logistic => sigmoid(raw),
        }
    }

    /// The model made of the first `n` trees.
    pub fn truncated(&self, n: usize) -> GbdtModel {
        GbdtModel {
            params: GbdtParams {
                n_estimators: n.min(self.trees.len()),
                ..self.params.clone()
            },
            base_score: self.base_score,
            trees: self.trees[..n.min(self.trees.len())].to_vec(),
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Column-major features with each column's ascending row order and the
/// values in that order.
pub struct Dataset {
    columns: Vec<Vec<f64>>,
    order: Vec<Vec<u32>>,
    sorted: Vec<Vec<f64>>,
    n_rows: usize,
}

impl Dataset {
    pub fn new(rows: &[Vec<f64>]) -> Result<Dataset, BaselineError> {
        let n_rows = rows.len();
        if n_rows < 2 {
            return Err(BaselineError::Shape(format!("need at least 2 rows, got {n_rows}")));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(BaselineError::Shape("rows differ in length".into()));
        }
        if rows.iter().flatten().any(|v| !v.is_finite()) {
            return Err(BaselineError::Shape("non-finite feature value".into()));
        }
        let columns: Vec<Vec<f64>> = (0..d).map(|f| rows.iter().map(|r| r[f]).collect()).collect();
        let order: Vec<Vec<u32>> = columns
            .par_iter()
            .map(|col| {
                let mut idx: Vec<u32> = (0..n_rows as u32).collect();
                idx.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]));
                idx
            })
            .collect();
        let sorted = columns
            .iter()
            .zip(&order)
            .map(|(col, idx)| idx.iter().map(|&i| col[i as usize]).collect())
            .collect();
        Ok(Dataset {
            columns,
            order,
            sorted,
            n_rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    threshold: f64,
}

enum ArenaNode {
    Leaf(f64),
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

fn to_tree(arena: &[ArenaNode], i: usize) -> TreeNode {
    match arena[i] {
        ArenaNode::Leaf(value) => TreeNode::Leaf { value },
        ArenaNode::Split {
            feature,
            threshold,
            left,
            right,
        } => TreeNode::Split {
            feature,
            threshold,
            left: Box::new(to_tree(arena, left)),
            right: Box::new(to_tree(arena, right)),
        },
    }
}

const NONE: u32 = u32::MAX;
const MIN_GAIN: f64 = 1e-12;

/// Grows one tree level by level on residuals `r`. Splits maximise the
/// squared-error reduction; ties keep the lowest feature, then the lowest
/// threshold. Leaf values come from `leaf_value(rows)`.
fn grow_tree(
    data: &Dataset,
    r: &[f64],
    max_depth: usize,
    min_leaf: usize,
    leaf_value: &dyn Fn(&[usize]) -> f64,
) -> TreeNode {
    let n = data.n_rows;
    // Active node (index into `level`) of each row, or NONE once in a leaf.
    let mut node_of = vec![0u32; n];
    let mut arena: Vec<ArenaNode> = vec![ArenaNode::Leaf(0.0)];
    let mut level: Vec<usize> = vec![0];
    for depth in 0..=max_depth {
        let k = level.len();
        let mut count = vec![0usize; k];
        let mut sum = vec![0.0; k];
        for i in 0..n {
            if node_of[i] != NONE {
                count[node_of[i] as usize] += 1;
                sum[node_of[i] as usize] += r[i];
            }
        }
        let best: Vec<Option<(usize, Candidate)>> = if depth == max_depth {
            vec![None; k]
        } else {
            let state: Vec<(f64, u32)> = r.iter().copied().zip(node_of.iter().copied()).collect();
            let per_feature: Vec<Vec<Option<Candidate>>> = (0..data.n_features())
                .into_par_iter()
                .map(|f| best_splits(data, f, &state, &count, &sum, min_leaf))
                .collect();
            (0..k)
                .map(|node| {
                    let mut out: Option<(usize, Candidate)> = None;
                    for (f, cands) in per_feature.iter().enumerate() {
                        if let Some(c) = cands[node] {
                            if out.is_none_or(|(_, b)| c.gain > b.gain) {
                                out = Some((f, c));
                            }
                        }
                    }
                    out.filter(|(_, c)| c.gain > MIN_GAIN)
                })
                .collect()
        };
        let mut next_level = Vec::new();
        let mut child_of = vec![(NONE, NONE); k];
        let mut leaves: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (node, b) in best.iter().enumerate() {
            if let Some((feature, c)) = *b {
                let left = arena.len();
                arena.push(ArenaNode::Leaf(0.0));
                arena.push(ArenaNode::Leaf(0.0));
                arena[level[node]] = ArenaNode::Split {
                    feature,
                    threshold: c.threshold,
                    left,
                    right: left + 1,
                };
                child_of[node] = (next_level.len() as u32, next_level.len() as u32 + 1);
                next_level.push(left);
                next_level.push(left + 1);
            }
        }
        for i in 0..n {
            let node = node_of[i];
            if node == NONE {
                continue;
            }
            match best[node as usize] {
                Some((f, c)) => {
                    let (l, rr) = child_of[node as usize];
                    node_of[i] = if data.columns[f][i] <= c.threshold { l } else { rr };
                }
                None => {
                    leaves[node as usize].push(i);
                    node_of[i] = NONE;
                }
            }
        }
        for (node, rows) in leaves.iter().enumerate() {
            if best[node].is_none() {
                arena[level[node]] = ArenaNode::Leaf(leaf_value(rows));
            }
        }
        if next_level.is_empty() {
            break;
        }
        level = next_level;
    }
    to_tree(&arena, 0)
}

/// Best threshold per active node on feature `f`, scanning rows in
/// ascending feature order.
fn best_splits(
    data: &Dataset,
    f: usize,
    state: &[(f64, u32)],
    count: &[usize],
    sum: &[f64],
    min_leaf: usize,
) -> Vec<Option<Candidate>> {
    let k = count.len();
    let mut left_n = vec![0usize; k];
    let mut left_s = vec![0.0; k];
    let mut last = vec![f64::NAN; k];
    let mut best: Vec<Option<Candidate>> = vec![None; k];
    let parent: Vec<f64> = (0..k)
        .map(|j| if count[j] > 0 { sum[j] * sum[j] / count[j] as f64 } else { 0.0 })
        .collect();
    for (&row, &x) in data.order[f].iter().zip(&data.sorted[f]) {
        let (ri, node) = state[row as usize];
        if node == NONE {
            continue;
        }
        let j = node as usize;
        let nl = left_n[j];
        if nl >= min_leaf && x > last[j] && count[j] - nl >= min_leaf {
            let sl = left_s[j];
            let sr = sum[j] - sl;
            let nr = count[j] - nl;
            let gain = sl * sl / nl as f64 + sr * sr / nr as f64 - parent[j];
            if best[j].is_none_or(|b| gain > b.gain) {
                best[j] = Some(Candidate {
                    gain,
                    threshold: last[j] + 0.5 * (x - last[j]),
                });
            }
        }
        left_n[j] += 1;
        left_s[j] += ri;
        last[j] = x;
    }
    best
}

/// Boosts `params.n_estimators` trees. After each stage `on_stage(stage,
/// tree)` sees the new shrunken tree; stages count from 1.
pub fn fit_gbdt_with(
    data: &Dataset,
    y: &[f64],
    params: &GbdtParams,
    mut on_stage: impl FnMut(usize, &TreeNode),
) -> Result<GbdtModel, BaselineError> {
    if y.len() != data.n_rows {
        return Err(BaselineError::Shape(format!("{} rows, {} targets", data.n_rows, y.len())));
    }
    if params.max_depth == 0 || !(params.learning_rate > 0.0) || params.min_samples_leaf == 0 {
        return Err(BaselineError::Config("depth, learning rate and leaf size must be positive".into()));
    }
    let n = y.len();
    let base_score = match params.loss {
        Loss::Squared => y.iter().sum::<f64>() / n as f64,
        Loss::Logistic => {
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(BaselineError::Shape("logistic targets must be 0 or 1".into()));
            }
            let p = y.iter().sum::<f64>() / n as f64;
            if p == 0.0 || p == 1.0 {
                return Err(BaselineError::SingleClass);
            }
            (p / (1.0 - p)).ln()
        }
    };
    let mut raw = vec![base_score; n];
    let mut trees = Vec::with_capacity(params.n_estimators);
    let lr = params.learning_rate;
    for stage in 1..=params.n_estimators {
        let (residual, hess): (Vec<f64>, Vec<f64>) = match params.loss {
            Loss::Squared => (y.iter().zip(&raw).map(|(t, f)| t - f).collect(), vec![1.0; n]),
            Loss::Logistic => y
                .iter()
                .zip(&raw)
                .map(|(t, f)| {
                    let p = sigmoid(*f);
                    (t - p, p * (1.0 - p))
                })
                .unzip(),
        };
        let leaf_value = |rows: &[usize]| -> f64 {
            let num: f64 = rows.iter().map(|&i| residual[i]).sum();
            let den: f64 = rows.iter().map(|&i| hess[i]).sum();
            lr * num / den.max(1e-12)
        };
        let tree = grow_tree(data, &residual, params.max_depth, params.min_samples_leaf, &leaf_value);
        for (i, f) in raw.iter_mut().enumerate() {
            *f += tree_predict_column(&tree, data, i);
        }
        on_stage(stage, &tree);
        trees.push(tree);
    }
    Ok(GbdtModel {
        params: params.clone(),
        base_score,
        trees,
    })
}

fn tree_predict_column(tree: &TreeNode, data: &Dataset, i: usize) -> f64 {
    let mut node = tree;
    loop {
        match node {
            TreeNode::Leaf { value } => return *value,
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => node = if data.columns[*feature][i] <= *threshold { left } else { right },
        }
    }
}

pub fn fit_gbdt(rows: &[Vec<f64>], y: &[f64], params: &GbdtParams) -> Result<GbdtModel, BaselineError> {
    fit_gbdt_with(&Dataset::new(rows)?, y, params, |_, _| {})
}

/// Boosting hyperparameter grid. Estimator counts are evaluated as stages
/// of one run per depth and learning rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GbdtGrid {
    pub n_estimators: Vec<usize>,
    pub max_depth: Vec<usize>,
    pub learning_rate: Vec<f64>,
    #[serde(default = "default_min_leaf")]
    pub min_samples_leaf: usize,
}

fn default_min_leaf() -> usize {
    DEFAULT_MIN_SAMPLES_LEAF
}

impl Default for GbdtGrid {
    fn default() -> Self {
        GbdtGrid {
            n_estimators: vec![5, 10, 50, 100, 200],
            max_depth: vec![3, 4, 5, 6],
            learning_rate: vec![0.001, 0.005, 0.05, 0.1, 0.5],
            min_samples_leaf: DEFAULT_MIN_SAMPLES_LEAF,
        }
    }
}

impl GbdtGrid {
    fn validate(&self) -> Result<(), BaselineError> {
        if self.n_estimators.is_empty() || self.max_depth.is_empty() || self.learning_rate.is_empty() {
            return Err(BaselineError::Config("GBDT grid has an empty axis".into()));
        }
        Ok(())
    }
}

/// Validation score to maximise for a vector of raw validation outputs.
fn search(
    rows: &[Vec<f64>],
    y: &[f64],
    val_rows: &[Vec<f64>],
    grid: &GbdtGrid,
    loss: Loss,
    score: &dyn Fn(&[f64]) -> Result<f64, BaselineError>,
) -> Result<GbdtModel, BaselineError> {
    grid.validate()?;
    let data = Dataset::new(rows)?;
    let max_trees = *grid.n_estimators.iter().max().expect("non-empty");
    let mut best: Option<(f64, GbdtModel)> = None;
    for &depth in &grid.max_depth {
        for &lr in &grid.learning_rate {
            let params = GbdtParams {
                min_samples_leaf: grid.min_samples_leaf,
                ..GbdtParams::new(loss, max_trees, depth, lr)
            };
            let mut val_raw: Option<Vec<f64>> = None;
            let mut staged: Vec<(usize, f64)> = Vec::new();
            let mut failure = None;
            let model = fit_gbdt_with(&data, y, &params, |stage, tree| {
                let raw = val_raw.get_or_insert_with(|| vec![0.0; val_rows.len()]);
                raw.iter_mut().zip(val_rows).for_each(|(v, r)| *v += tree.predict(r));
                if grid.n_estimators.contains(&stage) {
                    match score(raw) {
                        Ok(s) => staged.push((stage, s)),
                        Err(e) => failure = Some(e),
                    }
                }
            })?;
            if let Some(e) = failure {
                return Err(e);
            }
            // Staged raw outputs exclude the base score; scores must add it.
            for &n_est in &grid.n_estimators {
                let Some(&(_, s)) = staged.iter().find(|(st, _)| *st == n_est) else {
                    continue;
                };
                log::debug!("gbdt depth {depth} lr {lr} trees {n_est}: {s:.5}");
                if best.as_ref().is_none_or(|(b, _)| s > *b) {
                    best = Some((s, model.truncated(n_est)));
                }
            }
        }
    }
    let (s, m) = best.ok_or_else(|| BaselineError::Config("no GBDT configuration evaluated".into()))?;
    log::info!(
        "gbdt selected depth {} lr {} trees {} (validation score {s:.5})",
        m.params.max_depth,
        m.params.learning_rate,
        m.params.n_estimators
    );
    Ok(m)
}

/// Classification GBDT selected by validation average precision.
pub fn train_gbdt_classifier(
    rows: &[Vec<f64>],
    y: &[bool],
    val_rows: &[Vec<f64>],
    val_y: &[bool],
    grid: &GbdtGrid,
) -> Result<GbdtModel, BaselineError> {
    crate::logistic::check_classes(y)?;
    let target: Vec<f64> = y.iter().map(|&v| f64::from(u8::from(v))).collect();
    let p = target.iter().sum::<f64>() / target.len() as f64;
    let base = (p / (1.0 - p)).ln();
    let score = |raw: &[f64]| -> Result<f64, BaselineError> {
        let probs: Vec<f64> = raw.iter().map(|r| sigmoid(base + r)).collect();
        average_precision_of(&probs, val_y).map_err(|_| BaselineError::SingleClass)
    };
    search(rows, &target, val_rows, grid, Loss::Logistic, &score)
}

/// Forecasting GBDT selected by lowest validation mean absolute error.
pub fn train_gbdt_regressor(
    rows: &[Vec<f64>],
    y: &[f64],
    val_rows: &[Vec<f64>],
    val_y: &[f64],
    grid: &GbdtGrid,
) -> Result<GbdtModel, BaselineError> {
    if val_y.is_empty() || val_rows.len() != val_y.len() {
        return Err(BaselineError::Shape("validation rows and targets differ".into()));
    }
    let base = y.iter().sum::<f64>() / y.len().max(1) as f64;
    let score = |raw: &[f64]| -> Result<f64, BaselineError> {
        let mae = raw.iter().zip(val_y).map(|(r, t)| (base + r - t).abs()).sum::<f64>() / val_y.len() as f64;
        Ok(-mae)
    };
    search(rows, y, val_rows, grid, Loss::Squared, &score)
}
