//! Random forest classifier retaining the bookkeeping needed for
//! proximity computation: per-tree in-bag multiplicities, out-of-bag
//! membership, and terminal-node assignment of every training point.

use std::path::Path;

use ndarray::{ArrayView1, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

pub const FOREST_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Maximum split depth; `None` grows until purity or `min_leaf`.
    pub max_depth: Option<usize>,
    /// Minimum bootstrap multiplicity per child node.
    pub min_leaf: usize,
    /// Features sampled per split; `None` resolves to `ceil(sqrt(d))`.
    pub mtry: Option<usize>,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 500, max_depth: None, min_leaf: 1, mtry: None, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { class_counts: Vec<u32> },
}

/// One fitted tree. Indices are local to the training subset the forest
/// was fitted on (position within `Forest::train_indices`).
#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    pub nodes: Vec<Node>,
    /// Bootstrap multiplicity per training point; sums to `n_train`.
    pub inbag_counts: Vec<u32>,
    /// Sorted local indices with `inbag_counts == 0`.
    pub oob_indices: Vec<usize>,
    /// Terminal node index for every training point, in-bag or not.
    pub leaf_of_train: Vec<u32>,
}

impl Tree {
    pub fn route(&self, x: ArrayView1<f64>) -> u32 {
        let mut i = 0usize;
        loop {
            match &self.nodes[i] {
                Node::Split { feature, threshold, left, right } => {
                    i = if x[*feature] <= *threshold { *left } else { *right };
                }
                Node::Leaf { .. } => return i as u32,
            }
        }
    }

    /// Majority class of a leaf, lowest class id on ties.
    pub fn leaf_class(&self, leaf: u32) -> usize {
        match &self.nodes[leaf as usize] {
            Node::Leaf { class_counts } => argmax_lowest(class_counts),
            Node::Split { .. } => unreachable!("leaf id points at a split node"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_train: usize,
    /// Dataset row index of each local training position.
    pub train_indices: Vec<usize>,
    pub params: ForestParams,
    pub class_count: usize,
    pub n_features: usize,
}

fn argmax_lowest<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0usize;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Fit a forest of CART trees on the selected rows.
///
/// Each tree bootstraps `n_train` samples with replacement; the draw is
/// keyed to the sorted original row indices so the fitted forest depends
/// only on which points are in the training set, not on their order.
/// Splits minimize Gini impurity over `mtry` random features, ties broken
/// by lowest feature index then lowest threshold.
pub fn fit_forest(ds: &Dataset, train_indices: &[usize], params: &ForestParams) -> Result<Forest> {
    if train_indices.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    if params.n_trees < 1 {
        return Err(Error::invalid("n_trees must be at least 1"));
    }
    let d = ds.d();
    let mtry = params.mtry.unwrap_or_else(|| (d as f64).sqrt().ceil() as usize);
    if mtry < 1 || mtry > d {
        return Err(Error::invalid(format!("mtry {mtry} out of range [1, {d}]")));
    }

    let x = ds.feature_rows(train_indices);
    let y = ds.label_rows(train_indices);
    let class_count = ds.n_classes();

    // Bootstrap draws index into this ordering, making the sampled multiset
    // of original rows independent of the order of `train_indices`.
    let mut by_original: Vec<usize> = (0..train_indices.len()).collect();
    by_original.sort_by_key(|&i| train_indices[i]);

    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let seed = params.seed.wrapping_add(t as u64);
            fit_tree(x.view(), &y, &by_original, class_count, mtry, params, seed)
        })
        .collect();

    Ok(Forest {
        trees,
        n_train: train_indices.len(),
        train_indices: train_indices.to_vec(),
        params: ForestParams { mtry: Some(mtry), ..*params },
        class_count,
        n_features: d,
    })
}

fn fit_tree(
    x: ArrayView2<f64>,
    y: &[usize],
    by_original: &[usize],
    class_count: usize,
    mtry: usize,
    params: &ForestParams,
    seed: u64,
) -> Tree {
    let m = y.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut inbag = vec![0u32; m];
    for _ in 0..m {
        inbag[by_original[rng.random_range(0..m)]] += 1;
    }
    let oob_indices: Vec<usize> = (0..m).filter(|&i| inbag[i] == 0).collect();

    let members: Vec<usize> = by_original.iter().copied().filter(|&i| inbag[i] > 0).collect();
    let nodes = {
        let mut builder = TreeBuilder {
            x: x.view(),
            y,
            inbag: &inbag,
            class_count,
            mtry,
            min_leaf: params.min_leaf as f64,
            max_depth: params.max_depth,
            rng,
            nodes: Vec::new(),
            scratch_features: (0..x.ncols()).collect(),
        };
        builder.build(members, 0);
        builder.nodes
    };

    let tree = Tree { nodes, inbag_counts: inbag, oob_indices, leaf_of_train: Vec::new() };
    let leaf_of_train = (0..m).map(|i| tree.route(x.row(i))).collect();
    Tree { leaf_of_train, ..tree }
}

struct TreeBuilder<'a, 'b> {
    x: ArrayView2<'a, f64>,
    y: &'a [usize],
    inbag: &'b [u32],
    class_count: usize,
    mtry: usize,
    min_leaf: f64,
    max_depth: Option<usize>,
    rng: ChaCha8Rng,
    nodes: Vec<Node>,
    scratch_features: Vec<usize>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl TreeBuilder<'_, '_> {
    /// Build the subtree over `members` (in-bag local indices) and return
    /// its node index. Children are emitted left first.
    fn build(&mut self, members: Vec<usize>, depth: usize) -> usize {
        let mut class_w = vec![0.0f64; self.class_count];
        let mut total_w = 0.0;
        for &i in &members {
            let w = self.inbag[i] as f64;
            class_w[self.y[i]] += w;
            total_w += w;
        }
        let pure = class_w.iter().filter(|&&w| w > 0.0).count() <= 1;
        let depth_stop = self.max_depth.is_some_and(|d| depth >= d);
        if pure || depth_stop || total_w < 2.0 * self.min_leaf {
            return self.emit_leaf(&class_w);
        }

        let parent_impurity = gini(&class_w, total_w);
        let candidates = self.sample_features();
        let mut best: Option<BestSplit> = None;
        for &feature in &candidates {
            self.scan_feature(feature, &members, &class_w, total_w, parent_impurity, &mut best);
        }

        let Some(split) = best else {
            return self.emit_leaf(&class_w);
        };

        let (left_members, right_members): (Vec<usize>, Vec<usize>) = members
            .into_iter()
            .partition(|&i| self.x[[i, split.feature]] <= split.threshold);

        let index = self.nodes.len();
        self.nodes.push(Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
        });
        let left = self.build(left_members, depth + 1);
        let right = self.build(right_members, depth + 1);
        if let Node::Split { left: l, right: r, .. } = &mut self.nodes[index] {
            *l = left;
            *r = right;
        }
        index
    }

    fn emit_leaf(&mut self, class_w: &[f64]) -> usize {
        self.nodes.push(Node::Leaf { class_counts: class_w.iter().map(|&w| w as u32).collect() });
        self.nodes.len() - 1
    }

    /// `mtry` distinct features, evaluated in ascending order for
    /// deterministic tie-breaking.
    fn sample_features(&mut self) -> Vec<usize> {
        let d = self.scratch_features.len();
        for i in 0..self.mtry {
            let j = i + self.rng.random_range(0..d - i);
            self.scratch_features.swap(i, j);
        }
        let mut chosen = self.scratch_features[..self.mtry].to_vec();
        chosen.sort_unstable();
        chosen
    }

    #[allow(clippy::too_many_arguments)]
    fn scan_feature(
        &self,
        feature: usize,
        members: &[usize],
        class_w: &[f64],
        total_w: f64,
        parent_impurity: f64,
        best: &mut Option<BestSplit>,
    ) {
        let mut vals: Vec<(f64, usize)> =
            members.iter().map(|&i| (self.x[[i, feature]], i)).collect();
        vals.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite feature values"));

        let mut left_w = vec![0.0f64; self.class_count];
        let mut left_total = 0.0;
        let mut pos = 0;
        while pos < vals.len() {
            // Consume one run of equal values.
            let v = vals[pos].0;
            while pos < vals.len() && vals[pos].0 == v {
                let i = vals[pos].1;
                let w = self.inbag[i] as f64;
                left_w[self.y[i]] += w;
                left_total += w;
                pos += 1;
            }
            if pos == vals.len() {
                break;
            }
            let right_total = total_w - left_total;
            if left_total < self.min_leaf || right_total < self.min_leaf {
                continue;
            }
            let next = vals[pos].0;
            let mid = v + (next - v) / 2.0;
            // Guard against the midpoint rounding up onto `next`.
            let threshold = if mid >= next { v } else { mid };

            let left_imp = gini(&left_w, left_total);
            let mut right_w_sum = 0.0;
            let mut right_imp_acc = 0.0;
            for (c, lw) in left_w.iter().enumerate() {
                let rw = class_w[c] - lw;
                right_w_sum += rw;
                right_imp_acc += rw * rw;
            }
            let right_imp = 1.0 - right_imp_acc / (right_w_sum * right_w_sum);
            let children = (left_total * left_imp + right_total * right_imp) / total_w;
            let gain = parent_impurity - children;
            if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                *best = Some(BestSplit { gain, feature, threshold });
            }
        }
    }
}

fn gini(class_w: &[f64], total: f64) -> f64 {
    let mut acc = 0.0;
    for &w in class_w {
        acc += w * w;
    }
    1.0 - acc / (total * total)
}

impl Forest {
    /// Terminal node of `x` in every tree.
    pub fn apply(&self, x: ArrayView1<f64>) -> Result<Vec<u32>> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, got: x.len() });
        }
        Ok(self.trees.iter().map(|t| t.route(x)).collect())
    }

    /// Majority vote over per-tree leaf majorities, lowest class id on ties.
    pub fn predict(&self, x: ArrayView1<f64>) -> Result<usize> {
        let leaves = self.apply(x)?;
        let mut votes = vec![0u32; self.class_count];
        for (tree, &leaf) in self.trees.iter().zip(&leaves) {
            votes[tree.leaf_class(leaf)] += 1;
        }
        Ok(argmax_lowest(&votes))
    }

    /// Accuracy of majority votes cast only by trees where each training
    /// point is out-of-bag. Points in-bag everywhere are excluded from the
    /// denominator.
    pub fn oob_accuracy(&self, ds: &Dataset) -> Result<f64> {
        let labels = ds.label_rows(&self.train_indices);
        let mut correct = 0usize;
        let mut counted = 0usize;
        for i in 0..self.n_train {
            let mut votes = vec![0u32; self.class_count];
            let mut any = false;
            for tree in &self.trees {
                if tree.inbag_counts[i] == 0 {
                    votes[tree.leaf_class(tree.leaf_of_train[i])] += 1;
                    any = true;
                }
            }
            if any {
                counted += 1;
                if argmax_lowest(&votes) == labels[i] {
                    correct += 1;
                }
            }
        }
        if counted == 0 {
            return Err(Error::invalid("no training point is out-of-bag in any tree"));
        }
        Ok(correct as f64 / counted as f64)
    }

    pub fn validate(&self) -> Result<()> {
        for (t, tree) in self.trees.iter().enumerate() {
            let total: u64 = tree.inbag_counts.iter().map(|&c| c as u64).sum();
            if total != self.n_train as u64 {
                return Err(Error::invalid(format!(
                    "tree {t}: in-bag counts sum to {total}, expected {}",
                    self.n_train
                )));
            }
            let oob: Vec<usize> =
                (0..self.n_train).filter(|&i| tree.inbag_counts[i] == 0).collect();
            if oob != tree.oob_indices {
                return Err(Error::invalid(format!("tree {t}: oob set inconsistent")));
            }
            if tree.leaf_of_train.len() != self.n_train {
                return Err(Error::invalid(format!("tree {t}: leaf assignment length")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ForestFile {
            format_version: FOREST_FORMAT_VERSION,
            params: self.params,
            n_train: self.n_train,
            class_count: self.class_count,
            n_features: self.n_features,
            train_indices: self.train_indices.clone(),
            trees: self
                .trees
                .iter()
                .map(|t| TreeFile {
                    nodes: t.nodes.clone(),
                    inbag_counts: t.inbag_counts.clone(),
                    leaf_of_train: t.leaf_of_train.clone(),
                })
                .collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let file: ForestFile = serde_json::from_str(json)?;
        if file.format_version != FOREST_FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported forest format version {}",
                file.format_version
            )));
        }
        let forest = Forest {
            trees: file
                .trees
                .into_iter()
                .map(|t| {
                    let oob_indices =
                        (0..file.n_train).filter(|&i| t.inbag_counts[i] == 0).collect();
                    Tree {
                        nodes: t.nodes,
                        inbag_counts: t.inbag_counts,
                        oob_indices,
                        leaf_of_train: t.leaf_of_train,
                    }
                })
                .collect(),
            n_train: file.n_train,
            train_indices: file.train_indices,
            params: file.params,
            class_count: file.class_count,
            n_features: file.n_features,
        };
        forest.validate()?;
        Ok(forest)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Fraction of training points that are OOB in tree `t`.
    pub fn oob_fraction(&self, t: usize) -> f64 {
        self.trees[t].oob_indices.len() as f64 / self.n_train as f64
    }
}

#[derive(Serialize, Deserialize)]
struct ForestFile {
    format_version: u32,
    params: ForestParams,
    n_train: usize,
    class_count: usize,
    n_features: usize,
    train_indices: Vec<usize>,
    trees: Vec<TreeFile>,
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    nodes: Vec<Node>,
    inbag_counts: Vec<u32>,
    leaf_of_train: Vec<u32>,
}
