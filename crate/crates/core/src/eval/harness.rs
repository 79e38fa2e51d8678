//! Experiment harness: split, fit, embed, train every architecture cell,
//! extend to the held-out block, and score against the reference
//! embedding of the full data.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mantel, pairwise_distances, MantelMethod};
use crate::ae::{
    build_io, standardize_embedding, train, AEModel, OptimizerKind, TrainConfig, Variant,
};
use crate::data::{load_csv, split, standardize, Dataset, SplitSpec};
use crate::embed::{rfphate_embed, DiffusionConfig, TimeSelect};
use crate::error::{Error, Result};
use crate::forest::{fit_forest, Forest, ForestParams};
use crate::proximity::{select_prototypes, train_proximities, PrototypeSet, SelfSimilarityMode};

/// Stable seed derivation (splitmix64 over the part stream), so every
/// cell's randomness is reproducible independently of scheduling.
pub fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = base ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h = h.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

const SEED_SPLIT: u64 = 1;
const SEED_FOREST_TRAIN: u64 = 2;
const SEED_FOREST_ALL: u64 = 3;
const SEED_EMBED_TRAIN: u64 = 4;
const SEED_EMBED_ALL: u64 = 5;
const SEED_AE: u64 = 6;
const SEED_MANTEL: u64 = 7;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub path: String,
    pub label: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestSettings {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub mtry: Option<usize>,
}

impl Default for ForestSettings {
    fn default() -> Self {
        let p = ForestParams::default();
        ForestSettings { n_trees: p.n_trees, max_depth: p.max_depth, min_leaf: p.min_leaf, mtry: p.mtry }
    }
}

impl ForestSettings {
    fn params(&self, seed: u64) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            mtry: self.mtry,
            seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedSettings {
    pub k: usize,
    pub t: TimeSelect,
    pub t_max: usize,
    pub mds_iters: usize,
    pub mds_tol: f64,
}

impl Default for EmbedSettings {
    fn default() -> Self {
        let c = DiffusionConfig::default();
        EmbedSettings { k: c.k_dim, t: c.t, t_max: c.t_max, mds_iters: c.mds_iters, mds_tol: c.mds_tol }
    }
}

impl EmbedSettings {
    fn config(&self, seed: u64) -> DiffusionConfig {
        DiffusionConfig {
            t: self.t,
            t_max: self.t_max,
            k_dim: self.k,
            mds_iters: self.mds_iters,
            mds_tol: self.mds_tol,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AeSettings {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub lr_decay: Option<f64>,
    /// Standardize the regularizing embedding before training.
    pub standardize_g: bool,
    /// Proximity-head weight for RF-PROX-REG.
    pub gamma: f64,
}

impl Default for AeSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        AeSettings {
            hidden: crate::ae::DEFAULT_HIDDEN.to_vec(),
            epochs: t.epochs,
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            optimizer: t.optimizer,
            lr_decay: t.lr_decay,
            standardize_g: true,
            gamma: 1.0,
        }
    }
}

impl AeSettings {
    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer,
            seed,
            lr_decay: self.lr_decay,
        }
    }
}

fn default_fractions() -> Vec<f64> {
    vec![0.1, 0.2, 0.5]
}

fn default_train_fraction() -> f64 {
    0.7
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub datasets: Vec<DatasetSpec>,
    pub variants: Vec<Variant>,
    pub lambdas: Vec<f64>,
    /// Prototype fractions swept for RF-PRN-PRO.
    #[serde(default = "default_fractions")]
    pub fractions: Vec<f64>,
    pub n_seeds: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub forest: ForestSettings,
    #[serde(default)]
    pub embed: EmbedSettings,
    #[serde(default)]
    pub ae: AeSettings,
    #[serde(default)]
    pub mantel_permutations: usize,
    #[serde(default)]
    pub self_sim: SelfSimilarityMode,
}

impl ExperimentConfig {
    /// Load from JSON; relative dataset paths resolve against the config
    /// file's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if let Some(dir) = path.parent() {
            for ds in &mut cfg.datasets {
                let p = Path::new(&ds.path);
                if p.is_relative() {
                    ds.path = dir.join(p).to_string_lossy().into_owned();
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::invalid("no datasets configured"));
        }
        if self.variants.is_empty() {
            return Err(Error::invalid("no variants configured"));
        }
        if self.lambdas.is_empty() {
            return Err(Error::invalid("no lambda values configured"));
        }
        if self.n_seeds == 0 {
            return Err(Error::invalid("n_seeds must be at least 1"));
        }
        if self.variants.contains(&Variant::RfPrnPro) && self.fractions.is_empty() {
            return Err(Error::invalid("RF-PRN-PRO requires at least one prototype fraction"));
        }
        Ok(())
    }
}

/// One experiment cell: a trained architecture scored on one split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellRecord {
    pub dataset: String,
    pub variant: Variant,
    pub lambda: f64,
    pub fraction: Option<f64>,
    pub rep: usize,
    pub seed: u64,
    pub mantel: Option<f64>,
    pub fit_seconds: f64,
    pub recon_mse: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: Variant,
    pub mean_mantel: f64,
    pub std_mantel: f64,
    pub n_cells: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub cells: Vec<CellRecord>,
    pub aggregates: Vec<AggregateRow>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        var.sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl ExperimentReport {
    pub fn from_cells(cells: Vec<CellRecord>) -> Self {
        let aggregates = compute_aggregates(&cells);
        ExperimentReport { cells, aggregates }
    }

    /// Check that the stored aggregates match a recomputation.
    pub fn validate(&self) -> Result<()> {
        let fresh = compute_aggregates(&self.cells);
        if fresh.len() != self.aggregates.len() {
            return Err(Error::invalid("aggregate row count mismatch"));
        }
        for (a, b) in self.aggregates.iter().zip(&fresh) {
            if a.variant != b.variant
                || a.n_cells != b.n_cells
                || (a.mean_mantel - b.mean_mantel).abs() > 1e-12
                || (a.std_mantel - b.std_mantel).abs() > 1e-12
            {
                return Err(Error::invalid(format!(
                    "aggregates for {} do not match their cells",
                    a.variant
                )));
            }
        }
        Ok(())
    }

    pub fn scores(&self, variant: Variant) -> Vec<f64> {
        self.cells
            .iter()
            .filter(|c| c.variant == variant)
            .filter_map(|c| c.mantel)
            .collect()
    }

    pub fn mean_mantel(&self, variant: Variant) -> Option<f64> {
        let scores = self.scores(variant);
        if scores.is_empty() {
            None
        } else {
            Some(scores.iter().sum::<f64>() / scores.len() as f64)
        }
    }

    /// Mean Mantel per lambda value, in the order the lambdas appear.
    pub fn per_lambda_means(&self, variant: Variant) -> Vec<(f64, f64)> {
        let mut lambdas: Vec<f64> = Vec::new();
        for c in &self.cells {
            if c.variant == variant && !lambdas.contains(&c.lambda) {
                lambdas.push(c.lambda);
            }
        }
        lambdas
            .into_iter()
            .filter_map(|l| {
                let scores: Vec<f64> = self
                    .cells
                    .iter()
                    .filter(|c| c.variant == variant && c.lambda == l)
                    .filter_map(|c| c.mantel)
                    .collect();
                if scores.is_empty() {
                    None
                } else {
                    Some((l, scores.iter().sum::<f64>() / scores.len() as f64))
                }
            })
            .collect()
    }

    /// Sample standard deviation of the per-lambda means.
    pub fn lambda_std_of_means(&self, variant: Variant) -> Option<f64> {
        let means: Vec<f64> = self.per_lambda_means(variant).into_iter().map(|(_, m)| m).collect();
        if means.len() < 2 {
            return None;
        }
        Some(mean_std(&means).1)
    }

    /// Mean Mantel per prototype fraction, sorted by fraction.
    pub fn per_fraction_means(&self, variant: Variant) -> Vec<(f64, f64)> {
        let mut fractions: Vec<f64> = Vec::new();
        for c in &self.cells {
            if c.variant == variant {
                if let Some(f) = c.fraction {
                    if !fractions.contains(&f) {
                        fractions.push(f);
                    }
                }
            }
        }
        fractions.sort_by(|a, b| a.partial_cmp(b).unwrap());
        fractions
            .into_iter()
            .filter_map(|f| {
                let scores: Vec<f64> = self
                    .cells
                    .iter()
                    .filter(|c| c.variant == variant && c.fraction == Some(f))
                    .filter_map(|c| c.mantel)
                    .collect();
                if scores.is_empty() {
                    None
                } else {
                    Some((f, scores.iter().sum::<f64>() / scores.len() as f64))
                }
            })
            .collect()
    }

    /// Mean of per-cell `fit_seconds(a) / fit_seconds(b)` over cells
    /// matched on (dataset, rep, lambda). Requires exactly one cell per
    /// key on each side.
    pub fn timing_ratio(&self, a: Variant, b: Variant) -> Result<f64> {
        let collect = |v: Variant| -> Result<std::collections::BTreeMap<(String, usize, String), f64>> {
            let mut map = std::collections::BTreeMap::new();
            for c in self.cells.iter().filter(|c| c.variant == v && c.error.is_none()) {
                let key = (c.dataset.clone(), c.rep, format!("{:.12e}", c.lambda));
                if map.insert(key, c.fit_seconds).is_some() {
                    return Err(Error::invalid(format!(
                        "multiple {v} cells per (dataset, rep, lambda); cannot match"
                    )));
                }
            }
            Ok(map)
        };
        let map_a = collect(a)?;
        let map_b = collect(b)?;
        if map_a.is_empty() || map_a.len() != map_b.len() {
            return Err(Error::invalid("unmatched cells between variants"));
        }
        let mut acc = 0.0;
        for (key, fa) in &map_a {
            let fb = map_b
                .get(key)
                .ok_or_else(|| Error::invalid("unmatched cells between variants"))?;
            acc += fa / fb;
        }
        Ok(acc / map_a.len() as f64)
    }

    pub fn write_cells_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for cell in &self.cells {
            w.serialize(cell)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_cells_csv(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut cells = Vec::new();
        for record in r.deserialize() {
            cells.push(record?);
        }
        Ok(Self::from_cells(cells))
    }

    pub fn write_aggregates_json(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.aggregates)?)?;
        Ok(())
    }

    /// Plain-text aggregate table, one row per variant.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<14} {:>8} {:>8} {:>8}\n", "Model", "Mean", "Std", "Cells"));
        for row in &self.aggregates {
            out.push_str(&format!(
                "{:<14} {:>8.3} {:>8.3} {:>8}\n",
                row.variant.to_string(),
                row.mean_mantel,
                row.std_mantel,
                row.n_cells
            ));
        }
        let failed = self.cells.iter().filter(|c| c.error.is_some()).count();
        if failed > 0 {
            out.push_str(&format!("({failed} failed cells excluded)\n"));
        }
        out
    }
}

fn compute_aggregates(cells: &[CellRecord]) -> Vec<AggregateRow> {
    let mut variants: Vec<Variant> = Vec::new();
    for c in cells {
        if !variants.contains(&c.variant) {
            variants.push(c.variant);
        }
    }
    variants.sort_by_key(|v| Variant::ALL.iter().position(|x| x == v));
    variants
        .into_iter()
        .filter_map(|v| {
            let scores: Vec<f64> = cells
                .iter()
                .filter(|c| c.variant == v)
                .filter_map(|c| c.mantel)
                .collect();
            if scores.is_empty() {
                return None;
            }
            let (mean, std) = mean_std(&scores);
            Some(AggregateRow { variant: v, mean_mantel: mean, std_mantel: std, n_cells: scores.len() })
        })
        .collect()
}

/// One planned unit of work.
#[derive(Debug, Clone, Serialize)]
pub struct CellPlan {
    pub dataset: String,
    pub rep: usize,
    pub variant: Variant,
    pub lambda: f64,
    pub fraction: Option<f64>,
}

pub fn plan_cells(cfg: &ExperimentConfig) -> Vec<CellPlan> {
    let mut plan = Vec::new();
    for ds in &cfg.datasets {
        for rep in 0..cfg.n_seeds {
            for &variant in &cfg.variants {
                for &lambda in &cfg.lambdas {
                    if variant.needs_prototypes() {
                        for &fraction in &cfg.fractions {
                            plan.push(CellPlan {
                                dataset: ds.name.clone(),
                                rep,
                                variant,
                                lambda,
                                fraction: Some(fraction),
                            });
                        }
                    } else {
                        plan.push(CellPlan {
                            dataset: ds.name.clone(),
                            rep,
                            variant,
                            lambda,
                            fraction: None,
                        });
                    }
                }
            }
        }
    }
    plan
}

/// Everything shared by the cells of one (dataset, rep) group.
struct GroupContext {
    train: Vec<usize>,
    forest_train: Forest,
    p_train: crate::proximity::ProximityMatrix,
    x_train_std: Array2<f64>,
    test_features: Array2<f64>,
    scaler: crate::data::Scaler,
    g_reg: Array2<f64>,
    ref_test_distances: Array2<f64>,
    prototypes: Vec<(f64, PrototypeSet)>,
}

fn prepare_group(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    d_idx: usize,
    rep: usize,
) -> Result<GroupContext> {
    let split_seed = mix_seed(cfg.base_seed, &[SEED_SPLIT, d_idx as u64, rep as u64]);
    let spec = SplitSpec { train_fraction: cfg.train_fraction, seed: split_seed, stratified: true };
    let (train, test) = split(ds, &spec)?;

    let forest_train = fit_forest(
        ds,
        &train,
        &cfg.forest.params(mix_seed(cfg.base_seed, &[SEED_FOREST_TRAIN, d_idx as u64, rep as u64])),
    )?;
    let all: Vec<usize> = (0..ds.n()).collect();
    let forest_all = fit_forest(
        ds,
        &all,
        &cfg.forest.params(mix_seed(cfg.base_seed, &[SEED_FOREST_ALL, d_idx as u64, rep as u64])),
    )?;

    let g_train = rfphate_embed(
        &forest_train,
        &cfg.embed.config(mix_seed(cfg.base_seed, &[SEED_EMBED_TRAIN, d_idx as u64, rep as u64])),
    )?;
    let g_all = rfphate_embed(
        &forest_all,
        &cfg.embed.config(mix_seed(cfg.base_seed, &[SEED_EMBED_ALL, d_idx as u64, rep as u64])),
    )?;

    let p_train = train_proximities(&forest_train, cfg.self_sim)?;
    let (std_ds, scaler) = standardize(ds, &train)?;
    let x_train_std = std_ds.feature_rows(&train);
    let test_features = ds.feature_rows(&test);

    let g_reg = if cfg.ae.standardize_g {
        standardize_embedding(g_train.embedding.coords.view())
    } else {
        g_train.embedding.coords.clone()
    };

    // The reference for scoring: the full-data embedding restricted to
    // the held-out rows.
    let g_all_test = g_all.embedding.coords.select(Axis(0), &test);
    let ref_test_distances = pairwise_distances(g_all_test.view())?;

    let mut prototypes = Vec::new();
    if cfg.variants.iter().any(|v| v.needs_prototypes()) {
        let labels_train = ds.label_rows(&train);
        for &fraction in &cfg.fractions {
            prototypes.push((fraction, select_prototypes(&p_train, &labels_train, fraction)?));
        }
    }

    Ok(GroupContext {
        train,
        forest_train,
        p_train,
        x_train_std,
        test_features,
        scaler,
        g_reg,
        ref_test_distances,
        prototypes,
    })
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    cfg: &ExperimentConfig,
    ctx: &GroupContext,
    d_idx: usize,
    rep: usize,
    v_idx: usize,
    l_idx: usize,
    f_idx: usize,
) -> Result<(f64, f64, f64, u64)> {
    let variant = cfg.variants[v_idx];
    let lambda = cfg.lambdas[l_idx];
    let protos = if variant.needs_prototypes() {
        Some(&ctx.prototypes.iter().find(|(f, _)| *f == cfg.fractions[f_idx]).expect("prepared").1)
    } else {
        None
    };

    let (input, target) = build_io(variant, ctx.x_train_std.view(), Some(&ctx.p_train), protos)?;
    let prox_target = if variant.has_prox_head() { Some(ctx.p_train.values.view()) } else { None };

    let ae_seed = mix_seed(
        cfg.base_seed,
        &[SEED_AE, d_idx as u64, rep as u64, v_idx as u64, l_idx as u64, f_idx as u64],
    );
    let mut model = AEModel::new(
        variant,
        input.ncols(),
        target.ncols(),
        &cfg.ae.hidden,
        cfg.embed.k,
        lambda,
        cfg.ae.gamma,
        ctx.train.len(),
        ae_seed,
    )?;
    if !variant.takes_proximity_input() {
        model.scaler = Some(ctx.scaler.clone());
    }
    model.prototypes = protos.cloned();

    let start = Instant::now();
    let history = train(
        &mut model,
        input.view(),
        target.view(),
        ctx.g_reg.view(),
        prox_target,
        &cfg.ae.train_config(ae_seed),
    )?;
    let fit_seconds = start.elapsed().as_secs_f64();
    let recon_mse = history.last().map_or(0.0, |e| e.recon);

    let extension = model.extend(&ctx.forest_train, ctx.test_features.view())?;
    let ext_distances = pairwise_distances(extension.coords.view())?;
    let score = mantel(
        ctx.ref_test_distances.view(),
        ext_distances.view(),
        MantelMethod::Spearman,
        cfg.mantel_permutations,
        mix_seed(cfg.base_seed, &[SEED_MANTEL, d_idx as u64, rep as u64]),
    )?;
    Ok((score.correlation, fit_seconds, recon_mse, ae_seed))
}

/// Run the full grid. Groups of cells sharing a (dataset, rep) pair run
/// as independent jobs; `jobs = 0` uses the default thread count.
/// Per-cell failures are recorded in the report and the run continues.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<ExperimentReport> {
    cfg.validate()?;
    let datasets: Vec<Arc<Dataset>> = cfg
        .datasets
        .iter()
        .map(|spec| Ok(Arc::new(load_csv(&spec.path, &spec.label)?)))
        .collect::<Result<_>>()?;

    let groups: Vec<(usize, usize)> = (0..cfg.datasets.len())
        .flat_map(|d| (0..cfg.n_seeds).map(move |r| (d, r)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;

    let group_cells: Vec<Vec<CellRecord>> = pool.install(|| {
        groups
            .par_iter()
            .map(|&(d_idx, rep)| {
                let ds = &datasets[d_idx];
                let name = cfg.datasets[d_idx].name.clone();
                let ctx = match prepare_group(cfg, ds, d_idx, rep) {
                    Ok(ctx) => ctx,
                    Err(e) => {
                        // The whole group shares this failure.
                        return cell_plan_for_group(cfg, &name, rep)
                            .into_iter()
                            .map(|p| CellRecord {
                                dataset: p.dataset,
                                variant: p.variant,
                                lambda: p.lambda,
                                fraction: p.fraction,
                                rep,
                                seed: 0,
                                mantel: None,
                                fit_seconds: 0.0,
                                recon_mse: 0.0,
                                error: Some(e.to_string()),
                            })
                            .collect();
                    }
                };
                let mut records = Vec::new();
                for (v_idx, &variant) in cfg.variants.iter().enumerate() {
                    for l_idx in 0..cfg.lambdas.len() {
                        let f_indices: Vec<Option<usize>> = if variant.needs_prototypes() {
                            (0..cfg.fractions.len()).map(Some).collect()
                        } else {
                            vec![None]
                        };
                        for f in f_indices {
                            let f_idx = f.unwrap_or(0);
                            let fraction = f.map(|i| cfg.fractions[i]);
                            let outcome = run_cell(cfg, &ctx, d_idx, rep, v_idx, l_idx, f_idx);
                            records.push(match outcome {
                                Ok((score, secs, recon, seed)) => CellRecord {
                                    dataset: name.clone(),
                                    variant,
                                    lambda: cfg.lambdas[l_idx],
                                    fraction,
                                    rep,
                                    seed,
                                    mantel: Some(score),
                                    fit_seconds: secs,
                                    recon_mse: recon,
                                    error: None,
                                },
                                Err(e) => CellRecord {
                                    dataset: name.clone(),
                                    variant,
                                    lambda: cfg.lambdas[l_idx],
                                    fraction,
                                    rep,
                                    seed: 0,
                                    mantel: None,
                                    fit_seconds: 0.0,
                                    recon_mse: 0.0,
                                    error: Some(e.to_string()),
                                },
                            });
                        }
                    }
                }
                records
            })
            .collect()
    });

    Ok(ExperimentReport::from_cells(group_cells.into_iter().flatten().collect()))
}

fn cell_plan_for_group(cfg: &ExperimentConfig, dataset: &str, rep: usize) -> Vec<CellPlan> {
    plan_cells(cfg)
        .into_iter()
        .filter(|p| p.dataset == dataset && p.rep == rep)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gaussian_blobs, write_csv};

    fn tiny_config(dir: &Path) -> ExperimentConfig {
        let ds = gaussian_blobs(20, 4, 2, 6.0, 3);
        let path = dir.join("blobs.csv");
        write_csv(&ds, &path, "label").unwrap();
        ExperimentConfig {
            datasets: vec![DatasetSpec {
                name: "blobs".into(),
                path: path.to_string_lossy().into_owned(),
                label: "label".into(),
            }],
            variants: vec![Variant::RfPrn],
            lambdas: vec![10.0],
            fractions: vec![0.2],
            n_seeds: 1,
            base_seed: 7,
            train_fraction: 0.7,
            forest: ForestSettings { n_trees: 40, ..Default::default() },
            embed: EmbedSettings { t: TimeSelect::Fixed(3), ..Default::default() },
            ae: AeSettings {
                hidden: vec![16],
                epochs: 15,
                batch_size: 8,
                ..Default::default()
            },
            mantel_permutations: 0,
            self_sim: SelfSimilarityMode::Zero,
        }
    }

    #[test]
    fn single_cell_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let report = run_experiment(&cfg, 1).unwrap();
        assert_eq!(report.cells.len(), 1);
        let cell = &report.cells[0];
        assert!(cell.error.is_none(), "{:?}", cell.error);
        assert!(cell.mantel.is_some());
        assert_eq!(report.aggregates.len(), 1);
        // A single cell's aggregate is that cell's score.
        assert_eq!(report.aggregates[0].mean_mantel, cell.mantel.unwrap());
        assert_eq!(report.aggregates[0].std_mantel, 0.0);
        report.validate().unwrap();
    }

    #[test]
    fn cells_csv_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(dir.path());
        let report = run_experiment(&cfg, 1).unwrap();
        let path = dir.path().join("cells.csv");
        report.write_cells_csv(&path).unwrap();
        let back = ExperimentReport::read_cells_csv(&path).unwrap();
        back.validate().unwrap();
        assert_eq!(back.cells.len(), report.cells.len());
        assert_eq!(back.aggregates[0].n_cells, report.aggregates[0].n_cells);
    }

    #[test]
    fn timing_ratio_of_variant_with_itself_is_one() {
        let cells = vec![CellRecord {
            dataset: "d".into(),
            variant: Variant::RfPrn,
            lambda: 1.0,
            fraction: None,
            rep: 0,
            seed: 0,
            mantel: Some(0.9),
            fit_seconds: 2.5,
            recon_mse: 0.1,
            error: None,
        }];
        let report = ExperimentReport::from_cells(cells);
        let ratio = report.timing_ratio(Variant::RfPrn, Variant::RfPrn).unwrap();
        assert_eq!(ratio, 1.0);
    }

    #[test]
    fn failing_group_is_recorded_and_the_run_continues() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        // Second dataset has a singleton class: its stratified split fails.
        let mut bad = gaussian_blobs(10, 3, 2, 5.0, 8);
        bad.labels[0] = 2;
        bad.class_names.push("rare".into());
        let bad_path = dir.path().join("bad.csv");
        write_csv(&bad, &bad_path, "label").unwrap();
        cfg.datasets.push(DatasetSpec {
            name: "bad".into(),
            path: bad_path.to_string_lossy().into_owned(),
            label: "label".into(),
        });

        let report = run_experiment(&cfg, 1).unwrap();
        assert_eq!(report.cells.len(), 2);
        let good = report.cells.iter().find(|c| c.dataset == "blobs").unwrap();
        assert!(good.error.is_none() && good.mantel.is_some());
        let bad = report.cells.iter().find(|c| c.dataset == "bad").unwrap();
        assert!(bad.error.is_some() && bad.mantel.is_none());
    }

    #[test]
    fn timing_ratio_requires_matched_cells() {
        let cell = |variant, dataset: &str| CellRecord {
            dataset: dataset.into(),
            variant,
            lambda: 1.0,
            fraction: None,
            rep: 0,
            seed: 0,
            mantel: Some(0.5),
            fit_seconds: 1.0,
            recon_mse: 0.0,
            error: None,
        };
        let report = ExperimentReport::from_cells(vec![
            cell(Variant::RfPrn, "a"),
            cell(Variant::RfGrae, "b"),
        ]);
        assert!(report.timing_ratio(Variant::RfPrn, Variant::RfGrae).is_err());
    }

    #[test]
    fn plan_counts_fractions_only_for_prototype_variant() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config(dir.path());
        cfg.variants = vec![Variant::RfGrae, Variant::RfPrnPro];
        cfg.fractions = vec![0.1, 0.5];
        cfg.lambdas = vec![1.0, 10.0];
        let plan = plan_cells(&cfg);
        // RF-GRAE: 2 lambda; RF-PRN-PRO: 2 lambda x 2 fractions.
        assert_eq!(plan.len(), 6);
    }

    #[test]
    fn seed_mixing_is_stable_and_spread() {
        let a = mix_seed(1, &[2, 3]);
        let b = mix_seed(1, &[2, 3]);
        assert_eq!(a, b);
        assert_ne!(mix_seed(1, &[2, 3]), mix_seed(1, &[3, 2]));
        assert_ne!(mix_seed(1, &[2]), mix_seed(2, &[2]));
    }
}
