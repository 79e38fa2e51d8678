//! Command implementations. Every artifact-writing command drops a
//! `*.meta.json` sidecar echoing the effective settings, so a run can be
//! reproduced from its outputs alone.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;

use rfembed_core::ae::{
    build_io, standardize_embedding, train, AEModel, TrainConfig, TrainingMeta, Variant,
};
use rfembed_core::data::{load_csv, load_features_aligned, standardize};
use rfembed_core::embed::{
    read_embedding_csv, rfphate_embed, write_embedding_csv, DiffusionConfig, TimeSelect,
};
use rfembed_core::eval::{plan_cells, run_experiment, ExperimentConfig};
use rfembed_core::forest::{fit_forest, Forest, ForestParams};
use rfembed_core::proximity::{
    select_prototypes, train_proximities, write_proximity_csv, SelfSimilarityMode,
};

use crate::args::{BenchmarkArgs, EmbedArgs, ExtendArgs, FitArgs, TrainAeArgs};
use crate::config::{pick, FileConfig};

fn parse_self_sim(s: &str) -> Result<SelfSimilarityMode> {
    match s {
        "zero" => Ok(SelfSimilarityMode::Zero),
        "passdown" => Ok(SelfSimilarityMode::InbagPassdown),
        other => bail!("unknown self-similarity mode '{other}' (expected zero or passdown)"),
    }
}

fn parse_time(s: &str) -> Result<TimeSelect> {
    if s == "auto" {
        Ok(TimeSelect::Auto)
    } else {
        let t: usize = s.parse().with_context(|| format!("bad diffusion time '{s}'"))?;
        if t < 1 {
            bail!("diffusion time must be at least 1");
        }
        Ok(TimeSelect::Fixed(t))
    }
}

fn parse_hidden(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .filter(|part| !part.trim().is_empty())
        .map(|part| part.trim().parse::<usize>().with_context(|| format!("bad hidden width '{part}'")))
        .collect()
}

fn write_meta(path: &Path, value: serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(&value)?)?;
    Ok(())
}

pub fn cmd_fit(args: &FitArgs) -> Result<()> {
    let file = FileConfig::load(args.io.config.as_deref())?;
    let params = ForestParams {
        n_trees: pick(args.trees.map(|t| t as usize), file.forest.trees, 500),
        max_depth: args.max_depth.or(file.forest.max_depth),
        min_leaf: pick(args.min_leaf, file.forest.min_leaf, 1),
        mtry: args.mtry.or(file.forest.mtry),
        seed: pick(args.seed, file.forest.seed, 0),
    };
    let mode = parse_self_sim(&args.self_sim)?;

    let ds = load_csv(&args.data, &args.label)?;
    let all: Vec<usize> = (0..ds.n()).collect();
    let forest = fit_forest(&ds, &all, &params)?;
    let oob = forest.oob_accuracy(&ds)?;

    std::fs::create_dir_all(&args.io.out_dir)?;
    let forest_path = args.io.out_dir.join("forest.json");
    forest.save(&forest_path)?;

    let prox = train_proximities(&forest, mode)?;
    let prox_path = args.io.out_dir.join("proximities.csv");
    write_proximity_csv(&prox, &forest.train_indices, &forest.train_indices, &prox_path)?;

    write_meta(
        &args.io.out_dir.join("fit.meta.json"),
        json!({
            "command": "fit",
            "data": args.data.to_string_lossy(),
            "label": args.label,
            "params": params,
            "self_sim": mode,
            "n_train": forest.n_train,
            "classes": ds.class_names,
            "oob_accuracy": oob,
            "outputs": { "forest": "forest.json", "proximities": "proximities.csv" },
        }),
    )?;

    println!("fitted {} trees on {} points ({} features)", params.n_trees, ds.n(), ds.d());
    println!("OOB accuracy: {oob:.4}");
    println!("wrote {}", forest_path.display());
    println!("wrote {}", prox_path.display());
    Ok(())
}

pub fn cmd_embed(args: &EmbedArgs) -> Result<()> {
    let file = FileConfig::load(args.io.config.as_deref())?;
    let t_string = pick(args.t.clone(), file.embed.t, "auto".to_string());
    let cfg = DiffusionConfig {
        t: parse_time(&t_string)?,
        t_max: pick(args.t_max, file.embed.t_max, 64),
        k_dim: pick(args.k, file.embed.k, 2),
        mds_iters: pick(args.mds_iters, file.embed.mds_iters, 500),
        mds_tol: pick(args.mds_tol, file.embed.mds_tol, 1e-6),
        seed: pick(args.seed, file.embed.seed, 0),
    };

    let forest = Forest::load(&args.forest)?;
    let result = rfphate_embed(&forest, &cfg)?;

    std::fs::create_dir_all(&args.io.out_dir)?;
    let emb_path = args.io.out_dir.join("embedding.csv");
    write_embedding_csv(&result.embedding, &forest.train_indices, &emb_path)?;
    write_meta(
        &args.io.out_dir.join("embedding.meta.json"),
        json!({
            "command": "embed",
            "forest": args.forest.to_string_lossy(),
            "config": cfg,
            "t": result.t,
            "normalized_stress": result.normalized_stress,
            "mds_iterations": result.mds_iterations,
            "potential_epsilon": rfembed_core::embed::POTENTIAL_EPSILON,
            "outputs": { "embedding": "embedding.csv" },
        }),
    )?;

    println!("embedded {} points into {} dims (t={})", result.embedding.n(), cfg.k_dim, result.t);
    println!("normalized stress {:.3e} after {} iterations", result.normalized_stress, result.mds_iterations);
    println!("wrote {}", emb_path.display());
    Ok(())
}

pub fn cmd_train_ae(args: &TrainAeArgs) -> Result<()> {
    let file = FileConfig::load(args.io.config.as_deref())?;
    let variant: Variant = args.variant.parse()?;
    let lambda = pick(args.lambda, file.ae.lambda, 10.0);
    let gamma = pick(args.gamma, file.ae.gamma, 1.0);
    let hidden = match &args.hidden {
        Some(s) => parse_hidden(s)?,
        None => file.ae.hidden.clone().unwrap_or_else(|| rfembed_core::ae::DEFAULT_HIDDEN.to_vec()),
    };
    let train_cfg = TrainConfig {
        epochs: pick(args.epochs, file.ae.epochs, 200),
        batch_size: pick(args.batch_size, file.ae.batch_size, 64),
        learning_rate: pick(args.learning_rate, file.ae.learning_rate, 1e-3),
        optimizer: rfembed_core::ae::OptimizerKind::adam_default(),
        seed: pick(args.seed, file.ae.seed, 0),
        lr_decay: None,
    };
    let standardize_g = if args.raw_g { false } else { file.ae.standardize_g.unwrap_or(true) };
    let mode = parse_self_sim(&args.self_sim)?;

    let ds = load_csv(&args.data, &args.label)?;
    let forest = Forest::load(&args.forest)?;
    if forest.n_features != ds.d() {
        bail!("forest expects {} features, dataset has {}", forest.n_features, ds.d());
    }
    let (g_coords, g_ids) = read_embedding_csv(&args.embedding)?;
    if g_ids != forest.train_indices {
        bail!("embedding rows do not match the forest's training rows");
    }
    let g = if standardize_g { standardize_embedding(g_coords.view()) } else { g_coords };

    let (std_ds, scaler) = standardize(&ds, &forest.train_indices)?;
    let x_train = std_ds.feature_rows(&forest.train_indices);
    let needs_prox = variant.takes_proximity_input() || variant.has_prox_head();
    let p_train = if needs_prox { Some(train_proximities(&forest, mode)?) } else { None };

    let prototypes = if variant.needs_prototypes() {
        let frac = args
            .proto_frac
            .ok_or_else(|| anyhow::anyhow!("--proto-frac is required for rf-prn-pro"))?;
        let labels = ds.label_rows(&forest.train_indices);
        Some(select_prototypes(p_train.as_ref().unwrap(), &labels, frac)?)
    } else {
        None
    };

    let (input, target) = build_io(variant, x_train.view(), p_train.as_ref(), prototypes.as_ref())?;
    let mut model = AEModel::new(
        variant,
        input.ncols(),
        target.ncols(),
        &hidden,
        g.ncols(),
        lambda,
        gamma,
        forest.n_train,
        train_cfg.seed,
    )?;
    if !variant.takes_proximity_input() {
        model.scaler = Some(scaler);
    }
    model.prototypes = prototypes;
    model.feature_names = Some(ds.feature_names.clone());

    let prox_target = p_train.as_ref().filter(|_| variant.has_prox_head()).map(|p| p.values.view());
    let history = train(&mut model, input.view(), target.view(), g.view(), prox_target, &train_cfg)?;
    let final_loss = history.last().map(|e| e.total);

    std::fs::create_dir_all(&args.io.out_dir)?;
    let model_path = args.io.out_dir.join("model.json");
    model.save(
        &model_path,
        Some(TrainingMeta {
            epochs: train_cfg.epochs,
            batch_size: train_cfg.batch_size,
            learning_rate: train_cfg.learning_rate,
            optimizer: train_cfg.optimizer.to_string(),
            seed: train_cfg.seed,
            lr_decay: train_cfg.lr_decay,
            hidden: hidden.clone(),
            standardized_g: standardize_g,
            final_loss,
        }),
    )?;

    write_meta(
        &args.io.out_dir.join("model.meta.json"),
        json!({
            "command": "train-ae",
            "data": args.data.to_string_lossy(),
            "label": args.label,
            "forest": args.forest.to_string_lossy(),
            "embedding": args.embedding.to_string_lossy(),
            "variant": variant,
            "lambda": lambda,
            "gamma": gamma,
            "proto_frac": args.proto_frac,
            "hidden": hidden,
            "train": train_cfg,
            "standardize_g": standardize_g,
            "self_sim": mode,
            "outputs": { "model": "model.json" },
        }),
    )?;

    println!("trained {variant} (lambda={lambda}) for {} epochs", train_cfg.epochs);
    if let Some(last) = history.last() {
        println!(
            "final loss {:.6} (recon {:.6}, geom {:.6}, prox {:.6})",
            last.total, last.recon, last.geom, last.prox
        );
    }
    println!("wrote {}", model_path.display());
    Ok(())
}

pub fn cmd_extend(args: &ExtendArgs) -> Result<()> {
    let (model, _meta) = AEModel::load(&args.model)?;
    let forest = Forest::load(&args.forest)?;
    let names = model
        .feature_names
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("model file lacks feature names"))?;
    let features = load_features_aligned(&args.input, names)?;
    let embedding = model.extend(&forest, features.view())?;

    std::fs::create_dir_all(&args.io.out_dir)?;
    let out_path = args.io.out_dir.join("extension.csv");
    let ids: Vec<usize> = (0..embedding.n()).collect();
    write_embedding_csv(&embedding, &ids, &out_path)?;
    write_meta(
        &args.io.out_dir.join("extension.meta.json"),
        json!({
            "command": "extend",
            "model": args.model.to_string_lossy(),
            "forest": args.forest.to_string_lossy(),
            "input": args.input.to_string_lossy(),
            "variant": model.variant,
            "n_points": embedding.n(),
            "outputs": { "extension": "extension.csv" },
        }),
    )?;

    println!("extended {} points into {} dims", embedding.n(), embedding.k());
    println!("wrote {}", out_path.display());
    Ok(())
}

pub fn cmd_benchmark(args: &BenchmarkArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_path(&args.config)?;
    if args.dry_run {
        let plan = plan_cells(&cfg);
        println!("{} cells planned:", plan.len());
        for p in &plan {
            match p.fraction {
                Some(f) => println!(
                    "  {} rep={} {} lambda={} fraction={}",
                    p.dataset, p.rep, p.variant, p.lambda, f
                ),
                None => println!("  {} rep={} {} lambda={}", p.dataset, p.rep, p.variant, p.lambda),
            }
        }
        return Ok(());
    }

    let report = run_experiment(&cfg, args.jobs)?;
    std::fs::create_dir_all(&args.out_dir)?;
    report.write_cells_csv(args.out_dir.join("cells.csv"))?;
    report.write_aggregates_json(args.out_dir.join("aggregates.json"))?;
    let table = report.render_table();
    std::fs::write(args.out_dir.join("table.txt"), &table)?;
    write_meta(
        &args.out_dir.join("benchmark.meta.json"),
        json!({
            "command": "benchmark",
            "config_path": args.config.to_string_lossy(),
            "config": cfg,
            "jobs": args.jobs,
            "cells": report.cells.len(),
            "outputs": {
                "cells": "cells.csv",
                "aggregates": "aggregates.json",
                "table": "table.txt",
            },
        }),
    )?;

    print!("{table}");
    let failed = report.cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} cells failed", report.cells.len());
        for cell in report.cells.iter().filter(|c| c.error.is_some()).take(5) {
            eprintln!(
                "  {} rep={} {} lambda={}: {}",
                cell.dataset,
                cell.rep,
                cell.variant,
                cell.lambda,
                cell.error.as_deref().unwrap_or("")
            );
        }
    }
    if failed == report.cells.len() {
        bail!("all {failed} cells failed");
    }
    Ok(())
}
