//! The pipeline subcommands. Each command resolves and validates its
//! configuration and input artifacts first, computes, and writes outputs
//! only at the end, so a validation failure never leaves partial files.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use tempex_core::data::{ingest, synth, RatingDataset, SynthConfig};
use tempex_core::eval::{evaluate, explain, BucketSpec, EvalReport};
use tempex_core::graph::{build_graph, ExplainabilityGraph};
use tempex_core::model::{forward, ModelParams};
use tempex_core::train::{fit, grid_search};
use tempex_core::{Error, Result};

use crate::config::ConfigMap;

fn require_input(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(path.to_path_buf()))
    }
}

/// Reads the ratings file and, when it carries no test tags, applies the
/// per-user temporal holdout from `data.test_fraction`.
fn load_dataset(cfg: &ConfigMap) -> Result<RatingDataset> {
    let path = cfg.get_path("data.path")?;
    require_input(&path)?;
    let ds = ingest(&path, cfg.grid_config()?)?;
    if ds.test_indices().next().is_some() {
        Ok(ds)
    } else {
        ds.split_temporal(cfg.get_f64("data.test_fraction")?)
    }
}

fn build_graph_for(cfg: &ConfigMap, ds: &RatingDataset) -> Result<ExplainabilityGraph> {
    let p = cfg.get_usize("graph.p")?;
    if p == 0 {
        return Err(Error::ConfigInvalid("graph.p must be at least 1".into()));
    }
    let reference = ds.last_train_epoch().ok_or(Error::EmptyDataset)?;
    Ok(build_graph(
        ds,
        p,
        reference,
        cfg.get_bool("graph.normalized")?,
    ))
}

pub fn cmd_ingest(cfg: &ConfigMap) -> Result<()> {
    let out = cfg.get_path("data.out")?;
    let ds = load_dataset(cfg)?;
    ds.write(&out, true)?;
    println!(
        "ingested {} events ({} users, {} items, {} epochs) -> {}",
        ds.len(),
        ds.num_users,
        ds.num_items,
        ds.grid.num_epochs,
        out.display()
    );
    Ok(())
}

pub fn cmd_synth(cfg: &ConfigMap) -> Result<()> {
    let out = cfg.get_path("data.out")?;
    let synth_cfg = SynthConfig {
        num_users: cfg.get_usize("synth.users")?,
        num_items: cfg.get_usize("synth.items")?,
        num_epochs: cfg.get_usize("synth.epochs")?,
        density: cfg.get_f64("synth.density")?,
        rank: cfg.get_usize("synth.rank")?,
        drift: cfg.get_f64("synth.drift")?,
        noise_sd: cfg.get_f64("synth.noise_sd")?,
        groups: cfg.get_usize("synth.groups")?,
        focus: cfg.get_f64("synth.focus")?,
        group_affinity: cfg.get_f64("synth.group_affinity")?,
        epoch_length_days: cfg.grid_config()?.epoch_length_days,
        seed: cfg.get_u64("seed")?,
    };
    let ds = synth(&synth_cfg)?;
    ds.write(&out, false)?;
    println!(
        "generated {} events ({} users, {} items, {} epochs) -> {}",
        ds.len(),
        ds.num_users,
        ds.num_items,
        ds.grid.num_epochs,
        out.display()
    );
    Ok(())
}

pub fn cmd_build_graph(cfg: &ConfigMap) -> Result<()> {
    let temporal_out = cfg.get_path("graph.temporal_out")?;
    let stationary_out = cfg.get_path("graph.stationary_out")?;
    let ds = load_dataset(cfg)?;
    let graph = build_graph_for(cfg, &ds)?;
    graph.export(&temporal_out, &stationary_out)?;
    println!(
        "graph: {} temporal entries -> {}, {} stationary entries -> {} (p={}, reference epoch {})",
        graph.temporal_entries().len(),
        temporal_out.display(),
        graph.stationary_entries().len(),
        stationary_out.display(),
        graph.p,
        graph.reference_epoch
    );
    Ok(())
}

pub fn cmd_train(cfg: &ConfigMap) -> Result<()> {
    let checkpoint_path = cfg.get_path("train.checkpoint")?;
    let log_path = cfg.get_path("train.log")?;
    let train_cfg = cfg.train_config()?;
    let ds = load_dataset(cfg)?;
    let dims = cfg.model_dims(&ds)?;
    let graph = build_graph_for(cfg, &ds)?;

    let (params, log) = fit(&ds, &graph, dims, &train_cfg)?;

    params.save(&checkpoint_path)?;
    let mut buf = String::new();
    for record in &log {
        buf.push_str(&serde_json::to_string(record).map_err(Error::Json)?);
        buf.push('\n');
    }
    fs::File::create(&log_path)?.write_all(buf.as_bytes())?;

    match log.last() {
        Some(last) => println!(
            "trained {} rounds: final loss {:.6}, validation rmse {} -> {}",
            train_cfg.rounds,
            last.loss,
            last.rmse_val
                .map_or("n/a".to_string(), |r| format!("{r:.4}")),
            checkpoint_path.display()
        ),
        None => println!(
            "trained 0 rounds: wrote initial parameters -> {}",
            checkpoint_path.display()
        ),
    }
    Ok(())
}

pub fn cmd_evaluate(cfg: &ConfigMap) -> Result<()> {
    let checkpoint_path = cfg.get_path("train.checkpoint")?;
    require_input(&checkpoint_path)?;
    let report_path = cfg.get_path("eval.report")?;
    let per_user_path = cfg.get_path("eval.per_user")?;
    let eval_cfg = cfg.eval_config()?;
    let ds = load_dataset(cfg)?;
    let params = ModelParams::load(&checkpoint_path)?;
    params.validate_against(&ds)?;
    let graph = build_graph_for(cfg, &ds)?;

    let trace = forward(&params, &ds, None)?;
    let report = evaluate(&trace, &params, &ds, &graph, &eval_cfg)?;
    report.write_json(&report_path)?;
    report.write_per_user_csv(&per_user_path)?;
    println!("{}", summary_line(&report));
    println!(
        "report -> {}, per-user rows -> {}",
        report_path.display(),
        per_user_path.display()
    );
    Ok(())
}

fn summary_line(report: &EvalReport) -> String {
    format!(
        "rmse {:.4}  mrr {:.4}  map {:.4}  mr {:.4}  mep {:.4}  mer {:.4}",
        report.rmse, report.mrr, report.map, report.mr, report.mep, report.mer
    )
}

pub fn cmd_explain(cfg: &ConfigMap, user: Option<usize>, item: Option<usize>) -> Result<()> {
    let user = match user {
        Some(u) => u,
        None => cfg.get_usize("explain.user")?,
    };
    let item = match item {
        Some(m) => m,
        None => cfg.get_usize("explain.item")?,
    };
    let bounds = cfg.get_u32_list("explain.buckets")?;
    if bounds.is_empty() || bounds.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::ConfigInvalid(
            "explain.buckets must be strictly increasing day bounds".into(),
        ));
    }
    let spec = BucketSpec {
        upper_bounds_days: bounds,
    };
    let ds = load_dataset(cfg)?;
    let graph = build_graph_for(cfg, &ds)?;
    let evidence = explain(&graph, &ds, user, item, &spec)?;

    println!("evidence for recommending item {item} to user {user}");
    println!(
        "  stationary weight: {:.4}  (p = {})",
        evidence.stationary_weight, graph.p
    );
    println!("  {:<22} {:>8} {:>12}", "recency bucket", "ratings", "mean rating");
    for b in &evidence.buckets {
        println!(
            "  {:<22} {:>8} {:>12}",
            b.label,
            b.count,
            b.mean_rating
                .map_or("-".to_string(), |m| format!("{m:.2}"))
        );
    }
    if evidence.temporal_weights.is_empty() {
        println!("  temporal weights: none");
    } else {
        let rendered: Vec<String> = evidence
            .temporal_weights
            .iter()
            .map(|(t, w)| format!("epoch {t}: {w:.4}"))
            .collect();
        println!("  temporal weights (most recent first): {}", rendered.join(", "));
    }
    Ok(())
}

pub fn cmd_sweep_p(cfg: &ConfigMap) -> Result<()> {
    let out = cfg.get_path("sweep.out")?;
    let p_values = cfg.get_usize_list("sweep.p_values")?;
    if p_values.is_empty() || p_values.contains(&0) {
        return Err(Error::ConfigInvalid(
            "sweep.p_values must be positive integers".into(),
        ));
    }
    let train_cfg = cfg.train_config()?;
    let eval_cfg = cfg.eval_config()?;
    let ds = load_dataset(cfg)?;
    let dims = cfg.model_dims(&ds)?;
    let reference = ds.last_train_epoch().ok_or(Error::EmptyDataset)?;
    let normalized = cfg.get_bool("graph.normalized")?;

    let mut rows = String::from("p,mep,mer,map,mr,mrr,rmse\n");
    for &p in &p_values {
        let graph = build_graph(&ds, p, reference, normalized);
        let (params, _) = fit(&ds, &graph, dims, &train_cfg)?;
        let trace = forward(&params, &ds, None)?;
        let report = evaluate(&trace, &params, &ds, &graph, &eval_cfg)?;
        rows.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            p, report.mep, report.mer, report.map, report.mr, report.mrr, report.rmse
        ));
        println!("p={p}: {}", summary_line(&report));
    }
    fs::File::create(&out)?.write_all(rows.as_bytes())?;
    println!("sweep table -> {}", out.display());
    Ok(())
}

pub fn cmd_grid_search(cfg: &ConfigMap) -> Result<()> {
    let out = cfg.get_path("grid.out")?;
    let alphas = cfg.get_f64_list("grid.alphas")?;
    let betas = cfg.get_f64_list("grid.betas")?;
    let train_cfg = cfg.train_config()?;
    let ds = load_dataset(cfg)?;
    let dims = cfg.model_dims(&ds)?;
    let p = cfg.get_usize("graph.p")?;
    let normalized = cfg.get_bool("graph.normalized")?;

    let result = grid_search(&ds, dims, &train_cfg, p, normalized, &alphas, &betas)?;

    let mut rows = String::from("alpha,beta,rmse_val\n");
    for cell in &result.cells {
        rows.push_str(&format!(
            "{},{},{}\n",
            cell.alpha,
            cell.beta,
            cell.rmse_val
                .map_or("failed".to_string(), |r| r.to_string())
        ));
    }
    fs::File::create(&out)?.write_all(rows.as_bytes())?;
    println!(
        "best cell: alpha={}, beta={} ({} cells) -> {}",
        result.best_alpha,
        result.best_beta,
        result.cells.len(),
        out.display()
    );
    Ok(())
}
