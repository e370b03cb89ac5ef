use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use mrdib_core::data::{
    load_features, prepare_dataset, sidecar_path, synth_pid_generate, write_id_map, write_matrix,
    FeatureMatrix, InteractionDataset, Modality, SynthConfig,
};
use mrdib_core::eval::{EarlyStopper, MetricsReport, Split, DEFAULT_K};
use mrdib_core::model::{checkpoint, evaluate_model, HostModel, ModelDims, ScoreMode};
use mrdib_core::numcore::{Adam, Rng};
use mrdib_core::objectives::{train_epoch, MineTrainer, TrainerConfig};
use mrdib_core::{Error, Result};

use crate::config::{Alphas, RunConfig, RunMode, SweepSpec};

/// One line of the JSONL training log.
#[derive(Debug, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub nll_joint: f64,
    pub kl_sum: f64,
    pub redundancy: f64,
    pub nll_unimodal_sum: f64,
    pub total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mine_bound: Option<f64>,
    pub val_recall5: f64,
    pub is_best: bool,
}

#[derive(Debug, Serialize)]
pub struct TrainOutcome {
    pub best_epoch: usize,
    pub best_val_recall5: f64,
    pub epochs_run: usize,
    pub parameter_count: usize,
    pub test: MetricsReport,
    pub checkpoint_dir: PathBuf,
    pub log_path: PathBuf,
}

fn score_mode(mode: RunMode) -> ScoreMode {
    match mode {
        RunMode::HostOnly => ScoreMode::Base,
        _ => ScoreMode::Joint,
    }
}

pub struct LoadedData {
    pub dataset: InteractionDataset,
    pub visual: FeatureMatrix,
    pub textual: FeatureMatrix,
}

pub fn load_data(cfg: &RunConfig) -> Result<LoadedData> {
    let dataset = prepare_dataset(&cfg.paths.interactions, cfg.seed)?;
    let visual = load_features(&cfg.paths.visual_features, Modality::Visual, &dataset)?;
    let textual = load_features(&cfg.paths.textual_features, Modality::Textual, &dataset)?;
    Ok(LoadedData {
        dataset,
        visual,
        textual,
    })
}

/// Trains until early stop or the epoch cap, checkpointing on every new
/// validation best, then evaluates the test split with the best
/// checkpoint. Writes `train_log.jsonl`, `checkpoint/`,
/// `test_metrics.json`, and `run_summary.json` under the output dir.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let out_dir = &cfg.paths.output_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let data = load_data(cfg)?;
    let dims = ModelDims {
        d: cfg.dims.d,
        hidden: cfg.dims.hidden,
        mine_hidden: cfg.dims.mine_hidden,
        d_visual: data.visual.cols,
        d_textual: data.textual.cols,
    };
    let rng = Rng::new(cfg.seed);
    let host = HostModel::new(
        data.dataset.n_users(),
        data.dataset.n_items(),
        dims,
        cfg.with_stack(),
        &rng,
    );

    let weights = cfg.effective_weights();
    let trainer_cfg = TrainerConfig {
        batch_size: cfg.optimizer.batch_size,
        k_negatives: cfg.optimizer.k_negatives,
    };
    let mut adam = Adam::new(cfg.optimizer.learning_rate);
    let mut mine_trainer = MineTrainer::new(cfg.optimizer.learning_rate);
    let mut stopper = EarlyStopper::new(cfg.optimizer.patience);
    let mode = score_mode(cfg.mode);

    let log_path = out_dir.join("train_log.jsonl");
    let mut log = fs::File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
    let ckpt_dir = out_dir.join("checkpoint");

    let mut epochs_run = 0;
    for epoch in 0..cfg.optimizer.max_epochs {
        let stats = train_epoch(
            &host,
            &data.visual,
            &data.textual,
            &data.dataset,
            &weights,
            &mut adam,
            &mut mine_trainer,
            &trainer_cfg,
            &rng,
            epoch as u64,
        )?;
        let report = evaluate_model(
            &host,
            &data.visual,
            &data.textual,
            &data.dataset,
            Split::Valid,
            mode,
            DEFAULT_K,
        );
        let stop = stopper.should_stop(epoch, report.recall);
        let is_best = stopper.is_best(epoch);
        if is_best {
            checkpoint::save(&host, &ckpt_dir, &cfg.to_json())?;
        }
        let record = EpochRecord {
            epoch,
            nll_joint: stats.mean.nll_joint,
            kl_sum: stats.mean.kl_sum,
            redundancy: stats.mean.redundancy,
            nll_unimodal_sum: stats.mean.nll_unimodal_sum,
            total: stats.mean.total,
            mine_bound: stats.mine_bound_mean,
            val_recall5: report.recall,
            is_best,
        };
        let line = serde_json::to_string(&record)
            .map_err(|e| Error::Data(format!("log serialization: {e}")))?;
        writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
        epochs_run = epoch + 1;
        if stop {
            break;
        }
    }
    log.flush().map_err(|e| Error::io(&log_path, e))?;

    let (best_host, _) = checkpoint::load(&ckpt_dir)?;
    let test = evaluate_model(
        &best_host,
        &data.visual,
        &data.textual,
        &data.dataset,
        Split::Test,
        mode,
        DEFAULT_K,
    )
    .without_per_user();
    let test_path = out_dir.join("test_metrics.json");
    fs::write(
        &test_path,
        serde_json::to_string_pretty(&test).expect("report serializes"),
    )
    .map_err(|e| Error::io(&test_path, e))?;

    let outcome = TrainOutcome {
        best_epoch: stopper.best_epoch(),
        best_val_recall5: stopper.best_value().unwrap_or(0.0),
        epochs_run,
        parameter_count: host.parameter_count(),
        test,
        checkpoint_dir: ckpt_dir,
        log_path,
    };
    let summary_path = out_dir.join("run_summary.json");
    fs::write(
        &summary_path,
        serde_json::to_string_pretty(&outcome).expect("outcome serializes"),
    )
    .map_err(|e| Error::io(&summary_path, e))?;
    Ok(outcome)
}

/// Evaluates a checkpoint on a split. Data paths come from `--config` when
/// given, otherwise from the config recorded in the checkpoint.
pub fn cmd_eval(
    checkpoint_dir: &Path,
    config: Option<RunConfig>,
    split: Split,
) -> Result<MetricsReport> {
    let (host, embedded) = checkpoint::load(checkpoint_dir)?;
    let cfg = match config {
        Some(c) => c,
        None => serde_json::from_value(embedded).map_err(|e| {
            Error::Config(format!(
                "checkpoint carries no usable config ({e}); pass --config"
            ))
        })?,
    };
    let data = load_data(&cfg)?;
    if data.dataset.n_users() != host.n_users || data.dataset.n_items() != host.n_items {
        return Err(Error::Data(format!(
            "checkpoint was trained on {}x{} but the dataset loads as {}x{}",
            host.n_users,
            host.n_items,
            data.dataset.n_users(),
            data.dataset.n_items()
        )));
    }
    let mode = if host.stack.is_some() {
        ScoreMode::Joint
    } else {
        ScoreMode::Base
    };
    Ok(evaluate_model(
        &host,
        &data.visual,
        &data.textual,
        &data.dataset,
        split,
        mode,
        DEFAULT_K,
    )
    .without_per_user())
}

#[derive(Debug, Serialize)]
pub struct LeaderboardEntry {
    pub rank: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub best_val_recall5: f64,
    pub best_epoch: usize,
    pub test_recall5: f64,
    pub output_dir: PathBuf,
}

/// Grid search over the loss coefficients, ranked by validation Recall@5.
/// Refuses grids beyond 27 points unless an explicit budget allows them.
pub fn cmd_sweep(
    cfg: &RunConfig,
    spec: &SweepSpec,
    budget: Option<usize>,
) -> Result<Vec<LeaderboardEntry>> {
    cfg.validate()?;
    let points = spec.points(&cfg.alphas);
    match budget {
        None if points.len() > 27 => {
            return Err(Error::Config(format!(
                "refusing a {}-point grid without --budget (grids beyond 27 runs are hours of compute)",
                points.len()
            )));
        }
        Some(b) if points.len() > b => {
            return Err(Error::Config(format!(
                "grid has {} points but the budget allows {b}",
                points.len()
            )));
        }
        _ => {}
    }

    let mut results = Vec::new();
    for (idx, alphas) in points.iter().enumerate() {
        let mut sub = cfg.clone();
        sub.alphas = *alphas;
        sub.paths.output_dir = cfg.paths.output_dir.join(format!(
            "sweep/point_{idx:03}_a1_{}_a2_{}_a3_{}",
            alphas.alpha1, alphas.alpha2, alphas.alpha3
        ));
        let outcome = cmd_train(&sub)?;
        results.push((idx, *alphas, outcome, sub.paths.output_dir.clone()));
    }
    results.sort_by(|a, b| {
        b.2.best_val_recall5
            .partial_cmp(&a.2.best_val_recall5)
            .unwrap()
            .then(a.0.cmp(&b.0))
    });
    let leaderboard: Vec<LeaderboardEntry> = results
        .iter()
        .enumerate()
        .map(|(rank, (_, alphas, outcome, dir))| LeaderboardEntry {
            rank: rank + 1,
            alpha1: alphas.alpha1,
            alpha2: alphas.alpha2,
            alpha3: alphas.alpha3,
            best_val_recall5: outcome.best_val_recall5,
            best_epoch: outcome.best_epoch,
            test_recall5: outcome.test.recall,
            output_dir: dir.clone(),
        })
        .collect();

    fs::create_dir_all(&cfg.paths.output_dir).map_err(|e| Error::io(&cfg.paths.output_dir, e))?;
    let lb_path = cfg.paths.output_dir.join("leaderboard.json");
    fs::write(
        &lb_path,
        serde_json::to_string_pretty(&leaderboard).expect("leaderboard serializes"),
    )
    .map_err(|e| Error::io(&lb_path, e))?;

    let mut winner = cfg.clone();
    winner.alphas = Alphas {
        alpha1: leaderboard[0].alpha1,
        alpha2: leaderboard[0].alpha2,
        alpha3: leaderboard[0].alpha3,
    };
    let best_path = cfg.paths.output_dir.join("best_config.json");
    fs::write(
        &best_path,
        serde_json::to_string_pretty(&winner).expect("config serializes"),
    )
    .map_err(|e| Error::io(&best_path, e))?;
    Ok(leaderboard)
}

#[derive(Debug, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub recall: f64,
    pub precision: f64,
    pub map: f64,
    pub ndcg: f64,
}

/// Runs the six ablation variants with a shared seed and reports test
/// metrics for each: full, each coefficient zeroed, the MIB-only
/// reduction, and the bare host.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let a = cfg.alphas;
    let variants: Vec<(&str, RunMode, Alphas)> = vec![
        ("full", RunMode::Full, a),
        ("alpha1_off", RunMode::Full, Alphas { alpha1: 0.0, ..a }),
        ("alpha2_off", RunMode::Full, Alphas { alpha2: 0.0, ..a }),
        ("alpha3_off", RunMode::Full, Alphas { alpha3: 0.0, ..a }),
        (
            "mib_only",
            RunMode::Full,
            Alphas {
                alpha2: 0.0,
                alpha3: 0.0,
                ..a
            },
        ),
        ("host_only", RunMode::HostOnly, a),
    ];

    let mut rows = Vec::new();
    for (name, mode, alphas) in variants {
        let mut sub = cfg.clone();
        sub.mode = mode;
        sub.alphas = alphas;
        sub.paths.output_dir = cfg.paths.output_dir.join(format!("ablate/{name}"));
        let outcome = cmd_train(&sub)?;
        rows.push(AblationRow {
            variant: name.to_string(),
            alpha1: alphas.alpha1,
            alpha2: alphas.alpha2,
            alpha3: alphas.alpha3,
            recall: outcome.test.recall,
            precision: outcome.test.precision,
            map: outcome.test.map,
            ndcg: outcome.test.ndcg,
        });
    }

    fs::create_dir_all(&cfg.paths.output_dir).map_err(|e| Error::io(&cfg.paths.output_dir, e))?;
    let json_path = cfg.paths.output_dir.join("ablation.json");
    fs::write(
        &json_path,
        serde_json::to_string_pretty(&rows).expect("rows serialize"),
    )
    .map_err(|e| Error::io(&json_path, e))?;

    let mut md = String::from(
        "| variant | alpha1 | alpha2 | alpha3 | REC@5 | PREC@5 | MAP@5 | NDCG@5 |\n|---|---|---|---|---|---|---|---|\n",
    );
    for r in &rows {
        md.push_str(&format!(
            "| {} | {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
            r.variant, r.alpha1, r.alpha2, r.alpha3, r.recall, r.precision, r.map, r.ndcg
        ));
    }
    let md_path = cfg.paths.output_dir.join("ablation.md");
    fs::write(&md_path, md).map_err(|e| Error::io(&md_path, e))?;
    Ok(rows)
}

#[derive(Debug, Serialize)]
pub struct SynthSummary {
    pub n_users_generated: usize,
    pub n_items_generated: usize,
    pub n_interactions: usize,
    pub n_users_after_core: usize,
    pub n_items_after_core: usize,
    pub interactions_path: PathBuf,
    pub visual_path: PathBuf,
    pub textual_path: PathBuf,
    pub ledger_path: PathBuf,
}

/// Generates a synthetic dataset with planted unique/redundant/synergy
/// bits and writes it in the artifact's standard file formats.
pub fn cmd_synth(synth_cfg: &SynthConfig, out_dir: &Path) -> Result<SynthSummary> {
    synth_cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let out = synth_pid_generate(synth_cfg)?;

    let interactions_path = out_dir.join("interactions.tsv");
    let mut tsv = String::new();
    for r in &out.interactions {
        tsv.push_str(&r.user);
        tsv.push('\t');
        tsv.push_str(&r.item);
        tsv.push('\n');
    }
    fs::write(&interactions_path, tsv).map_err(|e| Error::io(&interactions_path, e))?;

    let visual_path = out_dir.join("visual.mmf");
    write_matrix(
        &visual_path,
        synth_cfg.n_items,
        synth_cfg.d1(),
        &out.visual_full,
    )?;
    write_id_map(&sidecar_path(&visual_path), &out.item_ids)?;

    let textual_path = out_dir.join("textual.mmf");
    write_matrix(
        &textual_path,
        synth_cfg.n_items,
        synth_cfg.d2(),
        &out.textual_full,
    )?;
    write_id_map(&sidecar_path(&textual_path), &out.item_ids)?;

    let ledger_path = out_dir.join("ledger.json");
    fs::write(
        &ledger_path,
        serde_json::to_string_pretty(&out.ledger).expect("ledger serializes"),
    )
    .map_err(|e| Error::io(&ledger_path, e))?;

    Ok(SynthSummary {
        n_users_generated: synth_cfg.n_users,
        n_items_generated: synth_cfg.n_items,
        n_interactions: out.interactions.len(),
        n_users_after_core: out.dataset.n_users(),
        n_items_after_core: out.dataset.n_items(),
        interactions_path,
        visual_path,
        textual_path,
        ledger_path,
    })
}

/// Exports the per-item posterior means of both modalities (Z1, Z2) in
/// MMF1 format for external analysis.
pub fn cmd_export_embeddings(checkpoint_dir: &Path, out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let (host, embedded) = checkpoint::load(checkpoint_dir)?;
    if host.stack.is_none() {
        return Err(Error::Config(
            "host-only checkpoints have no latent representations to export".to_string(),
        ));
    }
    let cfg: RunConfig = serde_json::from_value(embedded)
        .map_err(|e| Error::Config(format!("checkpoint carries no usable config: {e}")))?;
    let data = load_data(&cfg)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let (mu1, mu2) = host.item_latent_means(&data.visual, &data.textual);
    let d = host.dims.d;
    let n = host.n_items;
    let z1_path = out_dir.join("z1_mean.mmf");
    let z2_path = out_dir.join("z2_mean.mmf");
    let to_f32 = |t: &mrdib_core::numcore::Tensor| -> Vec<f32> {
        t.values().iter().map(|&v| v as f32).collect()
    };
    write_matrix(&z1_path, n, d, &to_f32(&mu1))?;
    write_id_map(&sidecar_path(&z1_path), &data.dataset.items)?;
    write_matrix(&z2_path, n, d, &to_f32(&mu2))?;
    write_id_map(&sidecar_path(&z2_path), &data.dataset.items)?;
    Ok((z1_path, z2_path))
}
