//! The subcommands. Each one validates its config, creates the output
//! directory, echoes the effective config there and writes its files.

use hycon::data::write_feature_table;
use hycon::gradsuite::{check_loss, CheckedLoss, SuiteParams};
use hycon::losses::BaselineKind;
use hycon::metrics::pca2d;
use hycon::pipeline::{embed, summed_embedding, ModelParams};
use hycon::train::{evaluate, fused_silhouette};
use hycon::{binarize, Modality};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::config::{DataSource, ExperimentConfig, LossToggles, ECHO_FILE};
use crate::experiment::{replicate, run_all_seeds, run_jobs, SPLIT_NAMES};
use crate::output::{
    metrics_table, summarize, trajectory_table, write_csv, write_text, MetricsRow, SweepRow,
};
use crate::{CliError, Result};

pub const DATASET_FILE: &str = "dataset.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const COMPARE_FILE: &str = "compare.csv";
pub const GRADCHECK_FILE: &str = "gradcheck.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.csv";
pub const PCA_FILE: &str = "embeddings_pca.csv";

pub fn model_file(seed: u64) -> String {
    format!("model_seed{seed}.json")
}

/// A trained model with the replicate seed and regime it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub regime: String,
    pub seed: u64,
    pub params: ModelParams,
}

impl SavedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let m: SavedModel = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
        m.params.validate()?;
        Ok(m)
    }
}

/// Validates `cfg`, creates its output directory and echoes the config.
fn prepare(cfg: &ExperimentConfig) -> Result<&Path> {
    cfg.validate()?;
    let dir = cfg.output_dir.as_path();
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    write_text(&dir.join(ECHO_FILE), &cfg.to_toml())?;
    Ok(dir)
}

/// Writes the synthetic dataset (generator seed `synthetic.seed + first
/// seed`) as a feature table.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let DataSource::Synthetic(_) = &cfg.data else {
        return Err(CliError::Validation(
            "generate needs a synthetic data source".into(),
        ));
    };
    let dir = prepare(cfg)?;
    let ds = crate::experiment::read_dataset(&cfg.data, cfg.seeds[0])?;
    let path = dir.join(DATASET_FILE);
    let f = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_feature_table(BufWriter::new(f), &ds).map_err(|e| match e {
        hycon::Error::Io(io) => CliError::io(&path, io),
        other => other.into(),
    })?;
    Ok(path)
}

/// Trains every seed; writes one model file per seed, the test metrics
/// table and the epoch-level loss trajectory.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let dir = prepare(cfg)?;
    let runs = run_all_seeds(cfg)?;
    for r in &runs {
        let saved = SavedModel {
            regime: r.regime.clone(),
            seed: r.seed,
            params: r.outcome.params.clone(),
        };
        let json = serde_json::to_string(&saved).expect("model serializes");
        write_text(&dir.join(model_file(r.seed)), &json)?;
    }
    let table = metrics_table(&runs);
    write_csv(&dir.join(METRICS_FILE), &table)?;
    write_csv(&dir.join(TRAJECTORY_FILE), &trajectory_table(&runs))?;
    Ok(table)
}

/// Test metrics of a saved model on the split of the seed it was trained on.
pub fn cmd_eval(cfg: &ExperimentConfig, model: &Path) -> Result<MetricsRow> {
    let dir = prepare(cfg)?;
    let saved = SavedModel::load(model)?;
    let rep = replicate(cfg, saved.seed)?;
    check_widths(&saved.params, rep.data.widths())?;
    let test = rep.part(2);
    let metrics = evaluate(&saved.params, &test)?;
    let row = MetricsRow {
        regime: saved.regime,
        seed: saved.seed.to_string(),
        acc7: metrics.acc7,
        acc2: metrics.acc2,
        f1: metrics.f1,
        mae: metrics.mae,
        corr: metrics.corr,
        silhouette: fused_silhouette(&saved.params, &test)?,
    };
    write_csv(&dir.join(EVAL_FILE), std::slice::from_ref(&row))?;
    Ok(row)
}

fn check_widths(params: &ModelParams, data: [usize; 3]) -> Result<()> {
    if params.input_widths != data {
        return Err(CliError::Validation(format!(
            "model expects feature widths {:?} but the data has {data:?}",
            params.input_widths
        )));
    }
    Ok(())
}

/// Outcome of the gradient suite.
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSummary {
    pub losses: Vec<(CheckedLoss, f64)>,
    pub tol: f64,
    pub max_rel_err: f64,
}

impl GradcheckSummary {
    pub fn headline(&self) -> String {
        format!(
            "{} losses checked, max rel err < {:e}, PASS",
            self.losses.len(),
            self.tol
        )
    }
}

/// Losses covered under `cfg`: the supervised and semi-contrastive losses
/// when enabled, the prediction loss and every baseline always.
pub fn checked_losses(cfg: &ExperimentConfig) -> Vec<CheckedLoss> {
    let t = &cfg.loss;
    CheckedLoss::ALL
        .into_iter()
        .filter(|l| match l {
            CheckedLoss::Scl => t.enable_scl,
            CheckedLoss::Iamcl => t.enable_iamcl,
            CheckedLoss::Iemcl => t.enable_iemcl,
            _ => true,
        })
        .collect()
}

/// Finite-difference checks of every covered loss over seeded batches.
/// `corrupt` perturbs the analytic gradient of one loss, as a negative
/// control; the run must then fail naming that loss.
pub fn cmd_gradcheck(
    cfg: &ExperimentConfig,
    corrupt: Option<CheckedLoss>,
) -> Result<GradcheckSummary> {
    let dir = prepare(cfg)?;
    let g = &cfg.gradcheck;
    let params = SuiteParams {
        k: g.k,
        d: g.d,
        alpha: cfg.hyperparams.alpha,
        ratio_form: cfg.loss.ratio_form,
        hinged_triplet: cfg.loss.hinged_triplet,
        ..SuiteParams::default()
    };
    let losses = checked_losses(cfg);
    let results: Vec<Vec<_>> = losses
        .par_iter()
        .map(|&loss| {
            let tamper = |grad: &mut [f64]| {
                if corrupt == Some(loss) {
                    grad[0] += 1.0 + grad[0].abs();
                }
            };
            (0..g.batches)
                .map(|seed| check_loss(loss, seed, &params, &tamper).map(|r| (seed, r)))
                .collect::<hycon::Result<Vec<_>>>()
        })
        .collect::<hycon::Result<_>>()?;

    let mut report = String::new();
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for (loss, runs) in losses.iter().zip(&results) {
        let (seed, worst) = runs
            .iter()
            .max_by(|a, b| a.1.max_rel_err.total_cmp(&b.1.max_rel_err))
            .expect("at least one batch");
        let verdict = if worst.passes(g.tol) { "ok" } else { "FAIL" };
        report.push_str(&format!(
            "{loss}: max rel err {:.3e} over {} batches (worst seed {seed}, coordinate {}) {verdict}\n",
            worst.max_rel_err, g.batches, worst.worst_index
        ));
        if let Some((seed, r)) = runs.iter().find(|(_, r)| !r.passes(g.tol)) {
            failures.push(format!(
                "{loss} failed on seed {seed}: coordinate {} analytic {:e} numeric {:e} rel err {:.3e} ≥ {:e}",
                r.worst_index, r.analytic, r.numeric, r.max_rel_err, g.tol
            ));
        }
        summary.push((*loss, worst.max_rel_err));
    }
    let result = GradcheckSummary {
        max_rel_err: summary.iter().map(|x| x.1).fold(0.0, f64::max),
        losses: summary,
        tol: g.tol,
    };
    if failures.is_empty() {
        report.push_str(&result.headline());
        report.push('\n');
    } else {
        report.push_str(&format!("FAIL\n{}\n", failures.join("\n")));
    }
    write_text(&dir.join(GRADCHECK_FILE), &report)?;
    if failures.is_empty() {
        Ok(result)
    } else {
        Err(CliError::Numerical(format!(
            "gradient check FAIL\n{}",
            failures.join("\n")
        )))
    }
}

/// Writes per-modality and fused embeddings of every sample, plus the 2-D
/// PCA projection of all rows. Fused rows are the sum of the three
/// normalized embeddings, so every row has `d` coordinates.
pub fn cmd_export_embeddings(cfg: &ExperimentConfig, model: &Path) -> Result<[PathBuf; 2]> {
    let dir = prepare(cfg)?;
    let saved = SavedModel::load(model)?;
    if saved.params.d != cfg.hyperparams.d {
        return Err(CliError::Validation(format!(
            "model has d = {} but the config has d = {}",
            saved.params.d, cfg.hyperparams.d
        )));
    }
    let rep = replicate(cfg, saved.seed)?;
    check_widths(&saved.params, rep.data.widths())?;
    let d = saved.params.d;

    let mut meta: Vec<[String; 5]> = Vec::new();
    let mut points: Vec<Vec<f64>> = Vec::new();
    for (part, split_name) in SPLIT_NAMES.iter().enumerate() {
        let ids = &rep.indices[part];
        if ids.is_empty() {
            continue;
        }
        let batch = rep.data.batch(ids)?;
        let e = embed(&saved.params, &batch)?;
        let fused = summed_embedding(&e);
        for (r, &id) in ids.iter().enumerate() {
            let label = batch.labels()[r];
            let tags = Modality::ALL
                .map(|m| (m.name(), e[m.index()].row(r).to_vec()))
                .into_iter()
                .chain([("fused", fused[r].clone())]);
            for (tag, x) in tags {
                meta.push([
                    id.to_string(),
                    split_name.to_string(),
                    label.score().to_string(),
                    binarize(label).name().to_string(),
                    tag.to_string(),
                ]);
                points.push(x);
            }
        }
    }

    let emb_path = dir.join(EMBEDDINGS_FILE);
    let mut w = csv::Writer::from_path(&emb_path).map_err(|e| csv_io(&emb_path, e))?;
    let mut header: Vec<String> = ["sample_id", "split", "label", "class", "modality_or_fused"]
        .map(String::from)
        .to_vec();
    header.extend((0..d).map(|j| format!("x{j}")));
    w.write_record(&header).map_err(|e| csv_io(&emb_path, e))?;
    for (m, x) in meta.iter().zip(&points) {
        let rec = m.iter().cloned().chain(x.iter().map(f64::to_string));
        w.write_record(rec).map_err(|e| csv_io(&emb_path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&emb_path, e))?;

    let pca = pca2d(&points)?;
    let pca_path = dir.join(PCA_FILE);
    let mut w = csv::Writer::from_path(&pca_path).map_err(|e| csv_io(&pca_path, e))?;
    w.write_record(["sample_id", "pc1", "pc2"])
        .map_err(|e| csv_io(&pca_path, e))?;
    for (m, c) in meta.iter().zip(&pca.coords) {
        w.write_record([m[0].clone(), c[0].to_string(), c[1].to_string()])
            .map_err(|e| csv_io(&pca_path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&pca_path, e))?;
    Ok([emb_path, pca_path])
}

fn csv_io(path: &Path, e: csv::Error) -> CliError {
    CliError::Validation(format!("{}: {e}", path.display()))
}

/// Trains every seed at every (α, λ) grid point and writes one mean row per
/// point.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    let dir = prepare(cfg)?;
    let h = &cfg.hyperparams;
    let alphas = if cfg.sweep.alphas.is_empty() {
        vec![h.alpha]
    } else {
        cfg.sweep.alphas.clone()
    };
    let lambdas = if cfg.sweep.lambdas.is_empty() {
        vec![[h.lambda1, h.lambda2, h.lambda3]]
    } else {
        cfg.sweep.lambdas.clone()
    };
    let grid: Vec<(f64, [f64; 3])> = alphas
        .iter()
        .flat_map(|&a| lambdas.iter().map(move |&l| (a, l)))
        .collect();
    let jobs: Vec<(ExperimentConfig, u64)> = grid
        .iter()
        .flat_map(|&(alpha, l)| {
            let mut c = cfg.clone();
            c.hyperparams.alpha = alpha;
            [
                c.hyperparams.lambda1,
                c.hyperparams.lambda2,
                c.hyperparams.lambda3,
            ] = l;
            cfg.seeds.iter().map(move |&s| (c.clone(), s))
        })
        .collect();
    let runs = run_jobs(&jobs)?;
    let rows: Vec<SweepRow> = grid
        .iter()
        .zip(runs.chunks(cfg.seeds.len()))
        .map(|(&(alpha, l), chunk)| {
            let per_seed: Vec<_> = chunk.iter().map(MetricsRow::from_run).collect();
            let [mean, _] = summarize(&chunk[0].regime, &per_seed);
            SweepRow::new(alpha, l, mean)
        })
        .collect();
    write_csv(&dir.join(SWEEP_FILE), &rows)?;
    Ok(rows)
}

/// The regimes of the loss comparison, in table order: the four baselines,
/// then HyCon with the configured toggles.
pub fn comparison_configs(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut out: Vec<ExperimentConfig> = [
        BaselineKind::Triplet,
        BaselineKind::HardTriplet,
        BaselineKind::NPair,
        BaselineKind::Classical,
    ]
    .into_iter()
    .map(|b| {
        let mut c = cfg.clone();
        c.baseline_loss = Some(b);
        c.loss = LossToggles {
            enable_scl: true,
            enable_iamcl: true,
            enable_iemcl: true,
            ..cfg.loss.clone()
        };
        c
    })
    .collect();
    out.push(ExperimentConfig {
        baseline_loss: None,
        ..cfg.clone()
    });
    out
}

/// Trains each comparison regime on every seed and writes per-seed, mean
/// and std rows per regime.
pub fn cmd_compare_losses(cfg: &ExperimentConfig) -> Result<Vec<MetricsRow>> {
    let dir = prepare(cfg)?;
    let jobs: Vec<(ExperimentConfig, u64)> = comparison_configs(cfg)
        .into_iter()
        .flat_map(|c| cfg.seeds.iter().map(move |&s| (c.clone(), s)))
        .collect();
    let table = metrics_table(&run_jobs(&jobs)?);
    write_csv(&dir.join(COMPARE_FILE), &table)?;
    Ok(table)
}
