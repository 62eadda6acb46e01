//! The five pipeline commands. Each is a pure function of its inputs, the
//! effective config and the seed; nothing time- or host-dependent is written.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::baseline::{run_baseline, Resampler};
use crate::config::{ReportMethod, Representation, RunConfig, SplitName};
use crate::data::{apply_normalize, fit_normalize, load_csv, stratified_split, write_csv, Dataset};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::model::{fit_with_adversary, Checkpoint, VariationalClassifier};
use crate::report::{
    export_loss_csv, pca2d, stratified_subsample, threshold_sweep, tsne_exact, uniform_grid,
    write_embedding_csv, write_sweep_csv, Embedding2D, TsneParams, TSNE_MAX_POINTS,
};

pub const THREADS_ENV: &str = "IMB_DPGM_THREADS";
pub const NORM_STATS_FILE: &str = "norm_stats.json";
pub const SPLIT_FILE: &str = "split.json";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRACE_FILE: &str = "trace.csv";
const SWEEP_STEPS: usize = 100;

/// Files written by a command plus a one-line summary.
#[derive(Debug, Clone)]
pub struct CommandOutput {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn persist_config(cfg: &RunConfig, command: &str) -> Result<PathBuf> {
    let path = cfg.out_dir.join(format!("config_{command}.json"));
    fs::write(&path, cfg.to_json()?).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Maximum worker threads, from `IMB_DPGM_THREADS` or the host.
pub fn thread_cap() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn load_split(cfg: &RunConfig, split: SplitName) -> Result<Dataset> {
    let path = cfg.out_dir.join(split.file_name());
    if !path.exists() {
        return Err(Error::io(
            &path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "split missing; run `prepare` first"),
        ));
    }
    load_csv(&path, &cfg.label_col)
}

#[derive(Serialize)]
struct SplitManifest<'a> {
    source: Option<String>,
    seed: u64,
    fractions: [f64; 3],
    n_rows: usize,
    class_counts: [[usize; 2]; 3],
    train: &'a [usize],
    val: &'a [usize],
    test: &'a [usize],
}

/// Splits the raw CSV, fits normalization on the train part and writes
/// normalized `train.csv`, `val.csv`, `test.csv`, `norm_stats.json` and
/// `split.json`.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let src = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::Config("prepare needs --data or a `data` key".into()))?;
    let ds = load_csv(src, &cfg.label_col)?;
    let split = stratified_split(&ds, cfg.split_fractions, cfg.seed)?;
    let parts = [
        ds.subset(&split.train),
        ds.subset(&split.val),
        ds.subset(&split.test),
    ];
    let stats = fit_normalize(&parts[0], cfg.clip_k)?;

    ensure_dir(&cfg.out_dir)?;
    let mut files = Vec::new();
    for (name, part) in [SplitName::Train, SplitName::Val, SplitName::Test].iter().zip(&parts) {
        let path = cfg.out_dir.join(name.file_name());
        write_csv(&apply_normalize(part, &stats)?, &path)?;
        files.push(path);
    }
    let stats_path = cfg.out_dir.join(NORM_STATS_FILE);
    stats.save(&stats_path)?;
    files.push(stats_path);

    let manifest = SplitManifest {
        source: Some(src.display().to_string()),
        seed: cfg.seed,
        fractions: cfg.split_fractions,
        n_rows: ds.n(),
        class_counts: [parts[0].class_counts(), parts[1].class_counts(), parts[2].class_counts()],
        train: &split.train,
        val: &split.val,
        test: &split.test,
    };
    let manifest_path = cfg.out_dir.join(SPLIT_FILE);
    write_json(&manifest, &manifest_path)?;
    files.push(manifest_path);
    files.push(persist_config(cfg, "prepare")?);
    if !stats.constant_features.is_empty() {
        eprintln!(
            "warning: constant features normalized to 0: {:?}",
            stats.constant_features
        );
    }
    Ok(CommandOutput {
        files,
        summary: format!(
            "prepared {} rows: train {}, val {}, test {}",
            ds.n(),
            parts[0].n(),
            parts[1].n(),
            parts[2].n()
        ),
    })
}

fn save_checkpoint(cfg: &RunConfig, ckpt: &Checkpoint) -> Result<PathBuf> {
    let path = cfg.checkpoint_path();
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    ckpt.save(&path)?;
    Ok(path)
}

/// Trains the variational classifier on the unresampled train split and
/// writes the checkpoint, loss trace and validation metrics. On divergence
/// the last good parameters are checkpointed before the error is returned.
pub fn cmd_train(cfg: &RunConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let train = load_split(cfg, SplitName::Train)?;
    let val = load_split(cfg, SplitName::Val)?;
    ensure_dir(&cfg.out_dir)?;
    let mut files = vec![persist_config(cfg, "train")?];
    let names = train.feature_names.clone();
    let stats_ref = Some(NORM_STATS_FILE.to_string());
    let trace_path = cfg.out_dir.join(TRACE_FILE);

    let fit = match fit_with_adversary(&train, &val, &cfg.model, Some(&cfg.adversary)) {
        Ok(f) => f,
        Err(Error::Diverged(run)) => {
            let ckpt = Checkpoint::from_model(&run.last_good, &names, stats_ref);
            let path = save_checkpoint(cfg, &ckpt)?;
            if !run.trace.is_empty() {
                export_loss_csv(&run.trace, &trace_path)?;
            }
            eprintln!("last good checkpoint written to {}", path.display());
            return Err(Error::Diverged(run));
        }
        Err(e) => return Err(e),
    };

    let mut ckpt = Checkpoint::from_model(&fit.model, &names, stats_ref);
    if let Some(adv) = &fit.adversary {
        ckpt = ckpt.with_adversary(&adv.config, &adv.generator, &adv.discriminator);
    }
    files.push(save_checkpoint(cfg, &ckpt)?);

    if fit.trace.is_empty() {
        // epochs = 0: no curve; drop any stale one
        if trace_path.exists() {
            fs::remove_file(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
        }
    } else {
        export_loss_csv(&fit.trace, &trace_path)?;
        files.push(trace_path);
    }

    let doc = evaluate_model(&fit.model, &val, SplitName::Val, cfg.threshold)?;
    let metrics_path = cfg.out_dir.join("metrics_val.json");
    write_json(&doc, &metrics_path)?;
    files.push(metrics_path);
    Ok(CommandOutput {
        files,
        summary: format!(
            "trained {} epochs; val auc {:.4} recall {:.4}",
            cfg.model.epochs, doc.metrics.auc, doc.metrics.recall
        ),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationDoc {
    pub split: SplitName,
    pub n: usize,
    pub class_counts: [usize; 2],
    pub metrics: MetricsReport,
}

fn evaluate_model(
    model: &VariationalClassifier,
    ds: &Dataset,
    split: SplitName,
    threshold: f64,
) -> Result<EvaluationDoc> {
    let scores = model.predict_proba(&ds.features)?;
    Ok(EvaluationDoc {
        split,
        n: ds.n(),
        class_counts: ds.class_counts(),
        metrics: MetricsReport::compute(&scores, &ds.labels, threshold)?,
    })
}

fn load_model_for(cfg: &RunConfig, ds: &Dataset) -> Result<VariationalClassifier> {
    let ckpt = Checkpoint::load(cfg.checkpoint_path())?;
    if ckpt.input_dim != ds.d() {
        return Err(Error::shape(
            "checkpoint",
            format!(
                "checkpoint expects d = {} features but the {} split has {}",
                ckpt.input_dim,
                cfg.split,
                ds.d()
            ),
        ));
    }
    ckpt.to_model()
}

/// Metrics JSON and threshold sweep CSV for one split.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let ds = load_split(cfg, cfg.split)?;
    let model = load_model_for(cfg, &ds)?;
    let doc = evaluate_model(&model, &ds, cfg.split, cfg.threshold)?;
    let scores = model.predict_proba(&ds.features)?;
    let sweep = threshold_sweep(&scores, &ds.labels, &uniform_grid(SWEEP_STEPS))?;

    let metrics_path = cfg.out_dir.join(format!("metrics_{}.json", cfg.split));
    write_json(&doc, &metrics_path)?;
    let sweep_path = cfg.out_dir.join(format!("sweep_{}.csv", cfg.split));
    write_sweep_csv(&sweep, &sweep_path)?;
    let config_path = persist_config(cfg, "evaluate")?;
    Ok(CommandOutput {
        files: vec![config_path, metrics_path, sweep_path],
        summary: format!(
            "{}: auc {:.4} precision {:.4} recall {:.4} f1 {:.4}",
            cfg.split, doc.metrics.auc, doc.metrics.precision, doc.metrics.recall, doc.metrics.f1
        ),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineDoc {
    pub resampler: Resampler,
    pub seed: u64,
    pub train_size: usize,
    pub train_class_counts: [usize; 2],
    pub final_train_loss: f64,
    pub split: SplitName,
    pub metrics: MetricsReport,
}

fn baseline_doc(
    train: &Dataset,
    eval: &Dataset,
    cfg: &RunConfig,
    resampler: Resampler,
    seed: u64,
) -> Result<BaselineDoc> {
    let run = run_baseline(train, resampler, &cfg.baseline, seed)?;
    let scores = run.model.predict_proba(&eval.features)?;
    Ok(BaselineDoc {
        resampler,
        seed,
        train_size: run.train_size,
        train_class_counts: run.train_class_counts,
        final_train_loss: run.final_train_loss,
        split: cfg.split,
        metrics: MetricsReport::compute(&scores, &eval.labels, cfg.threshold)?,
    })
}

/// Runs every configured resampler with a logistic classifier; baseline `i`
/// uses seed `seed + i`. Runs execute on up to [`thread_cap`] threads.
pub fn run_baselines(train: &Dataset, eval: &Dataset, cfg: &RunConfig) -> Result<Vec<BaselineDoc>> {
    let jobs: Vec<(Resampler, u64)> = cfg
        .baseline
        .resamplers
        .iter()
        .enumerate()
        .map(|(i, &r)| (r, cfg.seed.wrapping_add(i as u64)))
        .collect();
    let cap = thread_cap().max(1);
    let mut out = Vec::with_capacity(jobs.len());
    for wave in jobs.chunks(cap) {
        let results: Vec<Result<BaselineDoc>> = std::thread::scope(|s| {
            let handles: Vec<_> = wave
                .iter()
                .map(|&(r, seed)| s.spawn(move || baseline_doc(train, eval, cfg, r, seed)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("baseline worker panicked"))
                .collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

pub fn cmd_baseline(cfg: &RunConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let train = load_split(cfg, SplitName::Train)?;
    let eval = load_split(cfg, cfg.split)?;
    ensure_dir(&cfg.out_dir)?;
    let mut files = vec![persist_config(cfg, "baseline")?];
    let docs = run_baselines(&train, &eval, cfg)?;
    let mut lines = Vec::new();
    for doc in &docs {
        let path = cfg.out_dir.join(format!("baseline_{}.json", doc.resampler));
        write_json(doc, &path)?;
        files.push(path);
        lines.push(format!(
            "{} (n={}): auc {:.4} recall {:.4}",
            doc.resampler, doc.train_size, doc.metrics.auc, doc.metrics.recall
        ));
    }
    Ok(CommandOutput {
        files,
        summary: lines.join("\n"),
    })
}

/// Rows to embed: normalized inputs or encoder means.
pub fn representation_of(cfg: &RunConfig, ds: &Dataset) -> Result<crate::autodiff::Matrix> {
    match cfg.report.representation {
        Representation::Input => Ok(ds.features.clone()),
        Representation::Latent => Ok(load_model_for(cfg, ds)?.encode(&ds.features)?.0),
    }
}

pub fn embed(cfg: &RunConfig, ds: &Dataset) -> Result<Embedding2D> {
    let subsample = cfg.report.subsample;
    if cfg.report.method == ReportMethod::Tsne && subsample.is_none() && ds.n() > TSNE_MAX_POINTS {
        return Err(Error::invalid(format!(
            "the {} split has {} rows; exact t-SNE handles at most {TSNE_MAX_POINTS}. Pass --subsample {TSNE_MAX_POINTS} (or smaller)",
            cfg.split,
            ds.n()
        )));
    }
    let ds = match subsample {
        Some(k) => ds.subset(&stratified_subsample(&ds.labels, k, cfg.seed)?),
        None => ds.clone(),
    };
    if cfg.report.method == ReportMethod::Tsne && !(cfg.report.perplexity < ds.n() as f64 / 3.0) {
        return Err(Error::Config(format!(
            "report.perplexity {} is too large for {} points; it must be below n/3 = {:.3}",
            cfg.report.perplexity,
            ds.n(),
            ds.n() as f64 / 3.0
        )));
    }
    let points = representation_of(cfg, &ds)?;
    match cfg.report.method {
        ReportMethod::Pca => pca2d(&points, &ds.labels),
        ReportMethod::Tsne => tsne_exact(
            &points,
            &ds.labels,
            &TsneParams {
                perplexity: cfg.report.perplexity,
                iterations: cfg.report.iterations,
                seed: cfg.seed,
                ..TsneParams::default()
            },
        ),
    }
}

pub fn embedding_file_name(cfg: &RunConfig) -> String {
    let method = match cfg.report.method {
        ReportMethod::Pca => "pca",
        ReportMethod::Tsne => "tsne",
    };
    let rep = match cfg.report.representation {
        Representation::Input => "input",
        Representation::Latent => "latent",
    };
    format!("embedding_{}_{method}_{rep}.csv", cfg.split)
}

/// Writes a 2-D embedding CSV of the chosen split.
pub fn cmd_report(cfg: &RunConfig) -> Result<CommandOutput> {
    cfg.validate()?;
    let ds = load_split(cfg, cfg.split)?;
    let emb = embed(cfg, &ds)?;
    ensure_dir(&cfg.out_dir)?;
    let config_path = persist_config(cfg, "report")?;
    let path = cfg.out_dir.join(embedding_file_name(cfg));
    write_embedding_csv(&emb, &path)?;
    let sil = emb.silhouette()?;
    Ok(CommandOutput {
        files: vec![config_path, path],
        summary: format!("{} points embedded; silhouette {sil:.4}", emb.n()),
    })
}
