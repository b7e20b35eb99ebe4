//! Configuration-driven experiment runner behind the `tailcast` binary.

mod config;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use config::{ExperimentConfig, ImportanceSettings, PathField, Paths, TextSettings, ENV_OVERRIDES};

use crate::ctm::{aggregate_monthly, fit_ctm, infer_corpus, CtmModel};
use crate::error::{Error, Result};
use crate::eval::{build_forecaster, run_backtest, BacktestReport, Forecaster};
use crate::ingest::{MonthlyFrame, VintagePanel};
use crate::synth::{self, SynthConfig, SYNTH_TARGET};
use crate::textpipe::{build_dtm, read_keep_list, select_vocabulary, tokenize, Corpus, DocumentTermMatrix};
use crate::varimp::{count_selected, fit_surrogate, top_predictors};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_PREREQUISITE: i32 = 4;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation { .. } | Error::Parse { .. } | Error::Parameter(_) => EXIT_VALIDATION,
        Error::Numerical { .. } => EXIT_NUMERICAL,
        Error::MissingPrerequisite { .. } => EXIT_PREREQUISITE,
        _ => EXIT_FAILURE,
    }
}

#[derive(Debug, Parser)]
#[command(name = "tailcast", version, about = "Quantile nowcasting experiments with text and macro predictors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to the config value, then to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Replace the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replace the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Tokenize the corpus, select the vocabulary and write the document-term matrix.
    PrepareText,
    /// Fit the topic model on pre-evaluation documents and write monthly topic shares.
    FitCtm,
    /// Run the expanding-window backtest.
    Backtest,
    /// Fit Lasso surrogates to the forecast paths and rank predictors.
    Importance,
    /// Run every stage in order.
    All,
    /// Check the configuration and print it normalized.
    Validate,
    /// Write the bundled synthetic dataset and a matching config to `--out`.
    Synth,
}

impl Command {
    pub fn stage_name(self) -> &'static str {
        match self {
            Command::PrepareText => "prepare-text",
            Command::FitCtm => "fit-ctm",
            Command::Backtest => "backtest",
            Command::Importance => "importance",
            Command::All => "all",
            Command::Validate => "validate",
            Command::Synth => "synth",
        }
    }
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    match execute(&cli, |k| std::env::var(k).ok()) {
        Ok(()) => EXIT_OK,
        Err(errs) => {
            for e in &errs {
                eprintln!("error: {e}");
            }
            errs.iter().map(exit_code).max().unwrap_or(EXIT_FAILURE)
        }
    }
}

/// Run one command. Validation problems come back together.
pub fn execute(cli: &Cli, env: impl Fn(&str) -> Option<String>) -> std::result::Result<(), Vec<Error>> {
    if cli.command == Command::Synth {
        let out = cli
            .out
            .clone()
            .ok_or_else(|| vec![Error::validation("--out", "synth needs an output directory")])?;
        let mut sc = SynthConfig::default();
        if let Some(s) = cli.seed {
            sc.seed = s;
        }
        return write_synthetic(&out, &sc).map_err(|e| vec![e]);
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| vec![Error::validation("--config", "a configuration file is required")])?;
    let mut cfg = ExperimentConfig::load(path, env).map_err(|e| vec![e])?;
    if let Some(s) = cli.seed {
        cfg.apply_seed(s);
    }
    if let Some(o) = &cli.out {
        cfg.paths.out_dir = std::path::absolute(o).map_err(|e| vec![e.into()])?;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate()?;
    if cli.command == Command::Validate {
        print!("{}", cfg.to_toml());
        return Ok(());
    }
    let run = || -> Result<()> {
        let runner = Runner::new(cfg.clone());
        match cli.command {
            Command::PrepareText => runner.prepare_text(),
            Command::FitCtm => runner.fit_ctm(),
            Command::Backtest => runner.backtest(),
            Command::Importance => runner.importance(),
            Command::All => runner.all(),
            Command::Validate | Command::Synth => unreachable!("handled above"),
        }
    };
    let result = match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| vec![Error::Parameter(e.to_string())])?
            .install(run),
        None => run(),
    };
    result.map_err(|e| vec![e])
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Write `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    std::io::Write::write_all(&mut tmp, bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Fill a temporary sibling directory, then swap it in for `path`.
fn write_dir_atomic(path: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let parent = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let tmp = tempfile::Builder::new().prefix(".staging").tempdir_in(parent)?;
    fill(tmp.path())?;
    if path.exists() {
        fs::remove_dir_all(path)?;
    }
    fs::rename(tmp.keep(), path)?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    /// Artifact path relative to the output directory, with its sha256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

pub const MANIFEST: &str = "manifest.json";

pub struct Runner {
    cfg: ExperimentConfig,
    config_hash: String,
}

impl Runner {
    pub fn new(cfg: ExperimentConfig) -> Self {
        let config_hash = sha256_hex(cfg.to_toml().as_bytes());
        Self { cfg, config_hash }
    }

    fn out(&self, rel: &str) -> PathBuf {
        self.cfg.paths.out_dir.join(rel)
    }

    fn need(&self, rel: &str, stage: &str) -> Result<PathBuf> {
        let p = self.out(rel);
        if p.exists() {
            Ok(p)
        } else {
            Err(Error::MissingPrerequisite { path: p, stage: stage.into() })
        }
    }

    fn record(&self, stage: &str, files: &[&str]) -> Result<()> {
        let mut artifacts = BTreeMap::new();
        for rel in files {
            let p = self.out(rel);
            if p.is_dir() {
                let mut names: Vec<PathBuf> = fs::read_dir(&p)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
                names.sort();
                for f in names {
                    let name = format!("{rel}/{}", f.file_name().unwrap_or_default().to_string_lossy());
                    artifacts.insert(name, sha256_hex(&fs::read(&f)?));
                }
            } else {
                artifacts.insert(rel.to_string(), sha256_hex(&fs::read(&p)?));
            }
        }
        let path = self.out(MANIFEST);
        let mut manifest: Manifest = match fs::read_to_string(&path) {
            Ok(s) => serde_json::from_str(&s)?,
            Err(_) => Manifest::default(),
        };
        manifest.stages.insert(
            stage.into(),
            StageRecord {
                config_hash: self.config_hash.clone(),
                seed: self.cfg.seed,
                version: env!("CARGO_PKG_VERSION").into(),
                artifacts,
            },
        );
        write_atomic(&path, serde_json::to_string_pretty(&manifest)?.as_bytes())
    }

    pub fn all(&self) -> Result<()> {
        if self.cfg.uses_text() {
            self.prepare_text()?;
            self.fit_ctm()?;
        }
        self.backtest()?;
        self.importance()
    }

    pub fn prepare_text(&self) -> Result<()> {
        let corpus_path = self
            .cfg
            .paths
            .corpus
            .as_ref()
            .ok_or_else(|| Error::validation("paths.corpus", "prepare-text needs a corpus"))?;
        let corpus = Corpus::read_jsonl(corpus_path)?;
        let keep = self.cfg.paths.keep_list.as_deref().map(read_keep_list).transpose()?;
        let tokens = tokenize(&corpus, keep.as_ref());
        let full = build_dtm(&tokens, &tokens.vocabulary())?;
        let cutoff = self.cfg.cutoff();
        let sel = select_vocabulary(&full.dtm, cutoff, self.cfg.text.v_max, self.cfg.text.aggregate)?;
        let built = build_dtm(&tokens, &sel.terms)?;
        write_dir_atomic(&self.out("text/dtm"), |d| built.dtm.write_dir(d))?;
        let mut dropped = String::from("id\n");
        for id in &built.dropped_docs {
            dropped.push_str(id);
            dropped.push('\n');
        }
        write_atomic(&self.out("text/dropped_docs.csv"), dropped.as_bytes())?;
        self.record("prepare-text", &["text/dtm", "text/dropped_docs.csv"])
    }

    pub fn fit_ctm(&self) -> Result<()> {
        let dtm = DocumentTermMatrix::read_dir(&self.need("text/dtm", "prepare-text")?)?;
        let train = dtm.up_to(self.cfg.cutoff())?;
        let model = fit_ctm(&train, &self.cfg.ctm)?;
        write_atomic(&self.out("ctm/model.json"), serde_json::to_string(&model.to_bundle())?.as_bytes())?;
        let posts = infer_corpus(&model, &dtm)?;
        let series = aggregate_monthly(dtm.doc_dates().iter().copied().zip(posts.iter()));
        write_atomic(&self.out("ctm/topics.csv"), series.to_csv().as_bytes())?;
        let mut top = String::from("topic,rank,term\n");
        for k in 0..model.k() {
            for (r, t) in model.top_terms(k, 10).into_iter().enumerate() {
                let _ = writeln!(top, "{k},{},{t}", r + 1);
            }
        }
        write_atomic(&self.out("ctm/top_terms.csv"), top.as_bytes())?;
        self.record("fit-ctm", &["ctm/model.json", "ctm/topics.csv", "ctm/top_terms.csv"])
    }

    pub fn load_model(&self) -> Result<CtmModel> {
        CtmModel::load(&self.need("ctm/model.json", "fit-ctm")?)
    }

    pub fn backtest(&self) -> Result<()> {
        let panel = VintagePanel::load_dir(&self.cfg.paths.panel_dir, &self.cfg.paths.spec_source())?;
        let text = if self.cfg.uses_text() {
            Some(MonthlyFrame::read_csv(&self.need("ctm/topics.csv", "fit-ctm")?)?)
        } else {
            None
        };
        let models: Vec<Box<dyn Forecaster>> =
            self.cfg.backtest.models.iter().map(|&k| build_forecaster(k, &self.cfg.models)).collect();
        let report = run_backtest(&self.cfg.backtest, &panel, text.as_ref(), &models)?;
        write_atomic(&self.out("backtest/forecasts.csv"), report.forecasts_csv().as_bytes())?;
        write_atomic(&self.out("backtest/aggregate.csv"), report.aggregate_csv().as_bytes())?;
        write_atomic(&self.out("backtest/failures.csv"), report.failures_csv().as_bytes())?;
        write_atomic(&self.out("backtest/report.json"), serde_json::to_string(&report)?.as_bytes())?;
        self.record(
            "backtest",
            &["backtest/forecasts.csv", "backtest/aggregate.csv", "backtest/failures.csv", "backtest/report.json"],
        )
    }

    pub fn importance(&self) -> Result<()> {
        let path = self.need("backtest/report.json", "backtest")?;
        let report: BacktestReport = serde_json::from_str(&fs::read_to_string(path)?)?;
        let bt = &self.cfg.backtest;
        let mut jobs = Vec::new();
        for m in &bt.models {
            for target in &bt.targets {
                for &mode in &bt.predictor_modes {
                    for &h in &bt.horizons {
                        for &tau in &bt.quantile_grid {
                            jobs.push((m.as_str(), target.as_str(), mode, h, tau));
                        }
                    }
                }
            }
        }
        let settings = &self.cfg.importance;
        let fits: Vec<_> = jobs
            .par_iter()
            .map(|&(model, target, mode, h, tau)| {
                let (_, path, x, cols) = report.surrogate_inputs(model, target, mode, h, tau)?;
                fit_surrogate(&path, &x, &cols, &settings.surrogate)
            })
            .collect();
        let mut top = String::from("model,target,mode,h,tau,rank,predictor,source,abs_coef\n");
        let mut counts = String::from("model,target,mode,h,tau,lambda,nonzero,fred,text,constant_path\n");
        let mut skipped = String::from("model,target,mode,h,tau,message\n");
        for (&(model, target, mode, h, tau), fit) in jobs.iter().zip(fits) {
            let key = format!("{model},{target},{},{h},{tau:?}", mode.as_str());
            match fit {
                Ok(fit) => {
                    for (r, p) in top_predictors(&fit, settings.top_k).iter().enumerate() {
                        let _ = writeln!(top, "{key},{},{},{},{:?}", r + 1, p.name, p.source, p.abs_coef);
                    }
                    let c = count_selected(&fit);
                    let _ = writeln!(
                        counts,
                        "{key},{:?},{},{},{},{}",
                        fit.lambda, fit.nonzero_count, c.fred, c.text, fit.constant_path
                    );
                }
                Err(e) => {
                    let _ = writeln!(skipped, "{key},\"{}\"", e.to_string().replace('"', "\"\""));
                }
            }
        }
        write_atomic(&self.out("importance/top_predictors.csv"), top.as_bytes())?;
        write_atomic(&self.out("importance/selection_counts.csv"), counts.as_bytes())?;
        write_atomic(&self.out("importance/skipped.csv"), skipped.as_bytes())?;
        self.record(
            "importance",
            &["importance/top_predictors.csv", "importance/selection_counts.csv", "importance/skipped.csv"],
        )
    }
}

/// Experiment config matching the bundled synthetic dataset, sized to run
/// in a few minutes on one core.
pub fn synthetic_experiment(sc: &SynthConfig) -> String {
    let last = sc.start.add_months(sc.n_months as i64 - 1);
    let eval_start = last.add_months(-11);
    let estimation_start = eval_start.add_months(-120).max(sc.start.add_months(2));
    format!(
        r#"seed = {seed}

[paths]
panel_dir = "panel"
corpus = "corpus.jsonl"
keep_list = "keep_list.txt"
out_dir = "out"

[text]
cutoff = "{cutoff}"
v_max = 10000

[ctm]
k = {k}
tol = 1e-6
max_iter = 200

[backtest]
targets = ["{target}"]
quantile_grid = [0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95]
horizons = [0, 1]
eval_start = "{eval_start}"
eval_end = "{last}"
estimation_start = "{estimation_start}"
models = ["bqr-horseshoe", "gp", "qrf"]
predictor_modes = ["fred", "text", "both"]
n_lags = 2
min_rows = 24
rearrange = true
realization = "final"

[models.qrf]
n_trees = 100
min_leaf = 5

[importance]
top_k = 5
"#,
        seed = sc.seed,
        cutoff = eval_start.pred(),
        k = sc.n_topics,
        target = SYNTH_TARGET,
    )
}

/// Write the synthetic dataset and `experiment.toml` into `dir`.
pub fn write_synthetic(dir: &Path, sc: &SynthConfig) -> Result<()> {
    let data = synth::generate(sc)?;
    data.write_dir(dir)?;
    write_atomic(&dir.join("experiment.toml"), synthetic_experiment(sc).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::YearMonth;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::validation("a", "b")), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::numerical(1, "x")), EXIT_NUMERICAL);
        assert_eq!(
            exit_code(&Error::MissingPrerequisite { path: "x".into(), stage: "fit-ctm".into() }),
            EXIT_PREREQUISITE
        );
    }

    #[test]
    fn atomic_write_replaces_whole_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path().join("a")).unwrap().count(), 1);
    }

    #[test]
    fn synthetic_config_validates() {
        let dir = tempfile::tempdir().unwrap();
        let sc = SynthConfig { n_months: 80, first_vintage: YearMonth::new(2000, 1).unwrap(), ..Default::default() };
        write_synthetic(dir.path(), &sc).unwrap();
        let cfg = ExperimentConfig::load(&dir.path().join("experiment.toml"), |_| None).unwrap();
        cfg.validate().unwrap();
    }
}
