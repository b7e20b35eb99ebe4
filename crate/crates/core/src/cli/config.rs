use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ctm::CtmConfig;
use crate::date::YearMonth;
use crate::error::{Error, Result};
use crate::eval::{BacktestConfig, ModelSettings};
use crate::ingest::SpecSource;
use crate::textpipe::TfIdfAggregate;
use crate::varimp::SurrogateConfig;

/// Environment variables that may replace configured paths.
pub const ENV_OVERRIDES: [(&str, PathField); 5] = [
    ("TAILCAST_PANEL_DIR", PathField::PanelDir),
    ("TAILCAST_CORPUS", PathField::Corpus),
    ("TAILCAST_KEEP_LIST", PathField::KeepList),
    ("TAILCAST_SERIES_SPEC", PathField::SeriesSpec),
    ("TAILCAST_OUT_DIR", PathField::OutDir),
];

#[derive(Debug, Clone, Copy)]
pub enum PathField {
    PanelDir,
    Corpus,
    KeepList,
    SeriesSpec,
    OutDir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Directory of `YYYY-MM.csv` vintages.
    pub panel_dir: PathBuf,
    /// JSON-lines corpus; required when any predictor mode uses text.
    pub corpus: Option<PathBuf>,
    pub keep_list: Option<PathBuf>,
    /// TOML sidecar with transformation codes; otherwise codes are read from
    /// the header rows of each vintage.
    pub series_spec: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Paths {
    fn slot(&mut self, f: PathField) -> &mut Option<PathBuf> {
        match f {
            PathField::Corpus => &mut self.corpus,
            PathField::KeepList => &mut self.keep_list,
            PathField::SeriesSpec => &mut self.series_spec,
            PathField::PanelDir | PathField::OutDir => unreachable!("required paths are not optional"),
        }
    }

    fn set(&mut self, f: PathField, p: PathBuf) {
        match f {
            PathField::PanelDir => self.panel_dir = p,
            PathField::OutDir => self.out_dir = p,
            _ => *self.slot(f) = Some(p),
        }
    }

    fn resolve(&mut self, base: &Path) {
        let abs = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
        self.panel_dir = abs(&self.panel_dir);
        self.out_dir = abs(&self.out_dir);
        for f in [PathField::Corpus, PathField::KeepList, PathField::SeriesSpec] {
            let slot = self.slot(f);
            if let Some(p) = slot.as_deref() {
                *slot = Some(abs(p));
            }
        }
    }

    pub fn spec_source(&self) -> SpecSource {
        match &self.series_spec {
            Some(p) => SpecSource::Sidecar(p.clone()),
            None => SpecSource::HeaderRow,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextSettings {
    /// Last month whose documents may inform the vocabulary and the topic
    /// model. Defaults to the month before `backtest.eval_start`.
    pub cutoff: Option<YearMonth>,
    pub v_max: usize,
    pub aggregate: TfIdfAggregate,
}

impl Default for TextSettings {
    fn default() -> Self {
        Self { cutoff: None, v_max: 10_000, aggregate: TfIdfAggregate::Max }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportanceSettings {
    pub top_k: usize,
    pub surrogate: SurrogateConfig,
}

impl Default for ImportanceSettings {
    fn default() -> Self {
        Self { top_k: 5, surrogate: SurrogateConfig::default() }
    }
}

/// Everything one experiment needs. `seed` is mandatory and is applied to
/// every stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    pub paths: Paths,
    #[serde(default)]
    pub text: TextSettings,
    #[serde(default)]
    pub ctm: CtmConfig,
    pub backtest: BacktestConfig,
    #[serde(default)]
    pub models: ModelSettings,
    #[serde(default)]
    pub importance: ImportanceSettings,
}

impl ExperimentConfig {
    /// Parse TOML text. Relative paths are resolved against `base`.
    pub fn from_toml(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::validation("config", e.message().to_string()))?;
        cfg.paths.resolve(base);
        cfg.apply_seed(cfg.seed);
        Ok(cfg)
    }

    /// Read a config file, apply path overrides from `env`, resolve paths.
    pub fn load(path: &Path, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::validation("--config", format!("{}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let mut cfg = Self::from_toml(&text, &std::path::absolute(base)?)?;
        // Override paths are taken relative to the working directory.
        for (var, field) in ENV_OVERRIDES {
            if let Some(v) = env(var) {
                cfg.paths.set(field, std::path::absolute(v)?);
            }
        }
        Ok(cfg)
    }

    pub fn apply_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.ctm.seed = seed;
        self.backtest.seed = seed;
    }

    pub fn cutoff(&self) -> YearMonth {
        self.text.cutoff.unwrap_or_else(|| self.backtest.eval_start.pred())
    }

    pub fn uses_text(&self) -> bool {
        self.backtest.predictor_modes.iter().any(|m| m.uses_text())
    }

    /// Every problem found, or the config unchanged.
    pub fn validate(&self) -> std::result::Result<(), Vec<Error>> {
        let mut errs = self.backtest.problems();
        let p = &self.paths;
        if !p.panel_dir.is_dir() {
            errs.push(Error::validation("paths.panel_dir", format!("{} is not a directory", p.panel_dir.display())));
        }
        match &p.corpus {
            Some(c) if !c.is_file() => {
                errs.push(Error::validation("paths.corpus", format!("{} does not exist", c.display())))
            }
            None if self.uses_text() => errs.push(Error::validation(
                "paths.corpus",
                "a corpus is required when backtest.predictor_modes includes text or both",
            )),
            _ => {}
        }
        for (field, path) in [("paths.keep_list", &p.keep_list), ("paths.series_spec", &p.series_spec)] {
            if let Some(f) = path {
                if !f.is_file() {
                    errs.push(Error::validation(field, format!("{} does not exist", f.display())));
                }
            }
        }
        if self.cutoff() >= self.backtest.eval_start {
            errs.push(Error::validation(
                "text.cutoff, backtest.eval_start",
                format!("text cutoff {} must precede eval_start {}", self.cutoff(), self.backtest.eval_start),
            ));
        }
        if self.text.v_max == 0 {
            errs.push(Error::validation("text.v_max", "must be positive"));
        }
        if self.ctm.k < 2 {
            errs.push(Error::validation("ctm.k", "need at least 2 topics"));
        }
        if !(self.ctm.tol > 0.0) || self.ctm.max_iter == 0 {
            errs.push(Error::validation("ctm.tol, ctm.max_iter", "tolerance and iteration cap must be positive"));
        }
        if self.models.qrf.n_trees == 0 || self.models.qrf.min_leaf == 0 {
            errs.push(Error::validation("models.qrf", "n_trees and min_leaf must be positive"));
        }
        if self.importance.top_k == 0 {
            errs.push(Error::validation("importance.top_k", "must be positive"));
        }
        if self.importance.surrogate.cv_folds < 2 || self.importance.surrogate.n_lambda == 0 {
            errs.push(Error::validation("importance.surrogate", "need at least 2 folds and 1 penalty"));
        }
        if self.threads == Some(0) {
            errs.push(Error::validation("threads", "must be positive"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
