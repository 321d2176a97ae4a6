//! Experiment configuration and end-to-end orchestration.
//!
//! A TOML config names the dataset recipe and splits, the comparability
//! thresholds, generator hyperparameters, sampling targets, and the regime
//! grid. The command entry points mirror the CLI subcommands: `pairs`,
//! `train-generator`, `sample`, `experiment`, and `tradeoff`. All outputs are
//! written atomically (temp file, then rename) and all randomness derives
//! from the config's root seed.

use crate::bundle::{ArtifactBundle, BUNDLE_FORMAT_VERSION};
use crate::comparability::{mine_pairs, split_pairs, ComparabilityConfig, ComparablePair};
use crate::data::{
    drop_sensitive, encode_train, encode_with, load_dataset, EncodedDataset, Split, Standardizer,
};
use crate::error::{Error, Result};
use crate::gan::{post_filter, sample_raw, train_generator, AntidoteSet, GanHyperparams};
use crate::gmm::{fit_all_gmms, GmmFitOptions};
use crate::metrics::{
    average_precision, average_reports, comp_gap_stats, roc_auc, FairnessReport,
    REPORT_FORMAT_VERSION,
};
use crate::schema::FeatureSchema;
use crate::train::{
    random_comparable, train_anti, train_anti_only, train_antidro, train_logreg, train_nn,
    BaseTrainer, ClassifierModel, DroCandidates, LogRegConfig, NnConfig,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

/// Environment variable naming the default directory for relative data paths.
pub const DATA_DIR_ENV: &str = "ANTIDOTE_DATA_DIR";

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    /// Schema recipe path, resolved relative to the config file.
    pub schema: PathBuf,
    /// Train/test split paths, resolved via [`DATA_DIR_ENV`] when relative.
    pub train: PathBuf,
    pub test: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingConfig {
    /// Antidote rows to collect, as a percentage of the train rows.
    pub target_percent: f64,
    /// Stop after this many sampling passes even if short of the target.
    pub max_iterations: usize,
    /// Post filter additionally requires the generated sensitive block to
    /// equal the requested one.
    pub require_requested_sensitive: bool,
    /// Reuse `bundle.antb` from the output directory when present.
    pub reuse_bundle: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            target_percent: 45.0,
            max_iterations: 20,
            require_requested_sensitive: false,
            reuse_bundle: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Regimes to run; see [`Regime`] for the names.
    pub regimes: Vec<String>,
    /// Classifier kinds: "logreg" and/or "nn".
    pub classifiers: Vec<String>,
    /// Seeds for classifiers with training randomness; deterministic
    /// classifiers run once.
    pub seeds: Vec<u64>,
    /// Candidate cap for the DRO regime; absent means all candidates.
    pub antidro_m: Option<usize>,
    /// Antidote percentage for the DRO regime when it differs from the
    /// augmentation target.
    pub antidro_target_percent: Option<f64>,
    /// Percentage of random comparable rows for that baseline regime.
    pub random_percent: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            regimes: vec!["base".into(), "dis".into(), "anti".into(), "anti+dis".into()],
            classifiers: vec!["logreg".into(), "nn".into()],
            seeds: vec![0, 1, 2, 3, 4],
            antidro_m: None,
            antidro_target_percent: None,
            random_percent: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub version: u32,
    /// Root seed; every random stream in a run derives from it.
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub comparability: ComparabilityConfig,
    #[serde(default)]
    pub gan: GanHyperparams,
    #[serde(default)]
    pub sampling: SamplingConfig,
    #[serde(default)]
    pub experiment: RunConfig,
    #[serde(default)]
    pub logreg: LogRegConfig,
    #[serde(default)]
    pub nn: NnConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        if cfg.version != CONFIG_FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported config version {}", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, PathBuf)> {
        let text = std::fs::read_to_string(path)?;
        let cfg = Self::from_toml_str(&text)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok((cfg, base))
    }

    /// Reject invalid settings before any compute.
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.comparability.t_c) {
            return Err(Error::Config(format!(
                "comparability.t_c = {} outside [0, 1]",
                self.comparability.t_c
            )));
        }
        self.gan.validate()?;
        if self.sampling.target_percent < 0.0 || self.experiment.random_percent < 0.0 {
            return Err(Error::Config("percentages must be non-negative".into()));
        }
        if self.sampling.max_iterations == 0 {
            return Err(Error::Config("sampling.max_iterations must be positive".into()));
        }
        if self.experiment.seeds.is_empty() {
            return Err(Error::Config("experiment.seeds must not be empty".into()));
        }
        for r in &self.experiment.regimes {
            Regime::from_str(r)?;
        }
        for c in &self.experiment.classifiers {
            Classifier::from_str(c)?;
        }
        Ok(())
    }
}

/// Resolve a possibly relative path against the config directory (for the
/// schema) or the data directory environment variable (for data files).
pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_absolute() || path.exists() {
        return path.to_path_buf();
    }
    if let Ok(dir) = std::env::var(DATA_DIR_ENV) {
        let candidate = Path::new(&dir).join(path);
        if candidate.exists() {
            return candidate;
        }
    }
    path.to_path_buf()
}

fn resolve_schema_path(base: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() || path.exists() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Write a file atomically: produce the bytes into a sibling temp file, then
/// rename over the destination.
pub fn write_atomic(path: &Path, producer: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let tmp = path.with_extension(format!("tmp-{}", std::process::id()));
    {
        let mut file = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
        producer(&mut file)?;
        file.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Base,
    Dis,
    Anti,
    AntiDis,
    AntiDro,
    AntiOnly,
    RandomComparable,
}

impl FromStr for Regime {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Regime::Base),
            "dis" => Ok(Regime::Dis),
            "anti" => Ok(Regime::Anti),
            "anti+dis" => Ok(Regime::AntiDis),
            "antidro" => Ok(Regime::AntiDro),
            "anti-only" => Ok(Regime::AntiOnly),
            "random-comparable" => Ok(Regime::RandomComparable),
            other => Err(Error::Config(format!("unknown regime `{other}`"))),
        }
    }
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Base => "base",
            Regime::Dis => "dis",
            Regime::Anti => "anti",
            Regime::AntiDis => "anti+dis",
            Regime::AntiDro => "antidro",
            Regime::AntiOnly => "anti-only",
            Regime::RandomComparable => "random-comparable",
        }
    }

    pub fn needs_generator(&self) -> bool {
        matches!(self, Regime::Anti | Regime::AntiDis | Regime::AntiDro | Regime::AntiOnly)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classifier {
    LogReg,
    Nn,
}

impl FromStr for Classifier {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logreg" => Ok(Classifier::LogReg),
            "nn" => Ok(Classifier::Nn),
            other => Err(Error::Config(format!("unknown classifier `{other}`"))),
        }
    }
}

impl Classifier {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classifier::LogReg => "logreg",
            Classifier::Nn => "nn",
        }
    }
}

/// Ingested, encoded, and pair-mined dataset state shared by the commands.
pub struct PreparedData {
    pub schema: FeatureSchema,
    pub train: EncodedDataset,
    pub test: EncodedDataset,
    pub scaling: crate::data::ScalingStats,
    pub train_pairs: Vec<ComparablePair>,
    pub test_pairs: Vec<ComparablePair>,
}

pub fn prepare(cfg: &ExperimentConfig, base: &Path) -> Result<PreparedData> {
    cfg.validate()?;
    let schema = FeatureSchema::load(&resolve_schema_path(base, &cfg.dataset.schema))?;
    let train_path = resolve_data_path(&cfg.dataset.train);
    let test_path = resolve_data_path(&cfg.dataset.test);
    let raw_train = load_dataset(&train_path, &schema)?;
    let raw_test = load_dataset(&test_path, &schema)?;
    cfg.comparability.validate(schema.n_discrete())?;
    let (train, scaling) = encode_train(&raw_train, &schema);
    let test = encode_with(&raw_test, &schema, &scaling, Split::Test);
    let train_pairs = mine_pairs(&train, &cfg.comparability)?;
    let test_pairs = mine_pairs(&test, &cfg.comparability)?;
    Ok(PreparedData { schema, train, test, scaling, train_pairs, test_pairs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairSummary {
    pub train_rows: usize,
    pub test_rows: usize,
    pub encoded_dim: usize,
    pub train_pos: usize,
    pub train_neg: usize,
    pub test_pos: usize,
    pub test_neg: usize,
}

impl fmt::Display for PairSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "#Sample {} / {}", self.train_rows, self.test_rows)?;
        writeln!(f, "#Dim. {}", self.encoded_dim)?;
        writeln!(f, "#Pos. Comp. {} / {}", self.train_pos, self.test_pos)?;
        write!(f, "#Neg. Comp. {} / {}", self.train_neg, self.test_neg)
    }
}

/// Mine pairs on both splits and export them as CSV.
pub fn cmd_pairs(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<PairSummary> {
    let prep = prepare(cfg, base)?;
    write_atomic(&out.join("train_pairs.csv"), |w| {
        crate::comparability::write_pairs_csv(&prep.train_pairs, w)
    })?;
    write_atomic(&out.join("test_pairs.csv"), |w| {
        crate::comparability::write_pairs_csv(&prep.test_pairs, w)
    })?;
    let (train_pos, train_neg) = split_pairs(&prep.train_pairs);
    let (test_pos, test_neg) = split_pairs(&prep.test_pairs);
    Ok(PairSummary {
        train_rows: prep.train.n_rows(),
        test_rows: prep.test.n_rows(),
        encoded_dim: prep.schema.encoded_width(),
        train_pos: train_pos.len(),
        train_neg: train_neg.len(),
        test_pos: test_pos.len(),
        test_neg: test_neg.len(),
    })
}

/// Train (or reload) the generator, persist the bundle, write the trace CSV.
pub fn ensure_bundle(
    cfg: &ExperimentConfig,
    prep: &PreparedData,
    out: &Path,
) -> Result<ArtifactBundle> {
    let bundle_path = out.join("bundle.antb");
    if cfg.sampling.reuse_bundle && bundle_path.exists() {
        log::info!("reusing existing bundle at {}", bundle_path.display());
        return ArtifactBundle::load(&bundle_path);
    }
    if prep.train_pairs.is_empty() {
        return Err(Error::Contract("no comparable pairs on the train split".into()));
    }
    let mut hp = cfg.gan.clone();
    hp.seed = cfg.seed;
    let gmms = fit_all_gmms(&prep.train, &GmmFitOptions::default(), cfg.seed);
    let (generator, discriminator, trace) =
        train_generator(&prep.train, &gmms, &prep.train_pairs, &cfg.comparability, &hp)?;
    write_atomic(&out.join("trace.csv"), |w| trace.write_csv(w))?;
    let bundle = ArtifactBundle {
        version: BUNDLE_FORMAT_VERSION,
        schema: prep.schema.clone(),
        scaling: prep.scaling.clone(),
        standardizer: Standardizer::fit(&prep.train),
        gmms,
        generator,
        discriminator,
        comparability: cfg.comparability,
        gan: hp,
        root_seed: cfg.seed,
        created_unix: ArtifactBundle::now_unix(),
    };
    bundle.save(&bundle_path)?;
    Ok(bundle)
}

pub fn cmd_train_generator(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<ArtifactBundle> {
    let prep = prepare(cfg, base)?;
    ensure_bundle(cfg, &prep, out)
}

/// Sample raw generations and post-filter until the antidote pool reaches
/// `target_percent` of the train size (or the iteration cap is hit), then
/// truncate uniformly at random to the exact target.
pub fn build_pool(
    bundle: &ArtifactBundle,
    prep: &PreparedData,
    cfg: &ExperimentConfig,
    target_percent: f64,
    label: &str,
) -> Result<AntidoteSet> {
    let mut generator = bundle.generator.clone();
    let target = ((target_percent / 100.0) * prep.train.n_rows() as f64).ceil() as usize;
    let mut pool = AntidoteSet::empty_like(&prep.train);
    if target == 0 {
        return Ok(pool);
    }
    for iteration in 0..cfg.sampling.max_iterations {
        let pass_seed = crate::rng::substream(cfg.seed, label, iteration as u64)
            .gen::<u64>();
        let raw = sample_raw(&mut generator, &prep.train, &bundle.gmms, 1, pass_seed)?;
        let kept = post_filter(
            &raw,
            &prep.train,
            &cfg.comparability,
            cfg.sampling.require_requested_sensitive,
        );
        pool.append(&kept);
        log::info!(
            "sampling pass {iteration}: kept {} of {} raw rows (pool {})",
            kept.len(),
            raw.len(),
            pool.len()
        );
        if pool.len() >= target {
            break;
        }
    }
    if pool.len() < target {
        log::warn!(
            "sampling stopped at {} rows, short of the {target}-row target after {} passes",
            pool.len(),
            cfg.sampling.max_iterations
        );
    }
    let mut rng = crate::rng::stream(cfg.seed, &format!("{label}/truncate"));
    pool.truncate_random(target, &mut rng);
    Ok(pool)
}

use rand::Rng as _;

pub fn cmd_sample(
    cfg: &ExperimentConfig,
    base: &Path,
    out: &Path,
    target_percent: Option<f64>,
) -> Result<usize> {
    let prep = prepare(cfg, base)?;
    let bundle = ensure_bundle(cfg, &prep, out)?;
    let target = target_percent.unwrap_or(cfg.sampling.target_percent);
    let pool = build_pool(&bundle, &prep, cfg, target, "sample")?;
    write_atomic(&out.join("antidote.csv"), |w| pool.write_csv(w))?;
    Ok(pool.len())
}

/// Standardized classifier-facing views of the data, with and without the
/// sensitive block.
pub struct Views {
    pub x_train: Array2<f64>,
    pub x_test: Array2<f64>,
    pub std_full: Standardizer,
    pub x_train_nosens: Array2<f64>,
    pub x_test_nosens: Array2<f64>,
    pub std_nosens: Standardizer,
}

impl Views {
    pub fn build(train: &EncodedDataset, test: &EncodedDataset) -> Self {
        let std_full = Standardizer::fit(train);
        let x_train = std_full.apply(train);
        let x_test = std_full.apply(test);
        let train_ns = drop_sensitive(train);
        let test_ns = drop_sensitive(test);
        let std_nosens = Standardizer::fit(&train_ns);
        let x_train_nosens = std_nosens.apply(&train_ns);
        let x_test_nosens = std_nosens.apply(&test_ns);
        Self { x_train, x_test, std_full, x_train_nosens, x_test_nosens, std_nosens }
    }

    fn antidote_full(&self, pool: &AntidoteSet) -> Array2<f64> {
        self.std_full.apply_matrix(&pool.feature_matrix())
    }

    fn antidote_nosens(&self, pool: &AntidoteSet) -> Array2<f64> {
        let enc = drop_sensitive(&pool.to_encoded(Split::Train));
        self.std_nosens.apply_matrix(&enc.feature_matrix())
    }
}

/// Train one regime under one seed and evaluate it on the test split.
#[allow(clippy::too_many_arguments)]
pub fn run_regime_once(
    regime: Regime,
    classifier: Classifier,
    cfg: &ExperimentConfig,
    prep: &PreparedData,
    views: &Views,
    pool: Option<&AntidoteSet>,
    seed: u64,
) -> Result<FairnessReport> {
    let y_train = &prep.train.labels;
    let trainer = match classifier {
        Classifier::LogReg => BaseTrainer::LogReg(&cfg.logreg),
        Classifier::Nn => BaseTrainer::Nn(&cfg.nn, seed),
    };

    let need_pool = || -> Result<&AntidoteSet> {
        pool.ok_or_else(|| Error::Contract(format!("{} requires an antidote pool", regime.as_str())))
    };

    let (model, x_test): (ClassifierModel, &Array2<f64>) = match regime {
        Regime::Base => (trainer.fit(&views.x_train, y_train)?, &views.x_test),
        Regime::Dis => (trainer.fit(&views.x_train_nosens, y_train)?, &views.x_test_nosens),
        Regime::Anti => {
            let pool = need_pool()?;
            let ax = views.antidote_full(pool);
            (train_anti(&views.x_train, y_train, &ax, &pool.labels, trainer)?, &views.x_test)
        }
        Regime::AntiDis => {
            let pool = need_pool()?;
            let ax = views.antidote_nosens(pool);
            (
                train_anti(&views.x_train_nosens, y_train, &ax, &pool.labels, trainer)?,
                &views.x_test_nosens,
            )
        }
        Regime::AntiDro => {
            if classifier != Classifier::Nn {
                return Err(Error::Config("the DRO regime requires the nn classifier".into()));
            }
            let pool = need_pool()?;
            let ax = views.antidote_full(pool);
            let cands = DroCandidates::from_antidote(pool, prep.train.n_rows());
            (
                train_antidro(
                    &views.x_train,
                    y_train,
                    &ax,
                    &cands,
                    cfg.experiment.antidro_m,
                    &cfg.nn,
                    seed,
                )?,
                &views.x_test,
            )
        }
        Regime::AntiOnly => {
            let pool = need_pool()?;
            let ax = views.antidote_full(pool);
            (train_anti_only(&ax, &pool.labels, trainer)?, &views.x_test)
        }
        Regime::RandomComparable => {
            let count = ((cfg.experiment.random_percent / 100.0) * prep.train.n_rows() as f64)
                .ceil() as usize;
            let mut rng = crate::rng::stream(seed, "random-comparable");
            let set = random_comparable(&prep.train, &cfg.comparability, count, &mut rng);
            let ax = views.antidote_full(&set);
            (train_anti(&views.x_train, y_train, &ax, &set.labels, trainer)?, &views.x_test)
        }
    };

    let scores = model.predict_proba(x_test);
    let antidote_percent = match regime {
        Regime::RandomComparable => cfg.experiment.random_percent,
        _ => pool.map(|p| p.percent_of(prep.train.n_rows())).unwrap_or(0.0),
    };
    Ok(FairnessReport {
        version: REPORT_FORMAT_VERSION,
        regime: regime.as_str().to_string(),
        classifier: classifier.as_str().to_string(),
        seeds: 1,
        antidote_percent,
        roc: 100.0 * roc_auc(&scores, &prep.test.labels)?,
        ap: 100.0 * average_precision(&scores, &prep.test.labels)?,
        comp: comp_gap_stats(&scores, &prep.test_pairs),
    })
}

/// Run a regime across the configured seeds and average. Deterministic
/// classifiers run once.
pub fn run_regime(
    regime: Regime,
    classifier: Classifier,
    cfg: &ExperimentConfig,
    prep: &PreparedData,
    views: &Views,
    pool: Option<&AntidoteSet>,
) -> Result<FairnessReport> {
    let seeds: Vec<u64> = match classifier {
        Classifier::LogReg if regime != Regime::RandomComparable => vec![cfg.experiment.seeds[0]],
        _ => cfg.experiment.seeds.clone(),
    };
    let mut reports = Vec::with_capacity(seeds.len());
    for &seed in &seeds {
        reports.push(run_regime_once(regime, classifier, cfg, prep, views, pool, seed)?);
    }
    Ok(average_reports(&reports))
}

/// Outcome of one (classifier, regime) cell.
#[derive(Debug, Clone)]
pub enum RegimeOutcome {
    Ok(FairnessReport),
    Failed(String),
}

pub struct ExperimentOutput {
    pub outcomes: Vec<(Classifier, Regime, RegimeOutcome)>,
}

/// Run the full regime grid, isolate per-regime failures, write per-regime
/// reports and the consolidated delta table.
pub fn cmd_experiment(cfg: &ExperimentConfig, base: &Path, out: &Path) -> Result<ExperimentOutput> {
    let prep = prepare(cfg, base)?;
    let views = Views::build(&prep.train, &prep.test);

    let regimes: Vec<Regime> = cfg
        .experiment
        .regimes
        .iter()
        .map(|r| Regime::from_str(r))
        .collect::<Result<_>>()?;
    let classifiers: Vec<Classifier> = cfg
        .experiment
        .classifiers
        .iter()
        .map(|c| Classifier::from_str(c))
        .collect::<Result<_>>()?;

    let pool = if regimes.iter().any(Regime::needs_generator) {
        let bundle = ensure_bundle(cfg, &prep, out)?;
        Some((
            build_pool(&bundle, &prep, cfg, cfg.sampling.target_percent, "pool")?,
            match cfg.experiment.antidro_target_percent {
                Some(pct) if pct != cfg.sampling.target_percent => {
                    Some(build_pool(&bundle, &prep, cfg, pct, "pool-dro")?)
                }
                _ => None,
            },
        ))
    } else {
        None
    };

    let mut outcomes = Vec::new();
    for &classifier in &classifiers {
        for &regime in &regimes {
            if regime == Regime::AntiDro && classifier != Classifier::Nn {
                continue;
            }
            let regime_pool = match (regime, &pool) {
                (Regime::AntiDro, Some((main, dro))) => Some(dro.as_ref().unwrap_or(main)),
                (_, Some((main, _))) => Some(main),
                (_, None) => None,
            };
            let outcome = match run_regime(regime, classifier, cfg, &prep, &views, regime_pool) {
                Ok(report) => {
                    let name = format!("{}-{}.json", classifier.as_str(), regime.as_str());
                    write_atomic(&out.join("reports").join(name), |w| {
                        w.write_all(report.to_json().as_bytes())?;
                        Ok(())
                    })?;
                    RegimeOutcome::Ok(report)
                }
                Err(e) => {
                    log::error!("{} / {} failed: {e}", classifier.as_str(), regime.as_str());
                    RegimeOutcome::Failed(e.to_string())
                }
            };
            outcomes.push((classifier, regime, outcome));
        }
    }

    let output = ExperimentOutput { outcomes };
    write_atomic(&out.join("summary.csv"), |w| write_delta_table(&output, w))?;
    Ok(output)
}

/// Long-format delta table: one row per (classifier, regime, metric) with the
/// signed percent change against the same classifier's base regime.
pub fn write_delta_table(output: &ExperimentOutput, w: &mut dyn Write) -> Result<()> {
    writeln!(w, "classifier,regime,status,metric,value,delta_pct")?;
    for &classifier in &[Classifier::LogReg, Classifier::Nn] {
        let base = output.outcomes.iter().find_map(|(c, r, o)| match o {
            RegimeOutcome::Ok(rep) if *c == classifier && *r == Regime::Base => Some(rep.clone()),
            _ => None,
        });
        for (c, regime, outcome) in &output.outcomes {
            if *c != classifier {
                continue;
            }
            match outcome {
                RegimeOutcome::Failed(msg) => {
                    writeln!(
                        w,
                        "{},{},failed,error,\"{}\",",
                        classifier.as_str(),
                        regime.as_str(),
                        msg.replace('"', "'")
                    )?;
                }
                RegimeOutcome::Ok(rep) => {
                    let metrics = report_metrics(rep);
                    for (name, value) in metrics {
                        let delta = base
                            .as_ref()
                            .and_then(|b| {
                                report_metrics(b)
                                    .into_iter()
                                    .find(|(n, _)| *n == name)
                                    .map(|(_, bv)| bv)
                            })
                            .filter(|bv| *bv != 0.0)
                            .map(|bv| 100.0 * (value - bv) / bv);
                        match delta {
                            Some(d) => writeln!(
                                w,
                                "{},{},ok,{},{:.4},{:+.2}",
                                classifier.as_str(),
                                regime.as_str(),
                                name,
                                value,
                                d
                            )?,
                            None => writeln!(
                                w,
                                "{},{},ok,{},{:.4},",
                                classifier.as_str(),
                                regime.as_str(),
                                name,
                                value
                            )?,
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn report_metrics(rep: &FairnessReport) -> Vec<(&'static str, f64)> {
    let mut out = vec![("roc", rep.roc), ("ap", rep.ap)];
    if let Some(p) = &rep.comp.pos {
        out.push(("pos_mean", p.mean));
        out.push(("pos_q3", p.q3));
    }
    if let Some(n) = &rep.comp.neg {
        out.push(("neg_mean", n.mean));
        out.push(("neg_q3", n.q3));
    }
    out
}

/// Sweep antidote percentages for the augmentation (and optionally DRO)
/// regimes; emits one CSV row per (regime, percentage) with across-seed
/// variance of the positive comparable mean.
pub fn cmd_tradeoff(
    cfg: &ExperimentConfig,
    base: &Path,
    out: &Path,
    percents: &[f64],
) -> Result<()> {
    if percents.is_empty() {
        return Err(Error::Config("tradeoff sweep needs at least one percentage".into()));
    }
    let prep = prepare(cfg, base)?;
    let views = Views::build(&prep.train, &prep.test);
    let max_pct = percents.iter().copied().fold(0.0f64, f64::max);
    let include_dro = cfg.experiment.regimes.iter().any(|r| r == "antidro")
        && cfg.experiment.classifiers.iter().any(|c| c == "nn");

    let bundle = ensure_bundle(cfg, &prep, out)?;
    let full_pool = build_pool(&bundle, &prep, cfg, max_pct, "tradeoff")?;

    let mut rows: Vec<String> = Vec::new();
    for &pct in percents {
        let target = ((pct / 100.0) * prep.train.n_rows() as f64).ceil() as usize;
        let mut pool = full_pool.clone();
        let mut rng = crate::rng::stream(cfg.seed, &format!("tradeoff/{pct}"));
        pool.truncate_random(target, &mut rng);

        let mut regimes = vec![(Regime::Anti, Classifier::Nn)];
        if include_dro {
            regimes.push((Regime::AntiDro, Classifier::Nn));
        }
        for (regime, classifier) in regimes {
            let mut pos_means = Vec::new();
            let mut reports = Vec::new();
            for &seed in &cfg.experiment.seeds {
                let rep = if pct == 0.0 && regime == Regime::Anti {
                    // Zero antidote reduces to the base regime.
                    run_regime_once(Regime::Base, classifier, cfg, &prep, &views, None, seed)?
                } else {
                    run_regime_once(regime, classifier, cfg, &prep, &views, Some(&pool), seed)?
                };
                if let Some(p) = &rep.comp.pos {
                    pos_means.push(p.mean);
                }
                reports.push(rep);
            }
            let avg = average_reports(&reports);
            let var = if pos_means.len() > 1 {
                let m = pos_means.iter().sum::<f64>() / pos_means.len() as f64;
                pos_means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / pos_means.len() as f64
            } else {
                0.0
            };
            rows.push(format!(
                "{},{:.2},{:.4},{:.4},{:.4},{:.6}",
                regime.as_str(),
                pct,
                avg.roc,
                avg.comp.pos.map(|p| p.mean).unwrap_or(f64::NAN),
                avg.comp.neg.map(|n| n.mean).unwrap_or(f64::NAN),
                var
            ));
        }
    }
    write_atomic(&out.join("tradeoff.csv"), |w| {
        writeln!(w, "regime,percent,roc,pos_comp_mean,neg_comp_mean,variance")?;
        for row in &rows {
            writeln!(w, "{row}")?;
        }
        Ok(())
    })?;
    Ok(())
}
