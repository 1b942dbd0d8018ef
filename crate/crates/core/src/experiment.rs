//! Config-driven pipeline: data generation, training, evaluation, sweeps and
//! report collection. The `crtr` binary is a thin wrapper over this module.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::contrastive::{self, in_batch_accuracy, score_matrix, LossVariant, SimilarityMetric, StepStats, TrainConfig};
use crate::dataset::{generate_trajectories, read_dataset, sample_pairs, write_dataset, DataSource, Recipe, SamplerConfig, TrajectoryDataset};
use crate::env::{Env, EnvConfig, EnvId, Instance, Puzzle};
use crate::metrics::{length_cdf, mean_stderr, success_curve, trajectory_correlation, write_file, BudgetSummary, MetricsReport};
use crate::nn::{flush_subnormals, init_params, AdamState, Checkpoint, CheckpointHeader, EncoderArch, EncoderParams, ModelKind};
use crate::rng::{derive, Stream};
use crate::search::{
    solve, write_results_csv, CriticScorer, HammingScorer, OracleScorer, Planner, RandomScorer, Scorer, SearchConfig, SearchResult, SupervisedScorer,
};
use crate::supervised::{self, classifier_arch, BinConfig, SupervisedConfig};
use crate::{Error, Result};

pub const DATASET_FILE: &str = "dataset.crtj";
pub const CHECKPOINT_FILE: &str = "checkpoint.crtr";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const REPORT_STEM: &str = "report";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    #[default]
    Crtr,
    Crl,
    Supervised,
    Random,
    Oracle,
    Hamming,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::Crtr => "crtr",
            Model::Crl => "crl",
            Model::Supervised => "supervised",
            Model::Random => "random",
            Model::Oracle => "oracle",
            Model::Hamming => "hamming",
        }
    }

    pub fn is_trainable(self) -> bool {
        matches!(self, Model::Crtr | Model::Crl | Model::Supervised)
    }

    fn kind(self) -> Option<ModelKind> {
        match self {
            Model::Crtr | Model::Crl => Some(ModelKind::Contrastive),
            Model::Supervised => Some(ModelKind::Supervised),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub count: Option<usize>,
    pub length: Option<usize>,
    pub remove_cycles: Option<bool>,
    /// Fresh trajectories for every batch instead of a stored dataset.
    pub unlimited: bool,
    /// Train from this trajectory file instead of regenerating.
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchSection {
    pub hidden_dim: Option<usize>,
    pub depth: Option<usize>,
    pub repr_dim: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: Option<f32>,
    pub batch_size: Option<usize>,
    pub discount: Option<f64>,
    pub repetition_factor: Option<usize>,
    pub metric: Option<SimilarityMetric>,
    pub variant: Option<LossVariant>,
    pub temperature: Option<f32>,
    pub steps: Option<u64>,
    pub checkpoint_every: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub instances: Option<usize>,
    pub difficulty: Option<usize>,
    pub budgets: Option<Vec<usize>>,
    pub planner: Option<Planner>,
    pub alpha: Option<f32>,
    /// `0` disables the filter.
    pub top_k: Option<usize>,
    pub allow_revisits: bool,
    pub oracle_radius: Option<usize>,
    pub oracle_capacity: Option<usize>,
    pub correlation_trajectories: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub repetition_factor: Vec<usize>,
    pub alpha: Vec<f32>,
    pub metric: Vec<SimilarityMetric>,
    pub variant: Vec<LossVariant>,
}

/// One JSON document drives the whole pipeline. Unset fields fall back to
/// per-environment defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    #[serde(default)]
    pub model: Model,
    #[serde(default)]
    pub seed: u64,
    /// Seeds swept by `sweep`; empty means `[seed]`.
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub arch: ArchSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
    /// Output directory; excluded from the config hash.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(env: EnvConfig, model: Model) -> Self {
        Self {
            env,
            model,
            seed: 0,
            seeds: Vec::new(),
            data: DataSection::default(),
            arch: ArchSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            sweep: SweepSection::default(),
            out: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks every resolved setting. CRL must not set a repetition factor
    /// other than 1.
    pub fn validate(&self) -> Result<()> {
        let env = self.env.build()?;
        if self.model == Model::Crl && self.train.repetition_factor.is_some_and(|r| r != 1) {
            return Err(Error::Config("crl uses repetition_factor 1".into()));
        }
        self.arch(env.input_dim()).validate()?;
        self.train_config(&env)?.validate()?;
        self.search_config(1).validate()?;
        if self.budgets().is_empty() {
            return Err(Error::Config("eval.budgets is empty".into()));
        }
        if self.data.count == Some(0) || self.eval.instances == Some(0) {
            return Err(Error::Config("counts must be >= 1".into()));
        }
        if self.model.is_trainable() && self.train.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be >= 1".into()));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON of everything except `out`.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    pub fn recipe(&self) -> Recipe {
        let d = Recipe::default_for(self.env.id());
        Recipe { length: self.data.length.unwrap_or(d.length), remove_cycles: self.data.remove_cycles.unwrap_or(d.remove_cycles) }
    }

    pub fn data_count(&self) -> usize {
        self.data.count.unwrap_or(10_000)
    }

    pub fn arch(&self, state_dim: usize) -> EncoderArch {
        let d = EncoderArch::desk(state_dim);
        EncoderArch {
            input_dim: state_dim,
            hidden_dim: self.arch.hidden_dim.unwrap_or(d.hidden_dim),
            depth: self.arch.depth.unwrap_or(d.depth),
            repr_dim: self.arch.repr_dim.unwrap_or(d.repr_dim),
        }
    }

    pub fn train_config(&self, env: &Env) -> Result<TrainConfig> {
        let arch = self.arch(env.input_dim());
        let d = TrainConfig::default_for(env.id(), arch.repr_dim);
        let repetition_factor = match self.model {
            Model::Crl | Model::Supervised => 1,
            _ => self.train.repetition_factor.unwrap_or(d.sampler.repetition_factor),
        };
        Ok(TrainConfig {
            lr: self.train.lr.unwrap_or(d.lr),
            sampler: SamplerConfig {
                batch_size: self.train.batch_size.unwrap_or(d.sampler.batch_size),
                discount: self.train.discount.unwrap_or(d.sampler.discount),
                repetition_factor,
            },
            metric: self.train.metric.unwrap_or(d.metric),
            variant: self.train.variant.unwrap_or(d.variant),
            temperature: self.train.temperature.unwrap_or(d.temperature),
            steps: self.train.steps.unwrap_or(d.steps),
            seed: self.seed,
        })
    }

    pub fn budgets(&self) -> Vec<usize> {
        self.eval.budgets.clone().unwrap_or_else(|| vec![10, 100, 1000, 6000])
    }

    pub fn planner(&self) -> Planner {
        self.eval.planner.unwrap_or(Planner::Bestfs)
    }

    pub fn search_config(&self, budget: usize) -> SearchConfig {
        let default_k = (self.env.id() == EnvId::LightsOut).then_some(10);
        let top_k = match self.eval.top_k {
            Some(0) => None,
            Some(k) => Some(k),
            None => default_k,
        };
        SearchConfig { max_nodes: budget, top_k, allow_revisits: self.eval.allow_revisits, record_trace: false }
    }

    pub fn difficulty(&self) -> usize {
        self.eval.difficulty.unwrap_or(match self.env.id() {
            EnvId::RubiksCube => 10,
            EnvId::FifteenPuzzle => 40,
            EnvId::LightsOut => 10,
            EnvId::DigitJumper | EnvId::Sokoban => 1,
        })
    }

    pub fn out_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        flag.map(Path::to_path_buf).or_else(|| self.out.clone()).ok_or_else(|| Error::Config("no output directory (--out or \"out\")".into()))
    }
}

/// Append-only `step,loss,accuracy,wall_ms` CSV, opened with a
/// `# config_hash=` comment line when created.
pub struct TrainLog {
    out: BufWriter<File>,
    path: PathBuf,
}

impl TrainLog {
    /// Opens for appending. With `resume_step`, rows logged after that step
    /// by an interrupted run are dropped first.
    pub fn open(path: &Path, config_hash: &str, resume_step: Option<u64>) -> Result<Self> {
        if let (Some(step), true) = (resume_step, path.exists()) {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let kept: String =
                text.lines().filter(|l| l.split(',').next().and_then(|f| f.parse::<u64>().ok()).is_none_or(|s| s <= step)).map(|l| format!("{l}\n")).collect();
            std::fs::write(path, kept).map_err(|e| Error::io(path, e))?;
        }
        let fresh = !path.exists();
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
        let mut log = Self { out: BufWriter::new(file), path: path.to_path_buf() };
        if fresh {
            log.line(&format!("# config_hash={config_hash}\nstep,loss,accuracy,wall_ms"))?;
        }
        Ok(log)
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.out, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn record(&mut self, step: u64, stats: &StepStats, wall_ms: f64) -> Result<()> {
        self.line(&format!("{step},{},{},{wall_ms:.1}", stats.loss, stats.accuracy))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerateSummary {
    pub path: PathBuf,
    pub count: usize,
    pub mean_len: f64,
    pub max_len: usize,
}

/// The training dataset for `cfg`, regenerated from the data stream.
pub fn build_dataset(cfg: &ExperimentConfig, env: &Env) -> Result<TrajectoryDataset> {
    let mut rng = derive(cfg.seed, Stream::Data, 0);
    generate_trajectories(env, &cfg.env, cfg.data_count(), &cfg.recipe(), &mut rng)
}

pub fn cmd_generate(cfg: &ExperimentConfig, out: &Path) -> Result<GenerateSummary> {
    let env = cfg.env.build()?;
    ensure_dir(out)?;
    let ds = build_dataset(cfg, &env)?;
    let path = out.join(DATASET_FILE);
    write_dataset(&path, &ds, &cfg.hash())?;
    Ok(GenerateSummary { path, count: ds.len(), mean_len: ds.mean_len(), max_len: ds.max_len })
}

/// Training data: `data.path` if set, else a matching `generate` output in
/// `out`, else the dataset regenerated from the seed.
fn training_data(cfg: &ExperimentConfig, env: &Env, out: &Path) -> Result<(DataSource, usize)> {
    let ds = match &cfg.data.path {
        Some(p) => {
            let (_, ds) = read_dataset(p)?;
            if ds.env != cfg.env {
                return Err(Error::Config(format!("{} holds {:?} data", p.display(), ds.env)));
            }
            ds
        }
        None => {
            let local = out.join(DATASET_FILE);
            match local.exists().then(|| read_dataset(&local)).transpose()? {
                Some((_, ds)) if ds.env == cfg.env && ds.len() == cfg.data_count() => ds,
                Some(_) => {
                    log::warn!("{} does not match the config; regenerating", local.display());
                    build_dataset(cfg, env)?
                }
                None => build_dataset(cfg, env)?,
            }
        }
    };
    // `max_len` also sizes the supervised classifier
    let max_len = ds.max_len;
    if cfg.data.unlimited {
        Ok((DataSource::Unlimited(cfg.recipe()), max_len))
    } else {
        Ok((DataSource::Fixed(ds), max_len))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub steps: u64,
    pub last: Option<StepStats>,
}

/// Runs the configured trainer to `steps` total, resuming from `resume` if
/// given. The checkpoint is rewritten every `checkpoint_every` steps and at
/// the end; a failed step leaves the last good checkpoint in place.
pub fn cmd_train(cfg: &ExperimentConfig, out: &Path, resume: Option<&Path>) -> Result<TrainSummary> {
    if !cfg.model.is_trainable() {
        return Err(Error::Config(format!("model {} has no trainable parameters", cfg.model.name())));
    }
    let env = cfg.env.build()?;
    ensure_dir(out)?;
    flush_subnormals();
    let hash = cfg.hash();
    let tc = cfg.train_config(&env)?;
    tc.validate()?;
    let (data, max_len) = training_data(cfg, &env, out)?;
    let kind = cfg.model.kind().expect("trainable model has a kind");
    let sup = SupervisedConfig { lr: tc.lr, sampler: tc.sampler, bins: BinConfig::for_max_len(max_len.max(2))?, steps: tc.steps, seed: tc.seed };
    let arch = match kind {
        ModelKind::Contrastive => cfg.arch(env.input_dim()),
        ModelKind::Supervised => {
            let a = cfg.arch(env.input_dim());
            classifier_arch(env.input_dim(), a.hidden_dim, a.depth, &sup.bins)
        }
    };
    let (mut params, mut adam, start) = match resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            check_header(&ck.header, cfg, kind)?;
            if ck.params.arch != arch {
                return Err(Error::Config(format!("checkpoint arch {:?} differs from config {:?}", ck.params.arch, arch)));
            }
            let adam = ck.adam.unwrap_or_else(|| AdamState::new(&ck.params));
            (ck.params, adam, ck.header.step)
        }
        None => {
            let seed = derive(cfg.seed, Stream::Init, 0).next_u64();
            let params = init_params(arch, seed)?;
            let adam = AdamState::new(&params);
            (params, adam, 0)
        }
    };
    let header = |step: u64| CheckpointHeader {
        model: kind,
        arch,
        metric: (kind == ModelKind::Contrastive).then_some(tc.metric),
        env: cfg.env.clone(),
        step,
        config_hash: hash.clone(),
        adam_step: None,
    };
    let path = out.join(CHECKPOINT_FILE);
    let save =
        |params: &EncoderParams, adam: &AdamState, step: u64| Checkpoint { header: header(step), params: params.clone(), adam: Some(adam.clone()) }.save(&path);
    let mut log = TrainLog::open(&out.join(TRAIN_LOG_FILE), &hash, resume.map(|_| start))?;
    let every = cfg.train.checkpoint_every.unwrap_or(1000);
    let clock = Instant::now();
    let mut last = None;
    let mut step = start;
    while step < tc.steps {
        // one stream per step, so a resumed run replays the same batches
        let mut rng = derive(cfg.seed, Stream::Sampler, step);
        let res = match kind {
            ModelKind::Contrastive => contrastive::train_step(&mut params, &mut adam, &env, &data, &tc, step, &mut rng),
            ModelKind::Supervised => supervised::supervised_train_step(&mut params, &mut adam, &env, &data, &sup, step, &mut rng),
        };
        let stats = match res {
            Ok(s) => s,
            Err(e) => {
                log.flush()?;
                return Err(e);
            }
        };
        step += 1;
        log.record(step, &stats, clock.elapsed().as_secs_f64() * 1e3)?;
        last = Some(stats);
        if step % every == 0 && step < tc.steps {
            log.flush()?;
            save(&params, &adam, step)?;
        }
    }
    log.flush()?;
    save(&params, &adam, step)?;
    Ok(TrainSummary { checkpoint: path, steps: step, last })
}

fn check_header(h: &CheckpointHeader, cfg: &ExperimentConfig, kind: ModelKind) -> Result<()> {
    if h.env != cfg.env {
        return Err(Error::Config(format!("checkpoint is for {:?}, config says {:?}", h.env, cfg.env)));
    }
    if h.model != kind {
        return Err(Error::Config(format!("checkpoint holds a {:?} model, config wants {:?}", h.model, kind)));
    }
    Ok(())
}

/// The evaluation instance set for `cfg`.
pub fn eval_instances(cfg: &ExperimentConfig, env: &Env) -> Vec<Instance> {
    let mut rng = derive(cfg.seed, Stream::EvalInstances, 0);
    let d = cfg.difficulty();
    (0..cfg.eval.instances.unwrap_or(100)).map(|_| env.generate_instance(&mut rng, d)).collect()
}

/// Held-out trajectories for the correlation metric, from their own stream.
pub fn held_out(cfg: &ExperimentConfig, env: &Env, count: usize) -> Result<TrajectoryDataset> {
    let mut rng = derive(cfg.seed, Stream::HeldOut, 0);
    generate_trajectories(env, &cfg.env, count, &cfg.recipe(), &mut rng)
}

/// A loaded scorer plus, for contrastive models, the parameters needed for
/// the in-batch accuracy metric.
pub struct LoadedScorer {
    pub scorer: Box<dyn Scorer>,
    pub critic: Option<(EncoderParams, SimilarityMetric)>,
}

pub fn load_scorer(cfg: &ExperimentConfig, env: &Env, checkpoint: Option<&Path>) -> Result<LoadedScorer> {
    let need = |kind| -> Result<Checkpoint> {
        let p = checkpoint.ok_or_else(|| Error::Config(format!("model {} needs --checkpoint", cfg.model.name())))?;
        let ck = Checkpoint::load(p)?;
        check_header(&ck.header, cfg, kind)?;
        Ok(ck)
    };
    Ok(match cfg.model {
        Model::Crtr | Model::Crl => {
            let ck = need(ModelKind::Contrastive)?;
            let metric = ck.header.metric.unwrap_or_else(|| SimilarityMetric::default_for(env.id()));
            LoadedScorer { scorer: Box::new(CriticScorer { env: env.clone(), params: ck.params.clone(), metric }), critic: Some((ck.params, metric)) }
        }
        Model::Supervised => {
            let ck = need(ModelKind::Supervised)?;
            LoadedScorer { scorer: Box::new(SupervisedScorer { env: env.clone(), params: ck.params }), critic: None }
        }
        Model::Random => LoadedScorer { scorer: Box::new(RandomScorer { seed: derive(cfg.seed, Stream::Scorer, 0).next_u64() }), critic: None },
        Model::Oracle => LoadedScorer {
            scorer: Box::new(OracleScorer::new(env.clone(), cfg.eval.oracle_radius.unwrap_or(6), cfg.eval.oracle_capacity.unwrap_or(5_000_000))),
            critic: None,
        },
        Model::Hamming => LoadedScorer { scorer: Box::new(HammingScorer), critic: None },
    })
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs the planner on every instance under `search`, in parallel, keeping
/// instance order.
pub fn run_instances(
    env: &Env,
    scorer: &dyn Scorer,
    planner: Planner,
    alpha: f32,
    instances: &[Instance],
    search: &SearchConfig,
    threads: Option<usize>,
) -> Result<Vec<SearchResult>> {
    pool(threads)?.install(|| {
        instances
            .par_iter()
            .map(|inst| {
                flush_subnormals();
                solve(env, scorer, planner, alpha, inst, search)
            })
            .collect()
    })
}

/// Evaluates the configured model: planner success per budget, solution
/// lengths, trajectory correlation and (contrastive models) in-batch accuracy.
pub fn cmd_evaluate(cfg: &ExperimentConfig, out: &Path, checkpoint: Option<&Path>, threads: Option<usize>) -> Result<MetricsReport> {
    let env = cfg.env.build()?;
    ensure_dir(out)?;
    flush_subnormals();
    let hash = cfg.hash();
    let loaded = load_scorer(cfg, &env, checkpoint)?;
    let instances = eval_instances(cfg, &env);
    let planner = cfg.planner();
    let alpha = cfg.eval.alpha.unwrap_or(0.0);
    let mut runs = Vec::new();
    for b in cfg.budgets() {
        let results = run_instances(&env, loaded.scorer.as_ref(), planner, alpha, &instances, &cfg.search_config(b), threads)?;
        write_results_csv(&out.join(format!("results_b{b}.csv")), &hash, &results)?;
        runs.push((b, results));
    }
    runs.sort_by_key(|r| r.0);
    let curve = success_curve(&runs)?;
    let (_, widest) = runs.last().expect("at least one budget");
    let held = held_out(cfg, &env, cfg.eval.correlation_trajectories.unwrap_or(100))?;
    let spearman_mean = match trajectory_correlation(loaded.scorer.as_ref(), &held.trajectories) {
        Ok(r) => Some(r),
        Err(Error::UndefinedCorrelation(why)) => {
            log::warn!("correlation undefined: {why}");
            None
        }
        Err(e) => return Err(e),
    };
    let in_batch_accuracy = match &loaded.critic {
        Some((params, metric)) => {
            // one fresh trajectory per draw: repeated draws of the same
            // trajectory would cap accuracy for reasons unrelated to the model
            let tc = cfg.train_config(&env)?;
            let draws = tc.sampler.draws();
            let mut rng = derive(cfg.seed, Stream::HeldOut, 1);
            let fresh = generate_trajectories(&env, &cfg.env, draws, &cfg.recipe(), &mut rng)?;
            let ids: Vec<usize> = (0..draws).collect();
            let batch = sample_pairs(&env, &fresh.trajectories, &ids, &tc.sampler, &mut rng)?;
            let s = score_matrix(params, &batch.anchors, &batch.positives, *metric, tc.temperature)?;
            Some(in_batch_accuracy(&s) as f64)
        }
        None => None,
    };
    let report = MetricsReport {
        env: env.id(),
        model: cfg.model.name().to_string(),
        planner: format!("{planner:?}").to_lowercase(),
        alpha,
        seed: cfg.seed,
        config_hash: hash,
        n_instances: instances.len(),
        difficulty: cfg.difficulty(),
        spearman_mean,
        in_batch_accuracy,
        success_curve: curve,
        length_cdf: length_cdf(widest),
        budgets: runs.iter().map(|(b, r)| BudgetSummary::from_results(*b, r)).collect(),
    };
    report.write(out, REPORT_STEM)?;
    Ok(report)
}

/// One cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub repetition_factor: Option<usize>,
    pub alpha: Option<f32>,
    pub metric: Option<SimilarityMetric>,
    pub variant: Option<LossVariant>,
    pub seed: u64,
    pub dir: String,
    pub status: String,
    #[serde(skip)]
    pub report: Option<MetricsReport>,
}

fn axis<T: Copy>(values: &[T]) -> Vec<Option<T>> {
    if values.is_empty() {
        vec![None]
    } else {
        values.iter().copied().map(Some).collect()
    }
}

impl SweepCell {
    fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut c = base.clone();
        c.sweep = SweepSection::default();
        c.seeds.clear();
        c.seed = self.seed;
        if let Some(r) = self.repetition_factor {
            c.train.repetition_factor = Some(r);
            if c.model == Model::Crl && r != 1 {
                c.model = Model::Crtr;
            }
            if c.model == Model::Crtr && r == 1 {
                c.model = Model::Crl;
            }
        }
        if let Some(a) = self.alpha {
            c.eval.alpha = Some(a);
        }
        if let Some(m) = self.metric {
            c.train.metric = Some(m);
        }
        if let Some(v) = self.variant {
            c.train.variant = Some(v);
        }
        c
    }

    fn group_key(&self) -> String {
        format!(
            "{},{},{},{}",
            self.repetition_factor.map_or(String::new(), |v| v.to_string()),
            self.alpha.map_or(String::new(), |v| v.to_string()),
            self.metric.map_or(String::new(), |v| format!("{v:?}").to_lowercase()),
            self.variant.map_or(String::new(), |v| format!("{v:?}").to_lowercase()),
        )
    }
}

/// Cartesian product of the sweep axes. Cells that differ only in `alpha`
/// share one trained model. Failed cells are recorded and skipped.
pub fn cmd_sweep(cfg: &ExperimentConfig, out: &Path, threads: Option<usize>) -> Result<Vec<SweepCell>> {
    ensure_dir(out)?;
    let seeds = if cfg.seeds.is_empty() { vec![cfg.seed] } else { cfg.seeds.clone() };
    let mut cells = Vec::new();
    for &r in &axis(&cfg.sweep.repetition_factor) {
        for &m in &axis(&cfg.sweep.metric) {
            for &v in &axis(&cfg.sweep.variant) {
                for &seed in &seeds {
                    for &a in &axis(&cfg.sweep.alpha) {
                        cells.push(SweepCell {
                            repetition_factor: r,
                            alpha: a,
                            metric: m,
                            variant: v,
                            seed,
                            dir: format!("cell_{:03}", cells.len()),
                            status: String::new(),
                            report: None,
                        });
                    }
                }
            }
        }
    }
    let mut trained: Vec<(String, PathBuf)> = Vec::new();
    for cell in &mut cells {
        let c = cell.apply(cfg);
        let dir = out.join(&cell.dir);
        let outcome = (|| -> Result<MetricsReport> {
            ensure_dir(&dir)?;
            write_file(&dir.join("config.json"), &serde_json::to_string_pretty(&c)?)?;
            let ck = if c.model.is_trainable() {
                let mut key_cfg = c.clone();
                key_cfg.eval = EvalSection::default();
                let key = key_cfg.hash();
                match trained.iter().find(|t| t.0 == key) {
                    Some((_, p)) => Some(p.clone()),
                    None => {
                        let s = cmd_train(&c, &dir, None)?;
                        trained.push((key, s.checkpoint.clone()));
                        Some(s.checkpoint)
                    }
                }
            } else {
                None
            };
            cmd_evaluate(&c, &dir, ck.as_deref(), threads)
        })();
        match outcome {
            Ok(rep) => {
                cell.status = "ok".into();
                cell.report = Some(rep);
            }
            Err(e) => {
                log::error!("sweep cell {} failed: {e}", cell.dir);
                cell.status = format!("failed: {e}");
            }
        }
    }
    write_sweep_summary(cfg, out, &cells)?;
    Ok(cells)
}

fn fmt_opt(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        String::new()
    }
}

fn write_sweep_summary(cfg: &ExperimentConfig, out: &Path, cells: &[SweepCell]) -> Result<()> {
    write_file(&out.join("sweep.json"), &(serde_json::to_string_pretty(cells)? + "\n"))?;
    let mut csv = format!(
        "# config_hash={}\nrepetition_factor,alpha,metric,variant,budget,n_seeds,n_failed,success_mean,success_se,length_mean,length_se,spearman_mean,spearman_se,accuracy_mean,accuracy_se\n",
        cfg.hash()
    );
    let mut keys: Vec<String> = Vec::new();
    for k in cells.iter().map(SweepCell::group_key) {
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    for key in keys {
        let group: Vec<&SweepCell> = cells.iter().filter(|c| c.group_key() == key).collect();
        let reports: Vec<&MetricsReport> = group.iter().filter_map(|c| c.report.as_ref()).collect();
        let failed = group.len() - reports.len();
        let spearman: Vec<f64> = reports.iter().filter_map(|r| r.spearman_mean).collect();
        let accuracy: Vec<f64> = reports.iter().filter_map(|r| r.in_batch_accuracy).collect();
        let (sm, sse) = mean_stderr(&spearman);
        let (am, ase) = mean_stderr(&accuracy);
        for b in cfg.budgets() {
            let at: Vec<&BudgetSummary> = reports.iter().filter_map(|r| r.budgets.iter().find(|s| s.budget == b)).collect();
            let succ: Vec<f64> = at.iter().map(|s| s.success_rate).collect();
            let len: Vec<f64> = at.iter().filter_map(|s| s.mean_length).collect();
            let (pm, pse) = mean_stderr(&succ);
            let (lm, lse) = mean_stderr(&len);
            csv.push_str(&format!(
                "{key},{b},{},{failed},{},{},{},{},{},{},{},{}\n",
                reports.len(),
                fmt_opt(pm),
                fmt_opt(pse),
                fmt_opt(lm),
                fmt_opt(lse),
                fmt_opt(sm),
                fmt_opt(sse),
                fmt_opt(am),
                fmt_opt(ase)
            ));
        }
    }
    write_file(&out.join("sweep.csv"), &csv)
}

/// Collects every `report.json` under `dir` (recursively) into
/// `dir/summary.csv`, one row per report and budget.
pub fn cmd_report(dir: &Path) -> Result<Vec<(PathBuf, MetricsReport)>> {
    let mut found = Vec::new();
    collect_reports(dir, &mut found)?;
    found.sort_by(|a, b| a.0.cmp(&b.0));
    if found.is_empty() {
        return Err(Error::Config(format!("no {REPORT_STEM}.json under {}", dir.display())));
    }
    let mut csv =
        String::from("report,env,model,planner,alpha,seed,config_hash,budget,success_rate,mean_length,mean_nodes_created,spearman_mean,in_batch_accuracy\n");
    for (path, r) in &found {
        let rel = path.strip_prefix(dir).unwrap_or(path).display().to_string();
        for b in &r.budgets {
            csv.push_str(&format!(
                "{rel},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.env.name(),
                r.model,
                r.planner,
                r.alpha,
                r.seed,
                r.config_hash,
                b.budget,
                b.success_rate,
                b.mean_length.map_or(String::new(), |x| x.to_string()),
                b.mean_nodes_created,
                r.spearman_mean.map_or(String::new(), |x| x.to_string()),
                r.in_batch_accuracy.map_or(String::new(), |x| x.to_string()),
            ));
        }
    }
    write_file(&dir.join("summary.csv"), &csv)?;
    Ok(found)
}

fn collect_reports(dir: &Path, found: &mut Vec<(PathBuf, MetricsReport)>) -> Result<()> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_reports(&path, found)?;
        } else if path.file_name().is_some_and(|n| n == format!("{REPORT_STEM}.json").as_str()) {
            found.push((path.clone(), MetricsReport::read(&path)?));
        }
    }
    Ok(())
}
