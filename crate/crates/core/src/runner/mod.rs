//! Experiment runner behind the `filver` binary: layered configuration,
//! presets, per-round reports, run manifests, checkpoint/resume and
//! comparison of finished runs.
//!
//! A run directory holds `rounds.csv`, `summary.json`, `manifest.json` and a
//! `checkpoint/` directory. Runs with several arms or seeds put one such
//! directory per `(arm, seed)` under `<output>/<arm>/seed-<seed>/` and write a
//! combined `summary.json` at the top.

pub mod compare;
pub mod config;
pub mod presets;
pub mod report;

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::datasets::{
    build_permuted_tasks, build_split_tasks, load_idx_with, make_synthetic_blobs, make_synthetic_glyphs, BaseData,
    IdxOptions, TaskSequence,
};
use crate::error::{Error, Result};
use crate::federation::{offline_joint_training, pretrain_for, OfflineConfig, OfflineOutcome, SimSetup, Simulation};
use crate::models::Encoder;
use crate::numcore::rng::purpose;
use crate::numcore::RngStream;
use crate::scenarios::make_schedule;

use config::{data_path, ConfigErrors, ExperimentConfig, Layer, Origin, ResolvedConfig};
use report::{rounds_csv, sha256_hex, write_file, write_json, CombinedSummary, RunSummary};

/// Version string recorded in manifests.
pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{0}")]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl RunError {
    /// 2 for configuration problems, 3 for failures during the run.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) => 2,
            RunError::Runtime(_) => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Worker threads for client training; results do not depend on it.
    pub threads: usize,
    /// Stop (with a checkpoint) once this many rounds have run in total.
    pub stop_after: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub runs: Vec<(PathBuf, RunSummary)>,
}

/// Builds the task sequence a config describes for `seed`.
pub fn load_tasks(cfg: &ExperimentConfig, seed: u64) -> Result<TaskSequence> {
    let d = &cfg.data;
    let mut split_rng = RngStream::derive(seed, &[purpose::VAL_SPLIT]);
    let base = if d.source == "idx" {
        let opts = IdxOptions { transposed: d.transposed };
        let train = load_idx_with(&data_path(&d.train_images), &data_path(&d.train_labels), opts)?;
        if d.test_images.is_empty() {
            BaseData::holdout(&train, d.val_fraction, &mut split_rng)?
        } else {
            let test = load_idx_with(&data_path(&d.test_images), &data_path(&d.test_labels), opts)?;
            BaseData::with_test(train, test)?
        }
    } else {
        let s = &d.synthetic;
        let mut rng = RngStream::derive(seed, &[purpose::DATA]);
        let full = if s.kind == "blobs" {
            make_synthetic_blobs(s.classes, s.dim, s.per_class, s.noise, &mut rng)?
        } else {
            make_synthetic_glyphs(s.classes, s.side, s.per_class, s.noise, &mut rng)?
        };
        BaseData::holdout(&full, d.val_fraction, &mut split_rng)?
    };
    let p = &cfg.protocol;
    if p.kind == "permuted" {
        build_permuted_tasks(&base, p.tasks, &RngStream::derive(seed, &[purpose::PERMUTATION]))
    } else {
        build_split_tasks(&base, p.tasks, p.classes_per_task)
    }
}

/// Simulation setup of a single-arm config.
pub fn build_setup(cfg: &ExperimentConfig, tasks: TaskSequence) -> Result<SimSetup> {
    let arm = &cfg.arms()[0];
    let input = tasks.tasks()[0].train.shape();
    let classes = tasks.classes();
    let fl = cfg.fl_config(arm.sst);
    let mut rng = RngStream::derive(cfg.seed, &[purpose::SCHEDULE]);
    let schedule = make_schedule(cfg.scenario_kind(), fl.n_clients, tasks.len(), &mut rng)?;
    let setup = SimSetup {
        tasks,
        encoder: cfg.encoder_spec(arm.strategy.kind, input),
        classifier: cfg.classifier_spec(classes),
        pretrain: cfg.pretrain_config(),
        strategy: arm.strategy,
        fl,
        schedule: Some(schedule),
        seed: cfg.seed,
    };
    setup.validate()?;
    Ok(setup)
}

fn data_checksum(tasks: &TaskSequence) -> String {
    let mut h = Sha256::new();
    for t in tasks.tasks() {
        for set in [&t.train, &t.val] {
            for v in set.images().data() {
                h.update(v.to_le_bytes());
            }
            for &y in set.labels() {
                h.update((y as u64).to_le_bytes());
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Serialize)]
struct ManifestEntry {
    value: serde_json::Value,
    origin: Origin,
}

#[derive(Serialize)]
struct Manifest {
    version: &'static str,
    seed: u64,
    started_unix: u64,
    wall_clock_secs: f64,
    checksums: BTreeMap<String, String>,
    config: BTreeMap<String, ManifestEntry>,
}

fn write_manifest(dir: &Path, resolved: &ResolvedConfig, started: (u64, Instant), checksums: BTreeMap<String, String>) -> Result<()> {
    let config = resolved
        .entries()
        .into_iter()
        .map(|(k, v, origin)| {
            let value = serde_json::to_value(&v).map_err(|e| Error::Report(e.to_string()))?;
            Ok((k, ManifestEntry { value, origin }))
        })
        .collect::<Result<_>>()?;
    write_json(
        &dir.join("manifest.json"),
        &Manifest {
            version: VERSION,
            seed: resolved.config.seed,
            started_unix: started.0,
            wall_clock_secs: started.1.elapsed().as_secs_f64(),
            checksums,
            config,
        },
    )
}

fn now() -> (u64, Instant) {
    let unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    (unix, Instant::now())
}

/// Encoders and offline references shared by the arms of one seed.
#[derive(Default)]
struct SeedCache {
    encoders: HashMap<String, Encoder>,
    offline: HashMap<String, OfflineOutcome>,
}

fn encoder_key(setup: &SimSetup) -> String {
    serde_json::json!([setup.encoder, setup.pretrain]).to_string()
}

impl SeedCache {
    fn encoder(&mut self, setup: &SimSetup) -> Result<Encoder> {
        let key = encoder_key(setup);
        if let Some(e) = self.encoders.get(&key) {
            return Ok(e.clone());
        }
        log::info!("pretraining {:?} encoder", setup.encoder.kind);
        let e = pretrain_for(setup)?;
        self.encoders.insert(key, e.clone());
        Ok(e)
    }

    fn offline(&mut self, setup: &SimSetup, encoder: &Encoder, cfg: &ExperimentConfig) -> Result<OfflineOutcome> {
        let key = encoder_key(setup);
        if let Some(o) = self.offline.get(&key) {
            return Ok(o.clone());
        }
        let oc = OfflineConfig {
            epochs: cfg.offline.epochs,
            lr: cfg.offline.lr,
            batch_size: cfg.fl.batch_size,
        };
        let mut rng = RngStream::derive(setup.seed, &[purpose::OFFLINE]);
        let o = offline_joint_training(&setup.tasks, encoder, setup.classifier, &oc, &mut rng)?;
        self.offline.insert(key, o.clone());
        Ok(o)
    }
}

fn run_leaf(
    leaf: &ResolvedConfig,
    tasks: TaskSequence,
    dir: &Path,
    cache: &mut SeedCache,
    opts: &RunOptions,
    resume: bool,
) -> Result<RunSummary> {
    let started = now();
    let cfg = &leaf.config;
    let arm = cfg.arms().remove(0);
    let data_sum = data_checksum(&tasks);
    let n_tasks = tasks.len();
    let setup = build_setup(cfg, tasks)?;
    let ckpt = dir.join("checkpoint");
    let mut sim = if resume {
        Simulation::resume(setup.clone(), &ckpt)?
    } else {
        let enc = cache.encoder(&setup)?;
        Simulation::with_encoder(setup.clone(), enc)?
    };
    sim.set_threads(opts.threads)?;
    let offline = if cfg.offline.enabled {
        Some(cache.offline(&setup, sim.encoder(), cfg)?)
    } else {
        None
    };
    drop(setup);

    let total = sim.setup().total_rounds();
    let stop = opts.stop_after.unwrap_or(total).min(total);
    let every = cfg.run.checkpoint_every;
    let rpt = cfg.fl.rounds_per_task;
    while sim.next_round() < stop {
        let r = sim.step_round()?;
        if (r.round + 1) % rpt == 0 {
            log::info!(
                "{} seed {} task {} done: accuracy {:?}",
                arm.name,
                cfg.seed,
                r.task + 1,
                r.accuracy.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>()
            );
        }
        if every > 0 && sim.next_round() % every == 0 {
            sim.checkpoint(&ckpt)?;
        }
    }
    sim.checkpoint(&ckpt)?;

    let csv = rounds_csv(sim.reports(), n_tasks);
    write_file(&dir.join("rounds.csv"), csv.as_bytes())?;
    let final_accuracy = sim.reports().last().map(|r| r.accuracy.clone()).unwrap_or_default();
    let average = if final_accuracy.is_empty() {
        0.0
    } else {
        final_accuracy.iter().sum::<f64>() / final_accuracy.len() as f64
    };
    let summary = RunSummary {
        arm: arm.name.clone(),
        strategy: arm.strategy.kind.to_string(),
        memory: arm.strategy.memory.to_string(),
        sst: arm.sst,
        scenario: cfg.scenario_kind().to_string(),
        seed: cfg.seed,
        rounds: sim.next_round(),
        complete: sim.is_finished(),
        final_accuracy,
        average,
        offline,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    let checksums = BTreeMap::from([
        ("data".to_string(), data_sum),
        ("encoder".to_string(), sim.encoder().checksum()),
        ("classifier".to_string(), sim.classifier_params().checksum()),
        ("rounds_csv".to_string(), sha256_hex(csv.as_bytes())),
    ]);
    write_manifest(dir, leaf, started, checksums)?;
    Ok(summary)
}

/// Runs every `(arm, seed)` of `resolved`, writing reports under its output directory.
pub fn run(resolved: &ResolvedConfig, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let started = now();
    let cfg = &resolved.config;
    let out = PathBuf::from(&cfg.output);
    let arms = cfg.arms();
    let seeds = cfg.seed_list();
    let multi = arms.len() > 1 || seeds.len() > 1;
    let mut runs = Vec::new();
    for &seed in &seeds {
        let tasks = load_tasks(cfg, seed)?;
        let mut cache = SeedCache::default();
        for arm in &arms {
            let leaf = resolved.leaf(arm, seed);
            let dir = if multi {
                out.join(&arm.name).join(format!("seed-{seed}"))
            } else {
                out.clone()
            };
            let summary = run_leaf(&leaf, tasks.clone(), &dir, &mut cache, opts, false)?;
            runs.push((dir, summary));
        }
    }
    if multi {
        let rel = |d: &Path| d.strip_prefix(&out).unwrap_or(d).display().to_string();
        let combined = CombinedSummary::from_runs(runs.iter().map(|(d, s)| (rel(d), s.clone())).collect());
        write_json(&out.join("summary.json"), &combined)?;
        let mut checksums = BTreeMap::new();
        for (d, _) in &runs {
            let csv = std::fs::read(d.join("rounds.csv")).map_err(|e| Error::io(d.join("rounds.csv"), e))?;
            checksums.insert(format!("{}/rounds_csv", rel(d)), sha256_hex(&csv));
        }
        write_manifest(&out, resolved, started, checksums)?;
    }
    Ok(RunOutcome { out_dir: out, runs })
}

/// Continues the run stored in `dir` from its checkpoint, rewriting its reports.
pub fn resume(dir: &Path, opts: &RunOptions) -> Result<RunOutcome, RunError> {
    let manifest = dir.join("manifest.json");
    if !manifest.is_file() {
        return Err(ConfigErrors::single("", format!("{}: no manifest.json to resume from", dir.display())).into());
    }
    let resolved = config::resolve(&[Layer::from_file(&manifest)?])?;
    let cfg = &resolved.config;
    if cfg.arms.len() > 1 || cfg.seed_list().len() > 1 {
        return Err(ConfigErrors::single(
            "",
            format!("{} holds several runs; resume one of its <arm>/seed-<n> directories", dir.display()),
        )
        .into());
    }
    if !dir.join("checkpoint").join("state.bin").is_file() {
        return Err(ConfigErrors::single("", format!("{}: no checkpoint to resume from", dir.display())).into());
    }
    let tasks = load_tasks(cfg, cfg.seed)?;
    let summary = run_leaf(&resolved, tasks, dir, &mut SeedCache::default(), opts, true)?;
    Ok(RunOutcome {
        out_dir: dir.to_path_buf(),
        runs: vec![(dir.to_path_buf(), summary)],
    })
}
