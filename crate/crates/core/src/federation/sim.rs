use std::path::Path;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::aggregate::fedavg_aggregate;
use super::client::{local_train, ClientState, EncodedShard, LocalUpdate, RoundContext};
use super::config::FLConfig;
use super::server::{server_side_training, SstConfig};
use crate::codec::{Reader, Writer};
use crate::datasets::{partition_clients, ClientPartition, LabeledSet, ReleaseMode, TaskSequence};
use crate::error::{contract, Error, Result};
use crate::models::{
    pretrain_encoder, Classifier, ClassifierSpec, Encoder, EncoderSpec, ModelCheckpoint, PretrainConfig,
};
use crate::numcore::rng::purpose;
use crate::numcore::{Matrix, ParamVector, RngStream};
use crate::rehearsal::{memory_budget, payload_bytes, RehearsalBuffer, RehearsalRecord, StrategyConfig};
use crate::scenarios::{Enrollment, EnrollmentSchedule};

const STATE_MAGIC: &[u8; 4] = b"FVSS";
const STATE_VERSION: u32 = 1;

/// Everything needed to build a simulation.
#[derive(Clone, Debug)]
pub struct SimSetup {
    pub tasks: TaskSequence,
    pub encoder: EncoderSpec,
    pub classifier: ClassifierSpec,
    pub pretrain: PretrainConfig,
    pub strategy: StrategyConfig,
    pub fl: FLConfig,
    /// `None` keeps every client active for every task.
    pub schedule: Option<EnrollmentSchedule>,
    pub seed: u64,
}

impl SimSetup {
    pub fn validate(&self) -> Result<()> {
        self.fl.validate()?;
        self.strategy.validate()?;
        self.encoder.validate()?;
        self.classifier.validate()?;
        self.pretrain.loss.validate()?;
        contract!(
            (0.0..1.0).contains(&self.pretrain.heldout),
            "held-out pretraining fraction {} must lie in [0, 1)",
            self.pretrain.heldout
        );
        contract!(
            self.strategy.kind.accepts_encoder(self.encoder.kind),
            "strategy {} cannot run on a {:?} encoder",
            self.strategy.kind,
            self.encoder.kind
        );
        contract!(
            self.classifier.input_dim == self.encoder.embed_dim,
            "classifier input {} differs from embedding dimension {}",
            self.classifier.input_dim,
            self.encoder.embed_dim
        );
        contract!(
            self.classifier.classes == self.tasks.classes(),
            "classifier has {} classes, tasks have {}",
            self.classifier.classes,
            self.tasks.classes()
        );
        contract!(
            self.tasks.tasks()[0].train.shape() == self.encoder.input,
            "task images are {:?}, encoder expects {:?}",
            self.tasks.tasks()[0].train.shape(),
            self.encoder.input
        );
        if let Some(s) = &self.schedule {
            contract!(
                s.n_clients() == self.fl.n_clients && s.n_tasks() == self.tasks.len(),
                "schedule is {}x{}, run has {} clients and {} tasks",
                s.n_clients(),
                s.n_tasks(),
                self.fl.n_clients,
                self.tasks.len()
            );
        }
        Ok(())
    }

    pub fn total_rounds(&self) -> usize {
        self.tasks.len() * self.fl.rounds_per_task
    }

    /// Hash of every setting that influences the run, used to refuse resuming
    /// a checkpoint under a different configuration.
    pub fn fingerprint(&self) -> String {
        let desc = serde_json::json!({
            "encoder": self.encoder,
            "classifier": self.classifier,
            "pretrain": self.pretrain,
            "strategy": self.strategy,
            "fl": self.fl,
            "schedule": self.schedule,
            "seed": self.seed,
            "tasks": self.tasks.len(),
            "train_sizes": self.tasks.tasks().iter().map(|t| t.train.len()).collect::<Vec<_>>(),
        });
        let mut h = Sha256::new();
        h.update(desc.to_string().as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// `(client part, encoder part)` of the first task's training set when a
/// held-out fraction is configured.
fn heldout_split(setup: &SimSetup) -> Result<Option<(LabeledSet, LabeledSet)>> {
    if setup.pretrain.heldout == 0.0 {
        return Ok(None);
    }
    let mut rng = RngStream::derive(setup.seed, &[purpose::PRETRAIN, 1]);
    setup.tasks.tasks()[0].train.holdout(setup.pretrain.heldout, &mut rng).map(Some)
}

/// Trains (or, for random projection, just initialises) the frozen encoder on
/// task 0, or on the held-out part of it.
pub fn pretrain_for(setup: &SimSetup) -> Result<Encoder> {
    let mut rng = RngStream::derive(setup.seed, &[purpose::PRETRAIN]);
    let split = heldout_split(setup)?;
    let data = match &split {
        Some((_, reserved)) => reserved,
        None => &setup.tasks.tasks()[0].train,
    };
    let out = pretrain_encoder(data, setup.encoder, setup.classifier, &setup.pretrain, &mut rng)?;
    Ok(out.encoder)
}

/// One row of the experiment output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub task: usize,
    /// Validation accuracy on every task, seen or not.
    pub accuracy: Vec<f64>,
    /// Validation cross-entropy on every task.
    pub loss: Vec<f64>,
    /// Mean validation cross-entropy over the tasks seen so far.
    pub mean_loss: f64,
    /// Clients that trained this round, ascending.
    pub clients: Vec<usize>,
    pub server_buffer: usize,
    pub client_buffers: usize,
}

impl RoundReport {
    fn write(&self, w: &mut Writer) {
        w.u64(self.round as u64);
        w.u64(self.task as u64);
        w.f64s(&self.accuracy);
        w.f64s(&self.loss);
        w.f64(self.mean_loss);
        w.u64(self.clients.len() as u64);
        for &c in &self.clients {
            w.u64(c as u64);
        }
        w.u64(self.server_buffer as u64);
        w.u64(self.client_buffers as u64);
    }

    fn read(r: &mut Reader<'_>) -> Result<Self> {
        let round = r.u64("round")? as usize;
        let task = r.u64("task")? as usize;
        let accuracy = r.f64s("accuracy")?;
        let loss = r.f64s("loss")?;
        let mean_loss = r.f64("mean loss")?;
        let n = r.u64("client count")? as usize;
        let clients = (0..n).map(|_| r.u64("client").map(|c| c as usize)).collect::<Result<_>>()?;
        Ok(RoundReport {
            round,
            task,
            accuracy,
            loss,
            mean_loss,
            clients,
            server_buffer: r.u64("server buffer")? as usize,
            client_buffers: r.u64("client buffers")? as usize,
        })
    }
}

struct EvalSet {
    z: Matrix,
    labels: Vec<usize>,
}

/// The federated incremental loop: one [`step_round`](Simulation::step_round)
/// per communication round, tasks in sequence.
pub struct Simulation {
    setup: SimSetup,
    partition: ClientPartition,
    eval: Vec<EvalSet>,
    encoder: Encoder,
    encoder_checksum: String,
    classifier: ParamVector,
    server: Option<RehearsalBuffer>,
    clients: Vec<ClientState>,
    loaded_task: Option<usize>,
    next_round: usize,
    reports: Vec<RoundReport>,
    pool: Option<rayon::ThreadPool>,
    release_mode: ReleaseMode,
    transmissions: Option<Vec<(usize, RehearsalRecord)>>,
    fingerprint: String,
}

impl Simulation {
    /// Pretrains the encoder on task 0, then prepares round 0.
    pub fn new(setup: SimSetup) -> Result<Self> {
        setup.validate()?;
        let encoder = pretrain_for(&setup)?;
        Self::with_encoder(setup, encoder)
    }

    /// Uses an already trained encoder (shared between runs, or restored).
    pub fn with_encoder(mut setup: SimSetup, encoder: Encoder) -> Result<Self> {
        setup.validate()?;
        contract!(
            *encoder.spec() == setup.encoder,
            "supplied encoder does not match the configured encoder spec"
        );
        let seed = setup.seed;
        if let Some((rest, _)) = heldout_split(&setup)? {
            setup.tasks.tasks_mut()[0].train = rest;
        }
        let partition = partition_clients(&setup.tasks, setup.fl.n_clients, &RngStream::derive(seed, &[purpose::PARTITION]))?;
        let eval = setup
            .tasks
            .tasks()
            .iter()
            .map(|t| {
                Ok(EvalSet {
                    z: encoder.encode_for_eval(t.val.images())?,
                    labels: t.val.labels().to_vec(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let classifier = Classifier::init(setup.classifier, &mut RngStream::derive(seed, &[purpose::CLASSIFIER_INIT]))?.into_params();
        let pixels = setup.encoder.input.len();
        let d = setup.encoder.embed_dim;
        let raw = payload_bytes(crate::rehearsal::PayloadKind::Raw, pixels, d);
        let s = setup.strategy;
        let server = match s.kind.upload_payload() {
            Some(kind) => Some(RehearsalBuffer::new(
                kind,
                Some(memory_budget(s.memory, s.capacity, raw, payload_bytes(kind, pixels, d))?),
                1.0,
            )?),
            None => None,
        };
        let client_buffer = match s.kind.local_payload() {
            Some(kind) => Some(RehearsalBuffer::new(
                kind,
                Some(memory_budget(s.memory, s.client_capacity, raw, payload_bytes(kind, pixels, d))?),
                s.rho,
            )?),
            None => None,
        };
        let clients = (0..setup.fl.n_clients)
            .map(|id| ClientState::new(id, client_buffer.clone()))
            .collect();
        let encoder_checksum = encoder.checksum();
        // From here on the only copies of task data are the partition shards,
        // which are released at task boundaries.
        let fingerprint = setup.fingerprint();
        for t in setup.tasks.tasks_mut() {
            t.train = LabeledSet::empty(t.train.classes(), t.train.shape());
            t.val = LabeledSet::empty(t.val.classes(), t.val.shape());
        }
        Ok(Simulation {
            setup,
            partition,
            eval,
            encoder,
            encoder_checksum,
            classifier,
            server,
            clients,
            loaded_task: None,
            next_round: 0,
            reports: Vec::new(),
            pool: None,
            release_mode: ReleaseMode::Drop,
            transmissions: None,
            fingerprint,
        })
    }

    /// Worker threads for local training; 0 or 1 runs clients sequentially.
    /// Results do not depend on this setting.
    pub fn set_threads(&mut self, threads: usize) -> Result<()> {
        self.pool = if threads <= 1 {
            None
        } else {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::Contract(format!("cannot start {threads} worker threads: {e}")))?,
            )
        };
        Ok(())
    }

    pub fn set_release_mode(&mut self, mode: ReleaseMode) {
        self.release_mode = mode;
    }

    /// Starts recording every record sent from a client to the server.
    pub fn capture_transmissions(&mut self) {
        self.transmissions.get_or_insert_with(Vec::new);
    }

    /// `(client, record)` pairs recorded since [`capture_transmissions`](Self::capture_transmissions).
    pub fn transmissions(&self) -> &[(usize, RehearsalRecord)] {
        self.transmissions.as_deref().unwrap_or(&[])
    }

    /// The setup this simulation was built from, with task images removed.
    pub fn setup(&self) -> &SimSetup {
        &self.setup
    }

    pub fn encoder(&self) -> &Encoder {
        &self.encoder
    }

    pub fn classifier(&self) -> Result<Classifier> {
        Classifier::from_params(self.setup.classifier, self.classifier.clone())
    }

    pub fn classifier_params(&self) -> &ParamVector {
        &self.classifier
    }

    pub fn server_buffer(&self) -> Option<&RehearsalBuffer> {
        self.server.as_ref()
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn partition(&self) -> &ClientPartition {
        &self.partition
    }

    pub fn reports(&self) -> &[RoundReport] {
        &self.reports
    }

    pub fn next_round(&self) -> usize {
        self.next_round
    }

    pub fn is_finished(&self) -> bool {
        self.next_round >= self.setup.total_rounds()
    }

    fn release(&mut self, task: usize) {
        if !self.partition.is_released(task) {
            self.partition.release_task(task, self.release_mode);
        }
        for c in &mut self.clients {
            if c.current.as_ref().is_some_and(|s| s.task() == task) {
                c.current = None;
            }
        }
    }

    fn enter_task(&mut self, task: usize) -> Result<()> {
        for t in 0..task {
            self.release(t);
        }
        let keep_raw = self.setup.strategy.kind.local_payload() == Some(crate::rehearsal::PayloadKind::Raw);
        for c in &mut self.clients {
            c.enrollment = match &self.setup.schedule {
                Some(s) => s.state(c.id, task),
                None => Enrollment::Active,
            };
            c.current = None;
            if c.enrollment == Enrollment::Active && self.partition.shard_len(task, c.id) > 0 {
                let shard = self.partition.shard(task, c.id)?;
                c.current = Some(EncodedShard::encode(task, shard, &self.encoder, keep_raw)?);
            }
        }
        self.loaded_task = Some(task);
        Ok(())
    }

    /// Runs one communication round and returns its report.
    pub fn step_round(&mut self) -> Result<RoundReport> {
        let round = self.next_round;
        contract!(round < self.setup.total_rounds(), "all {} rounds have already run", round);
        let seed = self.setup.seed;
        let fl = self.setup.fl;
        let task = round / fl.rounds_per_task;
        if self.loaded_task != Some(task) {
            self.enter_task(task)?;
        }

        let ready: Vec<usize> = self
            .clients
            .iter()
            .filter(|c| c.enrollment == Enrollment::Active && c.current.is_some())
            .map(|c| c.id)
            .collect();
        let mut pick = RngStream::derive(seed, &[purpose::CLIENT_SAMPLING, round as u64]);
        let m = fl.clients_per_round.min(ready.len());
        let mut selected: Vec<usize> = index::sample(&mut pick, ready.len(), m).into_iter().map(|i| ready[i]).collect();
        selected.sort_unstable();

        let global = self.classifier.clone();
        let ctx = RoundContext {
            encoder: &self.encoder,
            classifier: &self.setup.classifier,
            strategy: self.setup.strategy.kind,
            fl: &self.setup.fl,
            task,
            round,
        };
        let work = |c: &mut ClientState| -> Result<LocalUpdate> {
            let mut rng = RngStream::derive(seed, &[purpose::LOCAL_TRAIN, c.id as u64, round as u64]);
            local_train(c, &global, &ctx, &mut rng)
        };
        let chosen: Vec<&mut ClientState> = self
            .clients
            .iter_mut()
            .filter(|c| selected.binary_search(&c.id).is_ok())
            .collect();
        let results: Vec<Result<LocalUpdate>> = match &self.pool {
            Some(pool) => pool.install(|| chosen.into_par_iter().map(work).collect()),
            None => chosen.into_iter().map(work).collect(),
        };
        let updates = results.into_iter().collect::<Result<Vec<_>>>()?;

        if let Some(server) = &mut self.server {
            let mut rng = RngStream::derive(seed, &[purpose::SERVER_ADMIT, round as u64]);
            for u in &updates {
                if let Some(log) = &mut self.transmissions {
                    log.extend(u.upload.iter().map(|r| (u.client, r.clone())));
                }
                server.insert(u.upload.clone(), &mut rng)?;
            }
        }

        if !updates.is_empty() {
            let pairs: Vec<(ParamVector, usize)> = updates.into_iter().map(|u| (u.params, u.samples)).collect();
            let mut w = fedavg_aggregate(&pairs)?;
            if let Some(server) = &self.server {
                let cfg = SstConfig {
                    iters: fl.sst_iters,
                    batch_size: fl.batch_size,
                    lr: fl.eta_s,
                };
                let mut rng = RngStream::derive(seed, &[purpose::SST, round as u64]);
                w = server_side_training(&w, &self.setup.classifier, server, &self.encoder, &cfg, &mut rng)?;
            }
            contract!(
                w.values().iter().all(|v| v.is_finite()),
                "round {round} produced non-finite classifier parameters"
            );
            self.classifier = w;
        }

        contract!(
            self.encoder.checksum() == self.encoder_checksum,
            "frozen encoder changed during round {round}"
        );
        let report = self.evaluate(round, task, selected)?;
        self.reports.push(report.clone());
        self.next_round += 1;
        if self.next_round.is_multiple_of(fl.rounds_per_task) {
            self.release(task);
        }
        Ok(report)
    }

    fn evaluate(&self, round: usize, task: usize, clients: Vec<usize>) -> Result<RoundReport> {
        let clf = self.classifier()?;
        let mut accuracy = Vec::with_capacity(self.eval.len());
        let mut loss = Vec::with_capacity(self.eval.len());
        for e in &self.eval {
            let (a, l) = clf.evaluate(&e.z, &e.labels)?;
            accuracy.push(a);
            loss.push(l);
        }
        let mean_loss = loss[..=task].iter().sum::<f64>() / (task + 1) as f64;
        Ok(RoundReport {
            round,
            task,
            accuracy,
            loss,
            mean_loss,
            clients,
            server_buffer: self.server.as_ref().map_or(0, RehearsalBuffer::len),
            client_buffers: self.clients.iter().filter_map(|c| c.buffer.as_ref()).map(RehearsalBuffer::len).sum(),
        })
    }

    /// Runs until `rounds` more rounds are done or the schedule ends.
    pub fn run_rounds(&mut self, rounds: usize) -> Result<()> {
        for _ in 0..rounds {
            if self.is_finished() {
                break;
            }
            self.step_round()?;
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<&[RoundReport]> {
        while !self.is_finished() {
            self.step_round()?;
        }
        Ok(&self.reports)
    }

    /// Writes model, buffers and loop state into `dir`.
    pub fn checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        ModelCheckpoint {
            encoder_kind: self.encoder.kind(),
            embed_dim: self.encoder.embed_dim(),
            classes: self.setup.classifier.classes,
            encoder: self.encoder.params().clone(),
            classifier: self.classifier.clone(),
        }
        .save(&dir.join("model.ckpt"))?;
        if let Some(s) = &self.server {
            s.save(&dir.join("server.buf"))?;
        }
        for c in &self.clients {
            if let Some(b) = &c.buffer {
                b.save(&dir.join(format!("client-{:04}.buf", c.id)))?;
            }
        }
        let mut w = Writer::new();
        w.bytes(STATE_MAGIC);
        w.u32(STATE_VERSION);
        w.str(&self.fingerprint);
        w.u64(self.next_round as u64);
        w.u64(self.reports.len() as u64);
        for r in &self.reports {
            r.write(&mut w);
        }
        let path = dir.join("state.bin");
        std::fs::write(&path, w.finish()).map_err(|e| Error::io(path, e))
    }

    /// Rebuilds a simulation from `setup` and the checkpoint in `dir`. The
    /// resumed run continues bit-exactly where the checkpointed one stopped.
    pub fn resume(setup: SimSetup, dir: &Path) -> Result<Self> {
        setup.validate()?;
        let model = ModelCheckpoint::load(&dir.join("model.ckpt"))?;
        let encoder = Encoder::from_params(setup.encoder, model.encoder)
            .map_err(|e| Error::Checkpoint(format!("encoder does not fit the configuration: {e}")))?;
        let mut sim = Self::with_encoder(setup, encoder)?;
        if !model.classifier.is_compatible(&sim.classifier) {
            return Err(Error::Checkpoint("classifier layout does not match the configuration".into()));
        }
        sim.classifier = model.classifier;
        if sim.server.is_some() {
            sim.server = Some(RehearsalBuffer::load(&dir.join("server.buf"))?);
        }
        for c in &mut sim.clients {
            if c.buffer.is_some() {
                c.buffer = Some(RehearsalBuffer::load(&dir.join(format!("client-{:04}.buf", c.id)))?);
            }
        }
        let path = dir.join("state.bin");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut r = Reader::new(&bytes);
        if r.take(4, "magic")? != STATE_MAGIC {
            return Err(Error::Checkpoint("not a simulation state file".into()));
        }
        let version = r.u32("version")?;
        if version != STATE_VERSION {
            return Err(Error::Checkpoint(format!("unsupported state version {version}")));
        }
        if r.str("fingerprint")? != sim.fingerprint {
            return Err(Error::Checkpoint("checkpoint was written under a different configuration".into()));
        }
        sim.next_round = r.u64("next round")? as usize;
        let n = r.u64("report count")? as usize;
        sim.reports = (0..n).map(|_| RoundReport::read(&mut r)).collect::<Result<_>>()?;
        if !r.is_done() {
            return Err(Error::Checkpoint("trailing bytes after simulation state".into()));
        }
        if sim.next_round > sim.setup.total_rounds() || sim.reports.len() != sim.next_round {
            return Err(Error::Checkpoint("inconsistent round counter".into()));
        }
        let finished_tasks = sim.next_round / sim.setup.fl.rounds_per_task;
        for t in 0..finished_tasks.min(sim.setup.tasks.len()) {
            sim.release(t);
        }
        Ok(sim)
    }
}
