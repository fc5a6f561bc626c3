use rand::seq::SliceRandom;

use super::set::LabeledSet;
use super::tasks::TaskSequence;
use crate::error::{contract, Error, Result};
use crate::numcore::RngStream;

/// What happens to a task's shards at the task boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReleaseMode {
    /// Shards are freed; later reads fail with [`Error::DataReleased`].
    Drop,
    /// Shards are overwritten with NaN but stay readable, so any leak shows up
    /// as non-finite model parameters. Test-only.
    Poison,
}

/// Per-task, per-client training shards.
#[derive(Clone, Debug)]
pub struct ClientPartition {
    // shards[task][client]
    shards: Vec<Vec<Option<LabeledSet>>>,
    released: Vec<Option<ReleaseMode>>,
}

impl ClientPartition {
    pub fn n_tasks(&self) -> usize {
        self.shards.len()
    }

    pub fn n_clients(&self) -> usize {
        self.shards.first().map_or(0, Vec::len)
    }

    pub fn shard(&self, task: usize, client: usize) -> Result<&LabeledSet> {
        contract!(task < self.n_tasks(), "task {task} out of range");
        contract!(client < self.n_clients(), "client {client} out of range");
        if self.released[task] == Some(ReleaseMode::Drop) {
            return Err(Error::DataReleased { task });
        }
        Ok(self.shards[task][client].as_ref().expect("present unless dropped"))
    }

    pub fn shard_len(&self, task: usize, client: usize) -> usize {
        self.shards[task][client].as_ref().map_or(0, LabeledSet::len)
    }

    pub fn is_released(&self, task: usize) -> bool {
        self.released[task].is_some()
    }

    pub fn release_task(&mut self, task: usize, mode: ReleaseMode) {
        for slot in &mut self.shards[task] {
            match mode {
                ReleaseMode::Drop => *slot = None,
                ReleaseMode::Poison => {
                    if let Some(s) = slot {
                        s.poison();
                    }
                }
            }
        }
        self.released[task] = Some(mode);
    }
}

/// Deals every task's training set to `n_clients` clients, label by label.
///
/// Within a label the samples are shuffled and dealt round-robin; the starting
/// client rotates from one label to the next so client totals also stay within
/// one sample of each other when the per-label counts do not divide evenly.
pub fn partition_clients(seq: &TaskSequence, n_clients: usize, rng: &RngStream) -> Result<ClientPartition> {
    contract!(n_clients >= 1, "need at least one client");
    let mut shards = Vec::with_capacity(seq.len());
    for task in seq.tasks() {
        let mut rng = rng.fork(task.id as u64);
        let mut owned: Vec<Vec<usize>> = vec![Vec::new(); n_clients];
        let mut start = 0;
        for c in 0..task.train.classes() {
            let mut idx: Vec<usize> = (0..task.train.len()).filter(|&i| task.train.labels()[i] == c).collect();
            idx.shuffle(&mut rng);
            for (k, &i) in idx.iter().enumerate() {
                owned[(start + k) % n_clients].push(i);
            }
            start = (start + idx.len()) % n_clients;
        }
        shards.push(
            owned
                .into_iter()
                .map(|mut v| {
                    v.sort_unstable();
                    Some(task.train.subset(&v))
                })
                .collect(),
        );
    }
    Ok(ClientPartition {
        released: vec![None; shards.len()],
        shards,
    })
}
