use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index;
use rand::Rng;

use super::record::{materialize_batch, Payload, PayloadKind, RehearsalRecord};
use crate::codec::{Reader, Writer};
use crate::error::{contract, Error, Result};
use crate::models::{Encoder, GaussianStats};
use crate::numcore::{Matrix, RngStream};

const SNAPSHOT_MAGIC: &[u8; 4] = b"FVRB";
pub const BUFFER_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
struct TaskSlot {
    records: Vec<RehearsalRecord>,
    /// Records offered to this slot so far (the reservoir counter).
    seen: u64,
}

/// Rehearsal memory with per-task reservoirs.
///
/// The capacity is split evenly over the tasks present (earlier tasks get the
/// remainder), and each task keeps a uniform reservoir sample of everything
/// offered to it. When a new task arrives the older slots shrink by random
/// eviction.
#[derive(Clone, Debug, PartialEq)]
pub struct RehearsalBuffer {
    payload: PayloadKind,
    capacity: Option<usize>,
    rho: f64,
    tasks: BTreeMap<usize, TaskSlot>,
}

/// Picks `ceil(rho · n)` of `n` candidates uniformly without replacement; indices ascending.
pub fn sample_admission(n: usize, rho: f64, rng: &mut RngStream) -> Vec<usize> {
    // The small slack keeps products like 0.1 · 1000 from rounding up to 101.
    let m = ((rho * n as f64) - 1e-9).ceil().clamp(0.0, n as f64) as usize;
    let mut idx = index::sample(rng, n, m).into_vec();
    idx.sort_unstable();
    idx
}

fn quotas(tasks: impl ExactSizeIterator<Item = usize>, capacity: usize) -> BTreeMap<usize, usize> {
    let k = tasks.len().max(1);
    tasks
        .enumerate()
        .map(|(i, t)| (t, capacity / k + usize::from(i < capacity % k)))
        .collect()
}

impl RehearsalBuffer {
    /// `capacity = None` means unbounded.
    pub fn new(payload: PayloadKind, capacity: Option<usize>, rho: f64) -> Result<Self> {
        contract!((0.0..=1.0).contains(&rho), "rho {rho} must lie in [0, 1]");
        Ok(RehearsalBuffer {
            payload,
            capacity,
            rho,
            tasks: BTreeMap::new(),
        })
    }

    pub fn payload_kind(&self) -> PayloadKind {
        self.payload
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn len(&self) -> usize {
        self.tasks.values().map(|s| s.records.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records in task order, then slot order.
    pub fn records(&self) -> impl Iterator<Item = &RehearsalRecord> {
        self.tasks.values().flat_map(|s| s.records.iter())
    }

    pub fn task_counts(&self) -> BTreeMap<usize, usize> {
        self.tasks.iter().map(|(&t, s)| (t, s.records.len())).collect()
    }

    /// Samples `ceil(rho · n)` candidates and inserts them. Returns the chosen
    /// candidate indices.
    pub fn admit(&mut self, candidates: &[RehearsalRecord], rng: &mut RngStream) -> Result<Vec<usize>> {
        let chosen = sample_admission(candidates.len(), self.rho, rng);
        let picked: Vec<RehearsalRecord> = chosen.iter().map(|&i| candidates[i].clone()).collect();
        self.insert(picked, rng)?;
        Ok(chosen)
    }

    /// Offers every record to its task's reservoir, without the `rho` sampling step.
    pub fn insert(&mut self, records: Vec<RehearsalRecord>, rng: &mut RngStream) -> Result<()> {
        let Some(first) = records.first() else {
            return Ok(());
        };
        let (task, round) = (first.task_id, first.round_id);
        for r in &records {
            contract!(
                r.task_id == task && r.round_id == round,
                "admitted records must share one (task, round)"
            );
            contract!(
                r.payload.kind() == self.payload,
                "buffer holds {:?} payloads, got {:?}",
                self.payload,
                r.payload.kind()
            );
        }
        self.tasks.entry(task).or_default();
        let Some(cap) = self.capacity else {
            let slot = self.tasks.get_mut(&task).expect("inserted above");
            slot.seen += records.len() as u64;
            slot.records.extend(records);
            return Ok(());
        };
        let q = quotas(self.tasks.keys().copied(), cap);
        for (t, slot) in &mut self.tasks {
            while slot.records.len() > q[t] {
                let i = rng.below(slot.records.len());
                slot.records.swap_remove(i);
            }
        }
        let quota = q[&task];
        let slot = self.tasks.get_mut(&task).expect("inserted above");
        for r in records {
            slot.seen += 1;
            if slot.records.len() < quota {
                slot.records.push(r);
            } else {
                let j = rng.random_range(0..slot.seen);
                if (j as usize) < quota {
                    slot.records[j as usize] = r;
                }
            }
        }
        Ok(())
    }

    /// Uniform sample of `batch_size` records: without replacement when the
    /// buffer is large enough, with replacement otherwise. An empty buffer
    /// yields an empty batch.
    pub fn replay_batch(&self, batch_size: usize, rng: &mut RngStream) -> Vec<RehearsalRecord> {
        let all: Vec<&RehearsalRecord> = self.records().collect();
        if all.is_empty() {
            if batch_size > 0 {
                log::debug!("replay requested from an empty buffer");
            }
            return Vec::new();
        }
        if batch_size <= all.len() {
            index::sample(rng, all.len(), batch_size)
                .into_iter()
                .map(|i| all[i].clone())
                .collect()
        } else {
            (0..batch_size).map(|_| all[rng.below(all.len())].clone()).collect()
        }
    }

    /// [`replay_batch`](Self::replay_batch) followed by materialisation.
    pub fn replay(&self, batch_size: usize, encoder: &Encoder, rng: &mut RngStream) -> Result<(Matrix, Vec<usize>)> {
        let batch = self.replay_batch(batch_size, rng);
        materialize_batch(&batch, self.payload, encoder, rng)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(SNAPSHOT_MAGIC);
        w.u32(BUFFER_FORMAT_VERSION);
        w.u8(self.payload.code());
        w.u64(self.capacity.map_or(u64::MAX, |c| c as u64));
        w.f64(self.rho);
        w.u64(self.tasks.len() as u64);
        for (&t, slot) in &self.tasks {
            w.u64(t as u64);
            w.u64(slot.seen);
            w.u64(slot.records.len() as u64);
            for r in &slot.records {
                w.u64(r.label as u64);
                w.u64(r.task_id as u64);
                w.u64(r.round_id as u64);
                match &r.payload {
                    Payload::Raw(v) | Payload::Embedding(v) => w.f64s(v),
                    Payload::Stats(s) => {
                        w.f64s(&s.mu);
                        w.f64s(&s.log_sigma);
                    }
                }
            }
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        if r.take(4, "magic")? != SNAPSHOT_MAGIC {
            return Err(Error::Checkpoint("not a buffer snapshot".into()));
        }
        let version = r.u32("version")?;
        if version != BUFFER_FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported buffer snapshot version {version}")));
        }
        let payload = PayloadKind::from_code(r.u8("payload kind")?)
            .ok_or_else(|| Error::Checkpoint("unknown payload kind".into()))?;
        let capacity = match r.u64("capacity")? {
            u64::MAX => None,
            c => Some(c as usize),
        };
        let rho = r.f64("rho")?;
        let n_tasks = r.u64("task count")?;
        let mut tasks = BTreeMap::new();
        for _ in 0..n_tasks {
            let t = r.u64("task id")? as usize;
            let seen = r.u64("reservoir counter")?;
            let n = r.u64("record count")? as usize;
            let mut records = Vec::with_capacity(n.min(1 << 20));
            for _ in 0..n {
                let label = r.u64("label")? as usize;
                let task_id = r.u64("record task")? as usize;
                let round_id = r.u64("record round")? as usize;
                let payload = match payload {
                    PayloadKind::Raw => Payload::Raw(r.f64s("raw sample")?),
                    PayloadKind::Embedding => Payload::Embedding(r.f64s("embedding")?),
                    PayloadKind::Stats => {
                        let mu = r.f64s("mu")?;
                        let ls = r.f64s("log sigma")?;
                        Payload::Stats(GaussianStats::new(mu, ls).map_err(|e| Error::Checkpoint(e.to_string()))?)
                    }
                };
                records.push(RehearsalRecord {
                    payload,
                    label,
                    task_id,
                    round_id,
                });
            }
            tasks.insert(t, TaskSlot { records, seen });
        }
        if !r.is_done() {
            return Err(Error::Checkpoint("trailing bytes after buffer snapshot".into()));
        }
        Ok(RehearsalBuffer {
            payload,
            capacity,
            rho,
            tasks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn recs(task: usize, round: usize, n: usize) -> Vec<RehearsalRecord> {
        (0..n)
            .map(|i| RehearsalRecord {
                payload: Payload::Embedding(vec![i as f64]),
                label: i % 10,
                task_id: task,
                round_id: round,
            })
            .collect()
    }

    #[test]
    fn rho_zero_admits_nothing() {
        let mut b = RehearsalBuffer::new(PayloadKind::Embedding, Some(10), 0.0).unwrap();
        b.admit(&recs(0, 0, 50), &mut RngStream::new(0, 0)).unwrap();
        assert!(b.is_empty());
    }

    #[test]
    fn rho_one_unbounded_admits_all() {
        let mut b = RehearsalBuffer::new(PayloadKind::Embedding, None, 1.0).unwrap();
        b.admit(&recs(0, 0, 37), &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(b.len(), 37);
    }

    #[test]
    fn exact_admission_count() {
        let mut b = RehearsalBuffer::new(PayloadKind::Embedding, None, 0.1).unwrap();
        let chosen = b.admit(&recs(0, 0, 1000), &mut RngStream::new(0, 0)).unwrap();
        assert_eq!(chosen.len(), 100);
        assert_eq!(b.len(), 100);
        assert_eq!(sample_admission(7, 0.1, &mut RngStream::new(0, 0)).len(), 1);
    }

    #[test]
    fn capacity_holds_and_tasks_share() {
        let mut b = RehearsalBuffer::new(PayloadKind::Embedding, Some(30), 1.0).unwrap();
        let mut rng = RngStream::new(4, 0);
        for round in 0..5 {
            b.admit(&recs(0, round, 20), &mut rng).unwrap();
            assert!(b.len() <= 30);
        }
        assert_eq!(b.len(), 30);
        b.admit(&recs(1, 5, 20), &mut rng).unwrap();
        b.admit(&recs(2, 6, 20), &mut rng).unwrap();
        assert_eq!(b.task_counts().values().copied().collect::<Vec<_>>(), vec![10, 10, 10]);
    }

    #[test]
    fn mixed_task_candidates_rejected() {
        let mut b = RehearsalBuffer::new(PayloadKind::Embedding, None, 1.0).unwrap();
        let mut c = recs(0, 0, 2);
        c[1].task_id = 1;
        assert!(b.admit(&c, &mut RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn full_batch_is_a_permutation() {
        let mut b = RehearsalBuffer::new(PayloadKind::Embedding, None, 1.0).unwrap();
        b.admit(&recs(0, 0, 12), &mut RngStream::new(0, 0)).unwrap();
        let batch = b.replay_batch(12, &mut RngStream::new(1, 0));
        let mut got: Vec<f64> = batch
            .iter()
            .map(|r| match &r.payload {
                Payload::Embedding(z) => z[0],
                _ => unreachable!(),
            })
            .collect();
        got.sort_by(f64::total_cmp);
        assert_eq!(got, (0..12).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn singleton_buffer_repeats() {
        let mut b = RehearsalBuffer::new(PayloadKind::Embedding, None, 1.0).unwrap();
        b.admit(&recs(0, 0, 1), &mut RngStream::new(0, 0)).unwrap();
        let batch = b.replay_batch(3, &mut RngStream::new(1, 0));
        assert_eq!(batch.len(), 3);
        assert!(batch.iter().all(|r| *r == b.records().next().unwrap().clone()));
    }

    #[test]
    fn empty_buffer_empty_batch() {
        let b = RehearsalBuffer::new(PayloadKind::Embedding, None, 1.0).unwrap();
        assert!(b.replay_batch(8, &mut RngStream::new(1, 0)).is_empty());
    }

    #[test]
    fn snapshot_round_trip() {
        let mut b = RehearsalBuffer::new(PayloadKind::Stats, Some(9), 0.5).unwrap();
        let mut rng = RngStream::new(2, 0);
        let stats: Vec<RehearsalRecord> = (0..10)
            .map(|i| RehearsalRecord {
                payload: Payload::Stats(GaussianStats::new(vec![i as f64, 0.1], vec![-0.3, 1e-300]).unwrap()),
                label: i,
                task_id: 3,
                round_id: 7,
            })
            .collect();
        b.admit(&stats, &mut rng).unwrap();
        let back = RehearsalBuffer::from_bytes(&b.to_bytes()).unwrap();
        assert_eq!(back, b);
        let mut bytes = b.to_bytes();
        bytes.push(0);
        assert!(RehearsalBuffer::from_bytes(&bytes).is_err());
        assert!(RehearsalBuffer::from_bytes(&b.to_bytes()[..20]).is_err());
    }
}
