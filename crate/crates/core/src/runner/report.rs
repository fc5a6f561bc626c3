use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::federation::{OfflineOutcome, RoundReport};

/// `round,task,acc_task_1..acc_task_n,mean_loss,n_clients`, 1-based rounds
/// and tasks, floats in shortest round-trip form.
pub fn rounds_csv(reports: &[RoundReport], n_tasks: usize) -> String {
    let mut s = String::from("round,task");
    for t in 1..=n_tasks {
        write!(s, ",acc_task_{t}").unwrap();
    }
    s.push_str(",mean_loss,n_clients\n");
    for r in reports {
        write!(s, "{},{}", r.round + 1, r.task + 1).unwrap();
        for a in &r.accuracy {
            write!(s, ",{a}").unwrap();
        }
        writeln!(s, ",{},{}", r.mean_loss, r.clients.len()).unwrap();
    }
    s
}

/// Final accuracies of one `(arm, seed)` run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub arm: String,
    pub strategy: String,
    pub memory: String,
    pub sst: bool,
    pub scenario: String,
    pub seed: u64,
    pub rounds: usize,
    /// False when the run was stopped before its last round.
    pub complete: bool,
    /// Validation accuracy per task after the last round run.
    pub final_accuracy: Vec<f64>,
    pub average: f64,
    pub offline: Option<OfflineOutcome>,
}

/// Seed-mean results of one arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub arm: String,
    pub seeds: Vec<u64>,
    pub mean_accuracy: Vec<f64>,
    pub mean_average: f64,
    pub offline_average: Option<f64>,
}

/// Top-level summary of a run with several arms or seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedSummary {
    pub arms: Vec<ArmSummary>,
    /// Relative directory of every run, in execution order.
    pub runs: Vec<(String, RunSummary)>,
}

impl CombinedSummary {
    pub fn from_runs(runs: Vec<(String, RunSummary)>) -> Self {
        let mut arms: Vec<ArmSummary> = Vec::new();
        for (_, r) in &runs {
            if arms.iter().any(|a| a.arm == r.arm) {
                continue;
            }
            let mine: Vec<&RunSummary> = runs.iter().map(|(_, s)| s).filter(|s| s.arm == r.arm).collect();
            let n = mine.len() as f64;
            let k = r.final_accuracy.len();
            let offline: Vec<f64> = mine.iter().filter_map(|s| s.offline.as_ref().map(|o| o.average)).collect();
            arms.push(ArmSummary {
                arm: r.arm.clone(),
                seeds: mine.iter().map(|s| s.seed).collect(),
                mean_accuracy: (0..k).map(|t| mine.iter().map(|s| s.final_accuracy[t]).sum::<f64>() / n).collect(),
                mean_average: mine.iter().map(|s| s.average).sum::<f64>() / n,
                offline_average: (offline.len() == mine.len()).then(|| offline.iter().sum::<f64>() / n),
            });
        }
        CombinedSummary { arms, runs }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Report(e.to_string()))?;
    text.push('\n');
    write_file(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(round: usize, task: usize, acc: Vec<f64>) -> RoundReport {
        RoundReport {
            round,
            task,
            loss: vec![0.0; acc.len()],
            accuracy: acc,
            mean_loss: 0.25,
            clients: vec![0, 3],
            server_buffer: 0,
            client_buffers: 0,
        }
    }

    #[test]
    fn csv_is_one_based() {
        let csv = rounds_csv(&[report(0, 0, vec![0.5, 0.1]), report(1, 1, vec![1.0, 0.0])], 2);
        assert_eq!(
            csv,
            "round,task,acc_task_1,acc_task_2,mean_loss,n_clients\n1,1,0.5,0.1,0.25,2\n2,2,1,0,0.25,2\n"
        );
    }

    #[test]
    fn arm_means_over_seeds() {
        let run = |seed, a: f64| RunSummary {
            arm: "x".into(),
            strategy: "none".into(),
            memory: "x1".into(),
            sst: true,
            scenario: "fully_enrolled".into(),
            seed,
            rounds: 1,
            complete: true,
            final_accuracy: vec![a, 1.0],
            average: (a + 1.0) / 2.0,
            offline: None,
        };
        let c = CombinedSummary::from_runs(vec![("a".into(), run(1, 0.2)), ("b".into(), run(2, 0.4))]);
        assert_eq!(c.arms.len(), 1);
        assert!((c.arms[0].mean_accuracy[0] - 0.3).abs() < 1e-15);
        assert!((c.arms[0].mean_average - 0.65).abs() < 1e-15);
        assert_eq!(c.arms[0].offline_average, None);
    }
}
