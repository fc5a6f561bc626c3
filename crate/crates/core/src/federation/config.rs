use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

/// Schedule and optimiser settings of the federated loop.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FLConfig {
    pub rounds_per_task: usize,
    pub n_clients: usize,
    pub clients_per_round: usize,
    /// Local SGD steps per round.
    pub local_iters: usize,
    /// Server-side steps per round; 0 disables server-side training.
    pub sst_iters: usize,
    pub eta_t: f64,
    pub eta_s: f64,
    pub batch_size: usize,
}

impl Default for FLConfig {
    fn default() -> Self {
        FLConfig::with_clients(10)
    }
}

impl FLConfig {
    /// Defaults for `n_clients` clients, half of which train each round.
    pub fn with_clients(n_clients: usize) -> Self {
        FLConfig {
            rounds_per_task: 50,
            n_clients,
            clients_per_round: (n_clients / 2).max(1),
            local_iters: 10,
            sst_iters: 20,
            eta_t: 0.05,
            eta_s: 0.01,
            batch_size: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        contract!(self.rounds_per_task >= 1, "rounds_per_task must be at least 1");
        contract!(self.n_clients >= 1, "n_clients must be at least 1");
        contract!(
            (1..=self.n_clients).contains(&self.clients_per_round),
            "clients_per_round {} must lie in [1, {}]",
            self.clients_per_round,
            self.n_clients
        );
        contract!(self.batch_size >= 1, "batch_size must be at least 1");
        contract!(
            self.eta_t.is_finite() && self.eta_t >= 0.0 && self.eta_s.is_finite() && self.eta_s >= 0.0,
            "learning rates must be finite and non-negative"
        );
        Ok(())
    }
}
