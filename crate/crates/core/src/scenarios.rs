//! Dynamic client enrollment: which clients may train during which task.
//!
//! Every client follows the same three-state machine over the task sequence,
//! `NotEnrolledYet* Active+ NoLongerActive*`, and its state never changes
//! within a task.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::numcore::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Enrollment {
    NotEnrolledYet,
    Active,
    NoLongerActive,
}

impl Enrollment {
    pub fn symbol(self) -> char {
        match self {
            Enrollment::Active => '•',
            Enrollment::NotEnrolledYet => '○',
            Enrollment::NoLongerActive => '×',
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    /// Everyone active for every task.
    FullyEnrolled,
    /// Everyone starts active; clients leave at task boundaries.
    Decreasing,
    /// Clients join at task boundaries and stay.
    Increasing,
    /// Each client is active for exactly one task.
    Scattered,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 4] = [
        ScenarioKind::FullyEnrolled,
        ScenarioKind::Decreasing,
        ScenarioKind::Increasing,
        ScenarioKind::Scattered,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::FullyEnrolled => "fully_enrolled",
            ScenarioKind::Decreasing => "decreasing",
            ScenarioKind::Increasing => "increasing",
            ScenarioKind::Scattered => "scattered",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown scenario {s:?}; expected fully_enrolled, decreasing, increasing or scattered"))
    }
}

/// Enrollment state for every `(client, task)` cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnrollmentSchedule {
    kind: ScenarioKind,
    n_clients: usize,
    n_tasks: usize,
    // client-major
    grid: Vec<Enrollment>,
}

impl EnrollmentSchedule {
    /// Builds a schedule from explicit rows, checking legality and feasibility.
    pub fn from_rows(kind: ScenarioKind, rows: Vec<Vec<Enrollment>>) -> Result<Self> {
        contract!(!rows.is_empty(), "schedule needs at least one client");
        let n_tasks = rows[0].len();
        contract!(n_tasks >= 1, "schedule needs at least one task");
        for (c, row) in rows.iter().enumerate() {
            contract!(row.len() == n_tasks, "client {c} row has {} cells, expected {n_tasks}", row.len());
            contract!(is_legal_row(row), "client {c} row {} breaks the enrollment state machine", render(row));
        }
        let s = EnrollmentSchedule {
            kind,
            n_clients: rows.len(),
            n_tasks,
            grid: rows.into_iter().flatten().collect(),
        };
        for t in 0..n_tasks {
            contract!(!s.active_clients(t).is_empty(), "task {t} has no active client");
        }
        Ok(s)
    }

    pub fn kind(&self) -> ScenarioKind {
        self.kind
    }

    pub fn n_clients(&self) -> usize {
        self.n_clients
    }

    pub fn n_tasks(&self) -> usize {
        self.n_tasks
    }

    pub fn state(&self, client: usize, task: usize) -> Enrollment {
        self.grid[client * self.n_tasks + task]
    }

    pub fn row(&self, client: usize) -> &[Enrollment] {
        &self.grid[client * self.n_tasks..(client + 1) * self.n_tasks]
    }

    /// Clients allowed to train during `task`, ascending.
    pub fn active_clients(&self, task: usize) -> Vec<usize> {
        (0..self.n_clients)
            .filter(|&c| self.state(c, task) == Enrollment::Active)
            .collect()
    }

    /// One line per client, one symbol per task: `•` active, `○` not enrolled
    /// yet, `×` no longer active.
    pub fn dump(&self) -> String {
        (0..self.n_clients)
            .map(|c| format!("client {c:>3}  {}\n", render(self.row(c))))
            .collect()
    }
}

fn render(row: &[Enrollment]) -> String {
    row.iter().map(|e| e.symbol()).collect()
}

/// Whether `row` reads `NotEnrolledYet* Active+ NoLongerActive*`.
pub fn is_legal_row(row: &[Enrollment]) -> bool {
    let mut i = 0;
    while i < row.len() && row[i] == Enrollment::NotEnrolledYet {
        i += 1;
    }
    let start = i;
    while i < row.len() && row[i] == Enrollment::Active {
        i += 1;
    }
    if i == start {
        return false;
    }
    row[i..].iter().all(|&e| e == Enrollment::NoLongerActive)
}

/// Number of active clients at task `t` of a shrinking base: one step of
/// `ceil(n / n_tasks)` clients leaves at every boundary, never dropping below one.
fn shrinking(n: usize, n_tasks: usize, t: usize) -> usize {
    let step = n.div_ceil(n_tasks);
    n.saturating_sub(t * step).max(1)
}

pub fn make_schedule(kind: ScenarioKind, n_clients: usize, n_tasks: usize, rng: &mut RngStream) -> Result<EnrollmentSchedule> {
    contract!(n_clients >= 1 && n_tasks >= 1, "need at least one client and one task");
    if kind != ScenarioKind::FullyEnrolled {
        contract!(
            n_clients >= n_tasks,
            "{kind} needs at least as many clients as tasks ({n_clients} < {n_tasks})"
        );
    }
    let mut order: Vec<usize> = (0..n_clients).collect();
    if kind != ScenarioKind::FullyEnrolled {
        order.shuffle(rng);
    }
    // rank[c] = position of client c in the random order
    let mut rank = vec![0; n_clients];
    for (i, &c) in order.iter().enumerate() {
        rank[c] = i;
    }
    let rows = (0..n_clients)
        .map(|c| {
            let r = rank[c];
            (0..n_tasks)
                .map(|t| match kind {
                    ScenarioKind::FullyEnrolled => Enrollment::Active,
                    ScenarioKind::Decreasing => {
                        if r < shrinking(n_clients, n_tasks, t) {
                            Enrollment::Active
                        } else {
                            Enrollment::NoLongerActive
                        }
                    }
                    ScenarioKind::Increasing => {
                        if r < shrinking(n_clients, n_tasks, n_tasks - 1 - t) {
                            Enrollment::Active
                        } else {
                            Enrollment::NotEnrolledYet
                        }
                    }
                    ScenarioKind::Scattered => {
                        let own = r % n_tasks;
                        match t.cmp(&own) {
                            std::cmp::Ordering::Less => Enrollment::NotEnrolledYet,
                            std::cmp::Ordering::Equal => Enrollment::Active,
                            std::cmp::Ordering::Greater => Enrollment::NoLongerActive,
                        }
                    }
                })
                .collect()
        })
        .collect();
    EnrollmentSchedule::from_rows(kind, rows)
}
