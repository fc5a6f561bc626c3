use rand::seq::SliceRandom;

use super::set::LabeledSet;
use crate::error::{contract, Result};
use crate::numcore::{Matrix, RngStream};

/// Training data plus its validation counterpart, before task construction.
#[derive(Clone, Debug)]
pub struct BaseData {
    pub train: LabeledSet,
    pub val: LabeledSet,
}

impl BaseData {
    /// Holds out `fraction` of `full` (per label) as validation data.
    pub fn holdout(full: &LabeledSet, fraction: f64, rng: &mut RngStream) -> Result<Self> {
        let (train, val) = full.holdout(fraction, rng)?;
        Ok(BaseData { train, val })
    }

    pub fn with_test(train: LabeledSet, test: LabeledSet) -> Result<Self> {
        contract!(train.shape() == test.shape(), "train and test image shapes differ");
        Ok(BaseData { train, val: test })
    }
}

#[derive(Clone, Debug)]
pub struct Task {
    pub id: usize,
    pub train: LabeledSet,
    pub val: LabeledSet,
}

#[derive(Clone, Debug)]
pub struct TaskSequence {
    tasks: Vec<Task>,
}

impl TaskSequence {
    pub fn new(tasks: Vec<Task>) -> Result<Self> {
        contract!(!tasks.is_empty(), "a task sequence needs at least one task");
        let k = tasks[0].train.classes();
        let shape = tasks[0].train.shape();
        for t in &tasks {
            contract!(
                t.train.classes() == k && t.val.classes() == k,
                "task {} has a different class count than task 0",
                t.id
            );
            contract!(
                t.train.shape() == shape && t.val.shape() == shape,
                "task {} has a different image shape",
                t.id
            );
        }
        Ok(TaskSequence { tasks })
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.tasks[0].train.classes()
    }

    pub(crate) fn tasks_mut(&mut self) -> &mut [Task] {
        &mut self.tasks
    }

    pub fn into_tasks(self) -> Vec<Task> {
        self.tasks
    }
}

fn permute(set: &LabeledSet, perm: &[usize]) -> LabeledSet {
    let src = set.images();
    let mut out = Matrix::zeros(src.rows(), src.cols());
    for r in 0..src.rows() {
        let (s, d) = (src.row(r), out.row_mut(r));
        for (j, &p) in perm.iter().enumerate() {
            d[j] = s[p];
        }
    }
    LabeledSet::new(out, set.labels().to_vec(), set.classes(), set.shape()).expect("same shape")
}

/// Fixed pixel permutation per task; task 0 keeps the identity.
pub fn permutation_for_task(pixels: usize, task: usize, rng: &RngStream) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..pixels).collect();
    if task > 0 {
        perm.shuffle(&mut rng.fork(task as u64));
    }
    perm
}

/// `n_tasks` copies of the base data, each under its own pixel permutation.
/// Train and validation images of a task share the permutation.
pub fn build_permuted_tasks(base: &BaseData, n_tasks: usize, rng: &RngStream) -> Result<TaskSequence> {
    contract!(n_tasks >= 1, "need at least one task");
    let pixels = base.train.shape().len();
    let tasks = (0..n_tasks)
        .map(|t| {
            let perm = permutation_for_task(pixels, t, rng);
            Task {
                id: t,
                train: permute(&base.train, &perm),
                val: permute(&base.val, &perm),
            }
        })
        .collect();
    TaskSequence::new(tasks)
}

fn split_one(set: &LabeledSet, lo: usize, per_task: usize) -> LabeledSet {
    let idx: Vec<usize> = (0..set.len())
        .filter(|&i| (lo..lo + per_task).contains(&set.labels()[i]))
        .collect();
    let images = set.images().select_rows(&idx);
    let labels = idx.iter().map(|&i| set.labels()[i] - lo).collect();
    LabeledSet::new(images, labels, per_task, set.shape()).expect("labels relabelled into range")
}

/// Task `t` holds original classes `[t·c, (t+1)·c)` relabelled to `[0, c)`;
/// classes beyond `n_tasks · c` are dropped.
pub fn build_split_tasks(base: &BaseData, n_tasks: usize, classes_per_task: usize) -> Result<TaskSequence> {
    contract!(n_tasks >= 1 && classes_per_task >= 2, "need n_tasks >= 1 and classes_per_task >= 2");
    contract!(
        base.train.classes() >= n_tasks * classes_per_task,
        "{} classes available, split needs {}",
        base.train.classes(),
        n_tasks * classes_per_task
    );
    let tasks = (0..n_tasks)
        .map(|t| {
            let lo = t * classes_per_task;
            Task {
                id: t,
                train: split_one(&base.train, lo, classes_per_task),
                val: split_one(&base.val, lo, classes_per_task),
            }
        })
        .collect();
    TaskSequence::new(tasks)
}
