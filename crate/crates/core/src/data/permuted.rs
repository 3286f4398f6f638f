//! Permuted-input task sequences.

use std::sync::Arc;

use rand::seq::SliceRandom;

use super::{seeded_rng, Dataset, Task, TaskSplit};
use crate::error::{Error, Result};

const PERMUTATION_STREAM: u64 = 0x7065_726d;

/// The input permutation used by one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSpec {
    pub task_index: usize,
    /// Column `j` of the task input reads pixel `permutation[j]`.
    pub permutation: Vec<usize>,
    pub seed: u64,
}

impl PermutationSpec {
    /// Task 0 is the identity; later tasks draw an independent uniform shuffle.
    pub fn generate(task_index: usize, dim: usize, seed: u64) -> Self {
        let mut permutation: Vec<usize> = (0..dim).collect();
        if task_index > 0 {
            let mut rng = seeded_rng(seed, PERMUTATION_STREAM + task_index as u64);
            permutation.shuffle(&mut rng);
        }
        PermutationSpec {
            task_index,
            permutation,
            seed,
        }
    }

    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.permutation.len()];
        for (j, &p) in self.permutation.iter().enumerate() {
            inv[p] = j;
        }
        inv
    }

    pub fn is_identity(&self) -> bool {
        self.permutation.iter().enumerate().all(|(j, &p)| j == p)
    }
}

/// `n_tasks` tasks over the same labels; train and test share each task's permutation.
pub fn make_permuted_sequence(dataset: &Dataset, n_tasks: usize, seed: u64) -> Result<Vec<Task>> {
    if n_tasks == 0 {
        return Err(Error::InvalidArgument("a sequence needs at least one task".into()));
    }
    let train = Arc::new(dataset.train.clone());
    let test = Arc::new(dataset.test.clone());
    (0..n_tasks)
        .map(|t| {
            let spec = PermutationSpec::generate(t, dataset.input_dim(), seed);
            let (train, test) = if spec.is_identity() {
                (TaskSplit::new(train.clone()), TaskSplit::new(test.clone()))
            } else {
                let perm = Arc::new(spec.permutation);
                (
                    TaskSplit::permuted(train.clone(), perm.clone())?,
                    TaskSplit::permuted(test.clone(), perm)?,
                )
            };
            Ok(Task {
                id: t,
                name: format!("permuted-{}", t + 1),
                train,
                test,
                num_classes: dataset.num_classes,
            })
        })
        .collect()
}
