//! Datasets and task sequences.

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Batch;

pub mod idx;
pub mod permuted;
pub mod soft_boundary;
pub mod synthetic;

pub use idx::{load_idx, load_mnist, MnistPaths};
pub use permuted::{make_permuted_sequence, PermutationSpec};
pub use soft_boundary::{soft_boundary_sampler, SoftBoundarySchedule};
pub use synthetic::{make_synthetic_overlap_sequence, OverlapSpec, SyntheticSequence};

/// Deterministic generator for one named stream of a run seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Train and test splits of one labeled dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Batch,
    pub test: Batch,
    pub num_classes: usize,
}

impl Dataset {
    pub fn input_dim(&self) -> usize {
        self.train.input_dim()
    }
}

/// One split of a task: a shared base set viewed through an optional input
/// permutation. Permuted tasks share the base pixels instead of copying them.
#[derive(Debug, Clone)]
pub struct TaskSplit {
    base: Arc<Batch>,
    permutation: Option<Arc<Vec<usize>>>,
}

impl TaskSplit {
    pub fn new(base: Arc<Batch>) -> Self {
        TaskSplit {
            base,
            permutation: None,
        }
    }

    /// Column `j` of the view reads column `permutation[j]` of the base.
    pub fn permuted(base: Arc<Batch>, permutation: Arc<Vec<usize>>) -> Result<Self> {
        if permutation.len() != base.input_dim() {
            return Err(Error::shape("permutation length", base.input_dim(), permutation.len()));
        }
        Ok(TaskSplit {
            base,
            permutation: Some(permutation),
        })
    }

    pub fn len(&self) -> usize {
        self.base.len()
    }

    pub fn is_empty(&self) -> bool {
        self.base.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.base.input_dim()
    }

    pub fn labels(&self) -> &[usize] {
        &self.base.labels
    }

    pub fn permutation(&self) -> Option<&[usize]> {
        self.permutation.as_deref().map(Vec::as_slice)
    }

    /// Copies the rows at `indices`, permutation applied.
    pub fn gather(&self, indices: &[usize]) -> Batch {
        match &self.permutation {
            None => self.base.select(indices),
            Some(perm) => {
                let mut inputs = Array2::zeros((indices.len(), perm.len()));
                for (mut out, &i) in inputs.rows_mut().into_iter().zip(indices) {
                    let row = self.base.inputs.row(i);
                    for (o, &p) in out.iter_mut().zip(perm.iter()) {
                        *o = row[p];
                    }
                }
                Batch {
                    inputs,
                    labels: indices.iter().map(|&i| self.base.labels[i]).collect(),
                }
            }
        }
    }

    /// Consecutive sub-batches of at most `size` rows.
    pub fn chunks(&self, size: usize) -> impl Iterator<Item = Batch> + '_ {
        let size = size.max(1);
        (0..self.len()).step_by(size).map(move |start| {
            let end = (start + size).min(self.len());
            self.gather(&(start..end).collect::<Vec<_>>())
        })
    }

    pub fn materialize(&self) -> Batch {
        self.gather(&(0..self.len()).collect::<Vec<_>>())
    }
}

/// A classification task in a sequence.
#[derive(Debug, Clone)]
pub struct Task {
    pub id: usize,
    pub name: String,
    pub train: TaskSplit,
    pub test: TaskSplit,
    pub num_classes: usize,
}

impl Task {
    pub fn from_batches(id: usize, name: impl Into<String>, train: Batch, test: Batch, num_classes: usize) -> Self {
        Task {
            id,
            name: name.into(),
            train: TaskSplit::new(Arc::new(train)),
            test: TaskSplit::new(Arc::new(test)),
            num_classes,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.train.input_dim()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn permuted_view_reads_base_columns() {
        let base = Arc::new(Batch::new(array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]], vec![0, 1], 2).unwrap());
        let split = TaskSplit::permuted(base, Arc::new(vec![2, 0, 1])).unwrap();
        let b = split.gather(&[1, 0]);
        assert_eq!(b.inputs, array![[6.0, 4.0, 5.0], [3.0, 1.0, 2.0]]);
        assert_eq!(b.labels, vec![1, 0]);
        let chunks: Vec<_> = split.chunks(1).collect();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[0].inputs, array![[3.0, 1.0, 2.0]]);
    }

    #[test]
    fn permutation_length_checked() {
        let base = Arc::new(Batch::new(array![[1.0, 2.0]], vec![0], 1).unwrap());
        assert!(TaskSplit::permuted(base, Arc::new(vec![0])).is_err());
    }
}
