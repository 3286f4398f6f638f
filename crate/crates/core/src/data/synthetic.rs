//! Gaussian-blob task sequences with a controllable amount of shared input structure.
//!
//! Every task draws its class centres on `informative_dims` input dimensions.
//! A fraction `overlap` of those dimensions is common to all tasks; the rest
//! are private to the task. A class is a mixture of `modes_per_class` centres;
//! examples are one of those centres plus isotropic noise on every input
//! dimension.

use ndarray::{Array1, Array2};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{seeded_rng, Dataset, Task};
use crate::error::{Error, Result};
use crate::nn::Batch;

const CENTRE_STREAM: u64 = 0x6365_6e74;
const SAMPLE_STREAM: u64 = 0x7361_6d70;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OverlapSpec {
    pub n_tasks: usize,
    /// Fraction of informative dimensions shared by all tasks, in `[0, 1]`.
    pub overlap: f64,
    pub informative_dims: usize,
    pub classes_per_task: usize,
    /// Gaussian components per class; more than one makes classes non-convex.
    pub modes_per_class: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Standard deviation of the class-centre coordinates.
    pub separation: f64,
    /// Standard deviation of the per-example noise.
    pub noise: f64,
}

impl Default for OverlapSpec {
    fn default() -> Self {
        OverlapSpec {
            n_tasks: 5,
            overlap: 0.0,
            informative_dims: 10,
            classes_per_task: 4,
            modes_per_class: 1,
            train_per_class: 150,
            test_per_class: 100,
            separation: 1.5,
            noise: 1.0,
        }
    }
}

impl OverlapSpec {
    /// Enough room for fully disjoint tasks, so the width is overlap-independent.
    pub fn input_dim(&self) -> usize {
        self.informative_dims * self.n_tasks
    }

    pub fn shared_dims(&self) -> usize {
        (self.overlap * self.informative_dims as f64).round() as usize
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::InvalidArgument(format!(
                "overlap {} outside [0, 1]",
                self.overlap
            )));
        }
        if self.n_tasks == 0 || self.informative_dims == 0 || self.classes_per_task < 2 || self.modes_per_class == 0 {
            return Err(Error::InvalidArgument(
                "need ≥ 1 task, ≥ 1 informative dimension, ≥ 2 classes and ≥ 1 mode per class".into(),
            ));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::InvalidArgument("empty synthetic split".into()));
        }
        if !(self.noise >= 0.0) || !(self.separation > 0.0) {
            return Err(Error::InvalidArgument("noise must be ≥ 0 and separation > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSequence {
    pub spec: OverlapSpec,
    pub seed: u64,
    pub tasks: Vec<Task>,
    /// Informative input dimensions of each task (the construction record).
    pub informative: Vec<Vec<usize>>,
}

impl SyntheticSequence {
    /// All tasks as one dataset with a shared label space; task `t`'s class
    /// `c` becomes label `t · classes_per_task + c`.
    pub fn merged(&self) -> Dataset {
        let c = self.spec.classes_per_task;
        let merge = |pick: fn(&Task) -> Batch| {
            let parts: Vec<Batch> = self.tasks.iter().map(pick).collect();
            let views: Vec<_> = parts.iter().map(|b| b.inputs.view()).collect();
            let inputs = ndarray::concatenate(ndarray::Axis(0), &views).expect("equal widths");
            let labels = parts
                .iter()
                .enumerate()
                .flat_map(|(t, b)| b.labels.iter().map(move |&y| t * c + y))
                .collect();
            Batch { inputs, labels }
        };
        Dataset {
            train: merge(|t| t.train.materialize()),
            test: merge(|t| t.test.materialize()),
            num_classes: c * self.tasks.len(),
        }
    }

    /// Class groups of [`SyntheticSequence::merged`], one per task.
    pub fn class_groups(&self) -> Vec<Vec<usize>> {
        let c = self.spec.classes_per_task;
        (0..self.tasks.len()).map(|t| (t * c..(t + 1) * c).collect()).collect()
    }
}

pub fn make_synthetic_overlap_sequence(spec: &OverlapSpec, seed: u64) -> Result<SyntheticSequence> {
    spec.validate()?;
    let dim = spec.input_dim();
    let shared = spec.shared_dims();
    let private = spec.informative_dims - shared;
    let centre_dist = Normal::new(0.0, spec.separation).expect("positive separation");
    let noise = Normal::new(0.0, spec.noise.max(f64::MIN_POSITIVE)).expect("finite noise");

    let mut tasks = Vec::with_capacity(spec.n_tasks);
    let mut informative = Vec::with_capacity(spec.n_tasks);
    for t in 0..spec.n_tasks {
        let dims: Vec<usize> = (0..shared)
            .chain(shared + t * private..shared + (t + 1) * private)
            .collect();
        let mut rng = seeded_rng(seed, CENTRE_STREAM + t as u64);
        let centres: Vec<Array1<f64>> = (0..spec.classes_per_task * spec.modes_per_class)
            .map(|_| {
                let mut c = Array1::zeros(dim);
                for &d in &dims {
                    c[d] = centre_dist.sample(&mut rng);
                }
                c
            })
            .collect();

        let mut rng = seeded_rng(seed, SAMPLE_STREAM + t as u64);
        let mut draw = |per_class: usize| {
            let n = per_class * spec.classes_per_task;
            let mut inputs = Array2::zeros((n, dim));
            let mut labels = Vec::with_capacity(n);
            // interleave classes (then modes) so any prefix is balanced
            for (i, mut row) in inputs.rows_mut().into_iter().enumerate() {
                let class = i % spec.classes_per_task;
                let mode = (i / spec.classes_per_task) % spec.modes_per_class;
                let centre = &centres[class * spec.modes_per_class + mode];
                for (v, c) in row.iter_mut().zip(centre.iter()) {
                    *v = c + if spec.noise > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                }
                labels.push(class);
            }
            Batch { inputs, labels }
        };
        let train = draw(spec.train_per_class);
        let test = draw(spec.test_per_class);
        tasks.push(Task::from_batches(
            t,
            format!("blobs-{}", t + 1),
            train,
            test,
            spec.classes_per_task,
        ));
        informative.push(dims);
    }
    Ok(SyntheticSequence {
        spec: spec.clone(),
        seed,
        tasks,
        informative,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn no_overlap_means_disjoint_dimensions() {
        let spec = OverlapSpec {
            overlap: 0.0,
            ..OverlapSpec::default()
        };
        let seq = make_synthetic_overlap_sequence(&spec, 1).unwrap();
        for a in 0..seq.informative.len() {
            for b in a + 1..seq.informative.len() {
                let x: HashSet<_> = seq.informative[a].iter().collect();
                assert!(seq.informative[b].iter().all(|d| !x.contains(d)));
            }
        }
    }

    #[test]
    fn full_overlap_means_identical_dimensions() {
        let spec = OverlapSpec {
            overlap: 1.0,
            ..OverlapSpec::default()
        };
        let seq = make_synthetic_overlap_sequence(&spec, 1).unwrap();
        assert!(seq.informative.iter().all(|d| d == &seq.informative[0]));
    }

    #[test]
    fn deterministic_in_seed() {
        let spec = OverlapSpec::default();
        let a = make_synthetic_overlap_sequence(&spec, 4).unwrap();
        let b = make_synthetic_overlap_sequence(&spec, 4).unwrap();
        let c = make_synthetic_overlap_sequence(&spec, 5).unwrap();
        assert_eq!(a.tasks[2].train.materialize(), b.tasks[2].train.materialize());
        assert_ne!(a.tasks[2].train.materialize(), c.tasks[2].train.materialize());
    }

    #[test]
    fn merged_labels_are_offset_per_task() {
        let spec = OverlapSpec {
            n_tasks: 3,
            ..OverlapSpec::default()
        };
        let seq = make_synthetic_overlap_sequence(&spec, 2).unwrap();
        let merged = seq.merged();
        assert_eq!(merged.num_classes, 12);
        assert_eq!(merged.train.len(), 3 * 4 * spec.train_per_class);
        let groups = seq.class_groups();
        assert_eq!(groups[2], vec![8, 9, 10, 11]);
        assert!(merged.train.labels[2 * 4 * spec.train_per_class..]
            .iter()
            .all(|&y| y >= 8));
    }

    #[test]
    fn classes_have_one_centre_per_mode() {
        let spec = OverlapSpec {
            modes_per_class: 3,
            noise: 0.0,
            ..OverlapSpec::default()
        };
        let seq = make_synthetic_overlap_sequence(&spec, 7).unwrap();
        let train = seq.tasks[1].train.materialize();
        for class in 0..spec.classes_per_task {
            let distinct: HashSet<Vec<u64>> = train
                .inputs
                .rows()
                .into_iter()
                .zip(&train.labels)
                .filter(|(_, &y)| y == class)
                .map(|(row, _)| row.iter().map(|v| v.to_bits()).collect())
                .collect();
            assert_eq!(distinct.len(), 3);
        }
        let one = make_synthetic_overlap_sequence(
            &OverlapSpec {
                modes_per_class: 1,
                ..spec.clone()
            },
            7,
        )
        .unwrap();
        let zero = OverlapSpec {
            modes_per_class: 0,
            ..spec
        };
        assert_ne!(one.tasks[1].train.materialize(), train);
        assert!(make_synthetic_overlap_sequence(&zero, 7).is_err());
    }

    #[test]
    fn invalid_overlap_rejected() {
        let spec = OverlapSpec {
            overlap: 1.5,
            ..OverlapSpec::default()
        };
        assert!(make_synthetic_overlap_sequence(&spec, 0).is_err());
    }
}
