//! Gradually shifting class distributions (no hard task boundaries).
//!
//! Training is split into phases, one per class group. During phase `p` the
//! group `p` is drawn with probability 2/3 and the remaining 1/3 is spread
//! evenly over the other groups; within a group classes are uniform.

use rand::Rng;
use rand_distr::{weighted::WeightedIndex, Distribution};

use crate::error::{Error, Result};

pub const HIGH_PROBABILITY: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SoftBoundarySchedule {
    pub groups: Vec<Vec<usize>>,
    pub steps_per_phase: usize,
    num_classes: usize,
}

impl SoftBoundarySchedule {
    /// `groups` must partition `0..num_classes`.
    pub fn new(groups: Vec<Vec<usize>>, steps_per_phase: usize) -> Result<Self> {
        if groups.is_empty() || groups.iter().any(Vec::is_empty) || steps_per_phase == 0 {
            return Err(Error::InvalidArgument(
                "schedule needs non-empty groups and at least one step per phase".into(),
            ));
        }
        let num_classes = groups.iter().map(Vec::len).sum();
        let mut seen = vec![false; num_classes];
        for &c in groups.iter().flatten() {
            if c >= num_classes || std::mem::replace(&mut seen[c], true) {
                return Err(Error::InvalidArgument(format!(
                    "class groups must partition 0..{num_classes}"
                )));
            }
        }
        Ok(SoftBoundarySchedule {
            groups,
            steps_per_phase,
            num_classes,
        })
    }

    pub fn phases(&self) -> usize {
        self.groups.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn total_steps(&self) -> usize {
        self.phases() * self.steps_per_phase
    }

    pub fn phase_of(&self, step: usize) -> Result<usize> {
        if step >= self.total_steps() {
            return Err(Error::InvalidArgument(format!(
                "step {step} outside schedule of {} steps",
                self.total_steps()
            )));
        }
        Ok(step / self.steps_per_phase)
    }

    /// Probability of drawing from each group during `phase`.
    pub fn group_weights(&self, phase: usize) -> Vec<f64> {
        let g = self.phases();
        if g == 1 {
            return vec![1.0];
        }
        let low = (1.0 - HIGH_PROBABILITY) / (g - 1) as f64;
        (0..g)
            .map(|i| if i == phase { HIGH_PROBABILITY } else { low })
            .collect()
    }

    /// Probability of drawing each class during `phase`.
    pub fn class_weights(&self, phase: usize) -> Vec<f64> {
        let mut weights = vec![0.0; self.num_classes];
        for (group, w) in self.groups.iter().zip(self.group_weights(phase)) {
            for &c in group {
                weights[c] = w / group.len() as f64;
            }
        }
        weights
    }

    /// Draws `count` example indices for `phase`; `pools[c]` lists the examples of class `c`.
    pub fn sample_indices<R: Rng + ?Sized>(
        &self,
        phase: usize,
        pools: &[Vec<usize>],
        count: usize,
        rng: &mut R,
    ) -> Result<Vec<usize>> {
        if pools.len() != self.num_classes || pools.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument(
                "every class needs a non-empty example pool".into(),
            ));
        }
        let dist = WeightedIndex::new(self.class_weights(phase)).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Ok((0..count)
            .map(|_| {
                let pool = &pools[dist.sample(rng)];
                pool[rng.random_range(0..pool.len())]
            })
            .collect())
    }
}

/// Class-sampling weights in effect at `step`.
pub fn soft_boundary_sampler(schedule: &SoftBoundarySchedule, step: usize) -> Result<Vec<f64>> {
    Ok(schedule.class_weights(schedule.phase_of(step)?))
}

/// Example indices grouped by label.
pub fn class_pools(labels: &[usize], num_classes: usize) -> Vec<Vec<usize>> {
    let mut pools = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        pools[y].push(i);
    }
    pools
}
