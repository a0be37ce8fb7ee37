use std::ops::Range;
use std::sync::Arc;

use rand::seq::SliceRandom;

use super::Dataset;
use crate::error::{GfrError, Result};
use crate::rng::rng_from_seed;

/// One task of the stream: its classes and the dataset indices of its
/// examples.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    /// 1-based.
    pub task_index: usize,
    pub class_set: Vec<u32>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Position of this task's first class in the stream's class order,
    /// which is also its first row in the classifier head.
    pub class_offset: usize,
}

impl TaskSpec {
    pub fn class_range(&self) -> Range<usize> {
        self.class_offset..self.class_offset + self.class_set.len()
    }
}

/// Disjoint-class tasks over a shared dataset.
#[derive(Debug, Clone)]
pub struct TaskStream {
    pub tasks: Vec<TaskSpec>,
    pub class_order: Vec<u32>,
    pub seed: u64,
    pub dataset: Arc<Dataset>,
    position: Vec<usize>,
}

impl TaskStream {
    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// 1-based task lookup.
    pub fn task(&self, t: usize) -> Result<&TaskSpec> {
        t.checked_sub(1)
            .and_then(|i| self.tasks.get(i))
            .ok_or_else(|| GfrError::config(format!("task {t} not in a stream of {} tasks", self.tasks.len())))
    }

    /// Head row (position in the class order) of a dataset class id.
    pub fn class_position(&self, class: u32) -> usize {
        self.position[class as usize]
    }

    pub fn classes_through(&self, t: usize) -> usize {
        self.tasks[..t].iter().map(|task| task.class_set.len()).sum()
    }

    /// Class order restricted to tasks `1..=t`.
    pub fn seen_classes(&self, t: usize) -> &[u32] {
        &self.class_order[..self.classes_through(t)]
    }
}

/// Arranges the dataset's classes into a seeded order and splits it into a
/// first task holding `floor(fraction·K)` classes followed by
/// `num_remaining_tasks` equal tasks.
pub fn build_task_stream(
    dataset: Arc<Dataset>,
    first_task_fraction: f64,
    num_remaining_tasks: usize,
    seed: u64,
) -> Result<TaskStream> {
    let k = dataset.num_classes;
    if !(first_task_fraction > 0.0 && first_task_fraction <= 1.0) {
        return Err(GfrError::config(format!(
            "first_task_fraction must lie in (0, 1], got {first_task_fraction}"
        )));
    }
    let first = (first_task_fraction * k as f64 + 1e-9).floor() as usize;
    if first == 0 {
        return Err(GfrError::config(format!(
            "first_task_fraction {first_task_fraction} of {k} classes yields an empty first task"
        )));
    }
    let remaining = k - first;
    let per_task = match num_remaining_tasks {
        0 if remaining > 0 => {
            return Err(GfrError::config(format!(
                "{remaining} classes remain after the first task but no remaining tasks were requested"
            )))
        }
        0 => 0,
        n if !remaining.is_multiple_of(n) => {
            return Err(GfrError::config(format!(
                "{remaining} remaining classes are not divisible into {n} tasks"
            )))
        }
        n if remaining == 0 => {
            return Err(GfrError::config(format!(
                "no classes remain for {n} further tasks"
            )))
        }
        n => remaining / n,
    };

    let mut class_order: Vec<u32> = (0..k as u32).collect();
    class_order.shuffle(&mut rng_from_seed(seed));
    let mut position = vec![0; k];
    for (p, &c) in class_order.iter().enumerate() {
        position[c as usize] = p;
    }

    let sizes = std::iter::once(first).chain(std::iter::repeat_n(per_task, num_remaining_tasks));
    let mut tasks = Vec::with_capacity(num_remaining_tasks + 1);
    let mut offset = 0;
    for (i, size) in sizes.enumerate() {
        let class_set = class_order[offset..offset + size].to_vec();
        let range = offset..offset + size;
        let member = |label: u32| range.contains(&position[label as usize]);
        let train = (0..dataset.train.len()).filter(|&j| member(dataset.train.labels[j])).collect();
        let test = (0..dataset.test.len()).filter(|&j| member(dataset.test.labels[j])).collect();
        tasks.push(TaskSpec {
            task_index: i + 1,
            class_set,
            train,
            test,
            class_offset: offset,
        });
        offset += size;
    }
    Ok(TaskStream {
        tasks,
        class_order,
        seed,
        dataset,
        position,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_dataset, SyntheticSpec};
    use std::collections::HashSet;

    fn dataset(k: usize) -> Arc<Dataset> {
        Arc::new(
            synthetic_dataset(&SyntheticSpec {
                num_classes: k,
                image_side: 4,
                train_per_class: 3,
                test_per_class: 2,
                seed: 1,
            })
            .unwrap(),
        )
    }

    fn sizes(s: &TaskStream) -> Vec<usize> {
        s.tasks.iter().map(|t| t.class_set.len()).collect()
    }

    #[test]
    fn paper_shaped_splits() {
        let s = build_task_stream(dataset(100), 0.5, 5, 3).unwrap();
        assert_eq!(sizes(&s), vec![50, 10, 10, 10, 10, 10]);
        let s = build_task_stream(dataset(10), 0.5, 5, 3).unwrap();
        assert_eq!(sizes(&s), vec![5, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn indivisible_remainder_is_rejected() {
        let err = build_task_stream(dataset(10), 0.5, 4, 3).unwrap_err();
        assert!(matches!(&err, GfrError::Config(m) if m.contains('5') && m.contains('4')), "{err}");
    }

    #[test]
    fn empty_first_task_is_rejected() {
        assert!(matches!(build_task_stream(dataset(10), 0.05, 1, 3), Err(GfrError::Config(_))));
    }

    #[test]
    fn disjoint_covering_and_deterministic() {
        let ds = dataset(12);
        for seed in 0..20 {
            let s = build_task_stream(ds.clone(), 0.5, 3, seed).unwrap();
            let mut seen = HashSet::new();
            for t in &s.tasks {
                for &c in &t.class_set {
                    assert!(seen.insert(c), "class {c} appears twice");
                }
                assert!(t.train.iter().all(|&i| t.class_set.contains(&ds.train.labels[i])));
                assert!(t.test.iter().all(|&i| t.class_set.contains(&ds.test.labels[i])));
            }
            assert_eq!(seen.len(), 12);
            let concat: Vec<u32> = s.tasks.iter().flat_map(|t| t.class_set.clone()).collect();
            assert_eq!(concat, s.class_order);
            for t in 1..=s.len() {
                assert_eq!(s.classes_through(t), s.tasks[..t].iter().map(|x| x.class_set.len()).sum::<usize>());
            }
            let again = build_task_stream(ds.clone(), 0.5, 3, seed).unwrap();
            assert_eq!(again.class_order, s.class_order);
            assert_eq!(again.tasks, s.tasks);
        }
    }
}
