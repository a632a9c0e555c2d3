//! Partitioned map-reduce over row ranges.

use std::ops::Range;

/// A contiguous slice of rows handled by one map task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionPartition {
    pub index: usize,
    pub rows: Range<usize>,
}

/// Splits `0..n` into `parts` disjoint contiguous ranges covering every row.
/// Earlier partitions take the remainder, so sizes differ by at most one.
pub fn partition_rows(n: usize, parts: usize) -> Vec<ExecutionPartition> {
    let parts = parts.max(1);
    let base = n / parts;
    let extra = n % parts;
    let mut start = 0;
    (0..parts)
        .map(|index| {
            let len = base + usize::from(index < extra);
            let rows = start..start + len;
            start += len;
            ExecutionPartition { index, rows }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Executor {
    partitions: usize,
    parallel: bool,
}

impl Default for Executor {
    fn default() -> Self {
        let n = std::thread::available_parallelism().map_or(1, |n| n.get());
        Self::new(n)
    }
}

impl Executor {
    /// Runs partitions on the rayon pool when the `parallel` feature is on.
    pub fn new(partitions: usize) -> Self {
        Self { partitions: partitions.max(1), parallel: true }
    }

    /// Same partitioning, evaluated on the calling thread.
    pub fn sequential(partitions: usize) -> Self {
        Self { partitions: partitions.max(1), parallel: false }
    }

    pub fn partitions(&self) -> usize {
        self.partitions
    }

    pub fn is_parallel(&self) -> bool {
        self.parallel && cfg!(feature = "parallel")
    }

    /// Maps every partition, then merges the partial states left to right.
    /// The merge order is fixed, so results do not depend on scheduling.
    pub fn map_reduce<A, M, R>(&self, n: usize, map: M, merge: R) -> A
    where
        A: Send,
        M: Fn(&ExecutionPartition) -> A + Sync,
        R: Fn(A, A) -> A,
    {
        let parts = partition_rows(n, self.partitions);
        let partials = self.map_all(&parts, &map);
        partials
            .into_iter()
            .reduce(merge)
            .expect("at least one partition")
    }

    #[cfg(feature = "parallel")]
    fn map_all<A: Send, M>(&self, parts: &[ExecutionPartition], map: &M) -> Vec<A>
    where
        M: Fn(&ExecutionPartition) -> A + Sync,
    {
        use rayon::prelude::*;
        if self.parallel && parts.len() > 1 {
            parts.par_iter().map(map).collect()
        } else {
            parts.iter().map(map).collect()
        }
    }

    #[cfg(not(feature = "parallel"))]
    fn map_all<A: Send, M>(&self, parts: &[ExecutionPartition], map: &M) -> Vec<A>
    where
        M: Fn(&ExecutionPartition) -> A + Sync,
    {
        parts.iter().map(map).collect()
    }
}

/// Neumaier compensated sum. Merging two sums keeps both compensation terms, so the
/// total is close to the exactly rounded sum whatever the partitioning.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(mut self, other: CompensatedSum) -> CompensatedSum {
        self.add(other.sum);
        self.comp += other.comp;
        self
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}
