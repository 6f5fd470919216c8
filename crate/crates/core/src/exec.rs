//! Work partitioning for the data-parallel loops.
//!
//! Work is always cut into `workers` contiguous chunks and partial results are
//! combined in ascending chunk order, so the floating-point result depends only
//! on the worker count and never on thread scheduling. Without the `parallel`
//! feature the same chunks run one after another on the calling thread and
//! produce bit-identical output.

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Exec {
    workers: usize,
}

impl Default for Exec {
    fn default() -> Self {
        Self::sequential()
    }
}

impl Exec {
    pub fn sequential() -> Self {
        Self { workers: 1 }
    }

    pub fn with_workers(workers: usize) -> Self {
        Self {
            workers: workers.max(1),
        }
    }

    /// One worker per available core.
    pub fn available() -> Self {
        Self::with_workers(std::thread::available_parallelism().map_or(1, |n| n.get()))
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// Runs `f` inside a thread pool sized to the worker count.
    pub fn install<R: Send>(&self, f: impl FnOnce() -> R + Send) -> R {
        #[cfg(feature = "parallel")]
        {
            if self.workers > 1 {
                if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(self.workers).build() {
                    return pool.install(f);
                }
            }
        }
        f()
    }

    /// Splits `0..len` into at most `workers` contiguous, non-empty ranges.
    pub fn chunks(&self, len: usize) -> Vec<Range<usize>> {
        if len == 0 {
            return Vec::new();
        }
        let parts = self.workers.min(len);
        let base = len / parts;
        let extra = len % parts;
        let mut out = Vec::with_capacity(parts);
        let mut start = 0;
        for p in 0..parts {
            let size = base + usize::from(p < extra);
            out.push(start..start + size);
            start += size;
        }
        out
    }

    /// Runs `f` on every chunk of `0..len` and returns the results in chunk order.
    pub fn map_chunks<R, F>(&self, len: usize, f: F) -> Vec<R>
    where
        R: Send,
        F: Fn(Range<usize>) -> R + Sync + Send,
    {
        let chunks = self.chunks(len);
        #[cfg(feature = "parallel")]
        {
            if chunks.len() > 1 {
                use rayon::prelude::*;
                return chunks.into_par_iter().map(f).collect();
            }
        }
        chunks.into_iter().map(f).collect()
    }

    /// Fills `out` row by row where each row has `width` elements.
    pub fn fill_rows<T, F>(&self, out: &mut [T], width: usize, f: F)
    where
        T: Send,
        F: Fn(usize, &mut [T]) + Sync + Send,
    {
        if width == 0 {
            return;
        }
        let rows = out.len() / width;
        let chunks = self.chunks(rows);
        let mut slices = Vec::with_capacity(chunks.len());
        let mut rest = out;
        for c in &chunks {
            let (head, tail) = rest.split_at_mut(c.len() * width);
            slices.push((c.start, head));
            rest = tail;
        }
        let run = |(start, block): (usize, &mut [T])| {
            for (r, row) in block.chunks_mut(width).enumerate() {
                f(start + r, row);
            }
        };
        #[cfg(feature = "parallel")]
        {
            if slices.len() > 1 {
                use rayon::prelude::*;
                slices.into_par_iter().for_each(run);
                return;
            }
        }
        slices.into_iter().for_each(run);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chunks_partition_the_range() {
        for workers in 1..9 {
            for len in 0..40 {
                let c = Exec::with_workers(workers).chunks(len);
                let total: usize = c.iter().map(|r| r.len()).sum();
                assert_eq!(total, len);
                assert!(c.iter().all(|r| !r.is_empty()));
                for w in c.windows(2) {
                    assert_eq!(w[0].end, w[1].start);
                }
            }
        }
    }

    #[test]
    fn map_chunks_keeps_order() {
        let sums = Exec::with_workers(4).map_chunks(10, |r| r.sum::<usize>());
        assert_eq!(sums, vec![3, 12, 13, 17]);
    }

    #[test]
    fn fill_rows_visits_each_row_once() {
        let mut out = vec![0usize; 7 * 3];
        Exec::with_workers(3).fill_rows(&mut out, 3, |i, row| row.iter_mut().for_each(|v| *v += i));
        for (i, row) in out.chunks(3).enumerate() {
            assert!(row.iter().all(|&v| v == i));
        }
    }
}
