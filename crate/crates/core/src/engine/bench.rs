//! Timing harness: median-of-iterations wall time for the dense and sparse
//! paths on identical inputs, with p10/p90 spread, speedup, and output
//! checksums.

use super::{checksum, execute_dense, execute_sparse, DenseModel, F32Batch};
use crate::pack::PackedModel;
use crate::Result;
use std::time::Instant;

/// One timed configuration.
#[derive(Clone, Debug)]
pub struct BenchRow {
    pub config: String,
    pub path: &'static str,
    pub threads: usize,
    pub ms_median: f64,
    pub ms_p10: f64,
    pub ms_p90: f64,
    /// dense median / this row's median.
    pub speedup: f64,
    pub checksum: f64,
}

#[derive(Clone, Debug)]
pub struct BenchReport {
    pub iters: usize,
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("config,path,threads,ms_median,ms_p10,ms_p90,speedup,checksum\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.4},{:.4},{:.4},{:.3},{:.6}\n",
                r.config, r.path, r.threads, r.ms_median, r.ms_p10, r.ms_p90, r.speedup, r.checksum
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>6} {:>7} {:>10} {:>10} {:>10} {:>8}\n",
            "config", "path", "threads", "median ms", "p10 ms", "p90 ms", "speedup"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<24} {:>6} {:>7} {:>10.3} {:>10.3} {:>10.3} {:>7.2}x\n",
                r.config, r.path, r.threads, r.ms_median, r.ms_p10, r.ms_p90, r.speedup
            ));
        }
        out
    }

    pub fn row(&self, path: &str, threads: usize) -> Option<&BenchRow> {
        self.rows
            .iter()
            .find(|r| r.path == path && r.threads == threads)
    }
}

fn percentile(sorted_ms: &[f64], q: f64) -> f64 {
    let idx = ((sorted_ms.len() - 1) as f64 * q).round() as usize;
    sorted_ms[idx]
}

fn median(sorted_ms: &[f64]) -> f64 {
    let n = sorted_ms.len();
    if n % 2 == 1 {
        sorted_ms[n / 2]
    } else {
        0.5 * (sorted_ms[n / 2 - 1] + sorted_ms[n / 2])
    }
}

fn time_ms(mut f: impl FnMut(), iters: usize, warmup: usize) -> Vec<f64> {
    for _ in 0..warmup {
        f();
    }
    let mut samples = Vec::with_capacity(iters);
    for _ in 0..iters {
        let t0 = Instant::now();
        f();
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    samples
}

/// Times the dense reference and the sparse path (at each requested thread
/// count) on identical inputs. At least three warmup iterations run per
/// path and are excluded from the statistics.
pub fn bench(
    packed: &PackedModel,
    dense: &DenseModel,
    input: &F32Batch,
    iters: usize,
    thread_counts: &[usize],
    config: &str,
) -> Result<BenchReport> {
    let iters = iters.max(1);
    let warmup = 3;

    // surface errors once before the timed loops
    let dense_out = execute_dense(dense, input)?;
    let dense_checksum = checksum(&dense_out);

    let mut samples = time_ms(
        || {
            let out = execute_dense(dense, input).expect("checked above");
            std::hint::black_box(&out);
        },
        iters,
        warmup,
    );
    samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let dense_median = median(&samples);
    let mut rows = vec![BenchRow {
        config: config.to_string(),
        path: "dense",
        threads: 1,
        ms_median: dense_median,
        ms_p10: percentile(&samples, 0.10),
        ms_p90: percentile(&samples, 0.90),
        speedup: 1.0,
        checksum: dense_checksum,
    }];

    for &threads in thread_counts {
        let threads = threads.max(1);
        let sparse_out = execute_sparse(packed, input, threads)?;
        let sparse_checksum = checksum(&sparse_out);
        let mut samples = time_ms(
            || {
                let out = execute_sparse(packed, input, threads).expect("checked above");
                std::hint::black_box(&out);
            },
            iters,
            warmup,
        );
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = median(&samples);
        rows.push(BenchRow {
            config: config.to_string(),
            path: "sparse",
            threads,
            ms_median: med,
            ms_p10: percentile(&samples, 0.10),
            ms_p90: percentile(&samples, 0.90),
            speedup: dense_median / med,
            checksum: sparse_checksum,
        });
    }

    Ok(BenchReport { iters, rows })
}
