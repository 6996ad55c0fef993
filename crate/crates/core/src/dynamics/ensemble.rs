//! Trajectory ensembles with deterministic per-trajectory random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::engine::{Propagator, Trajectory};
use super::WavePacket;
use crate::error::{Error, Result};

/// Random stream of trajectory `index`: ChaCha20 keyed by `master_seed`
/// (expanded by `SeedableRng::seed_from_u64`) with the stream id set to
/// `index`. Streams never overlap, so results do not depend on which thread
/// runs which trajectory.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
    rng.set_stream(index);
    rng
}

/// Ensemble populations at one sample time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    /// us.
    pub t: f64,
    pub populations: [f64; 3],
    /// `|mean over n - mean over the first n/2|` per channel.
    pub error: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    /// Trajectories requested.
    pub n: usize,
    pub completed: usize,
    /// Indices and messages of trajectories that failed; they are excluded
    /// from every average.
    pub failures: Vec<(usize, String)>,
    pub p_r: f64,
    /// `|mean over n - mean over the first n/2|`.
    pub error_bar: f64,
    /// Sample standard deviation of `p_r` over `sqrt(completed)`.
    pub standard_error: f64,
    /// Final populations of the normalized states.
    pub populations: [f64; 3],
    pub population_error: [f64; 3],
    pub mean_jumps: f64,
    pub samples: Vec<SampleStats>,
    /// Ascending wavenumbers, um^-1.
    pub wavenumbers: Vec<f64>,
    /// Channel 1 + 3 momentum density (per um^-1) on `wavenumbers`.
    /// Positive wavenumbers are the transmitted part, negative the reflected.
    pub momentum_density: Vec<f64>,
}

impl EnsembleResult {
    pub fn failed(&self) -> usize {
        self.failures.len()
    }
}

/// Compact per-trajectory record kept until the final reduction.
struct Summary {
    index: usize,
    p_r: f64,
    populations: [f64; 3],
    jumps: usize,
    samples: Vec<[f64; 3]>,
}

/// Runs `n` trajectories from `wp0`. `n` must be even and at least 2.
///
/// Trajectories are executed in parallel in blocks and reduced in index
/// order, so the result depends only on `(master_seed, n)` and the
/// propagator.
pub fn run_ensemble(prop: &Propagator, wp0: &WavePacket, n: usize, master_seed: u64) -> Result<EnsembleResult> {
    if n < 2 || n % 2 != 0 {
        return Err(Error::invalid("n", format!("ensemble size must be even and >= 2, got {n}")));
    }
    let grid = prop.grid();
    let block = (4 * rayon::current_num_threads()).max(1);
    let mut spectrum_sum = vec![0.0; grid.n];
    let mut summaries: Vec<Summary> = Vec::with_capacity(n);
    let mut failures = Vec::new();
    let mut first_error: Option<Error> = None;

    for start in (0..n).step_by(block) {
        let end = (start + block).min(n);
        let results: Vec<Result<Trajectory>> = (start..end)
            .into_par_iter()
            .map(|i| prop.run(wp0, &mut trajectory_rng(master_seed, i as u64)))
            .collect();
        for (offset, result) in results.into_iter().enumerate() {
            let index = start + offset;
            match result {
                Ok(traj) => {
                    spectrum_sum.iter_mut().zip(&traj.spectrum).for_each(|(s, p)| *s += p);
                    summaries.push(Summary {
                        index,
                        p_r: traj.p_r,
                        populations: traj.state.populations(),
                        jumps: traj.jumps.len(),
                        samples: traj.samples,
                    });
                }
                Err(e) => {
                    log::warn!("trajectory {index} failed: {e}");
                    failures.push((index, e.to_string()));
                    first_error.get_or_insert(e);
                }
            }
        }
    }
    if summaries.is_empty() {
        return Err(first_error.expect("a failed ensemble records its errors"));
    }

    let completed = summaries.len();
    let half: Vec<&Summary> = summaries.iter().filter(|s| s.index < n / 2).collect();
    let split = |f: &dyn Fn(&Summary) -> f64| -> (f64, f64) {
        let all = summaries.iter().map(f).sum::<f64>() / completed as f64;
        let first = if half.is_empty() {
            f64::NAN
        } else {
            half.iter().map(|s| f(s)).sum::<f64>() / half.len() as f64
        };
        let bar = if first.is_nan() { f64::INFINITY } else { (all - first).abs() };
        (all, bar)
    };

    let (p_r, error_bar) = split(&|s| s.p_r);
    let variance = if completed > 1 {
        summaries.iter().map(|s| (s.p_r - p_r).powi(2)).sum::<f64>() / (completed - 1) as f64
    } else {
        0.0
    };
    let mut populations = [0.0; 3];
    let mut population_error = [0.0; 3];
    for c in 0..3 {
        (populations[c], population_error[c]) = split(&|s| s.populations[c]);
    }
    let times = prop.sample_times();
    let samples = times
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut stats = SampleStats {
                t,
                populations: [0.0; 3],
                error: [0.0; 3],
            };
            for c in 0..3 {
                (stats.populations[c], stats.error[c]) = split(&|s| s.samples[i][c]);
            }
            stats
        })
        .collect();

    let dk = 2.0 * std::f64::consts::PI / grid.length();
    let k = grid.wavenumbers();
    let order: Vec<usize> = (grid.n / 2..grid.n).chain(0..grid.n / 2).collect();
    Ok(EnsembleResult {
        n,
        completed,
        failures,
        p_r,
        error_bar,
        standard_error: (variance / completed as f64).sqrt(),
        populations,
        population_error,
        mean_jumps: summaries.iter().map(|s| s.jumps as f64).sum::<f64>() / completed as f64,
        samples,
        wavenumbers: order.iter().map(|&j| k[j]).collect(),
        momentum_density: order.iter().map(|&j| spectrum_sum[j] / completed as f64 / dk).collect(),
    })
}
