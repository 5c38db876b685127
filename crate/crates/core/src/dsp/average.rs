//! Shot averaging and signal-to-noise ratios.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::spin::{derive_seed, DetectionRecord};

/// Shots per parallel work item. Fixed so the summation order, and hence
/// every bit of the mean, does not depend on the thread count.
const CHUNK: usize = 32;

/// Pointwise mean of records on a common grid, weighted by their `n_avg`.
pub fn average_shots(records: &[DetectionRecord]) -> Result<DetectionRecord> {
    let first = records
        .first()
        .ok_or_else(|| Error::invalid("records", "nothing to average"))?;
    let mut sum = vec![0.0; first.len()];
    let mut total = 0usize;
    for r in records {
        if !first.same_grid(r) {
            return Err(Error::GridMismatch(format!(
                "record of {} samples at dt={:e}, start={:e} vs {} at dt={:e}, start={:e}",
                r.len(),
                r.dt,
                r.start_time,
                first.len(),
                first.dt,
                first.start_time
            )));
        }
        let w = r.n_avg.max(1) as f64;
        for (s, v) in sum.iter_mut().zip(&r.samples) {
            *s += w * v;
        }
        total += r.n_avg.max(1);
    }
    if records.len() == 1 {
        return Ok(first.clone());
    }
    let inv = 1.0 / total as f64;
    let mut out = first.clone();
    out.samples = sum.into_iter().map(|s| s * inv).collect();
    out.n_avg = total;
    out.metadata.insert("n_avg".into(), total.to_string());
    Ok(out)
}

/// Mean of `n` simulated shots. Shot `i` is produced by `shot(derive_seed(seed, i))`.
///
/// Shots run in parallel; partial sums are reduced in index order so the
/// result is bit-identical across runs and thread counts.
pub fn average_simulated<F>(n: usize, seed: u64, shot: F) -> Result<DetectionRecord>
where
    F: Fn(u64) -> Result<DetectionRecord> + Sync,
{
    if n == 0 {
        return Err(Error::invalid("n_avg", "must be >= 1"));
    }
    let first = shot(derive_seed(seed, 0))?;
    if n == 1 {
        return Ok(first.with_meta("n_avg", 1));
    }
    let len = first.len();
    let chunks: Vec<(usize, usize)> = (1..n)
        .step_by(CHUNK)
        .map(|lo| (lo, (lo + CHUNK).min(n)))
        .collect();
    let partial: Vec<Vec<f64>> = chunks
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = vec![0.0; len];
            for i in lo..hi {
                let r = shot(derive_seed(seed, i as u64))?;
                if !first.same_grid(&r) {
                    return Err(Error::GridMismatch(format!("shot {i} changed the grid")));
                }
                for (a, v) in acc.iter_mut().zip(&r.samples) {
                    *a += v;
                }
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut sum = first.samples.clone();
    for p in &partial {
        for (s, v) in sum.iter_mut().zip(p) {
            *s += v;
        }
    }
    let inv = 1.0 / n as f64;
    let mut out = first;
    out.samples = sum.into_iter().map(|s| s * inv).collect();
    out.n_avg = n;
    Ok(out.with_meta("n_avg", n))
}

/// Signal metric over noise standard deviation.
pub fn snr(signal: f64, noise_std: f64) -> Result<f64> {
    if !(noise_std > 0.0) || !noise_std.is_finite() {
        return Err(Error::invalid("noise_std", format!("{noise_std} must be > 0")));
    }
    Ok(signal / noise_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spin::{readout_noise, Sequence};

    fn rec(x: Vec<f64>) -> DetectionRecord {
        DetectionRecord::new(x, 1e-5, 0.0, Sequence::Continuous).unwrap()
    }

    #[test]
    fn single_record_is_identity() {
        let r = rec(vec![1.0, -2.0, 3.5]);
        assert_eq!(average_shots(std::slice::from_ref(&r)).unwrap(), r);
    }

    #[test]
    fn weighted_by_prior_averages() {
        let mut a = rec(vec![1.0, 1.0]);
        a.n_avg = 3;
        let b = rec(vec![5.0, -3.0]);
        let m = average_shots(&[a, b]).unwrap();
        assert_eq!(m.samples, vec![2.0, 0.0]);
        assert_eq!(m.n_avg, 4);
        assert_eq!(m.metadata["n_avg"], "4");
    }

    #[test]
    fn grid_mismatch_rejected() {
        let a = rec(vec![0.0; 4]);
        let b = rec(vec![0.0; 5]);
        assert!(matches!(average_shots(&[a, b]), Err(Error::GridMismatch(_))));
        assert!(average_shots(&[]).is_err());
    }

    #[test]
    fn simulated_average_is_stable_and_matches_sequential() {
        let shot = |s: u64| Ok(rec(readout_noise(64, 1e-5, 1e-6, s)?));
        let a = average_simulated(100, 9, shot).unwrap();
        let b = average_simulated(100, 9, shot).unwrap();
        assert_eq!(a.samples, b.samples);
        let all: Vec<_> = (0..100).map(|i| shot(derive_seed(9, i)).unwrap()).collect();
        let c = average_shots(&all).unwrap();
        for (x, y) in a.samples.iter().zip(&c.samples) {
            assert!((x - y).abs() < 1e-12 * y.abs().max(1e-3));
        }
    }

    #[test]
    fn snr_rules() {
        assert_eq!(snr(0.0, 1.0).unwrap(), 0.0);
        assert!(snr(1.0, 0.0).is_err());
        assert!((snr(4.1, 0.2).unwrap() - 20.5).abs() < 1e-12);
        assert!((snr(3.0 * 4.1, 3.0 * 0.2).unwrap() - 20.5).abs() < 1e-12);
    }
}
