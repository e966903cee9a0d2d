//! Sampling and summation helpers with reproducible results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{QstError, Result};

/// Neumaier compensated sum; the result depends only on the order of `add` calls.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    compensation: f64,
}

impl NeumaierSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.compensation
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::new();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Haar-random points `(a1, a2)` on the two-level space `a1 |0> + e^{i a2} sqrt(1 - a1^2) |1>`:
/// `a1 = sqrt(U)`, `a2 = 2 pi U'` from a ChaCha8 stream seeded with `seed`.
pub fn haar_samples(n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    if n == 0 {
        return Err(QstError::Empty("Haar sample count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let phase: f64 = rng.random();
            (u.sqrt(), std::f64::consts::TAU * phase)
        })
        .collect())
}

fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(QstError::InvalidParameter(format!("{} vs {} values", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(QstError::Empty("need at least two points for a rank correlation".into()));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(QstError::InvalidParameter("constant input has no rank correlation".into()));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_beats_naive() {
        let xs = [1.0, 1e100, 1.0, -1e100];
        let s: NeumaierSum = xs.iter().copied().collect();
        assert_eq!(s.total(), 2.0);
    }

    #[test]
    fn haar_samples_are_reproducible() {
        let a = haar_samples(100, 7).unwrap();
        let b = haar_samples(100, 7).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, haar_samples(100, 8).unwrap());
        assert!(a.iter().all(|&(a1, a2)| (0.0..=1.0).contains(&a1) && (0.0..std::f64::consts::TAU).contains(&a2)));
        assert!(haar_samples(0, 1).is_err());
    }

    #[test]
    fn haar_weight_is_uniform() {
        // |a1|^2 is uniform on [0, 1]: mean 1/2, second moment 1/3.
        let s = haar_samples(200_000, 3).unwrap();
        let n = s.len() as f64;
        let m1 = s.iter().map(|&(a, _)| a * a).sum::<f64>() / n;
        let m2 = s.iter().map(|&(a, _)| a.powi(4)).sum::<f64>() / n;
        assert!((m1 - 0.5).abs() < 5e-3);
        assert!((m2 - 1.0 / 3.0).abs() < 5e-3);
    }

    #[test]
    fn spearman_examples() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert!((spearman(&x, &[5.0, 6.0, 7.0, 8.0, 7.0]).unwrap() - 0.820_782_681_668_123_6).abs() < 1e-12);
        assert!((spearman(&x, &[9.0, 7.0, 5.0, 3.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(spearman(&x, &[1.0; 5]).is_err());
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
