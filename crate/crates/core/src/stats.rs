//! Streaming mean/variance with order-deterministic merging.

use rayon::prelude::*;

/// Welford accumulator.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Welford {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Welford {
    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &Welford) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n as f64 / n as f64;
        self.m2 += o.m2 + d * d * (self.n as f64) * (o.n as f64) / n as f64;
        self.n = n;
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }

    pub fn estimate(&self) -> Estimate {
        Estimate { value: self.mean, se: self.se(), n: self.n }
    }
}

/// Monte Carlo estimate with its standard error and sample count.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
    pub n: u64,
}

impl Estimate {
    /// `|self − other| ≤ k·sqrt(se² + se_other²)`.
    pub fn agrees(&self, other: &Estimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * self.se.hypot(other.se)
    }

    /// `|self − x| ≤ k·se + abs_tol`.
    pub fn within(&self, x: f64, k: f64, abs_tol: f64) -> bool {
        (self.value - x).abs() <= k * self.se + abs_tol
    }
}

/// Units per deterministic work chunk.
pub const CHUNK: usize = 1024;

/// Runs `work` over `[0, n_units)` in fixed chunks (possibly in parallel) and
/// returns per-chunk results in chunk order.
pub fn chunked<S, F>(n_units: usize, work: F) -> Vec<S>
where
    S: Send,
    F: Fn(std::ops::Range<usize>) -> S + Sync + Send,
{
    let n_chunks = n_units.div_ceil(CHUNK);
    (0..n_chunks)
        .into_par_iter()
        .map(|c| work(c * CHUNK..((c + 1) * CHUNK).min(n_units)))
        .collect()
}

/// Merges per-chunk accumulator vectors element-wise, in order.
pub fn merge_all(parts: &[Vec<Welford>]) -> Vec<Welford> {
    let mut out = vec![Welford::default(); parts.first().map_or(0, |p| p.len())];
    for p in parts {
        for (a, b) in out.iter_mut().zip(p) {
            a.merge(b);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn merge_equals_sequential(xs in prop::collection::vec(-10.0f64..10.0, 2..200), cut in 0usize..200) {
            let cut = cut.min(xs.len());
            let mut all = Welford::default();
            xs.iter().for_each(|&x| all.push(x));
            let mut a = Welford::default();
            let mut b = Welford::default();
            xs[..cut].iter().for_each(|&x| a.push(x));
            xs[cut..].iter().for_each(|&x| b.push(x));
            a.merge(&b);
            prop_assert!((a.mean - all.mean).abs() < 1e-12);
            prop_assert!((a.variance() - all.variance()).abs() < 1e-9);
        }
    }
}
