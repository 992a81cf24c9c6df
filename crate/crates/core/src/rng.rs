//! Deterministic, splittable random-number streams. A stream is a PCG-64
//! generator whose 128-bit state and stream constant are derived by mixing
//! (seed, stream_index), so any substream is O(1) to construct and two
//! distinct (seed, index) pairs give unrelated sequences regardless of the
//! order in which replications run.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Poisson, StandardNormal};
use rand_pcg::Pcg64;

use crate::error::{Error, Result};
use crate::linalg;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One reproducible random stream, identified by (seed, stream_index).
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_index: u64,
    gen: Pcg64,
}

impl RngStream {
    /// The `index`-th substream of the given seed.
    pub fn substream(seed: u64, index: u64) -> Self {
        let mut s = seed ^ 0xD6E8_FEB8_6659_FD93;
        let a = splitmix64(&mut s);
        let b = splitmix64(&mut s);
        let mut t = index ^ 0xA076_1D64_78BD_642F;
        let c = splitmix64(&mut t);
        let d = splitmix64(&mut t);
        let state = ((a ^ c) as u128) << 64 | (b ^ d.rotate_left(17)) as u128;
        let inc = (c as u128) << 64 | (b.wrapping_add(d)) as u128;
        RngStream {
            seed,
            stream_index: index,
            gen: Pcg64::new(state, inc),
        }
    }

    /// A nested stream derived from this stream's identity and a tag.
    /// Children of distinct tags are independent; deriving is pure.
    pub fn child(&self, tag: u64) -> Self {
        let mut t = self.stream_index ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0x1F83_D9AB_FB41_BD6B;
        let mixed = splitmix64(&mut t) ^ splitmix64(&mut t).rotate_left(32);
        RngStream::substream(self.seed, mixed)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_index(&self) -> u64 {
        self.stream_index
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.gen.random::<f64>()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.gen)
    }

    /// Uniform index in 0..n.
    pub fn pick(&mut self, n: usize) -> usize {
        self.gen.random_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> Result<bool> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "bernoulli probability {p} outside [0,1]"
            )));
        }
        Ok(self.gen.random::<f64>() < p)
    }

    pub fn poisson(&mut self, lambda: f64) -> Result<u64> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "poisson rate {lambda} must be positive and finite"
            )));
        }
        let d = Poisson::new(lambda)
            .map_err(|e| Error::InvalidParameter(format!("poisson({lambda}): {e}")))?;
        Ok(d.sample(&mut self.gen) as u64)
    }

    /// Gamma draw with the given shape and scale.
    pub fn gamma(&mut self, shape: f64, scale: f64) -> Result<f64> {
        if !(shape > 0.0) || !(scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "gamma({shape}, {scale}) requires positive parameters"
            )));
        }
        let g = Gamma::new(shape, scale)
            .map_err(|e| Error::InvalidParameter(format!("gamma({shape}, {scale}): {e}")))?;
        Ok(g.sample(&mut self.gen))
    }

    /// Negative binomial with mean `lambda` and dispersion `k`
    /// (variance lambda + lambda^2/k), drawn as a Poisson-Gamma mixture:
    /// G ~ Gamma(shape=k, scale=lambda/k), then Poisson(G).
    pub fn neg_binomial(&mut self, lambda: f64, k: f64) -> Result<u64> {
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "neg_binomial mean {lambda} must be positive and finite"
            )));
        }
        if !(k > 0.0) || !k.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "neg_binomial dispersion {k} must be positive and finite"
            )));
        }
        let gamma = Gamma::new(k, lambda / k)
            .map_err(|e| Error::InvalidParameter(format!("gamma({k}, {}): {e}", lambda / k)))?;
        let g: f64 = gamma.sample(&mut self.gen);
        if g <= 1e-300 {
            return Ok(0);
        }
        let d = Poisson::new(g)
            .map_err(|e| Error::InvalidParameter(format!("poisson mixture rate {g}: {e}")))?;
        Ok(d.sample(&mut self.gen) as u64)
    }

    /// One draw from N(mean, cov). `cov` must be symmetric PSD.
    pub fn multivariate_normal(&mut self, mean: &[f64], cov: &Array2<f64>) -> Result<Vec<f64>> {
        let p = mean.len();
        if cov.nrows() != p || cov.ncols() != p {
            return Err(Error::InvalidParameter(
                "multivariate_normal: dimension mismatch between mean and cov".into(),
            ));
        }
        let l = linalg::cholesky_psd(cov)?;
        Ok(self.mvn_with_factor(mean, &l))
    }

    /// Draw from N(mean, L L') given a precomputed Cholesky factor; avoids
    /// re-factorizing per draw.
    pub fn mvn_with_factor(&mut self, mean: &[f64], l: &Array2<f64>) -> Vec<f64> {
        let p = mean.len();
        let z: Vec<f64> = (0..p).map(|_| self.normal()).collect();
        let mut out = mean.to_vec();
        for i in 0..p {
            for (j, zj) in z.iter().enumerate().take(i + 1) {
                out[i] += l[[i, j]] * zj;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn substream_is_deterministic() {
        let mut a = RngStream::substream(42, 7);
        let mut b = RngStream::substream(42, 7);
        for _ in 0..1000 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn adjacent_substreams_uncorrelated() {
        let n = 1_000_000;
        let mut a = RngStream::substream(42, 7);
        let mut b = RngStream::substream(42, 8);
        let (mut sa, mut sb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let x = a.uniform();
            let y = b.uniform();
            sa += x;
            sb += y;
            saa += x * x;
            sbb += y * y;
            sab += x * y;
        }
        let nf = n as f64;
        let cov = sab / nf - (sa / nf) * (sb / nf);
        let va = saa / nf - (sa / nf).powi(2);
        let vb = sbb / nf - (sb / nf).powi(2);
        let r = cov / (va * vb).sqrt();
        assert!(r.abs() < 0.01, "correlation between substreams: {r}");
    }

    #[test]
    fn uniforms_pass_chi_square_uniformity() {
        let n = 1_000_000;
        let bins = 100usize;
        let mut counts = vec![0u64; bins];
        let mut s = RngStream::substream(42, 0);
        for _ in 0..n {
            let u = s.uniform();
            let b = ((u * bins as f64) as usize).min(bins - 1);
            counts[b] += 1;
        }
        let expected = n as f64 / bins as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // chi-square critical value, df = 99, alpha = 0.001
        assert!(chi2 < 148.230, "chi2 = {chi2}");
    }

    #[test]
    fn neg_binomial_moments_match_parameterisation() {
        let (lambda, k) = (1.7, 1.3);
        let n = 1_000_000;
        let mut s = RngStream::substream(99, 0);
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let x = s.neg_binomial(lambda, k).unwrap() as f64;
            sum += x;
            sum2 += x * x;
        }
        let m = sum / n as f64;
        let v = sum2 / n as f64 - m * m;
        let want_var = lambda + lambda * lambda / k;
        assert!((m - lambda).abs() < 0.01, "mean {m}");
        assert!(
            (v - want_var).abs() < 0.02 * want_var,
            "var {v} vs {want_var}"
        );
    }

    #[test]
    fn bernoulli_edge_cases() {
        let mut s = RngStream::substream(1, 1);
        for _ in 0..100 {
            assert!(!s.bernoulli(0.0).unwrap());
            assert!(s.bernoulli(1.0).unwrap());
        }
        assert!(s.bernoulli(1.5).is_err());
    }

    #[test]
    fn multivariate_normal_correlation() {
        let cov = array![[1.0, 0.3, 0.3], [0.3, 1.0, 0.3], [0.3, 0.3, 1.0]];
        let l = linalg::cholesky_psd(&cov).unwrap();
        let mut s = RngStream::substream(7, 3);
        let n = 1_000_000;
        let mean = [0.0, 0.0, 0.0];
        let (mut s1, mut s2, mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let v = s.mvn_with_factor(&mean, &l);
            s1 += v[0];
            s2 += v[1];
            s11 += v[0] * v[0];
            s22 += v[1] * v[1];
            s12 += v[0] * v[1];
        }
        let nf = n as f64;
        let cov12 = s12 / nf - (s1 / nf) * (s2 / nf);
        let v1 = s11 / nf - (s1 / nf).powi(2);
        let v2 = s22 / nf - (s2 / nf).powi(2);
        let r = cov12 / (v1 * v2).sqrt();
        assert!((r - 0.3).abs() < 0.01, "pairwise correlation {r}");
    }

    #[test]
    fn multivariate_normal_rejects_non_psd() {
        let cov = array![[1.0, 2.0], [2.0, 1.0]];
        let mut s = RngStream::substream(1, 0);
        assert!(s.multivariate_normal(&[0.0, 0.0], &cov).is_err());
    }

    #[test]
    fn child_streams_differ_by_tag() {
        let base = RngStream::substream(5, 100);
        let mut c1 = base.child(1);
        let mut c2 = base.child(2);
        let mut c1b = base.child(1);
        let x1 = c1.uniform();
        assert_eq!(x1.to_bits(), c1b.uniform().to_bits());
        assert_ne!(x1.to_bits(), c2.uniform().to_bits());
    }
}
