//! Seeded random streams, complex-Gaussian sampling and the Gaussian tail
//! function with its inverse.

use num_complex::Complex;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8 with the stream id mapped onto ChaCha's native stream
/// selector, so two ids under one seed never share keystream. Sub-streams are
/// derived purely from the ids, independent of how much of the parent has
/// been consumed.
#[derive(Clone, Debug)]
pub struct PrngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

/// Serializable position of a [`PrngStream`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamState {
    pub seed: u64,
    pub stream_id: u64,
    pub word_pos: u128,
}

impl PrngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        PrngStream { seed, stream_id, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Fresh stream labelled `label` below this one. Does not consume `self`.
    pub fn substream(&self, label: u64) -> PrngStream {
        let id = splitmix64(self.stream_id.wrapping_mul(GOLDEN) ^ splitmix64(label));
        PrngStream::new(self.seed, id)
    }

    pub fn state(&self) -> StreamState {
        StreamState { seed: self.seed, stream_id: self.stream_id, word_pos: self.rng.get_word_pos() }
    }

    pub fn from_state(state: StreamState) -> Self {
        let mut s = PrngStream::new(state.seed, state.stream_id);
        s.rng.set_word_pos(state.word_pos);
        s
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform<T: Real>(&mut self) -> T {
        T::lit(self.rng.random::<f64>())
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform_in<T: Real>(&mut self, lo: T, hi: T) -> T {
        lo + (hi - lo) * self.uniform::<T>()
    }

    pub fn standard_normal<T: Real>(&mut self) -> T {
        T::lit(self.rng.sample::<f64, _>(StandardNormal))
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }
}

impl RngCore for PrngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Draws `z ~ CN(0, variance)`: independent real and imaginary parts with
/// variance `variance / 2` each.
pub fn sample_cgauss<T: Real>(rng: &mut PrngStream, variance: T) -> Result<Complex<T>> {
    if !(variance >= T::zero()) {
        return Err(Error::domain("complex Gaussian variance must be >= 0", variance.as_f64()));
    }
    if variance.is_zero() {
        return Ok(Complex::new(T::zero(), T::zero()));
    }
    let scale = (variance / T::lit(2.0)).sqrt();
    let re = rng.standard_normal::<T>();
    let im = rng.standard_normal::<T>();
    Ok(Complex::new(re * scale, im * scale))
}

/// Gaussian tail probability `Q(x) = ½ erfc(x / √2)`.
pub fn gaussian_q(x: f64) -> f64 {
    0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Acklam's rational approximation to the standard normal quantile
/// (relative error about 1e-9 before refinement).
fn normal_quantile_seed(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

/// Inverse of [`gaussian_q`] on `(0, 1)`.
///
/// Rational seed followed by Newton steps on `Q(x) - eps`. Inputs above ½
/// are reflected (`Q⁻¹(ε) = -Q⁻¹(1-ε)`, exact subtraction for ε ≥ ½) so the
/// iteration always runs in the upper tail where `Q` is computed to full
/// relative precision.
pub fn gaussian_q_inv(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::domain("decoding error probability must lie in (0, 1)", eps));
    }
    if eps == 0.5 {
        return Ok(0.0);
    }
    if eps > 0.5 {
        return gaussian_q_inv(1.0 - eps).map(|x| -x);
    }
    // Q⁻¹(ε) = Φ⁻¹(1-ε) = -Φ⁻¹(ε).
    let mut x = -normal_quantile_seed(eps);
    for _ in 0..50 {
        let step = (gaussian_q(x) - eps) / std_normal_pdf(x);
        x += step;
        if step.abs() <= 1e-15 * x.abs().max(1.0) {
            break;
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// erfc via the all-positive series
    /// erf(z) = 2/√π · e^{-z²} · Σ 2ⁿ z^{2n+1} / (1·3·…·(2n+1)).
    fn oracle_q(x: f64) -> f64 {
        let z = x.abs() / std::f64::consts::SQRT_2;
        let mut term = z;
        let mut sum = z;
        let mut n = 0.0;
        while term > 1e-18 * sum {
            n += 1.0;
            term *= 2.0 * z * z / (2.0 * n + 1.0);
            sum += term;
        }
        let erf = 2.0 / std::f64::consts::PI.sqrt() * (-z * z).exp() * sum;
        let upper = 0.5 * (1.0 - erf);
        if x >= 0.0 {
            upper
        } else {
            1.0 - upper
        }
    }

    fn oracle_q_inv(eps: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if oracle_q(mid) > eps {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn q_examples() {
        assert_eq!(gaussian_q(0.0), 0.5);
        assert!((gaussian_q(2.0) - 0.022_750_1).abs() < 1e-7);
        assert!((gaussian_q(2.0) - oracle_q(2.0)).abs() < 1e-14);
        assert!((gaussian_q(-1.3) - (1.0 - gaussian_q(1.3))).abs() < 1e-15);
    }

    #[test]
    fn q_inv_examples() {
        assert_eq!(gaussian_q_inv(0.5).unwrap(), 0.0);
        let a = gaussian_q_inv(0.022_750_1).unwrap();
        assert!((a - oracle_q_inv(0.022_750_1)).abs() < 1e-9);
        assert!((a - 2.0).abs() < 1e-4);
        let b = gaussian_q_inv(1e-5).unwrap();
        assert!((b - oracle_q_inv(1e-5)).abs() < 1e-9);
        assert!((b - 4.2649).abs() < 1e-3);
    }

    #[test]
    fn q_inv_rejects_out_of_range() {
        for bad in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(gaussian_q_inv(bad), Err(Error::Domain { .. })));
        }
    }

    #[test]
    fn q_inv_round_trip_and_monotone() {
        let mut rng = PrngStream::new(11, 0);
        let mut prev: Option<(f64, f64)> = None;
        let mut grid: Vec<f64> = (0..1000)
            .map(|_| {
                let u: f64 = rng.uniform();
                1e-9 + u * (1.0 - 2e-9)
            })
            .collect();
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for &eps in &grid {
            let x = gaussian_q_inv(eps).unwrap();
            assert!(((gaussian_q(x) - eps) / eps).abs() < 1e-8, "eps={eps}");
            assert!((gaussian_q(x) - eps).abs() < 1e-10);
            if let Some((pe, px)) = prev {
                if eps > pe {
                    assert!(x < px);
                }
            }
            prev = Some((eps, x));
        }
    }

    #[test]
    fn cgauss_zero_variance_and_errors() {
        let mut rng = PrngStream::new(1, 2);
        let z: Complex<f64> = sample_cgauss(&mut rng, 0.0).unwrap();
        assert_eq!(z, Complex::new(0.0, 0.0));
        assert!(sample_cgauss(&mut rng, -1.0_f64).is_err());
    }

    #[test]
    fn cgauss_power() {
        // |z|² ~ Exp(1): standard error of the mean is 1/√n.
        let mut rng = PrngStream::new(5, 0);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_cgauss(&mut rng, 1.0_f64).unwrap().norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.02, "{mean}");
        let se = 1.0 / (n as f64).sqrt();
        assert!((mean - 1.0).abs() < 3.0 * se);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let draw = |s: &mut PrngStream| (0..8).map(|_| s.next_u64()).collect::<Vec<_>>();
        let a = draw(&mut PrngStream::new(3, 4));
        let b = draw(&mut PrngStream::new(3, 4));
        let c = draw(&mut PrngStream::new(3, 5));
        assert_eq!(a, b);
        assert_ne!(a, c);
        let root = PrngStream::new(3, 4);
        assert_ne!(root.substream(1).stream_id(), root.substream(2).stream_id());
    }

    #[test]
    fn substream_ignores_parent_consumption() {
        let mut parent = PrngStream::new(9, 1);
        let before = parent.substream(7).next_u64();
        parent.next_u64();
        assert_eq!(parent.substream(7).next_u64(), before);
    }

    #[test]
    fn snapshot_restores_position() {
        let mut s = PrngStream::new(42, 3);
        let _: f64 = s.standard_normal();
        let state = s.state();
        let a: Vec<f64> = (0..5).map(|_| s.standard_normal()).collect();
        let mut r = PrngStream::from_state(state);
        let b: Vec<f64> = (0..5).map(|_| r.standard_normal()).collect();
        assert_eq!(a, b);
    }
}
