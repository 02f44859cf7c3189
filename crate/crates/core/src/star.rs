//! Cell-wise single-connected STAR surface: per-element transmission and
//! reflection coefficients under the energy-splitting constraint
//! `|Ω_t^f|² + |Ω_r^f|² = 1`.

use ndarray::Array2;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{wrap_phase, Real};

/// Per-element phases (radians, wrapped to `[0, 2π)`) and the transmitted
/// energy fraction `beta`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarConfig<T> {
    pub theta_t: Vec<T>,
    pub theta_r: Vec<T>,
    pub beta: Vec<T>,
}

/// Diagonal of an `F × F` diagonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagonal<T>(pub Vec<Complex<T>>);

impl<T: Real> Diagonal<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_dense(&self) -> Array2<Complex<T>> {
        let n = self.0.len();
        let mut m = Array2::from_elem((n, n), Complex::new(T::zero(), T::zero()));
        for (i, v) in self.0.iter().enumerate() {
            m[[i, i]] = *v;
        }
        m
    }
}

/// `(Ω_t, Ω_r)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StarMatrices<T> {
    pub transmit: Diagonal<T>,
    pub reflect: Diagonal<T>,
}

impl<T: Real> StarConfig<T> {
    pub fn elements(&self) -> usize {
        self.beta.len()
    }

    /// Full transmission with zero phases.
    pub fn transmit_only(elements: usize) -> Self {
        StarConfig { theta_t: vec![T::zero(); elements], theta_r: vec![T::zero(); elements], beta: vec![T::one(); elements] }
    }

    /// `Ω_t = diag(√β e^{jθ_t})`, `Ω_r = diag(√(1-β) e^{jθ_r})`.
    pub fn build_matrices(&self) -> Result<StarMatrices<T>> {
        let f = self.beta.len();
        if self.theta_t.len() != f {
            return Err(Error::dim("transmission phases", f, self.theta_t.len()));
        }
        if self.theta_r.len() != f {
            return Err(Error::dim("reflection phases", f, self.theta_r.len()));
        }
        if let Some(&b) = self.beta.iter().find(|&&b| !(b >= T::zero() && b <= T::one())) {
            return Err(Error::domain("energy split beta outside [0, 1]", b.as_f64()));
        }
        let transmit = self.beta.iter().zip(&self.theta_t).map(|(&b, &th)| Complex::from_polar(b.sqrt(), th)).collect();
        let reflect =
            self.beta.iter().zip(&self.theta_r).map(|(&b, &th)| Complex::from_polar((T::one() - b).sqrt(), th)).collect();
        Ok(StarMatrices { transmit: Diagonal(transmit), reflect: Diagonal(reflect) })
    }
}

impl<T: Real> StarMatrices<T> {
    /// `|Σ_s |Ω_s^f|² − 1|` per element.
    pub fn unit_power_residuals(&self) -> Vec<T> {
        self.transmit
            .0
            .iter()
            .zip(&self.reflect.0)
            .map(|(t, r)| (t.norm_sqr() + r.norm_sqr() - T::one()).abs())
            .collect()
    }
}

/// Maps unconstrained amplitudes and phases onto the feasible set.
///
/// `beta = a_t² / (a_t² + a_r²)` with `a = |raw|`; both amplitudes zero gives
/// `beta = ½`. Phases are wrapped to `[0, 2π)`.
pub fn project_feasible<T: Real>(raw_t: &[T], raw_r: &[T], raw_theta_t: &[T], raw_theta_r: &[T]) -> StarConfig<T> {
    let half = T::lit(0.5);
    let beta = raw_t
        .iter()
        .zip(raw_r)
        .map(|(&t, &r)| {
            let (pt, pr) = (t * t, r * r);
            let total = pt + pr;
            if total > T::zero() {
                pt / total
            } else {
                half
            }
        })
        .collect();
    StarConfig {
        theta_t: raw_theta_t.iter().map(|&th| wrap_phase(th)).collect(),
        theta_r: raw_theta_r.iter().map(|&th| wrap_phase(th)).collect(),
        beta,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::PrngStream;

    fn random_cfg(rng: &mut PrngStream, f: usize) -> StarConfig<f64> {
        let raw = |rng: &mut PrngStream, lo: f64, hi: f64| (0..f).map(|_| rng.uniform_in(lo, hi)).collect::<Vec<_>>();
        let (a, b) = (raw(rng, -3.0, 3.0), raw(rng, -3.0, 3.0));
        let (c, d) = (raw(rng, -10.0, 10.0), raw(rng, -10.0, 10.0));
        project_feasible(&a, &b, &c, &d)
    }

    #[test]
    fn full_transmission() {
        let m = StarConfig::<f64>::transmit_only(3).build_matrices().unwrap();
        let t = m.transmit.to_dense();
        let r = m.reflect.to_dense();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert_eq!(t[[i, j]], Complex::new(want, 0.0));
                assert_eq!(r[[i, j]].norm(), 0.0);
            }
        }
    }

    #[test]
    fn even_split_magnitudes() {
        let cfg = StarConfig { theta_t: vec![0.3, 2.0], theta_r: vec![5.0, 1.0], beta: vec![0.5, 0.5] };
        let m = cfg.build_matrices().unwrap();
        for v in m.transmit.0.iter().chain(&m.reflect.0) {
            assert!((v.norm() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        }
    }

    #[test]
    fn unitary_sum() {
        let mut rng = PrngStream::new(3, 0);
        for _ in 0..100 {
            let m = random_cfg(&mut rng, 5).build_matrices().unwrap();
            let (t, r) = (m.transmit.to_dense(), m.reflect.to_dense());
            let gram = t.t().mapv(|v| v.conj()).dot(&t) + r.t().mapv(|v| v.conj()).dot(&r);
            for i in 0..5 {
                for j in 0..5 {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!((gram[[i, j]] - Complex::new(want, 0.0)).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn beta_out_of_range_is_rejected() {
        let cfg = StarConfig { theta_t: vec![0.0], theta_r: vec![0.0], beta: vec![1.2] };
        assert!(cfg.build_matrices().is_err());
    }

    #[test]
    fn projection_examples() {
        let c = project_feasible(&[3.0_f64], &[4.0], &[0.0], &[0.0]);
        assert!((c.beta[0] - 0.36_f64).abs() < 1e-15);
        let m = c.build_matrices().unwrap();
        assert!((m.transmit.0[0].norm() - 0.6).abs() < 1e-15);
        assert!((m.reflect.0[0].norm() - 0.8).abs() < 1e-15);

        assert_eq!(project_feasible(&[0.0], &[0.0], &[0.0], &[0.0]).beta[0], 0.5);
        let w = project_feasible(&[1.0], &[1.0], &[std::f64::consts::TAU + 0.1], &[-0.1]);
        assert!((w.theta_t[0] - 0.1).abs() < 1e-12);
        assert!((w.theta_r[0] - (std::f64::consts::TAU - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn projection_satisfies_unit_power() {
        let mut rng = PrngStream::new(4, 0);
        let worst = (0..1000)
            .flat_map(|_| random_cfg(&mut rng, 4).build_matrices().unwrap().unit_power_residuals())
            .fold(0.0_f64, f64::max);
        assert!(worst < 1e-12);
    }

    #[test]
    fn phase_equivariance() {
        let mut rng = PrngStream::new(5, 0);
        let cfg = random_cfg(&mut rng, 4);
        let delta = 0.77;
        let shifted = StarConfig { theta_t: cfg.theta_t.iter().map(|t| t + delta).collect(), ..cfg.clone() };
        let a = cfg.build_matrices().unwrap();
        let b = shifted.build_matrices().unwrap();
        let rot = Complex::from_polar(1.0, delta);
        for (x, y) in a.transmit.0.iter().zip(&b.transmit.0) {
            assert!((x * rot - y).norm() < 1e-14);
        }
    }

    #[test]
    fn projection_is_idempotent() {
        let mut rng = PrngStream::new(6, 0);
        for _ in 0..100 {
            let c = random_cfg(&mut rng, 3);
            let a_t: Vec<f64> = c.beta.iter().map(|b| b.sqrt()).collect();
            let a_r: Vec<f64> = c.beta.iter().map(|b| (1.0 - b).sqrt()).collect();
            let again = project_feasible(&a_t, &a_r, &c.theta_t, &c.theta_r);
            for (x, y) in again.beta.iter().zip(&c.beta) {
                assert!((x - y).abs() < 1e-14);
            }
            assert_eq!(again.theta_t, c.theta_t);
            assert_eq!(again.theta_r, c.theta_r);
        }
    }
}
