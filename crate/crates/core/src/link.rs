//! End-to-end effective channels, per-user SINR, the finite-blocklength
//! achievable rate and the feasibility check of the joint design problem.

use std::fmt;

use ndarray::Array2;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelSet, Sector};
use crate::error::{Error, Result};
use crate::numerics::gaussian_q_inv;
use crate::scalar::Real;
use crate::star::{Diagonal, StarConfig, StarMatrices};

/// Transmit beamformers, `P × N`; column `n` serves user `n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Beamformer<T> {
    pub w: Array2<Complex<T>>,
}

impl<T: Real> Beamformer<T> {
    pub fn zeros(antennas: usize, users: usize) -> Self {
        Beamformer { w: Array2::from_elem((antennas, users), Complex::new(T::zero(), T::zero())) }
    }

    /// `Σ_n ‖w_n‖²`.
    pub fn total_power(&self) -> T {
        self.w.iter().fold(T::zero(), |acc, v| acc + v.norm_sqr())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget<T> {
    /// Noise power per user, watts.
    pub noise_power: Vec<T>,
    /// Target decoding error probability per user.
    pub error_prob: Vec<f64>,
    /// Blocklength in channel uses.
    pub blocklength: u32,
    /// Linear SINR floor per user.
    pub sinr_min: Vec<T>,
    /// Transmit power budget, watts.
    pub max_power: T,
}

impl<T: Real> LinkBudget<T> {
    pub fn users(&self) -> usize {
        self.noise_power.len()
    }
}

/// Constraint families of the design problem.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Constraint {
    /// Per-user SINR floor.
    SinrFloor,
    /// Total transmit power budget.
    PowerBudget,
    /// Morphing offset range.
    MorphRange,
    /// STAR energy split per element.
    UnitPower,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Constraint::SinrFloor => "sinr_floor",
            Constraint::PowerBudget => "power_budget",
            Constraint::MorphRange => "morph_range",
            Constraint::UnitPower => "unit_power",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub constraint: Constraint,
    /// User, element or (for the power budget) 0.
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport<T> {
    pub sinr: Vec<T>,
    /// Raw finite-blocklength rate per user, bits per channel use. May be
    /// negative at low SINR.
    pub rate: Vec<T>,
    pub sum_rate: T,
    pub feasible: bool,
    pub violations: Vec<Violation>,
}

impl<T: Real> RateReport<T> {
    /// `Σ_n max(R_n, 0)`.
    pub fn clamped_sum_rate(&self) -> T {
        self.rate.iter().fold(T::zero(), |acc, &r| acc + r.max(T::zero()))
    }
}

/// One candidate design: morphing offsets, beamformers and STAR settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionPoint<T> {
    pub offsets: Vec<T>,
    pub beamformer: Beamformer<T>,
    pub star: StarConfig<T>,
}

fn section<'a, T>(star: &'a StarMatrices<T>, sector: Sector) -> &'a Diagonal<T> {
    match sector {
        Sector::Transmit => &star.transmit,
        Sector::Reflect => &star.reflect,
    }
}

/// `v_n = H Ω_{s(n)}^H k_n + t_n`, i.e. the conjugate transpose of the row
/// `k_n^H Ω H^H + t_n^H` that multiplies the beamformers.
pub fn effective_channel<T: Real>(channels: &ChannelSet<T>, star: &StarMatrices<T>, user: usize) -> Result<Vec<Complex<T>>> {
    let n_users = channels.users();
    if user >= n_users {
        return Err(Error::dim("user index", n_users, user));
    }
    let f = channels.ris_elements();
    if star.transmit.len() != f || star.reflect.len() != f {
        return Err(Error::dim("STAR element count", f, star.transmit.len()));
    }
    let omega = &section(star, channels.sectors[user]).0;
    // Ω^H k_n, elementwise.
    let weighted: Vec<Complex<T>> = (0..f).map(|i| omega[i].conj() * channels.ris_user[[i, user]]).collect();
    Ok((0..channels.antennas())
        .map(|p| {
            let cascaded = (0..f).fold(Complex::new(T::zero(), T::zero()), |acc, i| acc + channels.bs_ris[[p, i]] * weighted[i]);
            cascaded + channels.direct[[p, user]]
        })
        .collect())
}

/// `v^H w`.
fn inner<T: Real>(v: &[Complex<T>], w: ndarray::ArrayView1<'_, Complex<T>>) -> Complex<T> {
    v.iter().zip(w.iter()).fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + a.conj() * *b)
}

/// Per-user SINR `|v_n^H w_n|² / (Σ_{n'≠n} |v_n^H w_{n'}|² + σ²_n)`.
pub fn sinr<T: Real>(
    channels: &ChannelSet<T>,
    star: &StarMatrices<T>,
    beamformer: &Beamformer<T>,
    budget: &LinkBudget<T>,
) -> Result<Vec<T>> {
    let n_users = channels.users();
    if beamformer.w.dim() != (channels.antennas(), n_users) {
        return Err(Error::dim("beamformer columns", n_users, beamformer.w.ncols()));
    }
    if budget.noise_power.len() != n_users {
        return Err(Error::dim("noise powers", n_users, budget.noise_power.len()));
    }
    if let Some(&s) = budget.noise_power.iter().find(|&&s| !(s > T::zero())) {
        return Err(Error::domain("noise power must be > 0", s.as_f64()));
    }
    (0..n_users)
        .map(|n| {
            let v = effective_channel(channels, star, n)?;
            let mut signal = T::zero();
            let mut interference = T::zero();
            for (m, w) in beamformer.w.columns().into_iter().enumerate() {
                let g = inner(&v, w).norm_sqr();
                if m == n {
                    signal = g;
                } else {
                    interference += g;
                }
            }
            Ok(signal / (interference + budget.noise_power[n]))
        })
        .collect()
}

/// Channel dispersion `V(γ) = (log₂e)² (1 − (1+γ)⁻²)`.
pub fn dispersion<T: Real>(gamma: T) -> Result<T> {
    if !(gamma >= T::zero()) {
        return Err(Error::domain("SINR must be >= 0", gamma.as_f64()));
    }
    let a = T::LOG2_E();
    let inv = (T::one() + gamma).powi(-2);
    Ok(a * a * (T::one() - inv))
}

/// Finite-blocklength rate `log₂(1+γ) − Q⁻¹(ε) √(V(γ)/m_d)`.
pub fn fbl_rate<T: Real>(gamma: T, eps: f64, blocklength: u32) -> Result<T> {
    if blocklength == 0 {
        return Err(Error::domain("blocklength must be >= 1", 0.0));
    }
    let q_inv = T::lit(gaussian_q_inv(eps)?);
    let shannon = gamma.ln_1p() * T::LOG2_E();
    let v = dispersion(gamma)?;
    Ok(shannon - q_inv * (v / T::from_u32(blocklength).unwrap()).sqrt())
}

/// STAR matrices for evaluation: β is clamped into `[0, 1]` so that an
/// out-of-range entry is reported as a violation rather than producing NaNs.
fn matrices_for_eval<T: Real>(star: &StarConfig<T>) -> Result<(StarMatrices<T>, Vec<usize>)> {
    let mut bad = Vec::new();
    let beta: Vec<T> = star
        .beta
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if !(b >= T::zero() && b <= T::one()) {
                bad.push(i);
            }
            if b.is_nan() {
                T::zero()
            } else {
                b.max(T::zero()).min(T::one())
            }
        })
        .collect();
    let clamped = StarConfig { beta, ..star.clone() };
    Ok((clamped.build_matrices()?, bad))
}

/// Evaluates a candidate design against `channels`, which must have been
/// realized at `solution.offsets`.
///
/// `x_max` is the morphing limit. Every failed (constraint, index) pair is
/// listed in the report.
pub fn evaluate<T: Real>(
    solution: &SolutionPoint<T>,
    channels: &ChannelSet<T>,
    budget: &LinkBudget<T>,
    x_max: T,
) -> Result<RateReport<T>> {
    let n_users = channels.users();
    if budget.error_prob.len() != n_users {
        return Err(Error::dim("error probabilities", n_users, budget.error_prob.len()));
    }
    if budget.sinr_min.len() != n_users {
        return Err(Error::dim("SINR floors", n_users, budget.sinr_min.len()));
    }
    if solution.offsets.len() != channels.antennas() {
        return Err(Error::dim("morphing offsets", channels.antennas(), solution.offsets.len()));
    }
    let (matrices, bad_beta) = matrices_for_eval(&solution.star)?;
    let gamma = sinr(channels, &matrices, &solution.beamformer, budget)?;
    let rate = gamma
        .iter()
        .zip(&budget.error_prob)
        .map(|(&g, &e)| fbl_rate(g, e, budget.blocklength))
        .collect::<Result<Vec<T>>>()?;
    let sum_rate = rate.iter().fold(T::zero(), |a, &r| a + r);

    let tol = T::check_tol();
    let mut violations = Vec::new();
    for (n, (&g, &floor)) in gamma.iter().zip(&budget.sinr_min).enumerate() {
        if g < floor {
            violations.push(Violation { constraint: Constraint::SinrFloor, index: n });
        }
    }
    if !(solution.beamformer.total_power() <= budget.max_power * (T::one() + tol)) {
        violations.push(Violation { constraint: Constraint::PowerBudget, index: 0 });
    }
    for (p, &x) in solution.offsets.iter().enumerate() {
        if !(x >= T::zero() && x <= x_max) {
            violations.push(Violation { constraint: Constraint::MorphRange, index: p });
        }
    }
    let residuals = matrices.unit_power_residuals();
    for (f, r) in residuals.iter().enumerate() {
        if bad_beta.contains(&f) || !(*r <= tol) {
            violations.push(Violation { constraint: Constraint::UnitPower, index: f });
        }
    }
    Ok(RateReport { sinr: gamma, rate, sum_rate, feasible: violations.is_empty(), violations })
}
