//! The decision process: state encoding, action decoding onto the feasible
//! set, the sign-flip reward and fixed-length episodes over random channel
//! realizations.
//!
//! State layout (all real): `Re/Im t` (2PN, user-major), `Re/Im H` (2PF,
//! element-major), `Re/Im k` (2FN, user-major), SINR in dB clipped to
//! `[-40, 40]` (N), raw rate (N). Channel entries are divided by the square
//! root of their link's average power so each is roughly unit variance.
//!
//! Action layout, every entry in `[-1, 1]`: morphing (P), beamformer
//! `(amplitude, phase)` pairs (2PN, user-major), transmission phases (F),
//! reflection phases (F), transmission amplitudes (F), reflection
//! amplitudes (F).

use ndarray::Array2;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::channel::{ChannelRealization, ChannelSet, FimGeometry, LinkPowers, PathLoss, Sector};
use crate::error::{Error, Result};
use crate::harness::config::ConfigError;
use crate::link::{evaluate, Beamformer, LinkBudget, RateReport, SolutionPoint};
use crate::numerics::PrngStream;
use crate::scalar::Real;
use crate::star::project_feasible;

const SINR_DB_CLIP: f64 = 40.0;

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Scenario description. Distances are in meters, powers in dBm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub p_y: usize,
    pub p_z: usize,
    pub ris_elements: usize,
    pub users: usize,
    /// Users `0..transmit_users` sit on the transmission side, the rest on
    /// the reflection side.
    pub transmit_users: usize,
    pub paths: usize,
    pub wavelength: f64,
    pub spacing_y: f64,
    pub spacing_z: f64,
    pub x_max: f64,
    pub ris_spacing: f64,
    pub max_power_dbm: f64,
    pub noise_dbm_per_hz: f64,
    pub bandwidth_hz: f64,
    pub error_prob: f64,
    pub blocklength: u32,
    pub sinr_min_db: f64,
    pub ref_gain_db: f64,
    pub ref_distance: f64,
    pub exponent_direct: f64,
    pub exponent_ris: f64,
    /// BS→user distance: one value for every user, or one per user.
    pub bs_user_distance: Vec<f64>,
    pub bs_ris_distance: f64,
    /// RIS→user distance: one value for every user, or one per user.
    pub ris_user_distance: Vec<f64>,
    pub episode_len: usize,
    pub redraw_per_episode: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::full()
    }
}

impl EnvConfig {
    /// Full-scale system: 4×4 FIM, 20×20 surface, six users, 16 paths.
    pub fn full() -> Self {
        EnvConfig {
            p_y: 4,
            p_z: 4,
            ris_elements: 400,
            users: 6,
            transmit_users: 3,
            paths: 16,
            sinr_min_db: 0.0,
            ..Self::desk()
        }
    }

    /// Desk-scale system: 2×2 FIM, 16 surface elements, two users, 4 paths.
    ///
    /// The QoS floor is off (`-inf` dB): with a floor, penalised steps drown
    /// the reward signal at this size.
    pub fn desk() -> Self {
        EnvConfig {
            p_y: 2,
            p_z: 2,
            ris_elements: 16,
            users: 2,
            transmit_users: 1,
            paths: 4,
            wavelength: 0.1,
            spacing_y: 0.05,
            spacing_z: 0.05,
            x_max: 0.05,
            ris_spacing: 0.05,
            max_power_dbm: 30.0,
            noise_dbm_per_hz: -22.2,
            bandwidth_hz: 1.0,
            error_prob: 1e-5,
            blocklength: 128,
            sinr_min_db: f64::NEG_INFINITY,
            ref_gain_db: 10.0,
            ref_distance: 1.0,
            exponent_direct: 3.5,
            exponent_ris: 2.2,
            bs_user_distance: vec![24.0],
            bs_ris_distance: 30.0,
            ris_user_distance: vec![12.0],
            episode_len: 20,
            redraw_per_episode: true,
        }
    }

    pub fn antennas(&self) -> usize {
        self.p_y * self.p_z
    }

    pub fn state_dim(&self) -> usize {
        let (p, f, n) = (self.antennas(), self.ris_elements, self.users);
        2 * p * n + 2 * p * f + 2 * f * n + 2 * n
    }

    pub fn action_dim(&self) -> usize {
        let (p, f, n) = (self.antennas(), self.ris_elements, self.users);
        p + 2 * p * n + 4 * f
    }

    /// Returns the offending field name and reason on failure.
    pub fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        let positive = [
            ("p_y", self.p_y),
            ("p_z", self.p_z),
            ("ris_elements", self.ris_elements),
            ("users", self.users),
            ("paths", self.paths),
            ("episode_len", self.episode_len),
            ("blocklength", self.blocklength as usize),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err((k, "must be >= 1".into()));
        }
        if self.antennas() < self.users {
            return Err(("users", format!("must be <= p_y * p_z = {}", self.antennas())));
        }
        if self.transmit_users > self.users {
            return Err(("transmit_users", format!("must be <= users = {}", self.users)));
        }
        let pos_reals = [
            ("wavelength", self.wavelength),
            ("bandwidth_hz", self.bandwidth_hz),
            ("ref_distance", self.ref_distance),
            ("bs_ris_distance", self.bs_ris_distance),
        ];
        if let Some((k, v)) = pos_reals.iter().find(|(_, v)| !(*v > 0.0 && v.is_finite())) {
            return Err((k, format!("must be a finite value > 0 (got {v})")));
        }
        let non_neg = [
            ("x_max", self.x_max),
            ("spacing_y", self.spacing_y),
            ("spacing_z", self.spacing_z),
            ("ris_spacing", self.ris_spacing),
        ];
        if let Some((k, v)) = non_neg.iter().find(|(_, v)| !(*v >= 0.0 && v.is_finite())) {
            return Err((k, format!("must be a finite value >= 0 (got {v})")));
        }
        let finite = [
            ("max_power_dbm", self.max_power_dbm),
            ("noise_dbm_per_hz", self.noise_dbm_per_hz),
            ("ref_gain_db", self.ref_gain_db),
            ("exponent_direct", self.exponent_direct),
            ("exponent_ris", self.exponent_ris),
        ];
        if let Some((k, v)) = finite.iter().find(|(_, v)| !v.is_finite()) {
            return Err((k, format!("must be finite (got {v})")));
        }
        if self.sinr_min_db.is_nan() || self.sinr_min_db == f64::INFINITY {
            return Err(("sinr_min_db", format!("must be a number below +inf (got {})", self.sinr_min_db)));
        }
        if !(self.error_prob > 0.0 && self.error_prob < 1.0) {
            return Err(("error_prob", "must lie in (0, 1)".into()));
        }
        for (k, v) in [("bs_user_distance", &self.bs_user_distance), ("ris_user_distance", &self.ris_user_distance)] {
            if v.len() != 1 && v.len() != self.users {
                return Err((k, format!("needs 1 or {} entries, got {}", self.users, v.len())));
            }
            if v.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
                return Err((k, "entries must be finite and > 0".into()));
            }
        }
        Ok(())
    }

    fn per_user(v: &[f64], n: usize) -> f64 {
        if v.len() == 1 {
            v[0]
        } else {
            v[n]
        }
    }

    pub fn noise_power_watts(&self) -> f64 {
        dbm_to_watts(self.noise_dbm_per_hz + 10.0 * self.bandwidth_hz.log10())
    }

    pub fn budget<T: Real>(&self) -> LinkBudget<T> {
        let n = self.users;
        LinkBudget {
            noise_power: vec![T::lit(self.noise_power_watts()); n],
            error_prob: vec![self.error_prob; n],
            blocklength: self.blocklength,
            sinr_min: vec![T::lit(db_to_linear(self.sinr_min_db)); n],
            max_power: T::lit(dbm_to_watts(self.max_power_dbm)),
        }
    }

    pub fn link_powers<T: Real>(&self) -> LinkPowers<T> {
        let direct = PathLoss { ref_gain_db: self.ref_gain_db, ref_distance: self.ref_distance, exponent: self.exponent_direct };
        let ris = PathLoss { exponent: self.exponent_ris, ..direct };
        LinkPowers {
            paths: self.paths,
            direct: (0..self.users).map(|n| T::lit(direct.linear(Self::per_user(&self.bs_user_distance, n)))).collect(),
            bs_ris: T::lit(ris.linear(self.bs_ris_distance)),
            ris_user: (0..self.users).map(|n| T::lit(ris.linear(Self::per_user(&self.ris_user_distance, n)))).collect(),
            sectors: (0..self.users).map(|n| if n < self.transmit_users { Sector::Transmit } else { Sector::Reflect }).collect(),
        }
    }

    pub fn fim_geometry<T: Real>(&self) -> Result<FimGeometry<T>> {
        FimGeometry::new(
            self.p_y,
            self.p_z,
            T::lit(self.spacing_y),
            T::lit(self.spacing_z),
            T::lit(self.wavelength),
            T::lit(self.x_max),
        )
    }

    /// Rigid RIS grid: the most nearly square factorization of `F`.
    pub fn ris_grid<T: Real>(&self) -> Result<FimGeometry<T>> {
        let f = self.ris_elements;
        let rows = (1..=f).filter(|d| f % d == 0 && d * d <= f).max().unwrap_or(1);
        FimGeometry::planar(f / rows, rows, T::lit(self.ris_spacing), T::lit(self.wavelength))
    }
}

/// Maps an action vector onto a design that satisfies the power budget,
/// morphing range and STAR energy split by construction.
///
/// Morphing `x_p = x_max (a+1)/2`. Each beamformer entry is
/// `r_max (a_amp+1)/2 · exp(jπ a_phase)` with `r_max = √(P_max/P)`; if the
/// total power then exceeds `P_max` the whole matrix is scaled back onto the
/// budget. Phases map to `π(a+1)` and amplitudes `(a+1)/2` go through
/// [`project_feasible`]. Entries outside `[-1, 1]` are clamped; NaN reads as 0.
pub fn decode_action<T: Real>(action: &[T], cfg: &EnvConfig) -> Result<SolutionPoint<T>> {
    if action.len() != cfg.action_dim() {
        return Err(Error::dim("action vector", cfg.action_dim(), action.len()));
    }
    let (p, f, n) = (cfg.antennas(), cfg.ris_elements, cfg.users);
    let one = T::one();
    let half = T::lit(0.5);
    let a: Vec<T> = action.iter().map(|&v| if v.is_nan() { T::zero() } else { v.max(-one).min(one) }).collect();
    let unit = |v: T| (v + one) * half;

    let x_max = T::lit(cfg.x_max);
    let offsets: Vec<T> = a[..p].iter().map(|&v| (x_max * unit(v)).min(x_max)).collect();

    let p_max = T::lit(dbm_to_watts(cfg.max_power_dbm));
    let r_max = (p_max / T::from_usize(p).unwrap()).sqrt();
    let w_raw = &a[p..p + 2 * p * n];
    let mut w = Array2::from_elem((p, n), Complex::new(T::zero(), T::zero()));
    for user in 0..n {
        for ant in 0..p {
            let idx = 2 * (user * p + ant);
            w[[ant, user]] = Complex::from_polar(r_max * unit(w_raw[idx]), T::PI() * w_raw[idx + 1]);
        }
    }
    let mut beamformer = Beamformer { w };
    let power = beamformer.total_power();
    if power > p_max {
        let s = (p_max / power).sqrt();
        beamformer.w.mapv_inplace(|v| v * s);
    }

    let rest = &a[p + 2 * p * n..];
    let phase = |v: T| T::PI() * (v + one);
    let theta_t: Vec<T> = rest[..f].iter().map(|&v| phase(v)).collect();
    let theta_r: Vec<T> = rest[f..2 * f].iter().map(|&v| phase(v)).collect();
    let amp_t: Vec<T> = rest[2 * f..3 * f].iter().map(|&v| unit(v)).collect();
    let amp_r: Vec<T> = rest[3 * f..4 * f].iter().map(|&v| unit(v)).collect();
    let star = project_feasible(&amp_t, &amp_r, &theta_t, &theta_r);

    Ok(SolutionPoint { offsets, beamformer, star })
}

/// `Σ max(R_n, 0)`, negated when any constraint fails.
pub fn reward_of<T: Real>(report: &RateReport<T>) -> T {
    let r = report.clamped_sum_rate();
    if report.feasible {
        r
    } else {
        -r
    }
}

#[derive(Clone, Debug)]
pub struct StepOutcome<T> {
    pub state: Vec<T>,
    pub reward: T,
    pub done: bool,
    pub report: RateReport<T>,
    pub solution: SolutionPoint<T>,
}

struct Episode<T> {
    realization: ChannelRealization<T>,
    ris_block: Array2<Complex<T>>,
    channels: ChannelSet<T>,
    report: RateReport<T>,
    steps: usize,
}

pub struct FimStarEnv<T: Real> {
    cfg: EnvConfig,
    fim: FimGeometry<T>,
    ris: FimGeometry<T>,
    budget: LinkBudget<T>,
    powers: LinkPowers<T>,
    episode: Option<Episode<T>>,
}

impl<T: Real> FimStarEnv<T> {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate().map_err(|(k, reason)| ConfigError::Invalid { key: format!("scenario.{k}"), reason })?;
        Ok(FimStarEnv {
            fim: cfg.fim_geometry()?,
            ris: cfg.ris_grid()?,
            budget: cfg.budget(),
            powers: cfg.link_powers(),
            cfg,
            episode: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn state_dim(&self) -> usize {
        self.cfg.state_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.cfg.action_dim()
    }

    pub fn budget(&self) -> &LinkBudget<T> {
        &self.budget
    }

    /// Channels at the current offsets, if an episode is running.
    pub fn channels(&self) -> Option<&ChannelSet<T>> {
        self.episode.as_ref().map(|e| &e.channels)
    }

    /// Starts an episode. The realization is drawn from `stream`'s
    /// sub-stream for `episode` (or for 0 when channels are not redrawn),
    /// and the SINR/rate slots hold the evaluation of the all-zero action.
    pub fn reset(&mut self, stream: &PrngStream, episode: u64) -> Result<Vec<T>> {
        let label = if self.cfg.redraw_per_episode { episode } else { 0 };
        let realization = ChannelRealization::draw(&stream.substream(label), &self.powers, self.cfg.ris_elements)?;
        let ris_block = realization.ris_user_block(&self.ris);
        let zero = vec![T::zero(); self.action_dim()];
        let solution = decode_action(&zero, &self.cfg)?;
        let (channels, report) = self.apply(&realization, &ris_block, &solution)?;
        let ep = Episode { realization, ris_block, channels, report, steps: 0 };
        let state = self.encode(&ep.channels, &ep.report);
        self.episode = Some(ep);
        Ok(state)
    }

    fn apply(
        &mut self,
        realization: &ChannelRealization<T>,
        ris_block: &Array2<Complex<T>>,
        solution: &SolutionPoint<T>,
    ) -> Result<(ChannelSet<T>, RateReport<T>)> {
        self.fim.set_offsets(&solution.offsets)?;
        let channels = realization.realize_with_ris_block(&self.fim, ris_block.clone())?;
        let report = evaluate(solution, &channels, &self.budget, self.fim.x_max())?;
        Ok((channels, report))
    }

    pub fn step(&mut self, action: &[T]) -> Result<StepOutcome<T>> {
        let mut ep = match self.episode.take() {
            Some(ep) if ep.steps < self.cfg.episode_len => ep,
            other => {
                self.episode = other;
                return Err(Error::NotReset);
            }
        };
        let solution = decode_action(action, &self.cfg)?;
        let (channels, report) = self.apply(&ep.realization, &ep.ris_block, &solution)?;
        ep.channels = channels;
        ep.report = report.clone();
        ep.steps += 1;
        let done = ep.steps >= self.cfg.episode_len;
        let state = self.encode(&ep.channels, &ep.report);
        self.episode = Some(ep);
        Ok(StepOutcome { state, reward: reward_of(&report), done, report, solution })
    }

    fn encode(&self, ch: &ChannelSet<T>, report: &RateReport<T>) -> Vec<T> {
        let mut s = Vec::with_capacity(self.state_dim());
        let (p, f, n) = (ch.antennas(), ch.ris_elements(), ch.users());
        let push = |s: &mut Vec<T>, v: Complex<T>, scale: T| {
            s.push(v.re / scale);
            s.push(v.im / scale);
        };
        for user in 0..n {
            let scale = self.powers.direct[user].sqrt();
            for ant in 0..p {
                push(&mut s, ch.direct[[ant, user]], scale);
            }
        }
        let scale = self.powers.bs_ris.sqrt();
        for elem in 0..f {
            for ant in 0..p {
                push(&mut s, ch.bs_ris[[ant, elem]], scale);
            }
        }
        for user in 0..n {
            let scale = self.powers.ris_user[user].sqrt();
            for elem in 0..f {
                push(&mut s, ch.ris_user[[elem, user]], scale);
            }
        }
        let clip = T::lit(SINR_DB_CLIP);
        for &g in &report.sinr {
            let db = T::lit(10.0) * g.log10();
            s.push(if db.is_nan() { -clip } else { db.max(-clip).min(clip) });
        }
        s.extend_from_slice(&report.rate);
        s
    }
}
