//! Flexible-metasurface element geometry, steering vectors and random
//! multipath channels for the BS→user, BS→RIS and RIS→user links.

use ndarray::Array2;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sample_cgauss, PrngStream};
use crate::scalar::Real;

/// Uniform planar array in the y–z plane whose elements can be pushed out
/// along x by per-element morphing offsets.
///
/// Elements are numbered row-major over the `p_y` columns: element `p`
/// (0-based) sits at `y = r_y · (p mod p_y)`, `z = r_z · ⌊p / p_y⌋`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FimGeometry<T> {
    p_y: usize,
    p_z: usize,
    spacing_y: T,
    spacing_z: T,
    offsets: Vec<T>,
    x_max: T,
    wavelength: T,
}

impl<T: Real> FimGeometry<T> {
    /// Geometry with all offsets at zero.
    pub fn new(p_y: usize, p_z: usize, spacing_y: T, spacing_z: T, wavelength: T, x_max: T) -> Result<Self> {
        if p_y == 0 || p_z == 0 {
            return Err(Error::domain("grid counts must be positive", (p_y * p_z) as f64));
        }
        if !(wavelength > T::zero()) {
            return Err(Error::domain("wavelength must be > 0", wavelength.as_f64()));
        }
        if !(x_max >= T::zero()) {
            return Err(Error::domain("x_max must be >= 0", x_max.as_f64()));
        }
        Ok(FimGeometry {
            p_y,
            p_z,
            spacing_y,
            spacing_z,
            offsets: vec![T::zero(); p_y * p_z],
            x_max,
            wavelength,
        })
    }

    /// Rigid planar grid (no morphing range), e.g. the RIS.
    pub fn planar(p_y: usize, p_z: usize, spacing: T, wavelength: T) -> Result<Self> {
        Self::new(p_y, p_z, spacing, spacing, wavelength, T::zero())
    }

    pub fn with_offsets(mut self, offsets: &[T]) -> Result<Self> {
        self.set_offsets(offsets)?;
        Ok(self)
    }

    /// Replaces the morphing offsets; every entry must lie in `[0, x_max]`.
    pub fn set_offsets(&mut self, offsets: &[T]) -> Result<()> {
        if offsets.len() != self.element_count() {
            return Err(Error::dim("morphing offsets", self.element_count(), offsets.len()));
        }
        if let Some(&bad) = offsets.iter().find(|&&x| !(x >= T::zero() && x <= self.x_max)) {
            return Err(Error::domain("morphing offset outside [0, x_max]", bad.as_f64()));
        }
        self.offsets.copy_from_slice(offsets);
        Ok(())
    }

    pub fn element_count(&self) -> usize {
        self.p_y * self.p_z
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.p_y, self.p_z)
    }

    pub fn offsets(&self) -> &[T] {
        &self.offsets
    }

    pub fn x_max(&self) -> T {
        self.x_max
    }

    pub fn wavelength(&self) -> T {
        self.wavelength
    }

    /// `(x, y, z)` of element `p` (0-based).
    pub fn element_position(&self, p: usize) -> [T; 3] {
        let col = T::from_usize(p % self.p_y).unwrap();
        let row = T::from_usize(p / self.p_y).unwrap();
        [self.offsets[p], self.spacing_y * col, self.spacing_z * row]
    }

    pub fn element_positions(&self) -> Vec<[T; 3]> {
        (0..self.element_count()).map(|p| self.element_position(p)).collect()
    }

    /// Array response toward (azimuth, elevation): entry `p` is
    /// `exp(j·2π/λ·(x_p sinφ cosϱ + y_p sinφ sinϱ + z_p cosφ))`.
    pub fn steering(&self, azimuth: T, elevation: T) -> Vec<Complex<T>> {
        let k = T::TAU() / self.wavelength;
        let (sin_el, cos_el) = elevation.sin_cos();
        let (sin_az, cos_az) = azimuth.sin_cos();
        let ux = sin_el * cos_az;
        let uy = sin_el * sin_az;
        (0..self.element_count())
            .map(|p| {
                let [x, y, z] = self.element_position(p);
                Complex::from_polar(T::one(), k * (x * ux + y * uy + z * cos_el))
            })
            .collect()
    }
}

/// One set of `D` propagation paths for a single link.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSet<T> {
    pub gains: Vec<Complex<T>>,
    pub elevations: Vec<T>,
    pub azimuths: Vec<T>,
    /// Per-path average power ξ²_d; sums to `total_power`.
    pub variances: Vec<T>,
    pub total_power: T,
}

impl<T: Real> PathSet<T> {
    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Deterministic path set, mainly for tests. Variances are split equally.
    pub fn from_parts(gains: Vec<Complex<T>>, elevations: Vec<T>, azimuths: Vec<T>, total_power: T) -> Result<Self> {
        let d = gains.len();
        if elevations.len() != d {
            return Err(Error::dim("path elevations", d, elevations.len()));
        }
        if azimuths.len() != d {
            return Err(Error::dim("path azimuths", d, azimuths.len()));
        }
        let share = total_power / T::from_usize(d.max(1)).unwrap();
        Ok(PathSet { gains, elevations, azimuths, variances: vec![share; d], total_power })
    }

    /// Multiplies every gain by `c`.
    pub fn scaled(&self, c: Complex<T>) -> Self {
        PathSet { gains: self.gains.iter().map(|g| *g * c).collect(), ..self.clone() }
    }
}

/// Draws `paths` propagation paths with total average power `total_power`,
/// split equally, and angles uniform on `[0, π)`.
pub fn draw_paths<T: Real>(rng: &mut PrngStream, paths: usize, total_power: T) -> Result<PathSet<T>> {
    if paths == 0 {
        return Err(Error::domain("path count must be >= 1", 0.0));
    }
    if !(total_power > T::zero()) {
        return Err(Error::domain("path loss must be > 0", total_power.as_f64()));
    }
    let share = total_power / T::from_usize(paths).unwrap();
    let mut gains = Vec::with_capacity(paths);
    let mut elevations = Vec::with_capacity(paths);
    let mut azimuths = Vec::with_capacity(paths);
    for _ in 0..paths {
        gains.push(sample_cgauss(rng, share)?);
        elevations.push(rng.uniform_in(T::zero(), T::PI()));
        azimuths.push(rng.uniform_in(T::zero(), T::PI()));
    }
    Ok(PathSet { gains, elevations, azimuths, variances: vec![share; paths], total_power })
}

fn superpose<T: Real>(geom: &FimGeometry<T>, paths: &PathSet<T>) -> Vec<Complex<T>> {
    let mut out = vec![Complex::new(T::zero(), T::zero()); geom.element_count()];
    for d in 0..paths.len() {
        let g = paths.gains[d];
        for (o, q) in out.iter_mut().zip(geom.steering(paths.azimuths[d], paths.elevations[d])) {
            *o += g * q;
        }
    }
    out
}

/// `t(x) = Σ_d g_d · q(x, ϱ_d, φ_d)`, length `P`.
pub fn direct_channel<T: Real>(geom: &FimGeometry<T>, paths: &PathSet<T>) -> Vec<Complex<T>> {
    superpose(geom, paths)
}

/// `H = [h_1(x), …, h_F(x)]`, `P × F`, one path set per RIS element.
pub fn bs_ris_channel<T: Real>(geom: &FimGeometry<T>, per_column: &[PathSet<T>]) -> Array2<Complex<T>> {
    let mut h = Array2::from_elem((geom.element_count(), per_column.len()), Complex::new(T::zero(), T::zero()));
    for (f, paths) in per_column.iter().enumerate() {
        for (p, v) in superpose(geom, paths).into_iter().enumerate() {
            h[[p, f]] = v;
        }
    }
    h
}

/// RIS→user channel `k`, evaluated on the RIS's own rigid grid.
pub fn ris_user_channel<T: Real>(ris_grid: &FimGeometry<T>, paths: &PathSet<T>) -> Vec<Complex<T>> {
    superpose(ris_grid, paths)
}

/// Which side of the STAR surface a user is on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sector {
    Transmit,
    Reflect,
}

/// One realization of every channel in the system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet<T> {
    /// Direct BS→user channels, `P × N` (column per user).
    pub direct: Array2<Complex<T>>,
    /// BS→RIS channel, `P × F`.
    pub bs_ris: Array2<Complex<T>>,
    /// RIS→user channels, `F × N` (column per user).
    pub ris_user: Array2<Complex<T>>,
    pub sectors: Vec<Sector>,
}

impl<T: Real> ChannelSet<T> {
    pub fn antennas(&self) -> usize {
        self.direct.nrows()
    }

    pub fn users(&self) -> usize {
        self.direct.ncols()
    }

    pub fn ris_elements(&self) -> usize {
        self.bs_ris.ncols()
    }
}

/// Log-distance path loss `L(d) = L₀ · (d / d₀)^(-η)`, as a linear power gain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathLoss {
    /// `10·log10(L₀)`, typically negative.
    pub ref_gain_db: f64,
    pub ref_distance: f64,
    pub exponent: f64,
}

impl PathLoss {
    pub fn linear(&self, distance: f64) -> f64 {
        10f64.powf(self.ref_gain_db / 10.0) * (distance / self.ref_distance).powf(-self.exponent)
    }
}

/// Per-link average powers and path counts used to draw a realization.
#[derive(Clone, Debug, PartialEq)]
pub struct LinkPowers<T> {
    pub paths: usize,
    pub direct: Vec<T>,
    pub bs_ris: T,
    pub ris_user: Vec<T>,
    pub sectors: Vec<Sector>,
}

/// The random part of a channel draw (gains and angles). Independent of the
/// FIM morphing, so it can be re-evaluated at any offsets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization<T> {
    pub direct: Vec<PathSet<T>>,
    pub bs_ris: Vec<PathSet<T>>,
    pub ris_user: Vec<PathSet<T>>,
    pub sectors: Vec<Sector>,
}

const LABEL_DIRECT: u64 = 0x1000_0000;
const LABEL_BS_RIS: u64 = 0x2000_0000;
const LABEL_RIS_USER: u64 = 0x3000_0000;

impl<T: Real> ChannelRealization<T> {
    /// Draws every path set. Each link uses its own sub-stream of `rng`, so
    /// the draw for one link does not depend on the others.
    pub fn draw(rng: &PrngStream, powers: &LinkPowers<T>, ris_elements: usize) -> Result<Self> {
        let users = powers.direct.len();
        if powers.ris_user.len() != users {
            return Err(Error::dim("RIS→user path losses", users, powers.ris_user.len()));
        }
        if powers.sectors.len() != users {
            return Err(Error::dim("user sectors", users, powers.sectors.len()));
        }
        let direct = (0..users)
            .map(|n| draw_paths(&mut rng.substream(LABEL_DIRECT + n as u64), powers.paths, powers.direct[n]))
            .collect::<Result<Vec<_>>>()?;
        let bs_ris = (0..ris_elements)
            .map(|f| draw_paths(&mut rng.substream(LABEL_BS_RIS + f as u64), powers.paths, powers.bs_ris))
            .collect::<Result<Vec<_>>>()?;
        let ris_user = (0..users)
            .map(|n| draw_paths(&mut rng.substream(LABEL_RIS_USER + n as u64), powers.paths, powers.ris_user[n]))
            .collect::<Result<Vec<_>>>()?;
        Ok(ChannelRealization { direct, bs_ris, ris_user, sectors: powers.sectors.clone() })
    }

    /// RIS→user block `k`, `F × N`. Depends only on the RIS grid.
    pub fn ris_user_block(&self, ris_grid: &FimGeometry<T>) -> Array2<Complex<T>> {
        let f = ris_grid.element_count();
        let mut k = Array2::from_elem((f, self.ris_user.len()), Complex::new(T::zero(), T::zero()));
        for (n, paths) in self.ris_user.iter().enumerate() {
            for (i, v) in ris_user_channel(ris_grid, paths).into_iter().enumerate() {
                k[[i, n]] = v;
            }
        }
        k
    }

    /// Evaluates `t(x)`, `H(x)` at the FIM's current offsets and `k` on the
    /// RIS grid.
    pub fn realize(&self, fim: &FimGeometry<T>, ris_grid: &FimGeometry<T>) -> Result<ChannelSet<T>> {
        self.realize_with_ris_block(fim, self.ris_user_block(ris_grid))
    }

    /// As [`realize`](Self::realize) with a precomputed `k`.
    pub fn realize_with_ris_block(&self, fim: &FimGeometry<T>, ris_user: Array2<Complex<T>>) -> Result<ChannelSet<T>> {
        if ris_user.nrows() != self.bs_ris.len() {
            return Err(Error::dim("RIS element count", self.bs_ris.len(), ris_user.nrows()));
        }
        let p = fim.element_count();
        let mut direct = Array2::from_elem((p, self.direct.len()), Complex::new(T::zero(), T::zero()));
        for (n, paths) in self.direct.iter().enumerate() {
            for (i, v) in direct_channel(fim, paths).into_iter().enumerate() {
                direct[[i, n]] = v;
            }
        }
        Ok(ChannelSet {
            direct,
            bs_ris: bs_ris_channel(fim, &self.bs_ris),
            ris_user,
            sectors: self.sectors.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(p_y: usize, p_z: usize) -> FimGeometry<f64> {
        FimGeometry::new(p_y, p_z, 0.05, 0.05, 0.1, 0.05).unwrap()
    }

    /// Scalar-loop oracle: Σ_d g_d · exp(j 2π/λ (x sinφ cosϱ + y sinφ sinϱ + z cosφ)).
    fn oracle_entry(g: &FimGeometry<f64>, paths: &PathSet<f64>, p: usize) -> Complex<f64> {
        let (p_y, _) = g.grid();
        let x = g.offsets()[p];
        let y = 0.05 * (p % p_y) as f64;
        let z = 0.05 * (p / p_y) as f64;
        let mut acc = Complex::new(0.0, 0.0);
        for d in 0..paths.len() {
            let (el, az) = (paths.elevations[d], paths.azimuths[d]);
            let phase = 2.0 * std::f64::consts::PI / 0.1
                * (x * el.sin() * az.cos() + y * el.sin() * az.sin() + z * el.cos());
            acc += paths.gains[d] * Complex::new(phase.cos(), phase.sin());
        }
        acc
    }

    #[test]
    fn positions() {
        let g = geom(4, 2).with_offsets(&[0.01, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(g.element_position(0), [0.01, 0.0, 0.0]);
        let [_, y, z] = g.element_position(1);
        assert!((y - 0.05).abs() < 1e-15 && z == 0.0);
        let [_, y, z] = g.element_position(4);
        assert!(y == 0.0 && (z - 0.05).abs() < 1e-15);
    }

    #[test]
    fn offsets_are_range_checked() {
        let g = geom(2, 2);
        assert!(g.clone().with_offsets(&[0.0, 0.06, 0.0, 0.0]).is_err());
        assert!(g.clone().with_offsets(&[0.0, -1e-9, 0.0, 0.0]).is_err());
        assert!(g.clone().with_offsets(&[0.0, 0.0]).is_err());
        assert!(g.with_offsets(&[0.0, 0.05, 0.01, 0.0]).is_ok());
    }

    #[test]
    fn steering_examples() {
        let single = FimGeometry::new(1, 1, 0.05, 0.05, 0.1, 0.0).unwrap();
        let q = single.steering(0.3, 1.1);
        assert!((q[0] - Complex::new(1.0, 0.0)).norm() < 1e-15);

        let g = geom(2, 2);
        let q = g.steering(1.234, 0.0);
        for (p, v) in q.iter().enumerate() {
            let z = g.element_position(p)[2];
            let want = Complex::from_polar(1.0, 2.0 * std::f64::consts::PI * z / 0.1);
            assert!((v - want).norm() < 1e-12);
        }

        let delta = 0.013;
        let base = g.steering(0.0, std::f64::consts::FRAC_PI_2);
        let morphed = g.clone().with_offsets(&[delta; 4]).unwrap().steering(0.0, std::f64::consts::FRAC_PI_2);
        let factor = Complex::from_polar(1.0, 2.0 * std::f64::consts::PI * delta / 0.1);
        for (a, b) in base.iter().zip(&morphed) {
            assert!((a * factor - b).norm() < 1e-12);
        }
    }

    #[test]
    fn steering_unit_modulus_under_morphing() {
        let mut rng = PrngStream::new(8, 8);
        let g = geom(4, 4);
        for _ in 0..50 {
            let offs: Vec<f64> = (0..16).map(|_| rng.uniform_in(0.0, 0.05)).collect();
            let (az, el) = (rng.uniform_in(0.0, 3.14), rng.uniform_in(0.0, 3.14));
            let base = g.steering(az, el);
            let morphed = g.clone().with_offsets(&offs).unwrap().steering(az, el);
            for (a, b) in base.iter().zip(&morphed) {
                assert!((a.norm() - 1.0).abs() < 1e-12);
                assert!((b.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn draw_paths_contract() {
        let mut rng = PrngStream::new(1, 1);
        let ps = draw_paths(&mut rng, 16, 0.01_f64).unwrap();
        let total: f64 = ps.variances.iter().sum();
        assert!((total - 0.01).abs() <= 0.01 * f64::EPSILON);
        assert!(ps.elevations.iter().chain(&ps.azimuths).all(|a| (0.0..std::f64::consts::PI).contains(a)));
        assert!(draw_paths(&mut rng, 0, 1.0_f64).is_err());
        assert!(draw_paths(&mut rng, 2, 0.0_f64).is_err());

        let a = draw_paths(&mut PrngStream::new(4, 4), 5, 1.0_f64).unwrap();
        let b = draw_paths(&mut PrngStream::new(4, 4), 5, 1.0_f64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_path_gain_power() {
        let mut rng = PrngStream::new(2, 0);
        let n = 100_000;
        let mean = (0..n).map(|_| draw_paths(&mut rng, 1, 1.0_f64).unwrap().gains[0].norm_sqr()).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn direct_channel_examples() {
        let single = FimGeometry::new(1, 1, 0.05, 0.05, 0.1, 0.0).unwrap();
        let ps = PathSet::from_parts(vec![Complex::new(1.0, 0.0)], vec![0.7], vec![0.2], 1.0).unwrap();
        assert!((direct_channel(&single, &ps)[0] - Complex::new(1.0, 0.0)).norm() < 1e-15);

        let g = geom(2, 2);
        let zero = PathSet::from_parts(vec![Complex::new(0.0, 0.0); 3], vec![0.1, 0.2, 0.3], vec![0.4, 0.5, 0.6], 1.0).unwrap();
        assert!(direct_channel(&g, &zero).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn direct_channel_matches_scalar_oracle() {
        let mut rng = PrngStream::new(21, 0);
        let g = geom(3, 2).with_offsets(&[0.0, 0.01, 0.02, 0.03, 0.04, 0.05]).unwrap();
        for _ in 0..20 {
            let ps = draw_paths(&mut rng, 4, 1.0).unwrap();
            let t = direct_channel(&g, &ps);
            for p in 0..6 {
                assert!((t[p] - oracle_entry(&g, &ps, p)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn bs_ris_matches_oracle_and_degenerates() {
        let mut rng = PrngStream::new(22, 0);
        let g = geom(2, 1).with_offsets(&[0.02, 0.04]).unwrap();
        let cols: Vec<_> = (0..2).map(|_| draw_paths(&mut rng, 2, 1.0).unwrap()).collect();
        let h = bs_ris_channel(&g, &cols);
        assert_eq!(h.dim(), (2, 2));
        for f in 0..2 {
            for p in 0..2 {
                assert!((h[[p, f]] - oracle_entry(&g, &cols[f], p)).norm() < 1e-12);
            }
        }
        let one = bs_ris_channel(&g, &cols[..1]);
        let t = direct_channel(&g, &cols[0]);
        assert!((0..2).all(|p| one[[p, 0]] == t[p]));
        let zeros = vec![cols[0].scaled(Complex::new(0.0, 0.0))];
        assert!(bs_ris_channel(&g, &zeros).iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn ris_user_channel_examples() {
        let single = FimGeometry::planar(1, 1, 0.05, 0.1).unwrap();
        let ps = PathSet::from_parts(vec![Complex::new(1.0, 0.0)], vec![1.0], vec![2.0], 1.0).unwrap();
        assert!((ris_user_channel(&single, &ps)[0] - Complex::new(1.0, 0.0)).norm() < 1e-15);

        let mut rng = PrngStream::new(23, 0);
        let grid = FimGeometry::planar(2, 2, 0.05, 0.1).unwrap();
        let ps = draw_paths(&mut rng, 3, 1.0).unwrap();
        let k = ris_user_channel(&grid, &ps);
        for p in 0..4 {
            assert!((k[p] - oracle_entry(&grid, &ps, p)).norm() < 1e-12);
        }
        let c = Complex::new(2.0, 0.0);
        let k2 = ris_user_channel(&grid, &ps.scaled(c));
        for p in 0..4 {
            assert!((k2[p] - k[p] * c).norm() < 1e-12);
        }
    }

    #[test]
    fn direct_channel_power_calibration() {
        let mut rng = PrngStream::new(31, 0);
        let g = geom(4, 4);
        let n = 10_000;
        let mean = (0..n)
            .map(|_| {
                let ps = draw_paths(&mut rng, 16, 1.0).unwrap();
                direct_channel(&g, &ps).iter().map(|v| v.norm_sqr()).sum::<f64>()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean / 16.0 - 1.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn realization_is_reproducible_and_shaped() {
        let powers = LinkPowers {
            paths: 3,
            direct: vec![1e-6, 2e-6],
            bs_ris: 1e-4,
            ris_user: vec![1e-4, 1e-4],
            sectors: vec![Sector::Transmit, Sector::Reflect],
        };
        let stream = PrngStream::new(5, 5);
        let a = ChannelRealization::draw(&stream, &powers, 4).unwrap();
        let b = ChannelRealization::draw(&stream, &powers, 4).unwrap();
        assert_eq!(a, b);
        let fim = geom(2, 2);
        let ris = FimGeometry::planar(2, 2, 0.05, 0.1).unwrap();
        let cs = a.realize(&fim, &ris).unwrap();
        assert_eq!(cs.direct.dim(), (4, 2));
        assert_eq!(cs.bs_ris.dim(), (4, 4));
        assert_eq!(cs.ris_user.dim(), (4, 2));
        assert_eq!(cs, b.realize(&fim, &ris).unwrap());
    }

    #[test]
    fn path_loss_model() {
        let pl = PathLoss { ref_gain_db: -30.0, ref_distance: 1.0, exponent: 2.0 };
        assert!((pl.linear(1.0) - 1e-3).abs() < 1e-18);
        assert!((pl.linear(10.0) - 1e-5).abs() < 1e-18);
    }
}
