//! Scenario geometry, path loss, fading generators, the cascaded and stacked
//! effective channels, and bounded CSI errors.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{frobenius_sq, C64, CMat, CVec};
use crate::{Error, Result};

pub type Point = [f64; 3];

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    db_to_linear(dbm - 30.0)
}

pub fn distance(a: &Point, b: &Point) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `C0 · d^−α` as a linear power gain.
pub fn path_loss(distance_m: f64, exponent: f64, c0_db: f64) -> Result<f64> {
    if !(distance_m >= 1.0) {
        return Err(Error::domain(format!(
            "path loss is defined from the 1 m reference distance, got {distance_m} m"
        )));
    }
    Ok(db_to_linear(c0_db) * distance_m.powf(-exponent))
}

/// One circularly symmetric complex Gaussian sample with `E|z|² = variance`.
pub fn cscg<R: Rng + ?Sized>(variance: f64, rng: &mut R) -> C64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(s * re, s * im)
}

/// Matrix with i.i.d. CSCG entries of variance `gain`, filled column by column.
pub fn sample_rayleigh<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> CMat {
    let mut m = CMat::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            m[(i, j)] = cscg(gain, rng);
        }
    }
    m
}

/// `√gain · (√(β/(1+β)) · LoS + √(1/(1+β)) · NLoS)`.
pub fn sample_ricean<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    gain: f64,
    ricean_factor: f64,
    los_component: &CMat,
    rng: &mut R,
) -> Result<CMat> {
    if los_component.shape() != (rows, cols) {
        return Err(Error::dim(format!(
            "LoS component is {:?}, expected ({rows}, {cols})",
            los_component.shape()
        )));
    }
    if !(ricean_factor >= 0.0) {
        return Err(Error::domain("Ricean factor must be nonnegative"));
    }
    let nlos = sample_rayleigh(rows, cols, 1.0, rng);
    let a = (ricean_factor / (1.0 + ricean_factor)).sqrt();
    let b = (1.0 / (1.0 + ricean_factor)).sqrt();
    Ok((los_component * C64::from(a) + nlos * C64::from(b)) * C64::from(gain.sqrt()))
}

/// Half-wavelength uniform linear array along the x-axis, steered toward the
/// unit direction whose x-component is `cos_x`.
pub fn ula_steering(elements: usize, cos_x: f64) -> CVec {
    CVec::from_fn(elements, |m, _| C64::from_polar(1.0, PI * m as f64 * cos_x))
}

fn direction_cos_x(from: &Point, to: &Point) -> f64 {
    let d = distance(from, to);
    if d == 0.0 {
        0.0
    } else {
        (to[0] - from[0]) / d
    }
}

/// `G_k = diag(h_r,k^H) H_dr`.
pub fn cascade(irs_actuator_col: &CVec, ap_irs: &CMat) -> Result<CMat> {
    if irs_actuator_col.len() != ap_irs.nrows() {
        return Err(Error::dim(format!(
            "IRS column has {} entries, AP-IRS matrix has {} rows",
            irs_actuator_col.len(),
            ap_irs.nrows()
        )));
    }
    let mut g = ap_irs.clone();
    for (m, mut row) in g.row_iter_mut().enumerate() {
        row *= irs_actuator_col[m].conj();
    }
    Ok(g)
}

/// `R_k = [G_k^H  h_d,k]`.
pub fn stack_effective(cascaded: &CMat, direct: &CVec) -> Result<CMat> {
    if cascaded.ncols() != direct.len() {
        return Err(Error::dim(format!(
            "cascaded channel has {} columns, direct channel has {} entries",
            cascaded.ncols(),
            direct.len()
        )));
    }
    let m = cascaded.nrows();
    let mut r = CMat::zeros(direct.len(), m + 1);
    r.columns_mut(0, m).copy_from(&cascaded.adjoint());
    r.set_column(m, direct);
    Ok(r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LargeScaleParams {
    pub c0_db: f64,
    pub alpha_ricean: f64,
    pub alpha_rayleigh: f64,
    pub ricean_factor: f64,
    pub carrier_hz: f64,
}

impl Default for LargeScaleParams {
    fn default() -> Self {
        Self {
            c0_db: -30.0,
            alpha_ricean: 2.0,
            alpha_rayleigh: 4.0,
            ricean_factor: 2.0,
            carrier_hz: 2.4e9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGeometry {
    pub ap_position: Point,
    pub irs_position: Point,
    pub actuator_positions: Vec<Point>,
    pub circle_center: Point,
    pub circle_radius: f64,
}

impl ScenarioGeometry {
    pub const DEFAULT_AP: Point = [0.0, 0.0, 15.0];
    pub const DEFAULT_IRS: Point = [50.0, 50.0, 15.0];
    pub const DEFAULT_CENTER: Point = [50.0, 50.0, 0.0];
    pub const DEFAULT_RADIUS: f64 = 20.0;

    /// Places `k` actuators independently and uniformly on the circle.
    pub fn sample<R: Rng + ?Sized>(
        ap_position: Point,
        irs_position: Point,
        circle_center: Point,
        circle_radius: f64,
        k: usize,
        rng: &mut R,
    ) -> Self {
        let actuator_positions = (0..k)
            .map(|_| {
                let phi = rng.random::<f64>() * 2.0 * PI;
                [
                    circle_center[0] + circle_radius * phi.cos(),
                    circle_center[1] + circle_radius * phi.sin(),
                    circle_center[2],
                ]
            })
            .collect();
        Self {
            ap_position,
            irs_position,
            actuator_positions,
            circle_center,
            circle_radius,
        }
    }

    pub fn default_layout<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        Self::sample(
            Self::DEFAULT_AP,
            Self::DEFAULT_IRS,
            Self::DEFAULT_CENTER,
            Self::DEFAULT_RADIUS,
            k,
            rng,
        )
    }

    pub fn num_actuators(&self) -> usize {
        self.actuator_positions.len()
    }
}

/// Every channel block of one coherence interval.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelRealization {
    /// `N_t × K`, column `k` is `h_d,k`.
    pub direct: CMat,
    /// `M × N_t`.
    pub ap_irs: CMat,
    /// `M × K`, column `k` is `h_r,k`.
    pub irs_actuator: CMat,
    /// `K × K`, entry `(j, k)` is `g_jk`; zero diagonal.
    pub d2d: CMat,
    pub noise_power_w: f64,
}

impl ChannelRealization {
    pub fn num_actuators(&self) -> usize {
        self.direct.ncols()
    }

    pub fn num_antennas(&self) -> usize {
        self.direct.nrows()
    }

    pub fn num_elements(&self) -> usize {
        self.ap_irs.nrows()
    }

    /// Draws all blocks for the given layout. Draw order: AP-IRS, then per
    /// actuator IRS link and direct link, then the D2D upper triangle.
    pub fn generate<R: Rng + ?Sized>(
        geometry: &ScenarioGeometry,
        params: &LargeScaleParams,
        antennas: usize,
        elements: usize,
        noise_power_w: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if antennas == 0 {
            return Err(Error::domain("the AP needs at least one antenna"));
        }
        let k = geometry.num_actuators();
        if k == 0 {
            return Err(Error::domain("at least one actuator is required"));
        }
        let ap = &geometry.ap_position;
        let irs = &geometry.irs_position;

        let pl_ai = path_loss(distance(ap, irs).max(1.0), params.alpha_ricean, params.c0_db)?;
        let los_ai = ula_steering(elements, direction_cos_x(irs, ap))
            * ula_steering(antennas, direction_cos_x(ap, irs)).adjoint();
        let ap_irs = sample_ricean(elements, antennas, pl_ai, params.ricean_factor, &los_ai, rng)?;

        let mut irs_actuator = CMat::zeros(elements, k);
        let mut direct = CMat::zeros(antennas, k);
        for (idx, pos) in geometry.actuator_positions.iter().enumerate() {
            let pl_ia = path_loss(distance(irs, pos).max(1.0), params.alpha_ricean, params.c0_db)?;
            let los = CMat::from_column_slice(
                elements,
                1,
                ula_steering(elements, direction_cos_x(irs, pos)).as_slice(),
            );
            let col = sample_ricean(elements, 1, pl_ia, params.ricean_factor, &los, rng)?;
            irs_actuator.set_column(idx, &col.column(0));
            let pl_d = path_loss(distance(ap, pos).max(1.0), params.alpha_rayleigh, params.c0_db)?;
            direct.set_column(idx, &sample_rayleigh(antennas, 1, pl_d, rng).column(0));
        }

        let mut d2d = CMat::zeros(k, k);
        for j in 0..k {
            for i in (j + 1)..k {
                let d = distance(&geometry.actuator_positions[i], &geometry.actuator_positions[j]);
                let pl = path_loss(d.max(1.0), params.alpha_rayleigh, params.c0_db)?;
                let g = cscg(pl, rng);
                d2d[(i, j)] = g;
                d2d[(j, i)] = g;
            }
        }

        Ok(Self {
            direct,
            ap_irs,
            irs_actuator,
            d2d,
            noise_power_w,
        })
    }

    /// Same realization with every IRS-related block set to zero.
    pub fn without_irs(&self) -> Self {
        let mut out = self.clone();
        out.ap_irs.fill(C64::from(0.0));
        out.irs_actuator.fill(C64::from(0.0));
        out
    }

    pub fn effective(&self) -> EffectiveChannel {
        EffectiveChannel::from_realization(self)
    }
}

/// Per-actuator cascaded channels `G_k` and stacked channels `R_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectiveChannel {
    pub cascaded: Vec<CMat>,
    pub stacked: Vec<CMat>,
}

impl EffectiveChannel {
    pub fn from_realization(ch: &ChannelRealization) -> Self {
        let k = ch.num_actuators();
        let mut cascaded = Vec::with_capacity(k);
        let mut stacked = Vec::with_capacity(k);
        for idx in 0..k {
            let g = cascade(&ch.irs_actuator.column(idx).into_owned(), &ch.ap_irs)
                .expect("realization blocks have consistent shapes");
            let r = stack_effective(&g, &ch.direct.column(idx).into_owned())
                .expect("realization blocks have consistent shapes");
            cascaded.push(g);
            stacked.push(r);
        }
        Self { cascaded, stacked }
    }
}

/// Estimated stacked channels with a Frobenius error bound per actuator.
#[derive(Clone, Debug, PartialEq)]
pub struct CsiEstimate {
    pub estimated_stacked: Vec<CMat>,
    pub radius: Vec<f64>,
    pub uncertainty_ratio: f64,
    pub direct_radius: Vec<f64>,
    pub cascaded_radius: Vec<f64>,
}

impl CsiEstimate {
    /// Error-free estimate.
    pub fn exact(truth: &EffectiveChannel) -> Self {
        let k = truth.stacked.len();
        Self {
            estimated_stacked: truth.stacked.clone(),
            radius: vec![0.0; k],
            uncertainty_ratio: 0.0,
            direct_radius: vec![0.0; k],
            cascaded_radius: vec![0.0; k],
        }
    }
}

/// Uniform sample from the Frobenius ball of radius `radius` in the
/// `rows × cols` complex matrices.
pub fn sample_ball<R: Rng + ?Sized>(rows: usize, cols: usize, radius: f64, rng: &mut R) -> CMat {
    let dir = sample_sphere(rows, cols, 1.0, rng);
    let real_dim = (2 * rows * cols) as f64;
    let u: f64 = rng.random();
    dir * C64::from(radius * u.powf(1.0 / real_dim))
}

/// Uniform sample on the Frobenius sphere of radius `radius`.
pub fn sample_sphere<R: Rng + ?Sized>(rows: usize, cols: usize, radius: f64, rng: &mut R) -> CMat {
    loop {
        let g = sample_rayleigh(rows, cols, 1.0, rng);
        let n = frobenius_sq(&g).sqrt();
        if n > 0.0 {
            return g * C64::from(radius / n);
        }
    }
}

/// Draws `ΔR_k` uniformly in the ball of radius `κ‖R_k‖_F` and returns the
/// estimate `R_k − ΔR_k`.
pub fn perturb_csi<R: Rng + ?Sized>(
    truth: &EffectiveChannel,
    kappa: f64,
    rng: &mut R,
) -> Result<CsiEstimate> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::domain(format!("uncertainty ratio must lie in [0,1], got {kappa}")));
    }
    let mut out = CsiEstimate::exact(truth);
    out.uncertainty_ratio = kappa;
    if kappa == 0.0 {
        return Ok(out);
    }
    for (idx, r) in truth.stacked.iter().enumerate() {
        let m = r.ncols() - 1;
        let g_norm = frobenius_sq(&r.columns(0, m).into_owned()).sqrt();
        let d_norm = r.column(m).norm();
        out.cascaded_radius[idx] = kappa * g_norm;
        out.direct_radius[idx] = kappa * d_norm;
        let delta = (out.cascaded_radius[idx].powi(2) + out.direct_radius[idx].powi(2)).sqrt();
        out.radius[idx] = delta;
        let err = sample_ball(r.nrows(), r.ncols(), delta, rng);
        out.estimated_stacked[idx] = r - err;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{cvec, ONE};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cmat(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMat {
        sample_rayleigh(rows, cols, 1.0, rng)
    }

    #[test]
    fn path_loss_reference_values() {
        assert!((path_loss(1.0, 3.0, -30.0).unwrap() - 1e-3).abs() < 1e-18);
        assert!((path_loss(10.0, 2.0, -30.0).unwrap() - 1e-5).abs() < 1e-20);
        assert!((path_loss(100.0, 4.0, -30.0).unwrap() - 1e-11).abs() < 1e-25);
        assert!(path_loss(0.5, 2.0, -30.0).is_err());
        assert!((dbm_to_watts(-70.0) - 1e-10).abs() < 1e-24);
        assert!((dbm_to_watts(43.0) - 19.952623149688797).abs() < 1e-12);
    }

    #[test]
    fn rayleigh_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_rayleigh(3, 2, 0.0, &mut rng), CMat::zeros(3, 2));
        let n = 100_000;
        let gain = 2.5;
        let m = sample_rayleigh(n, 1, gain, &mut rng);
        let second = m.iter().map(|z| z.norm_sqr()).sum::<f64>() / n as f64;
        assert!((second / gain - 1.0).abs() < 0.02);
        let mean = m.iter().sum::<C64>() / C64::from(n as f64);
        let bound = 3.0 * (gain / n as f64).sqrt();
        assert!(mean.norm() < bound);
    }

    #[test]
    fn ricean_limits_and_k_factor() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let los = CMat::from_element(1, 1, C64::from_polar(1.0, 0.7));
        let big = sample_ricean(1, 1, 4.0, 1e12, &los, &mut rng).unwrap();
        assert!((big[(0, 0)] - los[(0, 0)] * 2.0).norm() < 1e-5);

        let n = 100_000;
        let los = CMat::from_element(n, 1, ONE);
        let s = sample_ricean(n, 1, 1.0, 2.0, &los, &mut rng).unwrap();
        let a = (2.0f64 / 3.0).sqrt();
        let nlos_power = s.iter().map(|z| (z - a).norm_sqr()).sum::<f64>() / n as f64;
        let k_factor = a * a / nlos_power;
        assert!((k_factor / 2.0 - 1.0).abs() < 0.05);

        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let zero_los = CMat::zeros(4, 2);
        let s1 = sample_ricean(4, 2, 1.7, 0.0, &zero_los, &mut r1).unwrap();
        let s2 = sample_rayleigh(4, 2, 1.7, &mut r2);
        assert!((s1 - s2).norm() < 1e-12);
        assert!(sample_ricean(2, 2, 1.0, 1.0, &zero_los, &mut r1).is_err());
    }

    #[test]
    fn cascade_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let h = random_cmat(5, 3, &mut rng);
        assert_eq!(cascade(&CVec::from_element(5, ONE), &h).unwrap(), h);
        let hr = cvec(&[C64::new(0.3, -0.8)]);
        let row = random_cmat(1, 3, &mut rng);
        let g = cascade(&hr, &row).unwrap();
        assert!((g - row * hr[0].conj()).norm() < 1e-15);
        assert!(cascade(&CVec::zeros(2), &h).is_err());
    }

    #[test]
    fn stack_selector_and_no_irs() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_cmat(4, 3, &mut rng);
        let hd = random_cmat(3, 1, &mut rng).column(0).into_owned();
        let r = stack_effective(&g, &hd).unwrap();
        let mut sel = CVec::zeros(5);
        sel[4] = ONE;
        assert_eq!(&r * sel, hd);
        assert_eq!(r.column(4), hd.column(0));
        let r0 = stack_effective(&CMat::zeros(4, 3), &hd).unwrap();
        let v = random_cmat(5, 1, &mut rng).column(0).into_owned();
        let mut v1 = v.clone();
        v1[4] = ONE;
        assert!((&r0 * v1 - &hd).norm() < 1e-15);
    }

    #[test]
    fn generation_is_deterministic() {
        let gen = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let geo = ScenarioGeometry::default_layout(4, &mut rng);
            ChannelRealization::generate(&geo, &LargeScaleParams::default(), 2, 6, 1e-10, &mut rng)
                .unwrap()
        };
        let a = gen(9);
        assert_eq!(a, gen(9));
        assert_ne!(a, gen(10));
        for k in 0..4 {
            assert_eq!(a.d2d[(k, k)], C64::from(0.0));
        }
        assert_eq!(a.d2d, a.d2d.transpose());
        assert!(a.direct.iter().chain(a.ap_irs.iter()).all(|z| z.re.is_finite() && z.im.is_finite()));
    }

    #[test]
    fn csi_ball_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let geo = ScenarioGeometry::default_layout(2, &mut rng);
        let ch = ChannelRealization::generate(&geo, &LargeScaleParams::default(), 2, 3, 1e-10, &mut rng)
            .unwrap();
        let eff = ch.effective();
        assert_eq!(perturb_csi(&eff, 0.0, &mut rng).unwrap().estimated_stacked, eff.stacked);
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let est = perturb_csi(&eff, 0.1, &mut rng).unwrap();
            for k in 0..2 {
                let ratio = frobenius_sq(&(&eff.stacked[k] - &est.estimated_stacked[k])).sqrt()
                    / frobenius_sq(&eff.stacked[k]).sqrt();
                assert!(ratio <= 0.1 * (1.0 + 1e-12));
                let agg = (est.cascaded_radius[k].powi(2) + est.direct_radius[k].powi(2)).sqrt();
                assert!((agg - est.radius[k]).abs() <= 1e-12 * est.radius[k]);
                worst = worst.max(ratio);
            }
        }
        assert!(worst > 0.05);
        assert!(perturb_csi(&eff, 1.5, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn cascade_and_stack_identities(seed in any::<u64>(), m in 1usize..8, nt in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let hdr = random_cmat(m, nt, &mut rng);
            let hr = random_cmat(m, 1, &mut rng).column(0).into_owned();
            let hd = random_cmat(nt, 1, &mut rng).column(0).into_owned();
            let w = random_cmat(nt, 1, &mut rng).column(0).into_owned();
            let vt = random_cmat(m, 1, &mut rng).column(0).into_owned();
            let g = cascade(&hr, &hdr).unwrap();
            let hw = &hdr * &w;
            let mut naive = C64::from(0.0);
            for i in 0..m {
                naive += vt[i].conj() * hr[i].conj() * hw[i];
            }
            let fast = (vt.adjoint() * &g * &w)[(0, 0)];
            prop_assert!((fast - naive).norm() <= 1e-10 * naive.norm().max(1.0));

            let r = stack_effective(&g, &hd).unwrap();
            let mut v = CVec::zeros(m + 1);
            v.rows_mut(0, m).copy_from(&vt);
            v[m] = ONE;
            let lhs = (v.adjoint() * r.adjoint() * &w)[(0, 0)].norm_sqr();
            let rhs = ((hd.adjoint() + vt.adjoint() * &g) * &w)[(0, 0)].norm_sqr();
            prop_assert!((lhs - rhs).abs() <= 1e-10 * rhs.max(1e-300));
        }
    }
}
