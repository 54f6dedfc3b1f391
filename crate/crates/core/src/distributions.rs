//! Latent-space distribution families: von Mises-Fisher on the unit
//! hypersphere (priors and posteriors) and diagonal Gaussians (decoder
//! likelihood convention and a diagnostic posterior mode).
//!
//! All densities are evaluated in log space through [`crate::bessel`], so
//! concentrations far beyond the 64-bit overflow point of the raw Bessel
//! functions stay finite.

use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};

use crate::bessel::{bessel_i_ratio, log_bessel_i};
use crate::math::{dot, exp, lgamma, log, norm2, sqrt, LN_2PI};

/// Tolerance on the unit-norm invariant of [`UnitVector`].
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Guard added to norms before division so an exact-zero direction cannot
/// produce NaN.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum DistError {
    /// Dimension below 2; the sphere S^{m-1} needs m >= 2.
    DimensionTooSmall { dim: usize },
    /// Negative concentration.
    InvalidConcentration { kappa: f64 },
    /// Operands live on spheres of different dimension.
    DimensionMismatch { left: usize, right: usize },
    /// Vector is not unit norm within [`UNIT_NORM_TOL`].
    NotUnitNorm { norm: f64 },
    /// Non-finite field (log-variance, mean, ...).
    NotFinite,
}

impl fmt::Display for DistError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::DimensionTooSmall { dim } => write!(f, "dimension {dim} below minimum of 2"),
            Self::InvalidConcentration { kappa } => write!(f, "concentration {kappa} is negative"),
            Self::DimensionMismatch { left, right } => {
                write!(f, "dimension mismatch: {left} vs {right}")
            }
            Self::NotUnitNorm { norm } => write!(f, "vector norm {norm} is not 1"),
            Self::NotFinite => write!(f, "non-finite parameter"),
        }
    }
}

impl core::error::Error for DistError {}

/// A point on the unit hypersphere S^{m-1}.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    /// Wraps a vector that must already be unit norm within [`UNIT_NORM_TOL`].
    pub fn new(coords: Vec<f64>) -> Result<Self, DistError> {
        let n = norm2(&coords);
        if (n - 1.0).abs() > UNIT_NORM_TOL {
            return Err(DistError::NotUnitNorm { norm: n });
        }
        Ok(Self(coords))
    }

    /// Normalizes an arbitrary nonzero vector onto the sphere. The norm is
    /// offset by [`NORM_EPS`] so an exact zero input yields a (meaningless but
    /// finite) vector instead of NaN.
    pub fn normalize(mut coords: Vec<f64>) -> Self {
        let n = norm2(&coords) + NORM_EPS;
        for c in coords.iter_mut() {
            *c /= n;
        }
        Self(coords)
    }

    /// The `i`-th standard basis vector in `m` dimensions.
    pub fn basis(m: usize, i: usize) -> Self {
        let mut v = alloc::vec![0.0; m];
        v[i] = 1.0;
        Self(v)
    }

    /// Antipode.
    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|c| -c).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// von Mises-Fisher distribution on S^{m-1}: density
/// `p(x) = C_m(kappa) exp(kappa mu . x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VmfDist {
    mu: UnitVector,
    kappa: f64,
}

impl VmfDist {
    pub fn new(mu: UnitVector, kappa: f64) -> Result<Self, DistError> {
        if mu.dim() < 2 {
            return Err(DistError::DimensionTooSmall { dim: mu.dim() });
        }
        if kappa.is_nan() || kappa.is_infinite() || kappa < 0.0 {
            return Err(DistError::InvalidConcentration { kappa });
        }
        Ok(Self { mu, kappa })
    }

    pub fn dim(&self) -> usize {
        self.mu.dim()
    }

    pub fn mean_direction(&self) -> &UnitVector {
        &self.mu
    }

    pub fn concentration(&self) -> f64 {
        self.kappa
    }

    /// Log density at a point on the sphere.
    pub fn log_pdf(&self, x: &UnitVector) -> Result<f64, DistError> {
        if x.dim() != self.dim() {
            return Err(DistError::DimensionMismatch {
                left: self.dim(),
                right: x.dim(),
            });
        }
        let log_c = vmf_log_norm_const(self.dim(), self.kappa)?;
        Ok(log_c + self.kappa * dot(self.mu.as_slice(), x.as_slice()))
    }

    /// KL[self || other] in closed form:
    /// `(kq - kp mu_p . mu_q) A_m(kq) + log C_m(kq) - log C_m(kp)`.
    pub fn kl(&self, other: &VmfDist) -> Result<f64, DistError> {
        if self.dim() != other.dim() {
            return Err(DistError::DimensionMismatch {
                left: self.dim(),
                right: other.dim(),
            });
        }
        let m = self.dim();
        let a = vmf_mean_resultant(m, self.kappa)?;
        let align = dot(other.mu.as_slice(), self.mu.as_slice());
        let log_c_q = vmf_log_norm_const(m, self.kappa)?;
        let log_c_p = vmf_log_norm_const(m, other.kappa)?;
        Ok((self.kappa - other.kappa * align) * a + log_c_q - log_c_p)
    }

    /// Draws one point; `rng` is consumed sequentially, so fixed seeds give
    /// reproducible streams.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> UnitVector {
        let (w, v) = sample_vmf_parts(self.mu.as_slice(), self.kappa, rng);
        UnitVector::normalize(compose_from_parts(self.mu.as_slice(), w, &v))
    }

    /// `n` draws from a dedicated stream seeded with `seed`.
    pub fn sample_seeded(&self, seed: u64, n: usize) -> Vec<UnitVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample(&mut rng)).collect()
    }
}

/// log C_m(kappa) with C_m(k) = k^(m/2-1) / ((2 pi)^(m/2) I_(m/2-1)(k)).
///
/// `kappa = 0` degenerates to the uniform density on the sphere,
/// 1 / area(S^{m-1}).
pub fn vmf_log_norm_const(m: usize, kappa: f64) -> Result<f64, DistError> {
    if m < 2 {
        return Err(DistError::DimensionTooSmall { dim: m });
    }
    if kappa.is_nan() || kappa.is_infinite() || kappa < 0.0 {
        return Err(DistError::InvalidConcentration { kappa });
    }
    let half_m = m as f64 / 2.0;
    if kappa == 0.0 {
        // -log area(S^{m-1}), area = 2 pi^{m/2} / Gamma(m/2).
        return Ok(lgamma(half_m) - core::f64::consts::LN_2 - half_m * log(core::f64::consts::PI));
    }
    let nu = half_m - 1.0;
    Ok(nu * log(kappa) - half_m * LN_2PI - log_bessel_i(nu, kappa))
}

/// Mean resultant length A_m(kappa) = I_{m/2}(kappa) / I_{m/2-1}(kappa),
/// the norm of E[x]; strictly increasing in kappa, in [0, 1).
pub fn vmf_mean_resultant(m: usize, kappa: f64) -> Result<f64, DistError> {
    if m < 2 {
        return Err(DistError::DimensionTooSmall { dim: m });
    }
    if kappa.is_nan() || kappa.is_infinite() || kappa < 0.0 {
        return Err(DistError::InvalidConcentration { kappa });
    }
    Ok(bessel_i_ratio(m as f64 / 2.0 - 1.0, kappa))
}

/// d/dkappa A_m(kappa) via the standard identity
/// `A' = 1 - A^2 - (m-1)/kappa * A`, with the kappa -> 0 limit 1/m.
pub fn vmf_mean_resultant_deriv(m: usize, kappa: f64) -> Result<f64, DistError> {
    if kappa < 1e-12 {
        if m < 2 {
            return Err(DistError::DimensionTooSmall { dim: m });
        }
        return Ok(1.0 / m as f64);
    }
    let a = vmf_mean_resultant(m, kappa)?;
    Ok(1.0 - a * a - (m as f64 - 1.0) / kappa * a)
}

/// Tangent-decomposed vMF draw: the angle part `w = mu . x` via Wood's
/// rejection scheme under Ulrich's beta envelope, and a uniformly random unit
/// tangent `v` orthogonal to `mu`. The draw composes as
/// `x = w mu + sqrt(1 - w^2) v`.
pub fn sample_vmf_parts<R: Rng + ?Sized>(
    mu: &[f64],
    kappa: f64,
    rng: &mut R,
) -> (f64, Vec<f64>) {
    let m = mu.len();
    debug_assert!(m >= 2 && kappa >= 0.0);
    let w = if kappa == 0.0 {
        // Uniform on the sphere: the first coordinate is 2 Beta(a, a) - 1
        // with a = (m-1)/2.
        let a = (m as f64 - 1.0) / 2.0;
        let beta = Beta::new(a, a).expect("valid beta shape");
        2.0 * beta.sample(rng) - 1.0
    } else {
        sample_angle_wood(m, kappa, rng)
    };
    let v = sample_unit_tangent(mu, rng);
    (w, v)
}

/// `x = w mu + sqrt(1 - w^2) v`.
pub fn compose_from_parts(mu: &[f64], w: f64, v: &[f64]) -> Vec<f64> {
    let s = sqrt((1.0 - w * w).max(0.0));
    mu.iter().zip(v).map(|(&m_i, &v_i)| w * m_i + s * v_i).collect()
}

/// Wood (1994) rejection sampling of the cosine w between the draw and the
/// mean direction.
fn sample_angle_wood<R: Rng + ?Sized>(m: usize, kappa: f64, rng: &mut R) -> f64 {
    let mf = m as f64 - 1.0;
    // b in the numerically stable form (the textbook (-2k + sqrt(...))/ (m-1)
    // cancels catastrophically for large kappa).
    let b = mf / (2.0 * kappa + sqrt(4.0 * kappa * kappa + mf * mf));
    let x0 = (1.0 - b) / (1.0 + b);
    let c = kappa * x0 + mf * log(1.0 - x0 * x0);
    let a = mf / 2.0;
    let beta = Beta::new(a, a).expect("valid beta shape");
    loop {
        let z: f64 = beta.sample(rng);
        let u: f64 = rng.random();
        let w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z);
        if kappa * w + mf * log(1.0 - x0 * w) - c >= log(u) {
            return w.clamp(-1.0, 1.0);
        }
    }
}

/// Uniform draw from the unit sphere of the tangent space at `mu`.
fn sample_unit_tangent<R: Rng + ?Sized>(mu: &[f64], rng: &mut R) -> Vec<f64> {
    loop {
        let g: Vec<f64> = (0..mu.len()).map(|_| rng.sample(StandardNormal)).collect();
        let along = dot(&g, mu);
        let mut t: Vec<f64> = g.iter().zip(mu).map(|(&gi, &mi)| gi - along * mi).collect();
        let n = norm2(&t);
        if n > 1e-12 {
            for ti in t.iter_mut() {
                *ti /= n;
            }
            return t;
        }
    }
}

/// Diagonal Gaussian, parameterized by mean and log-variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDiag {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

impl GaussianDiag {
    pub fn new(mean: Vec<f64>, log_var: Vec<f64>) -> Result<Self, DistError> {
        if mean.len() != log_var.len() {
            return Err(DistError::DimensionMismatch {
                left: mean.len(),
                right: log_var.len(),
            });
        }
        if mean.iter().chain(&log_var).any(|v| !v.is_finite()) {
            return Err(DistError::NotFinite);
        }
        Ok(Self { mean, log_var })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn log_var(&self) -> &[f64] {
        &self.log_var
    }

    pub fn log_pdf(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim());
        let mut acc = 0.0;
        for ((&xi, &m), &lv) in x.iter().zip(&self.mean).zip(&self.log_var) {
            let d = xi - m;
            acc += d * d / exp(lv) + lv + LN_2PI;
        }
        -0.5 * acc
    }
}

/// KL[g || N(0, I)] = 1/2 sum(exp(lv) + mean^2 - 1 - lv); used by the
/// Gaussian-posterior diagnostic mode.
pub fn gaussian_kl_to_std(g: &GaussianDiag) -> f64 {
    g.mean
        .iter()
        .zip(&g.log_var)
        .map(|(&m, &lv)| exp(lv) + m * m - 1.0 - lv)
        .sum::<f64>()
        * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::PI;

    fn e(m: usize, i: usize) -> UnitVector {
        UnitVector::basis(m, i)
    }

    #[test]
    fn unit_vector_rejects_bad_norm() {
        assert!(UnitVector::new(vec![0.5, 0.5]).is_err());
        assert!(UnitVector::new(vec![0.6, 0.8]).is_ok());
        let n = UnitVector::normalize(vec![3.0, 4.0]);
        assert!((norm2(n.as_slice()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn norm_const_uniform_circle() {
        // m=2, kappa=0: uniform on the circle, density 1/(2 pi).
        let got = vmf_log_norm_const(2, 0.0).unwrap();
        assert!((got - (1.0 / (2.0 * PI)).ln()).abs() < 1e-14);
    }

    #[test]
    fn norm_const_matches_m3_closed_form() {
        // C_3(k) = k / (4 pi sinh k).
        for &k in &[0.25, 1.0, 5.0, 30.0] {
            let got = vmf_log_norm_const(3, k).unwrap();
            let want = (k / (4.0 * PI * k.sinh())).ln();
            assert!((got - want).abs() < 1e-11, "k={k}");
        }
        // Large k via the log form k - log(4 pi) + log(2k) - ... : use
        // log sinh k = k - ln 2 for k >> 1.
        let k: f64 = 800.0;
        let want = k.ln() - (4.0 * PI).ln() - (k - 2f64.ln());
        assert!((vmf_log_norm_const(3, k).unwrap() - want).abs() < 1e-9);
    }

    #[test]
    fn norm_const_continuous_at_zero_concentration() {
        for m in [2, 3, 10] {
            let at_zero = vmf_log_norm_const(m, 0.0).unwrap();
            let near_zero = vmf_log_norm_const(m, 1e-9).unwrap();
            assert!((at_zero - near_zero).abs() < 1e-7, "m={m}");
        }
    }

    #[test]
    fn norm_const_high_concentration_is_finite() {
        let v = vmf_log_norm_const(10, 50.0).unwrap();
        assert!(v.is_finite());
        let v = vmf_log_norm_const(10, 1e4).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn norm_const_rejects_domain_errors() {
        assert!(vmf_log_norm_const(1, 1.0).is_err());
        assert!(vmf_log_norm_const(3, -0.5).is_err());
        assert!(vmf_log_norm_const(3, f64::NAN).is_err());
    }

    #[test]
    fn log_pdf_uniform_and_peak() {
        let m = 4;
        let d = VmfDist::new(e(m, 0), 0.0).unwrap();
        let area = 2.0 * PI * PI; // S^3
        for i in 0..m {
            let lp = d.log_pdf(&e(m, i)).unwrap();
            assert!((lp - (1.0 / area).ln()).abs() < 1e-12);
        }

        let d = VmfDist::new(e(m, 0), 3.5).unwrap();
        let at_mu = d.log_pdf(&e(m, 0)).unwrap();
        let off = d.log_pdf(&e(m, 1)).unwrap();
        let anti = d.log_pdf(&e(m, 0).negated()).unwrap();
        assert!(at_mu > off && off > anti);
    }

    #[test]
    fn log_pdf_dimension_mismatch() {
        let d = VmfDist::new(e(3, 0), 1.0).unwrap();
        assert!(matches!(
            d.log_pdf(&e(4, 0)),
            Err(DistError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mean_resultant_endpoints_and_m3_form() {
        assert_eq!(vmf_mean_resultant(5, 0.0).unwrap(), 0.0);
        let big = vmf_mean_resultant(10, 1e4).unwrap();
        assert!(big > 0.999 && big <= 1.0);
        // m=3: A(k) = coth k - 1/k.
        let k: f64 = 5.0;
        let want = 1.0 / k.tanh() - 1.0 / k;
        assert!((vmf_mean_resultant(3, k).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn mean_resultant_strictly_increasing() {
        for m in [2, 3, 10, 25] {
            let mut prev = -1.0;
            for i in 0..60 {
                let k = 0.25 * (i as f64) * (i as f64);
                let a = vmf_mean_resultant(m, k).unwrap();
                assert!(a > prev, "m={m} k={k}");
                assert!((0.0..1.0).contains(&a));
                prev = a;
            }
        }
    }

    #[test]
    fn mean_resultant_deriv_matches_finite_difference() {
        for m in [2, 3, 10] {
            for &k in &[0.05, 0.7, 4.0, 60.0] {
                let h = 1e-5 * (1.0 + k);
                let fd = (vmf_mean_resultant(m, k + h).unwrap()
                    - vmf_mean_resultant(m, k - h).unwrap())
                    / (2.0 * h);
                let an = vmf_mean_resultant_deriv(m, k).unwrap();
                assert!((fd - an).abs() < 1e-7 * (1.0 + an.abs()), "m={m} k={k}");
            }
        }
    }

    #[test]
    fn kl_zero_on_identical_distributions() {
        let q = VmfDist::new(e(6, 2), 13.0).unwrap();
        assert!(q.kl(&q).unwrap().abs() < 1e-12);
    }

    #[test]
    fn kl_antipodal_closed_form() {
        // KL(q || mirror of q) = 2 kappa A_m(kappa).
        for m in [3, 10] {
            for &k in &[0.5, 4.0, 25.0] {
                let q = VmfDist::new(e(m, 0), k).unwrap();
                let p = VmfDist::new(e(m, 0).negated(), k).unwrap();
                let want = 2.0 * k * vmf_mean_resultant(m, k).unwrap();
                assert!((q.kl(&p).unwrap() - want).abs() < 1e-10, "m={m} k={k}");
            }
        }
    }

    #[test]
    fn kl_nonnegative_on_a_grid() {
        for m in [2, 3, 7] {
            for &kq in &[0.0, 0.3, 2.0, 15.0, 90.0] {
                for &kp in &[0.0, 1.0, 10.0, 60.0] {
                    for i in 0..m {
                        let q = VmfDist::new(e(m, 0), kq).unwrap();
                        let p = VmfDist::new(e(m, i), kp).unwrap();
                        let kl = q.kl(&p).unwrap();
                        assert!(kl >= -1e-10, "m={m} kq={kq} kp={kp} i={i}: {kl}");
                    }
                }
            }
        }
    }

    #[test]
    fn sampler_deterministic_under_seed() {
        let d = VmfDist::new(e(5, 1), 7.0).unwrap();
        let a = d.sample_seeded(42, 16);
        let b = d.sample_seeded(42, 16);
        assert_eq!(a, b);
        let c = d.sample_seeded(43, 16);
        assert_ne!(a, c);
    }

    #[test]
    fn sampler_outputs_unit_norm() {
        let d = VmfDist::new(e(8, 3), 40.0).unwrap();
        for x in d.sample_seeded(7, 200) {
            assert!((norm2(x.as_slice()) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn uniform_sample_mean_is_small() {
        // kappa = 0: the empirical mean of n draws has norm O(1/sqrt(n)).
        let d = VmfDist::new(e(3, 0), 0.0).unwrap();
        let n = 100_000;
        let mut acc = vec![0.0; 3];
        for x in d.sample_seeded(11, n) {
            for (a, &c) in acc.iter_mut().zip(x.as_slice()) {
                *a += c;
            }
        }
        for a in acc.iter_mut() {
            *a /= n as f64;
        }
        assert!(norm2(&acc) < 0.01);
    }

    #[test]
    fn gaussian_kl_known_values() {
        let g = GaussianDiag::new(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
        assert_eq!(gaussian_kl_to_std(&g), 0.0);

        let g = GaussianDiag::new(vec![1.5, -2.0], vec![0.0, 0.0]).unwrap();
        let want = (1.5f64 * 1.5 + 2.0 * 2.0) / 2.0;
        assert!((gaussian_kl_to_std(&g) - want).abs() < 1e-14);

        // mean=(1,1), log_var=(ln2, ln2): 1/2 * 2 * (2 + 1 - 1 - ln 2).
        let g = GaussianDiag::new(vec![1.0, 1.0], vec![2f64.ln(), 2f64.ln()]).unwrap();
        let want = 2.0 + 1.0 - 1.0 - 2f64.ln();
        assert!((gaussian_kl_to_std(&g) - want).abs() < 1e-14);
    }

    #[test]
    fn gaussian_log_pdf_standard_normal_origin() {
        let g = GaussianDiag::new(vec![0.0; 3], vec![0.0; 3]).unwrap();
        let want = -1.5 * LN_2PI;
        assert!((g.log_pdf(&[0.0, 0.0, 0.0]) - want).abs() < 1e-14);
    }
}
