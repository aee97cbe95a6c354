//! Second-order real spherical harmonics and Lambertian SH irradiance.
//!
//! Coefficients are interpreted as already convolved with the cosine lobe, so
//! irradiance is the plain 9-term sum per color channel.

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::params::N_ILLUM;

pub const SH_BANDS: usize = 9;

const H0: f64 = 0.282095;
const H1: f64 = 0.488603;
const H2: f64 = 1.092548;
const H20: f64 = 0.315392;
const H22: f64 = 0.546274;

const UNIT_TOLERANCE: f64 = 1e-6;

/// Nine RGB coefficient triples, band-major: `[band][channel]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShCoefficients(pub [[f64; 3]; SH_BANDS]);

impl ShCoefficients {
    /// Builds coefficients from the 27-scalar illumination group of a parameter vector.
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        if values.len() != N_ILLUM {
            return Err(Error::mismatch("SH coefficients", N_ILLUM, values.len()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SH coefficients"));
        }
        let mut c = [[0.0; 3]; SH_BANDS];
        for (k, band) in c.iter_mut().enumerate() {
            band.copy_from_slice(&values[3 * k..3 * k + 3]);
        }
        Ok(Self(c))
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.iter().flatten().copied().collect()
    }
}

/// Evaluates H_1..H_9 at `n`; `n` must be unit length.
pub fn sh_basis(n: Vec3) -> Result<[f64; SH_BANDS]> {
    let len = crate::math::norm(n);
    if (len - 1.0).abs() > UNIT_TOLERANCE {
        return Err(Error::NonUnitNormal(len));
    }
    Ok(sh_basis_unchecked(n))
}

#[inline]
pub(crate) fn sh_basis_unchecked(n: Vec3) -> [f64; SH_BANDS] {
    let [x, y, z] = n;
    [
        H0,
        H1 * y,
        H1 * z,
        H1 * x,
        H2 * x * y,
        H2 * y * z,
        H20 * (3.0 * z * z - 1.0),
        H2 * x * z,
        H22 * (x * x - y * y),
    ]
}

#[inline]
pub(crate) fn irradiance_from_basis(coeffs: &ShCoefficients, h: &[f64; SH_BANDS]) -> [f64; 3] {
    let mut out = [0.0; 3];
    for (band, &hk) in coeffs.0.iter().zip(h) {
        for c in 0..3 {
            out[c] += band[c] * hk;
        }
    }
    out.map(|v| v.max(0.0))
}

/// Per-channel irradiance at unit normal `n`, clamped to be non-negative.
pub fn irradiance(coeffs: &ShCoefficients, n: Vec3) -> Result<[f64; 3]> {
    Ok(irradiance_from_basis(coeffs, &sh_basis(n)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
        let z: f64 = rng.gen_range(-1.0..1.0);
        let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let r = (1.0 - z * z).sqrt();
        [r * phi.cos(), r * phi.sin(), z]
    }

    #[test]
    fn basis_at_north_pole() {
        let h = sh_basis([0.0, 0.0, 1.0]).unwrap();
        let expected = [0.282095, 0.0, 0.488603, 0.0, 0.0, 0.0, 0.630784, 0.0, 0.0];
        for (a, b) in h.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{h:?}");
        }
    }

    #[test]
    fn constant_band_everywhere() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            assert_eq!(sh_basis(random_unit(&mut rng)).unwrap()[0], 0.282095);
        }
    }

    #[test]
    fn rejects_non_unit_normal() {
        assert!(matches!(sh_basis([0.0, 0.0, 1.1]), Err(Error::NonUnitNormal(_))));
        assert!(sh_basis([0.0, 0.0, 1.0 + 5e-7]).is_ok());
    }

    #[test]
    fn constant_band_irradiance() {
        let mut c = [0.0; 27];
        c[..3].copy_from_slice(&[1.0, 1.0, 1.0]);
        let coeffs = ShCoefficients::from_slice(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let e = irradiance(&coeffs, random_unit(&mut rng)).unwrap();
            assert_eq!(e, [0.282095; 3]);
        }
    }

    #[test]
    fn grey_band_gives_monochrome_output() {
        let mut c = [0.0; 27];
        c[..3].copy_from_slice(&[0.8, 0.8, 0.8]);
        let coeffs = ShCoefficients::from_slice(&c).unwrap();
        let e = irradiance(&coeffs, [0.6, 0.0, 0.8]).unwrap();
        assert!(e[0] == e[1] && e[1] == e[2]);
    }

    #[test]
    fn matches_summation_oracle_before_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let c: Vec<f64> = (0..27).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let coeffs = ShCoefficients::from_slice(&c).unwrap();
            let n = random_unit(&mut rng);
            let [x, y, z] = n;
            let h = [
                0.282095,
                0.488603 * y,
                0.488603 * z,
                0.488603 * x,
                1.092548 * x * y,
                1.092548 * y * z,
                0.315392 * (3.0 * z * z - 1.0),
                1.092548 * x * z,
                0.546274 * (x * x - y * y),
            ];
            let got = irradiance(&coeffs, n).unwrap();
            for ch in 0..3 {
                let mut oracle = 0.0;
                for k in 0..9 {
                    oracle += c[3 * k + ch] * h[k];
                }
                assert!((got[ch] - oracle.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn negative_irradiance_clamps_to_zero() {
        let mut c = [0.0; 27];
        c[..3].copy_from_slice(&[-1.0, 0.5, -0.1]);
        let coeffs = ShCoefficients::from_slice(&c).unwrap();
        assert_eq!(irradiance(&coeffs, [1.0, 0.0, 0.0]).unwrap(), [0.0, 0.282095 * 0.5, 0.0]);
    }

    #[test]
    fn linear_before_clamp() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // every basis value is non-negative here, so the clamp never engages
        let h = sh_basis([0.0, 0.0, 1.0]).unwrap();
        let a: Vec<f64> = (0..27).map(|_| rng.gen_range(0.0..1.0)).collect();
        let b: Vec<f64> = (0..27).map(|_| rng.gen_range(0.0..1.0)).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let ea = irradiance_from_basis(&ShCoefficients::from_slice(&a).unwrap(), &h);
        let eb = irradiance_from_basis(&ShCoefficients::from_slice(&b).unwrap(), &h);
        let es = irradiance_from_basis(&ShCoefficients::from_slice(&sum).unwrap(), &h);
        for ch in 0..3 {
            assert!((ea[ch] + eb[ch] - es[ch]).abs() < 1e-12);
        }
    }
}
