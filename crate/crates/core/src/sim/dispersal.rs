//! Sampling of offspring displacements from the normalized dispersal kernel
//! `a+ / <a+>`.

use crate::geometry::Point;
use crate::kernels::{Kernel, KernelShape};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug)]
pub enum DispersalSampler {
    /// Mass-zero kernel; the birth rate is identically zero so this variant
    /// must never be asked for a sample.
    Zero,
    Gaussian { sigma: f64 },
    TopHat { radius: f64 },
    /// Inverse-CDF table of the radial law `v(r) r^{d-1}`.
    Tabulated { radii: Vec<f64>, cdf: Vec<f64> },
}

impl DispersalSampler {
    pub fn new(kernel: &Kernel) -> Self {
        if kernel.is_zero() {
            return DispersalSampler::Zero;
        }
        match kernel.shape() {
            KernelShape::Gaussian { sigma, .. } => DispersalSampler::Gaussian { sigma: *sigma },
            KernelShape::TopHat { radius, .. } => DispersalSampler::TopHat { radius: *radius },
            KernelShape::TabulatedRadial { .. } => {
                let (radii, cdf) = radial_cdf_table(kernel, 4096);
                DispersalSampler::Tabulated { radii, cdf }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, dim: usize, rng: &mut R) -> Point {
        match self {
            DispersalSampler::Zero => {
                unreachable!("dispersal sampling with a mass-zero kernel")
            }
            DispersalSampler::Gaussian { sigma } => {
                let mut p = [0.0; 3];
                for c in p.iter_mut().take(dim) {
                    let z: f64 = StandardNormal.sample(rng);
                    *c = sigma * z;
                }
                p
            }
            DispersalSampler::TopHat { radius } => {
                let u: f64 = rng.random();
                let r = radius * u.powf(1.0 / dim as f64);
                scale_direction(dim, r, rng)
            }
            DispersalSampler::Tabulated { radii, cdf } => {
                let u: f64 = rng.random();
                let r = invert_cdf(radii, cdf, u);
                scale_direction(dim, r, rng)
            }
        }
    }
}

/// Uniform direction scaled to radius `r`.
fn scale_direction<R: Rng + ?Sized>(dim: usize, r: f64, rng: &mut R) -> Point {
    match dim {
        1 => {
            if rng.random::<bool>() {
                [r, 0.0, 0.0]
            } else {
                [-r, 0.0, 0.0]
            }
        }
        2 => {
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            [r * phi.cos(), r * phi.sin(), 0.0]
        }
        _ => {
            let z = rng.random_range(-1.0f64..1.0);
            let phi = rng.random_range(0.0..std::f64::consts::TAU);
            let s = (1.0 - z * z).sqrt();
            [r * s * phi.cos(), r * s * phi.sin(), r * z]
        }
    }
}

/// Cumulative trapezoid of `v(r) r^{d-1}` on a refined grid, normalized to 1.
fn radial_cdf_table(kernel: &Kernel, segments: usize) -> (Vec<f64>, Vec<f64>) {
    let r_max = kernel
        .support_radius()
        .expect("tabulated kernels have finite support");
    let p = (kernel.dim() - 1) as i32;
    let radii: Vec<f64> = (0..=segments)
        .map(|i| r_max * i as f64 / segments as f64)
        .collect();
    let density: Vec<f64> = radii
        .iter()
        .map(|&r| kernel.eval_radial(r) * r.powi(p))
        .collect();
    let mut cdf = vec![0.0; radii.len()];
    for i in 1..radii.len() {
        cdf[i] = cdf[i - 1] + 0.5 * (density[i - 1] + density[i]) * (radii[i] - radii[i - 1]);
    }
    let total = *cdf.last().unwrap();
    assert!(total > 0.0, "dispersal kernel has zero radial mass");
    for c in &mut cdf {
        *c /= total;
    }
    (radii, cdf)
}

fn invert_cdf(radii: &[f64], cdf: &[f64], u: f64) -> f64 {
    let i = match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
        Ok(i) => return radii[i],
        Err(i) => i.clamp(1, radii.len() - 1),
    };
    let span = cdf[i] - cdf[i - 1];
    if span <= 0.0 {
        return radii[i - 1];
    }
    let t = (u - cdf[i - 1]) / span;
    radii[i - 1] + t * (radii[i] - radii[i - 1])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    /// Chi-square goodness-of-fit of sampled radii against a radial CDF,
    /// using equal-probability bins.
    fn chi2_p_value(samples: &[f64], cdf: impl Fn(f64) -> f64, bins: usize) -> f64 {
        let mut counts = vec![0usize; bins];
        for &r in samples {
            let u = cdf(r).clamp(0.0, 1.0 - 1e-12);
            counts[(u * bins as f64) as usize] += 1;
        }
        let expected = samples.len() as f64 / bins as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let dist = ChiSquared::new((bins - 1) as f64).unwrap();
        1.0 - dist.cdf(stat)
    }

    #[test]
    fn gaussian_moments() {
        let kernel = Kernel::gaussian(1.0, 0.8, 2).unwrap();
        let sampler = DispersalSampler::new(&kernel);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 100_000;
        let mut mean = [0.0f64; 2];
        let mut var = [0.0f64; 2];
        for _ in 0..n {
            let p = sampler.sample(2, &mut rng);
            for a in 0..2 {
                mean[a] += p[a];
                var[a] += p[a] * p[a];
            }
        }
        for a in 0..2 {
            mean[a] /= n as f64;
            var[a] = var[a] / n as f64 - mean[a] * mean[a];
            // 3 sigma bands for the sample mean and variance estimators.
            assert!(mean[a].abs() < 3.0 * 0.8 / (n as f64).sqrt());
            let var_sd = 0.64 * (2.0 / n as f64).sqrt();
            assert!((var[a] - 0.64).abs() < 3.0 * var_sd, "var {}", var[a]);
        }
    }

    #[test]
    fn top_hat_radius_uniform_in_1d() {
        let kernel = Kernel::top_hat(2.0, 0.7, 1).unwrap();
        let sampler = DispersalSampler::new(&kernel);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let samples: Vec<f64> = (0..100_000)
            .map(|_| geometry::norm(1, &sampler.sample(1, &mut rng)))
            .collect();
        let p = chi2_p_value(&samples, |r| (r / 0.7).clamp(0.0, 1.0), 40);
        assert!(p > 0.01, "chi2 p-value {p}");
    }

    #[test]
    fn gaussian_radius_matches_chi_distribution() {
        for dim in [1usize, 2, 3] {
            let sigma = 1.3;
            let kernel = Kernel::gaussian(1.0, sigma, dim).unwrap();
            let sampler = DispersalSampler::new(&kernel);
            let mut rng = ChaCha8Rng::seed_from_u64(31 + dim as u64);
            let samples: Vec<f64> = (0..100_000)
                .map(|_| geometry::norm(dim, &sampler.sample(dim, &mut rng)))
                .collect();
            let chi2 = ChiSquared::new(dim as f64).unwrap();
            let p = chi2_p_value(&samples, |r| chi2.cdf(r * r / (sigma * sigma)), 40);
            assert!(p > 0.01, "dim {dim}: chi2 p-value {p}");
        }
    }

    #[test]
    fn tabulated_radial_histogram_matches_profile() {
        // Triangular profile in d = 2; radial density v(r) r.
        let kernel =
            Kernel::tabulated(vec![0.0, 1.0, 2.0], vec![1.0, 0.6, 0.0], 2).unwrap();
        let sampler = DispersalSampler::new(&kernel);
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let samples: Vec<f64> = (0..100_000)
            .map(|_| geometry::norm(2, &sampler.sample(2, &mut rng)))
            .collect();
        // Independent fine quadrature of the radial CDF.
        let n_fine = 200_000;
        let mut grid = Vec::with_capacity(n_fine + 1);
        let mut cums = Vec::with_capacity(n_fine + 1);
        let mut acc = 0.0;
        let mut prev = 0.0;
        for i in 0..=n_fine {
            let r = 2.0 * i as f64 / n_fine as f64;
            let f = kernel.eval_radial(r) * r;
            if i > 0 {
                acc += 0.5 * (prev + f) * (2.0 / n_fine as f64);
            }
            prev = f;
            grid.push(r);
            cums.push(acc);
        }
        let total = acc;
        let cdf = move |r: f64| {
            let idx = ((r / 2.0) * n_fine as f64).clamp(0.0, n_fine as f64) as usize;
            cums[idx] / total
        };
        let p = chi2_p_value(&samples, cdf, 40);
        assert!(p > 0.01, "chi2 p-value {p}");
    }
}
