//! Periodic displacement grids and spectral convolution.

use crate::geometry::{Metric, Point, ORIGIN};
use crate::kernels::Kernel;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Uniform periodic grid of displacements on the torus: `n` points per axis,
/// coordinates wrapped to `[-L/2, L/2)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub dim: usize,
    pub edge: f64,
    pub points_per_axis: usize,
}

impl GridSpec {
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        self.edge / self.points_per_axis as f64
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Wrapped displacement of a flat index.
    pub fn displacement(&self, flat: usize) -> Point {
        let n = self.points_per_axis;
        let dx = self.spacing();
        let mut idx = flat;
        let mut out = ORIGIN;
        for a in (0..self.dim).rev() {
            let i = idx % n;
            idx /= n;
            let c = if i <= n / 2 {
                i as f64 * dx
            } else {
                (i as f64 - n as f64) * dx
            };
            out[a] = c;
        }
        out
    }

    /// Index with all axis components negated (the grid image of `-u`).
    pub fn negated(&self, flat: usize) -> usize {
        let n = self.points_per_axis;
        let mut idx = flat;
        let mut out = 0usize;
        let mut stride = 1usize;
        for _ in 0..self.dim {
            let i = idx % n;
            idx /= n;
            let ni = (n - i) % n;
            out += ni * stride;
            stride *= n;
        }
        out
    }

    /// Samples a kernel on the grid with torus wrapping.
    pub fn sample_kernel(&self, kernel: &Kernel) -> Vec<f64> {
        let metric = Metric::Torus { edge: self.edge };
        (0..self.len())
            .map(|i| kernel.eval_between(&self.displacement(i), &ORIGIN, metric))
            .collect()
    }

    /// Quadrature of a grid function (rectangle rule; spectrally accurate for
    /// smooth periodic integrands).
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().sum::<f64>() * self.cell_volume()
    }
}

/// Separable FFT over the grid, shared by all spectral convolutions.
pub struct SpectralConvolver {
    grid: GridSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl SpectralConvolver {
    pub fn new(grid: GridSpec) -> Self {
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(grid.points_per_axis);
        let inverse = planner.plan_fft_inverse(grid.points_per_axis);
        SpectralConvolver {
            grid,
            forward,
            inverse,
        }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    fn transform(&self, data: &mut [Complex<f64>], fft: &Arc<dyn Fft<f64>>) {
        let n = self.grid.points_per_axis;
        let total = self.grid.len();
        let mut line = vec![Complex::default(); n];
        for axis in 0..self.grid.dim {
            let stride = n.pow((self.grid.dim - 1 - axis) as u32);
            for start in 0..total {
                if (start / stride) % n != 0 {
                    continue;
                }
                for k in 0..n {
                    line[k] = data[start + k * stride];
                }
                fft.process(&mut line);
                for k in 0..n {
                    data[start + k * stride] = line[k];
                }
            }
        }
    }

    pub fn forward(&self, real: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = real.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.forward);
        buf
    }

    /// Periodic convolution as an integral approximation:
    /// `(f * g)[i] = sum_j f[j] g[i-j] * cell_volume`.
    pub fn convolve_spectra(
        &self,
        f_hat: &[Complex<f64>],
        g_hat: &[Complex<f64>],
    ) -> Vec<f64> {
        let total = self.grid.len() as f64;
        let mut prod: Vec<Complex<f64>> = f_hat
            .iter()
            .zip(g_hat)
            .map(|(a, b)| a * b)
            .collect();
        self.transform(&mut prod, &self.inverse);
        let scale = self.grid.cell_volume() / total;
        prod.iter().map(|c| c.re * scale).collect()
    }

    pub fn convolve(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let f_hat = self.forward(f);
        let g_hat = self.forward(g);
        self.convolve_spectra(&f_hat, &g_hat)
    }
}

#[cfg(test)]
pub(crate) fn direct_convolve(grid: &GridSpec, f: &[f64], g: &[f64]) -> Vec<f64> {
    // O(n^2) reference with explicit modular index arithmetic, independent of
    // the spectral path.
    let n = grid.points_per_axis;
    let total = grid.len();
    let decompose = |flat: usize| {
        let mut idx = flat;
        let mut comps = [0usize; 3];
        for a in (0..grid.dim).rev() {
            comps[a] = idx % n;
            idx /= n;
        }
        comps
    };
    let compose = |comps: [usize; 3]| {
        let mut flat = 0usize;
        for a in 0..grid.dim {
            flat = flat * n + comps[a];
        }
        flat
    };
    let mut out = vec![0.0; total];
    for i in 0..total {
        let ci = decompose(i);
        let mut acc = 0.0;
        for j in 0..total {
            let cj = decompose(j);
            let mut ck = [0usize; 3];
            for a in 0..grid.dim {
                ck[a] = (ci[a] + n - cj[a]) % n;
            }
            acc += f[j] * g[compose(ck)];
        }
        out[i] = acc * grid.cell_volume();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn displacement_wraps_to_half_open_box() {
        let g = GridSpec {
            dim: 1,
            edge: 10.0,
            points_per_axis: 8,
        };
        let xs: Vec<f64> = (0..8).map(|i| g.displacement(i)[0]).collect();
        assert_eq!(xs, vec![0.0, 1.25, 2.5, 3.75, 5.0, -3.75, -2.5, -1.25]);
    }

    #[test]
    fn kernel_sampling_is_even() {
        let g = GridSpec {
            dim: 2,
            edge: 8.0,
            points_per_axis: 16,
        };
        let k = Kernel::gaussian(1.0, 1.0, 2).unwrap();
        let s = g.sample_kernel(&k);
        for i in 0..g.len() {
            let j = g.negated(i);
            assert_relative_eq!(s[i], s[j], max_relative = 1e-13);
        }
    }

    #[test]
    fn grid_mass_of_wrapped_gaussian_matches_analytic() {
        let g = GridSpec {
            dim: 1,
            edge: 10.0,
            points_per_axis: 64,
        };
        let k = Kernel::gaussian(2.5, 1.0, 1).unwrap();
        let mass = g.integrate(&g.sample_kernel(&k));
        assert_relative_eq!(mass, 2.5, max_relative = 1e-12);
    }

    #[test]
    fn convolution_with_delta_reproduces_kernel() {
        let g = GridSpec {
            dim: 1,
            edge: 10.0,
            points_per_axis: 32,
        };
        let conv = SpectralConvolver::new(g.clone());
        let k = Kernel::gaussian(1.0, 1.0, 1).unwrap();
        let samples = g.sample_kernel(&k);
        let mut delta = vec![0.0; g.len()];
        delta[0] = 1.0 / g.cell_volume();
        let out = conv.convolve(&delta, &samples);
        for (a, b) in out.iter().zip(&samples) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn convolution_with_constant_gives_grid_mass() {
        let g = GridSpec {
            dim: 1,
            edge: 10.0,
            points_per_axis: 32,
        };
        let conv = SpectralConvolver::new(g.clone());
        let k = Kernel::gaussian(1.0, 1.0, 1).unwrap();
        let samples = g.sample_kernel(&k);
        let mass = g.integrate(&samples);
        let c = vec![0.7; g.len()];
        let out = conv.convolve(&samples, &c);
        for v in out {
            assert_relative_eq!(v, 0.7 * mass, max_relative = 1e-12);
        }
    }

    #[test]
    fn spectral_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for (dim, n) in [(1usize, 16usize), (2, 8), (3, 4)] {
            let g = GridSpec {
                dim,
                edge: 4.0,
                points_per_axis: n,
            };
            let conv = SpectralConvolver::new(g.clone());
            let f: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let spectral = conv.convolve(&f, &h);
            let direct = direct_convolve(&g, &f, &h);
            for (a, b) in spectral.iter().zip(&direct) {
                assert!((a - b).abs() <= 1e-10, "dim {dim}: {a} vs {b}");
            }
        }
    }
}
