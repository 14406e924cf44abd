//! Competition/dispersal kernels and the energy functionals built from them.
//!
//! A kernel is a rotation-symmetric nonnegative function on R^d with finite
//! L^1 and sup norms. Three shapes are supported: a top-hat (constant on a
//! ball), a Gaussian normalised so that its total mass is the `c` parameter,
//! and a tabulated radial profile with linear interpolation.
//!
//! On a torus, finite-range kernels are evaluated through the minimum image
//! (their support must stay below half the box edge), while Gaussians are
//! wrapped by summing the nearest three periodic images per axis. The
//! truncation error of that wrap is below `exp(-(L/2 sigma)^2 / 2)`, which the
//! admissibility check keeps negligible.

use crate::geometry::{self, Metric, Point};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel parameter {name} must be {requirement}, got {value}")]
    BadParameter {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("kernel dimension must be at least 1")]
    BadDimension,
    #[error("tabulated kernel: {0}")]
    BadTable(String),
    #[error("kernel dimensions differ: competition d={0}, dispersal d={1}")]
    DimensionMismatch(usize, usize),
    #[error(
        "competition kernel has zero mass; construct the pair with \
         `KernelPair::allow_zero_competition` if a contact or pure-death model is intended"
    )]
    ZeroCompetition,
}

/// Radial profile of a kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum KernelShape {
    /// `amplitude` on `|x| < radius`, zero outside.
    TopHat { amplitude: f64, radius: f64 },
    /// `mass * (2 pi sigma^2)^{-d/2} exp(-|x|^2 / 2 sigma^2)`; integrates to `mass`.
    Gaussian { mass: f64, sigma: f64 },
    /// Piecewise-linear radial profile; constant below the first knot, zero
    /// beyond the last.
    TabulatedRadial { radii: Vec<f64>, values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    shape: KernelShape,
    dim: usize,
}

impl Kernel {
    pub fn top_hat(amplitude: f64, radius: f64, dim: usize) -> Result<Self, KernelError> {
        if dim == 0 {
            return Err(KernelError::BadDimension);
        }
        if !(amplitude >= 0.0) || !amplitude.is_finite() {
            return Err(KernelError::BadParameter {
                name: "amplitude",
                requirement: "finite and nonnegative",
                value: amplitude,
            });
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(KernelError::BadParameter {
                name: "radius",
                requirement: "finite and positive",
                value: radius,
            });
        }
        Ok(Kernel {
            shape: KernelShape::TopHat { amplitude, radius },
            dim,
        })
    }

    pub fn gaussian(mass: f64, sigma: f64, dim: usize) -> Result<Self, KernelError> {
        if dim == 0 {
            return Err(KernelError::BadDimension);
        }
        if !(mass >= 0.0) || !mass.is_finite() {
            return Err(KernelError::BadParameter {
                name: "mass",
                requirement: "finite and nonnegative",
                value: mass,
            });
        }
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(KernelError::BadParameter {
                name: "sigma",
                requirement: "finite and positive",
                value: sigma,
            });
        }
        Ok(Kernel {
            shape: KernelShape::Gaussian { mass, sigma },
            dim,
        })
    }

    pub fn tabulated(radii: Vec<f64>, values: Vec<f64>, dim: usize) -> Result<Self, KernelError> {
        if dim == 0 {
            return Err(KernelError::BadDimension);
        }
        if radii.len() != values.len() {
            return Err(KernelError::BadTable(format!(
                "radii ({}) and values ({}) differ in length",
                radii.len(),
                values.len()
            )));
        }
        if radii.len() < 2 {
            return Err(KernelError::BadTable("need at least two knots".into()));
        }
        for w in radii.windows(2) {
            if !(w[1] > w[0]) {
                return Err(KernelError::BadTable(
                    "radii must be strictly increasing".into(),
                ));
            }
        }
        if radii[0] < 0.0 {
            return Err(KernelError::BadTable("radii must be nonnegative".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(KernelError::BadTable(
                "values must be finite and nonnegative".into(),
            ));
        }
        Ok(Kernel {
            shape: KernelShape::TabulatedRadial { radii, values },
            dim,
        })
    }

    pub fn shape(&self) -> &KernelShape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Radial profile a(r) for r >= 0 (Euclidean).
    pub fn eval_radial(&self, r: f64) -> f64 {
        match &self.shape {
            KernelShape::TopHat { amplitude, radius } => {
                if r < *radius {
                    *amplitude
                } else {
                    0.0
                }
            }
            KernelShape::Gaussian { mass, sigma } => {
                mass * gaussian_norm(self.dim, *sigma) * (-r * r / (2.0 * sigma * sigma)).exp()
            }
            KernelShape::TabulatedRadial { radii, values } => {
                interp_table(radii, values, r)
            }
        }
    }

    /// Value at a displacement vector (Euclidean).
    pub fn eval(&self, x: &Point) -> f64 {
        self.eval_radial(geometry::norm(self.dim, x))
    }

    /// Value at the displacement `x - y` under the given metric.
    ///
    /// On a torus, finite-range shapes use the minimum image while Gaussians
    /// sum the nearest three images per axis (the sum factorises because the
    /// profile is separable).
    pub fn eval_between(&self, x: &Point, y: &Point, metric: Metric) -> f64 {
        match metric {
            Metric::Euclidean => {
                let d = metric.displacement(self.dim, x, y);
                self.eval(&d)
            }
            Metric::Torus { edge } => {
                let d = metric.displacement(self.dim, x, y);
                match &self.shape {
                    KernelShape::Gaussian { mass, sigma } => {
                        let mut out = mass * gaussian_norm(self.dim, *sigma);
                        for a in 0..self.dim {
                            let mut axis = 0.0;
                            for img in [-1.0f64, 0.0, 1.0] {
                                let u = d[a] + img * edge;
                                axis += (-u * u / (2.0 * sigma * sigma)).exp();
                            }
                            out *= axis;
                        }
                        out
                    }
                    _ => self.eval(&d),
                }
            }
        }
    }

    /// `<a>`: the integral of the kernel over R^d.
    pub fn l1_norm(&self) -> f64 {
        match &self.shape {
            KernelShape::TopHat { amplitude, radius } => {
                amplitude * geometry::ball_volume(self.dim, *radius)
            }
            KernelShape::Gaussian { mass, .. } => *mass,
            KernelShape::TabulatedRadial { radii, values } => {
                // Composite trapezoid of v(r) r^{d-1} over the knots, times
                // the unit-sphere surface.
                let p = (self.dim - 1) as i32;
                let mut acc = 0.0;
                for i in 1..radii.len() {
                    let f0 = values[i - 1] * radii[i - 1].powi(p);
                    let f1 = values[i] * radii[i].powi(p);
                    acc += 0.5 * (f0 + f1) * (radii[i] - radii[i - 1]);
                }
                // Flat extension below the first knot.
                if radii[0] > 0.0 {
                    acc += values[0] * radii[0].powi(p + 1) / (p + 1) as f64;
                }
                geometry::unit_sphere_surface(self.dim) * acc
            }
        }
    }

    /// `||a||`: the essential supremum.
    pub fn sup_norm(&self) -> f64 {
        match &self.shape {
            KernelShape::TopHat { amplitude, .. } => *amplitude,
            KernelShape::Gaussian { mass, sigma } => mass * gaussian_norm(self.dim, *sigma),
            KernelShape::TabulatedRadial { values, .. } => {
                values.iter().cloned().fold(0.0, f64::max)
            }
        }
    }

    /// Radius beyond which the kernel vanishes, if finite.
    pub fn support_radius(&self) -> Option<f64> {
        match &self.shape {
            KernelShape::TopHat { radius, .. } => Some(*radius),
            KernelShape::Gaussian { .. } => None,
            KernelShape::TabulatedRadial { radii, .. } => Some(*radii.last().unwrap()),
        }
    }

    /// Length scale of the interaction; used to size search boxes and cells.
    /// Finite-range shapes report their support, Gaussians three sigma.
    pub fn range_scale(&self) -> f64 {
        match &self.shape {
            KernelShape::TopHat { radius, .. } => *radius,
            KernelShape::Gaussian { sigma, .. } => 3.0 * sigma,
            KernelShape::TabulatedRadial { radii, .. } => *radii.last().unwrap(),
        }
    }

    pub fn is_zero(&self) -> bool {
        match &self.shape {
            KernelShape::TopHat { amplitude, .. } => *amplitude == 0.0,
            KernelShape::Gaussian { mass, .. } => *mass == 0.0,
            KernelShape::TabulatedRadial { values, .. } => values.iter().all(|v| *v == 0.0),
        }
    }
}

fn gaussian_norm(dim: usize, sigma: f64) -> f64 {
    (2.0 * std::f64::consts::PI * sigma * sigma).powf(-(dim as f64) / 2.0)
}

fn interp_table(radii: &[f64], values: &[f64], r: f64) -> f64 {
    if r <= radii[0] {
        return values[0];
    }
    let last = radii.len() - 1;
    if r >= radii[last] {
        return 0.0;
    }
    let i = match radii.binary_search_by(|k| k.partial_cmp(&r).unwrap()) {
        Ok(i) => return values[i],
        Err(i) => i,
    };
    let t = (r - radii[i - 1]) / (radii[i] - radii[i - 1]);
    values[i - 1] + t * (values[i] - values[i - 1])
}

/// A competition kernel `a-`, a dispersal kernel `a+` and the intrinsic
/// mortality rate `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelPair {
    competition: Kernel,
    dispersal: Kernel,
    mortality: f64,
    competition_mass: f64,
    dispersal_mass: f64,
}

impl KernelPair {
    /// Builds a pair, rejecting a mass-zero competition kernel: a model
    /// without competition (contact or pure-death) must be requested
    /// explicitly through [`KernelPair::allow_zero_competition`].
    pub fn new(competition: Kernel, dispersal: Kernel, mortality: f64) -> Result<Self, KernelError> {
        let pair = Self::allow_zero_competition(competition, dispersal, mortality)?;
        if pair.competition_mass == 0.0 {
            return Err(KernelError::ZeroCompetition);
        }
        Ok(pair)
    }

    /// Same as [`KernelPair::new`] but admits `<a-> = 0`.
    pub fn allow_zero_competition(
        competition: Kernel,
        dispersal: Kernel,
        mortality: f64,
    ) -> Result<Self, KernelError> {
        if competition.dim() != dispersal.dim() {
            return Err(KernelError::DimensionMismatch(
                competition.dim(),
                dispersal.dim(),
            ));
        }
        if !(mortality >= 0.0) || !mortality.is_finite() {
            return Err(KernelError::BadParameter {
                name: "mortality",
                requirement: "finite and nonnegative",
                value: mortality,
            });
        }
        let competition_mass = competition.l1_norm();
        let dispersal_mass = dispersal.l1_norm();
        Ok(KernelPair {
            competition,
            dispersal,
            mortality,
            competition_mass,
            dispersal_mass,
        })
    }

    pub fn competition(&self) -> &Kernel {
        &self.competition
    }

    pub fn dispersal(&self) -> &Kernel {
        &self.dispersal
    }

    pub fn mortality(&self) -> f64 {
        self.mortality
    }

    /// `<a->`.
    pub fn competition_mass(&self) -> f64 {
        self.competition_mass
    }

    /// `<a+>`: also the per-capita birth rate.
    pub fn dispersal_mass(&self) -> f64 {
        self.dispersal_mass
    }

    pub fn dim(&self) -> usize {
        self.competition.dim()
    }
}

/// `E(x, eta) = sum_{y in eta} a(x - y)`. The caller excludes `x` itself when
/// the energy of a point with respect to the rest of a configuration is meant.
pub fn interaction_energy(x: &Point, eta: &[Point], kernel: &Kernel, metric: Metric) -> f64 {
    eta.iter()
        .map(|y| kernel.eval_between(x, y, metric))
        .sum()
}

/// `E(eta) = sum_{x in eta} sum_{y in eta \ x} a(x - y)` (ordered pairs).
pub fn total_energy(eta: &[Point], kernel: &Kernel, metric: Metric) -> f64 {
    let mut acc = 0.0;
    for i in 1..eta.len() {
        for j in 0..i {
            acc += kernel.eval_between(&eta[i], &eta[j], metric);
        }
    }
    2.0 * acc
}

/// `E_b(eta) = (m + b) |eta| + E^-(eta)`; `b = 0` gives the total death rate.
pub fn death_energy(
    eta: &[Point],
    competition: &Kernel,
    mortality: f64,
    b: f64,
    metric: Metric,
) -> f64 {
    (mortality + b) * eta.len() as f64 + total_energy(eta, competition, metric)
}

/// `phi_theta(x) = a^-(x) - theta a^+(x)`; may be negative.
pub fn phi_theta(pair: &KernelPair, x: &Point, theta: f64) -> f64 {
    pair.competition.eval(x) - theta * pair.dispersal.eval(x)
}
