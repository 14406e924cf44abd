//! Stability certificates for kernel pairs.
//!
//! A pair is stable at level `(theta, b)` when
//! `b |eta| + E^-(eta) >= theta E^+(eta)` for every finite configuration
//! `eta`, i.e. competition dominates dispersal up to a linear allowance.
//! Three constructive routes produce certified pairs:
//!
//! * pointwise domination `a^-(x) >= theta a^+(x)` (gives `b = 0`),
//! * a sphere-packing argument for finite-range dispersal, which also covers
//!   dispersal reaching beyond the competition core,
//! * Fourier positivity for Gaussian pairs, which yields a stability
//!   constant `b0 = phi_{theta0}(0)` and is then rescaled to the requested
//!   allowance.
//!
//! A randomized search with coordinate-descent refinement acts as the
//! falsifier: a negative minimum of `U(eta) = b|eta| + E^-(eta) - theta E^+(eta)`
//! is a certified counterexample.

use crate::geometry::{Metric, Point};
use crate::kernels::{total_energy, Kernel, KernelPair, KernelShape};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("{operation} supports {supported} kernels only")]
    UnsupportedShape {
        operation: &'static str,
        supported: &'static str,
    },
    #[error("dispersal kernel is identically zero; stability is vacuous and no finite maximal theta exists")]
    ZeroDispersal,
    #[error("competition kernel admits no positive lower bound near the origin")]
    NoCompetitionCore,
    #[error("{0}")]
    Precondition(String),
}

/// Which construction produced a certificate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CertificateSource {
    PointwiseDomination,
    FiniteRangePacking,
    GaussianFourier,
    Rescaled,
    EmpiricalOnly,
}

/// A `(theta, b)` pair together with its provenance and, when the oracle has
/// been run, the worst value of `U` it found.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    pub theta: f64,
    pub b: f64,
    pub source: CertificateSource,
    /// Packing bound `Xi(d, r, R)` when the finite-range route was used.
    pub packing_bound: Option<u64>,
    /// Minimum of `U` over the configurations searched by the oracle.
    pub worst_empirical_u: Option<f64>,
    /// A configuration with `U < 0`, when the oracle found one.
    pub violating_config: Option<Vec<Vec<f64>>>,
}

impl StabilityCertificate {
    fn new(theta: f64, b: f64, source: CertificateSource) -> Self {
        StabilityCertificate {
            theta,
            b,
            source,
            packing_bound: None,
            worst_empirical_u: None,
            violating_config: None,
        }
    }

    /// Records an oracle outcome on the certificate.
    pub fn with_oracle(mut self, outcome: &BruteForceOutcome) -> Self {
        self.worst_empirical_u = Some(outcome.min_u);
        if outcome.is_violation() {
            self.violating_config = Some(outcome.witness_rows());
        }
        self
    }
}

/// Density of the densest packing of equal rigid spheres; the trivial bound 1
/// is used from dimension four on (any overestimate only shrinks the
/// certified theta).
pub fn densest_packing_density(dim: usize) -> f64 {
    match dim {
        0 | 1 => 1.0,
        2 => std::f64::consts::PI / 12f64.sqrt(),
        3 => std::f64::consts::PI / 18f64.sqrt(),
        _ => 1.0,
    }
}

/// Upper bound on the number of rigid spheres of radius `r/2` that fit into a
/// ball of radius `R + r/2`, via the densest-packing density.
pub fn packing_bound(dim: usize, r: f64, big_r: f64) -> u64 {
    let raw = densest_packing_density(dim) * (1.0 + 2.0 * big_r / r).powi(dim as i32);
    raw.ceil() as u64
}

/// Largest `theta` with `a^-(x) >= theta a^+(x)` everywhere, or `None` when no
/// positive `theta` exists. Closed forms cover top-hat and Gaussian pairs;
/// combinations involving tabulated kernels are scanned on the union of the
/// table knots and a 4096-point uniform grid over the dispersal support.
pub fn pointwise_theta(pair: &KernelPair) -> Result<Option<StabilityCertificate>, StabilityError> {
    if pair.dispersal().is_zero() {
        return Err(StabilityError::ZeroDispersal);
    }
    let d = pair.dim();
    let theta = match (pair.competition().shape(), pair.dispersal().shape()) {
        (
            KernelShape::TopHat {
                amplitude: cm,
                radius: r,
            },
            KernelShape::TopHat {
                amplitude: cp,
                radius: big_r,
            },
        ) => {
            if *cm > 0.0 && r >= big_r {
                Some(cm / cp)
            } else {
                None
            }
        }
        (
            KernelShape::Gaussian {
                mass: cm,
                sigma: sm,
            },
            KernelShape::Gaussian {
                mass: cp,
                sigma: sp,
            },
        ) => {
            if *cm > 0.0 && sm >= sp {
                Some((sp / sm).powi(d as i32) * cm / cp)
            } else {
                None
            }
        }
        (KernelShape::Gaussian { .. }, KernelShape::TopHat { amplitude: cp, radius: big_r }) => {
            // The ratio is minimised towards the support edge.
            let v = pair.competition().eval_radial(*big_r);
            if v > 0.0 {
                Some(v / cp)
            } else {
                None
            }
        }
        (_, KernelShape::Gaussian { .. }) => {
            // Dispersal has infinite range; a finite-range competition kernel
            // cannot dominate it pointwise.
            None
        }
        _ => scan_ratio(pair),
    };
    Ok(theta.filter(|t| *t > 0.0).map(|t| {
        StabilityCertificate::new(t, 0.0, CertificateSource::PointwiseDomination)
    }))
}

/// Grid scan of `inf a^-(r) / a^+(r)` over the dispersal support; exact for
/// pairs of tabulated kernels (the ratio of linear interpolants is monotone
/// between knots) and a documented approximation otherwise.
fn scan_ratio(pair: &KernelPair) -> Option<f64> {
    let sup = pair.dispersal().support_radius()?;
    let mut grid: Vec<f64> = (0..=4096).map(|i| sup * i as f64 / 4096.0).collect();
    for k in [pair.competition(), pair.dispersal()] {
        if let KernelShape::TabulatedRadial { radii, .. } = k.shape() {
            grid.extend(radii.iter().cloned().filter(|r| *r <= sup));
        }
    }
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = f64::INFINITY;
    for r in grid {
        let ap = pair.dispersal().eval_radial(r);
        if ap > 0.0 {
            best = best.min(pair.competition().eval_radial(r) / ap);
        }
    }
    (best.is_finite() && best > 0.0).then_some(best)
}

/// Trades allowance for level: a valid `(theta0, b0)` stays valid at any
/// smaller `theta` with `b = b0 * theta / theta0`.
pub fn rescale(theta0: f64, b0: f64, theta: f64) -> Result<f64, StabilityError> {
    if !(theta > 0.0) || theta > theta0 {
        return Err(StabilityError::Precondition(format!(
            "rescale requires 0 < theta <= theta0, got theta={theta}, theta0={theta0}"
        )));
    }
    if b0 < 0.0 {
        return Err(StabilityError::Precondition(format!(
            "rescale requires b0 >= 0, got {b0}"
        )));
    }
    Ok(b0 * theta / theta0)
}

/// Rescales a certificate to a smaller level, keeping provenance.
pub fn rescale_certificate(
    cert: &StabilityCertificate,
    theta: f64,
) -> Result<StabilityCertificate, StabilityError> {
    let b = rescale(cert.theta, cert.b, theta)?;
    Ok(StabilityCertificate::new(theta, b, CertificateSource::Rescaled))
}

/// Certificate for a finite-range dispersal kernel (top-hat, bounded by `c+`
/// on a ball of radius `R`) against a competition kernel bounded below by
/// some `c- > 0` on a ball of radius `r`.
///
/// When `r >= R` the pair dominates pointwise and `b = 0`. Otherwise the
/// packing bound `Xi = ceil(Delta(d) (1 + 2R/r)^d)` yields
/// `theta = min(c- / (c+ Xi), b / (2 c+ (Xi - 1)))` for the requested
/// allowance `b > 0`.
///
/// The core `(c-, r)` is extracted from the competition kernel by maximising
/// the resulting `theta` over candidate radii (a top-hat contributes its
/// exact parameters; Gaussian and tabulated shapes are scanned).
pub fn finite_range_theta(
    pair: &KernelPair,
    b: f64,
) -> Result<StabilityCertificate, StabilityError> {
    let (c_plus, big_r) = match pair.dispersal().shape() {
        KernelShape::TopHat { amplitude, radius } => (*amplitude, *radius),
        _ => {
            return Err(StabilityError::UnsupportedShape {
                operation: "finite_range_theta",
                supported: "top-hat dispersal",
            })
        }
    };
    if c_plus == 0.0 {
        return Err(StabilityError::ZeroDispersal);
    }
    let candidates = competition_core_candidates(pair.competition());
    if candidates.is_empty() {
        return Err(StabilityError::NoCompetitionCore);
    }
    let dim = pair.dim();
    let mut best: Option<StabilityCertificate> = None;
    for &(c_minus, r) in &candidates {
        let cand = if r >= big_r {
            StabilityCertificate::new(
                c_minus / c_plus,
                0.0,
                CertificateSource::PointwiseDomination,
            )
        } else {
            if !(b > 0.0) {
                // The long-dispersal branch needs a positive allowance; other
                // candidates with r >= R may still apply.
                continue;
            }
            let xi = packing_bound(dim, r, big_r);
            let theta = (c_minus / (c_plus * xi as f64))
                .min(b / (2.0 * c_plus * (xi - 1) as f64));
            let mut cert = StabilityCertificate::new(theta, b, CertificateSource::FiniteRangePacking);
            cert.packing_bound = Some(xi);
            cert
        };
        if best.as_ref().map_or(true, |c| cand.theta > c.theta) {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| {
        StabilityError::Precondition(
            "finite_range_theta requires b > 0 when the dispersal range exceeds the competition core"
                .into(),
        )
    })
}

/// Candidate `(c-, r)` lower bounds of the competition kernel near the origin.
fn competition_core_candidates(kernel: &Kernel) -> Vec<(f64, f64)> {
    match kernel.shape() {
        KernelShape::TopHat { amplitude, radius } => {
            if *amplitude > 0.0 {
                vec![(*amplitude, *radius)]
            } else {
                vec![]
            }
        }
        KernelShape::Gaussian { sigma, .. } => {
            // The profile is decreasing, so inf over |x| < r is the value at r.
            (1..=64)
                .map(|i| {
                    let r = 5.0 * sigma * i as f64 / 64.0;
                    (kernel.eval_radial(r), r)
                })
                .filter(|(c, _)| *c > 0.0)
                .collect()
        }
        KernelShape::TabulatedRadial { radii, values } => {
            let mut out = Vec::new();
            let mut running_min = f64::INFINITY;
            for (i, &r) in radii.iter().enumerate() {
                running_min = running_min.min(values[i]);
                if r > 0.0 && running_min > 0.0 {
                    out.push((running_min, r));
                }
            }
            out
        }
    }
}

/// Certificate for a Gaussian pair via Fourier positivity.
///
/// With `sigma- >= sigma+` the pair dominates pointwise. Otherwise the level
/// `theta0 = c-/c+` is stable with constant `b0 = phi_{theta0}(0)` (the
/// transform of `phi_{theta0}` is nonnegative, so Bochner's theorem applies),
/// and the result is rescaled down to the requested allowance `b`.
pub fn gaussian_theta(pair: &KernelPair, b: f64) -> Result<StabilityCertificate, StabilityError> {
    let (cm, sm, cp, sp) = match (pair.competition().shape(), pair.dispersal().shape()) {
        (
            KernelShape::Gaussian {
                mass: cm,
                sigma: sm,
            },
            KernelShape::Gaussian {
                mass: cp,
                sigma: sp,
            },
        ) => (*cm, *sm, *cp, *sp),
        _ => {
            return Err(StabilityError::UnsupportedShape {
                operation: "gaussian_theta",
                supported: "Gaussian",
            })
        }
    };
    if cp == 0.0 {
        return Err(StabilityError::ZeroDispersal);
    }
    if cm == 0.0 {
        return Err(StabilityError::NoCompetitionCore);
    }
    if b < 0.0 {
        return Err(StabilityError::Precondition(format!(
            "allowance b must be nonnegative, got {b}"
        )));
    }
    if sm >= sp {
        return Ok(pointwise_theta(pair)?
            .expect("sigma- >= sigma+ Gaussian pairs dominate pointwise"));
    }
    if b == 0.0 {
        return Err(StabilityError::Precondition(
            "b > 0 is required when the dispersal Gaussian is wider than the competition one"
                .into(),
        ));
    }
    let theta0 = cm / cp;
    let b0 = pair.competition().sup_norm() - theta0 * pair.dispersal().sup_norm();
    let theta = if b >= b0 {
        theta0
    } else {
        theta0 * b / b0
    };
    let mut cert = StabilityCertificate::new(theta, b, CertificateSource::GaussianFourier);
    // theta is exactly the rescale of (theta0, b0) to allowance b.
    debug_assert!(b >= b0 || (rescale(theta0, b0, theta).unwrap() - b).abs() <= 1e-12 * (1.0 + b));
    cert.packing_bound = None;
    Ok(cert)
}

/// Result of the randomized falsification search.
#[derive(Clone, Debug, PartialEq)]
pub struct BruteForceOutcome {
    /// Minimum of `U(eta) = b|eta| + E^-(eta) - theta E^+(eta)` over everything searched.
    pub min_u: f64,
    /// Configuration achieving the minimum.
    pub witness: Vec<Point>,
    pub trials: u64,
    pub n_max: usize,
}

impl BruteForceOutcome {
    pub fn is_violation(&self) -> bool {
        self.min_u < 0.0
    }

    pub fn witness_rows(&self) -> Vec<Vec<f64>> {
        self.witness.iter().map(|p| p.to_vec()).collect()
    }
}

/// `U(eta)` for a candidate level; Euclidean metric (stability is a
/// whole-space property).
pub fn stability_functional(pair: &KernelPair, eta: &[Point], theta: f64, b: f64) -> f64 {
    b * eta.len() as f64 + total_energy(eta, pair.competition(), Metric::Euclidean)
        - theta * total_energy(eta, pair.dispersal(), Metric::Euclidean)
}

/// Searches for configurations violating `U >= 0` at the given level.
///
/// Random configurations of 2..=n_max points in a box of edge four times the
/// kernel range are refined by coordinate descent (multiplicative cooling
/// from 0.5 to 1e-3 of the range over up to 200 sweeps), alongside a fixed
/// set of adversarial templates (tight clusters, simplices and lattices at
/// dispersal-range spacing). Trials run in parallel with per-trial seeds
/// split off the master seed in counter mode, so the result does not depend
/// on the thread count. A negative `min_u` certifies a violation.
pub fn verify_bruteforce(
    pair: &KernelPair,
    theta: f64,
    b: f64,
    n_max: usize,
    trials: u64,
    seed: u64,
) -> Result<BruteForceOutcome, StabilityError> {
    if n_max < 2 {
        return Err(StabilityError::Precondition(format!(
            "n_max must be at least 2, got {n_max}"
        )));
    }
    if trials < 1 {
        return Err(StabilityError::Precondition("trials must be at least 1".into()));
    }
    let dim = pair.dim();
    let scale = pair
        .competition()
        .range_scale()
        .max(pair.dispersal().range_scale());
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let box_edge = 4.0 * scale;

    let mut best: (f64, Vec<Point>) = (f64::INFINITY, Vec::new());
    for mut eta in templates(pair, n_max) {
        let u = descend(pair, &mut eta, theta, b, scale);
        if u < best.0 {
            best = (u, eta);
        }
    }

    let random_best = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(trial);
            let n = rng.random_range(2..=n_max);
            let mut eta: Vec<Point> = (0..n)
                .map(|_| {
                    let mut p = [0.0; 3];
                    for a in 0..dim {
                        p[a] = rng.random_range(0.0..box_edge);
                    }
                    p
                })
                .collect();
            let u = descend(pair, &mut eta, theta, b, scale);
            (u, trial, eta)
        })
        .reduce(
            || (f64::INFINITY, u64::MAX, Vec::new()),
            |a, b| {
                if (b.0, b.1) < (a.0, a.1) {
                    b
                } else {
                    a
                }
            },
        );
    if random_best.0 < best.0 {
        best = (random_best.0, random_best.2);
    }

    Ok(BruteForceOutcome {
        min_u: best.0,
        witness: best.1,
        trials,
        n_max,
    })
}

/// Deterministic adversarial starting configurations.
fn templates(pair: &KernelPair, n_max: usize) -> Vec<Vec<Point>> {
    let dim = pair.dim();
    let disp = pair.dispersal().range_scale().max(1e-6);
    let comp = pair.competition().range_scale().max(1e-6);
    let mut out = Vec::new();
    // Pairs at a spread of separations.
    for frac in [0.1, 0.3, 0.5, 0.75, 0.95, 1.0, 1.25] {
        out.push(vec![[0.0; 3], axis_point(frac * disp)]);
    }
    // Tight cluster: everything inside the competition core.
    for n in 2..=n_max {
        let mut eta = Vec::with_capacity(n);
        for i in 0..n {
            let mut p = [0.0; 3];
            p[0] = 0.05 * comp * i as f64 / n as f64;
            if dim > 1 {
                p[1] = 0.03 * comp * (i % 2) as f64;
            }
            eta.push(p);
        }
        out.push(eta);
    }
    // Line lattices at dispersal-range spacing: points interact through a+
    // but sit outside a short competition core.
    for frac in [0.5, 0.75, 0.9] {
        let eta: Vec<Point> = (0..n_max).map(|i| axis_point(frac * disp * i as f64)).collect();
        out.push(eta);
    }
    // Regular simplex of d + 1 points at dispersal-range separation.
    for frac in [0.5, 0.9] {
        out.push(simplex(dim, frac * disp));
    }
    out
}

fn axis_point(x: f64) -> Point {
    [x, 0.0, 0.0]
}

/// Vertices of a regular simplex with the given edge length.
fn simplex(dim: usize, edge: f64) -> Vec<Point> {
    match dim {
        1 => vec![[0.0; 3], [edge, 0.0, 0.0]],
        2 => vec![
            [0.0; 3],
            [edge, 0.0, 0.0],
            [0.5 * edge, 0.75f64.sqrt() * edge, 0.0],
        ],
        _ => vec![
            [0.0; 3],
            [edge, 0.0, 0.0],
            [0.5 * edge, 0.75f64.sqrt() * edge, 0.0],
            [0.5 * edge, edge / 12f64.sqrt(), edge * (2f64 / 3.0).sqrt()],
        ],
    }
}

/// Coordinate descent on `U`, cooling the step from `0.5 * scale` down to
/// `1e-3 * scale`; stops early after three sweeps without improvement.
fn descend(pair: &KernelPair, eta: &mut Vec<Point>, theta: f64, b: f64, scale: f64) -> f64 {
    let dim = pair.dim();
    let mut u = stability_functional(pair, eta, theta, b);
    let sweeps = 200;
    let cool = (1e-3f64 / 0.5).powf(1.0 / (sweeps - 1) as f64);
    let mut step = 0.5 * scale;
    let mut stale = 0usize;
    for _ in 0..sweeps {
        let mut improved = false;
        for i in 0..eta.len() {
            for a in 0..dim {
                for dir in [step, -step] {
                    let old = eta[i][a];
                    let delta = move_delta(pair, eta, i, a, old + dir, theta);
                    if delta < -1e-15 {
                        eta[i][a] = old + dir;
                        u += delta;
                        improved = true;
                    }
                }
            }
        }
        if improved {
            stale = 0;
        } else {
            stale += 1;
            if stale >= 3 {
                break;
            }
        }
        step *= cool;
    }
    // Recompute from scratch to shed accumulated increments.
    u = stability_functional(pair, eta, theta, b);
    u
}

/// Change of `U` when point `i`'s coordinate `axis` moves to `new`.
fn move_delta(pair: &KernelPair, eta: &[Point], i: usize, axis: usize, new: f64, theta: f64) -> f64 {
    let mut moved = eta[i];
    moved[axis] = new;
    let w = |x: &Point, y: &Point| {
        pair.competition().eval_between(x, y, Metric::Euclidean)
            - theta * pair.dispersal().eval_between(x, y, Metric::Euclidean)
    };
    let mut delta = 0.0;
    for (j, y) in eta.iter().enumerate() {
        if j != i {
            delta += 2.0 * (w(&moved, y) - w(&eta[i], y));
        }
    }
    delta
}
