//! Density and pair-correlation estimators over replica ensembles.
//!
//! The pair estimator counts ordered pairs, so a homogeneous Poisson field of
//! intensity `kappa` estimates to `kappa^2` in every bin; clustering shows up
//! as values above the squared density.

use crate::geometry::{self, Metric};
use crate::sim::Ensemble;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("bin edges must be strictly increasing and lie in (0, L/2]; {0}")]
    BadBins(String),
    #[error("pair correlation requires recorded point positions")]
    MissingPoints,
    #[error("ensemble is empty")]
    EmptyEnsemble,
}

/// Mean and standard error of a per-replica scalar at each observation time.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesEstimate {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub replicas: usize,
}

/// Radial bins for the pair-correlation estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialBins {
    edges: Vec<f64>,
}

impl RadialBins {
    /// Validated edges; all bins must sit inside `(0, L/2]` (beyond half the
    /// edge the torus distance is ambiguous).
    pub fn new(edges: Vec<f64>, domain_edge: f64) -> Result<Self, StatsError> {
        if edges.len() < 2 {
            return Err(StatsError::BadBins("need at least two edges".into()));
        }
        for w in edges.windows(2) {
            if !(w[1] > w[0]) {
                return Err(StatsError::BadBins("edges not increasing".into()));
            }
        }
        if edges[0] < 0.0 {
            return Err(StatsError::BadBins("negative edge".into()));
        }
        let half = domain_edge / 2.0;
        if *edges.last().unwrap() > half * (1.0 + 1e-12) {
            return Err(StatsError::BadBins(format!(
                "last edge {} exceeds L/2 = {half}",
                edges.last().unwrap()
            )));
        }
        Ok(RadialBins { edges })
    }

    /// Default layout: `count` logarithmic bins on `(0.01 L/2, L/2]`.
    pub fn logarithmic(domain_edge: f64, count: usize) -> Self {
        let half = domain_edge / 2.0;
        let lo = 0.01 * half;
        let edges = (0..=count)
            .map(|i| lo * (half / lo).powf(i as f64 / count as f64))
            .collect();
        RadialBins { edges }
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn count(&self) -> usize {
        self.edges.len() - 1
    }

    fn locate(&self, r: f64) -> Option<usize> {
        if r <= self.edges[0] || r > *self.edges.last().unwrap() {
            return None;
        }
        // Bin i covers (edges[i], edges[i+1]].
        match self
            .edges
            .binary_search_by(|e| e.partial_cmp(&r).unwrap())
        {
            Ok(i) => Some(i.saturating_sub(1).min(self.count() - 1)),
            Err(i) => Some(i - 1),
        }
    }

    /// d-dimensional shell volume of bin `i`.
    pub fn shell_volume(&self, i: usize, dim: usize) -> f64 {
        geometry::ball_volume(dim, self.edges[i + 1]) - geometry::ball_volume(dim, self.edges[i])
    }
}

/// Mean density `N / V` across replicas, per observation time.
pub fn density_estimate(ensemble: &Ensemble) -> SeriesEstimate {
    let times = ensemble.common_times();
    let replicas = ensemble.trajectories.len();
    let mut mean = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let values: Vec<f64> = ensemble
            .trajectories
            .iter()
            .map(|t| t.snapshots[k].density)
            .collect();
        let (m, s) = mean_stderr(&values);
        mean.push(m);
        stderr.push(s);
    }
    SeriesEstimate {
        times,
        mean,
        stderr,
        replicas,
    }
}

/// Pair-correlation estimates per time and bin.
#[derive(Clone, Debug)]
pub struct PairCorrelation {
    pub times: Vec<f64>,
    pub edges: Vec<f64>,
    /// `k2[time][bin]`.
    pub k2: Vec<Vec<f64>>,
    pub stderr: Vec<Vec<f64>>,
    pub replicas: usize,
}

impl PairCorrelation {
    /// Largest estimate over bins at observation index `k`, with its stderr.
    pub fn sup_at(&self, k: usize) -> (f64, f64) {
        let mut best = (0.0, 0.0);
        for (v, s) in self.k2[k].iter().zip(&self.stderr[k]) {
            if *v > best.0 {
                best = (*v, *s);
            }
        }
        best
    }
}

/// Unbiased estimator of the translation-invariant second correlation
/// function: ordered pair counts per radial bin, divided by the torus volume
/// and the bin's shell volume, averaged over replicas.
pub fn pair_correlation(
    ensemble: &Ensemble,
    bins: &RadialBins,
) -> Result<PairCorrelation, StatsError> {
    if ensemble.trajectories.is_empty() {
        return Err(StatsError::EmptyEnsemble);
    }
    let times = ensemble.common_times();
    let dim = ensemble.domain.dim();
    let volume = ensemble.domain.volume();
    let metric = Metric::Torus {
        edge: ensemble.domain.edge(),
    };
    let replicas = ensemble.trajectories.len();
    let nbins = bins.count();

    // Per-replica estimates, then moments across replicas (deterministic
    // order).
    let mut k2 = Vec::with_capacity(times.len());
    let mut stderr = Vec::with_capacity(times.len());
    for k in 0..times.len() {
        let mut per_replica: Vec<Vec<f64>> = Vec::with_capacity(replicas);
        for t in &ensemble.trajectories {
            let snap = &t.snapshots[k];
            let points = snap.points.as_ref().ok_or(StatsError::MissingPoints)?;
            let mut counts = vec![0u64; nbins];
            for i in 1..points.len() {
                for j in 0..i {
                    let r = metric.distance(dim, &points[i], &points[j]);
                    if let Some(b) = bins.locate(r) {
                        counts[b] += 2; // ordered pairs
                    }
                }
            }
            per_replica.push(
                counts
                    .iter()
                    .enumerate()
                    .map(|(b, &c)| c as f64 / (volume * bins.shell_volume(b, dim)))
                    .collect(),
            );
        }
        let mut row_mean = Vec::with_capacity(nbins);
        let mut row_err = Vec::with_capacity(nbins);
        for b in 0..nbins {
            let values: Vec<f64> = per_replica.iter().map(|v| v[b]).collect();
            let (m, s) = mean_stderr(&values);
            row_mean.push(m);
            row_err.push(s);
        }
        k2.push(row_mean);
        stderr.push(row_err);
    }
    Ok(PairCorrelation {
        times,
        edges: bins.edges().to_vec(),
        k2,
        stderr,
        replicas,
    })
}

/// Clustering diagnostic: max of `k2 / rho^2` over bins contained in
/// `(0, r_max]`.
pub fn cluster_index(k2_row: &[f64], edges: &[f64], rho: f64, r_max: f64) -> f64 {
    if rho <= 0.0 {
        return 0.0;
    }
    let mut best: f64 = 0.0;
    for (b, v) in k2_row.iter().enumerate() {
        if edges[b + 1] <= r_max * (1.0 + 1e-12) {
            best = best.max(v / (rho * rho));
        }
    }
    best
}

fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::sim::{Domain, RunOutcome, Snapshot, Trajectory};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    /// Synthetic Poisson ensemble, bypassing the simulator.
    fn poisson_ensemble(
        kappa: f64,
        domain: &Domain,
        replicas: usize,
        times: &[f64],
        seed: u64,
    ) -> Ensemble {
        let mut trajectories = Vec::with_capacity(replicas);
        for r in 0..replicas {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let snapshots = times
                .iter()
                .map(|&t| {
                    let lambda = kappa * domain.volume();
                    let n = Poisson::new(lambda).unwrap().sample(&mut rng) as usize;
                    let points: Vec<Point> = (0..n)
                        .map(|_| {
                            let mut p = [0.0; 3];
                            for a in 0..domain.dim() {
                                p[a] = rng.random_range(0.0..domain.edge());
                            }
                            p
                        })
                        .collect();
                    Snapshot {
                        time: t,
                        count: n,
                        density: n as f64 / domain.volume(),
                        points: Some(points),
                    }
                })
                .collect();
            trajectories.push(Trajectory {
                replica: r as u64,
                snapshots,
                outcome: RunOutcome::Completed,
                events: 0,
            });
        }
        Ensemble {
            domain: domain.clone(),
            trajectories,
        }
    }

    #[test]
    fn density_of_poisson_ensemble_recovers_intensity() {
        let domain = Domain::new(1, 20.0, None).unwrap();
        let ens = poisson_ensemble(5.0, &domain, 300, &[0.0], 3);
        let est = density_estimate(&ens);
        assert!(est.stderr[0] > 0.0);
        assert!(
            (est.mean[0] - 5.0).abs() < 3.0 * est.stderr[0],
            "mean {} stderr {}",
            est.mean[0],
            est.stderr[0]
        );
    }

    #[test]
    fn empty_ensemble_of_empty_configs() {
        let domain = Domain::new(1, 10.0, None).unwrap();
        let trajectories = vec![Trajectory {
            replica: 0,
            snapshots: vec![Snapshot {
                time: 0.0,
                count: 0,
                density: 0.0,
                points: Some(vec![]),
            }],
            outcome: RunOutcome::Completed,
            events: 0,
        }];
        let ens = Ensemble {
            domain,
            trajectories,
        };
        let est = density_estimate(&ens);
        assert_eq!(est.mean[0], 0.0);
        assert_eq!(est.stderr[0], 0.0);
    }

    #[test]
    fn poisson_pair_correlation_is_flat_at_kappa_squared() {
        let domain = Domain::new(1, 20.0, None).unwrap();
        let ens = poisson_ensemble(2.0, &domain, 400, &[0.0], 11);
        let bins = RadialBins::new(
            (0..=16).map(|i| 0.5 + 9.5 * i as f64 / 16.0).collect(),
            20.0,
        )
        .unwrap();
        let pc = pair_correlation(&ens, &bins).unwrap();
        for (b, (&v, &s)) in pc.k2[0].iter().zip(&pc.stderr[0]).enumerate() {
            assert!(
                (v - 4.0).abs() <= 3.0 * s,
                "bin {b}: k2 {v}, stderr {s}"
            );
        }
        // And the clustering index sits near one.
        let idx = cluster_index(&pc.k2[0], &pc.edges, 2.0, 10.0);
        assert!((idx - 1.0).abs() < 0.15, "cluster index {idx}");
    }

    #[test]
    fn two_fixed_points_give_exact_bin_value() {
        let domain = Domain::new(1, 20.0, None).unwrap();
        let u_dist = 3.0;
        let points = vec![[5.0, 0.0, 0.0], [5.0 + u_dist, 0.0, 0.0]];
        let ens = Ensemble {
            domain: domain.clone(),
            trajectories: vec![Trajectory {
                replica: 0,
                snapshots: vec![Snapshot {
                    time: 0.0,
                    count: 2,
                    density: 0.1,
                    points: Some(points),
                }],
                outcome: RunOutcome::Completed,
                events: 0,
            }],
        };
        let bins = RadialBins::new(vec![1.0, 2.5, 3.5, 5.0], 20.0).unwrap();
        let pc = pair_correlation(&ens, &bins).unwrap();
        // Ordered pair count 2 in the middle bin; shell volume in 1d is
        // 2 (3.5 - 2.5) = 2.
        assert_relative_eq!(pc.k2[0][1], 2.0 / (20.0 * 2.0));
        assert_eq!(pc.k2[0][0], 0.0);
        assert_eq!(pc.k2[0][2], 0.0);
    }

    #[test]
    fn bins_beyond_half_edge_are_rejected() {
        assert!(matches!(
            RadialBins::new(vec![1.0, 11.0], 20.0),
            Err(StatsError::BadBins(_))
        ));
        let bins = RadialBins::logarithmic(20.0, 64);
        assert_eq!(bins.count(), 64);
        assert!(*bins.edges().last().unwrap() <= 10.0 * (1.0 + 1e-12));
    }

    #[test]
    fn stderr_shrinks_like_inverse_sqrt_replicas() {
        let domain = Domain::new(1, 20.0, None).unwrap();
        let sizes = [50usize, 100, 200, 400, 800];
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (i, &n) in sizes.iter().enumerate() {
            let ens = poisson_ensemble(3.0, &domain, n, &[0.0], 1000 + i as u64);
            let bins = RadialBins::new(vec![1.0, 4.0, 7.0, 10.0], 20.0).unwrap();
            let pc = pair_correlation(&ens, &bins).unwrap();
            let avg_err: f64 =
                pc.stderr[0].iter().sum::<f64>() / pc.stderr[0].len() as f64;
            xs.push((n as f64).ln());
            ys.push(avg_err.ln());
        }
        let slope = least_squares_slope(&xs, &ys);
        assert!(
            (slope + 0.5).abs() < 0.1,
            "stderr scaling slope {slope}, expected -0.5 ± 0.1"
        );
    }

    #[test]
    fn estimates_are_invariant_under_replica_relabeling() {
        let domain = Domain::new(1, 20.0, None).unwrap();
        let ens = poisson_ensemble(2.0, &domain, 50, &[0.0], 77);
        let bins = RadialBins::new(vec![1.0, 4.0, 7.0, 10.0], 20.0).unwrap();
        let base = pair_correlation(&ens, &bins).unwrap();
        let mut shuffled = Ensemble {
            domain: ens.domain.clone(),
            trajectories: ens.trajectories.clone(),
        };
        shuffled.trajectories.reverse();
        let relabeled = pair_correlation(&shuffled, &bins).unwrap();
        for (a, b) in base.k2[0].iter().zip(&relabeled.k2[0]) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
        for (a, b) in base.stderr[0].iter().zip(&relabeled.stderr[0]) {
            assert_relative_eq!(a, b, max_relative = 1e-9);
        }
    }

    fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let num: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let den: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        num / den
    }
}
