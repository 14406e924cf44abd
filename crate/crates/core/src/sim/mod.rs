//! Exact event-driven simulation of the birth-death-competition process on a
//! d-dimensional torus.
//!
//! Each point dies at rate `m + E^-(x, gamma \ x)` and the whole population
//! gives birth at total rate `<a+> N` (each point contributes the full mass
//! of the dispersal kernel); a child lands at its parent plus a displacement
//! drawn from `a+ / <a+>`, wrapped periodically. Waiting times are
//! exponential in the total event rate, so trajectories follow the jump chain
//! of the generator exactly.
//!
//! Per-point death rates are cached and updated incrementally; caches are
//! rebuilt from scratch every `10^6` events to bound floating-point drift.
//! Victim selection scans the rate vector linearly and switches to a
//! binary-indexed tree once the population exceeds 4096.

mod cells;
mod dispersal;
mod fenwick;

pub use dispersal::DispersalSampler;

use crate::geometry::{self, Metric, Point};
use crate::kernels::{KernelPair, KernelShape};
use cells::CellGrid;
use fenwick::Fenwick;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use thiserror::Error;

const FENWICK_THRESHOLD: usize = 4096;
const REFRESH_INTERVAL: u64 = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("domain dimension must be 1, 2 or 3, got {0}")]
    BadDimension(usize),
    #[error("torus edge must be positive and finite, got {0}")]
    BadEdge(f64),
    #[error("cell size {cell_size} leaves fewer than 3 cells per axis on edge {edge}")]
    TooFewCells { cell_size: f64, edge: f64 },
    #[error("kernel dimension {kernel} does not match domain dimension {domain}")]
    DimensionMismatch { kernel: usize, domain: usize },
    #[error(
        "{which} kernel support {support} reaches half the torus edge ({edge}); \
         periodic wrapping would alias the kernel mass"
    )]
    KernelRangeExceedsTorus {
        which: &'static str,
        support: f64,
        edge: f64,
    },
    #[error("cell size {cell_size} is smaller than the competition range {support}")]
    CellSizeTooSmall { cell_size: f64, support: f64 },
    #[error("invalid initial state: {0}")]
    BadInitial(String),
    #[error("invalid run configuration: {0}")]
    BadRunConfig(String),
}

/// Periodic simulation box.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    dim: usize,
    edge: f64,
    cell_size: Option<f64>,
}

impl Domain {
    /// `cell_size = None` lets the simulator pick a cell layout (or fall back
    /// to all-pairs bookkeeping for kernels with unbounded range).
    pub fn new(dim: usize, edge: f64, cell_size: Option<f64>) -> Result<Self, SimError> {
        if !(1..=3).contains(&dim) {
            return Err(SimError::BadDimension(dim));
        }
        if !(edge > 0.0) || !edge.is_finite() {
            return Err(SimError::BadEdge(edge));
        }
        if let Some(cs) = cell_size {
            if !(cs > 0.0) || (edge / cs).floor() < 3.0 {
                return Err(SimError::TooFewCells {
                    cell_size: cs,
                    edge,
                });
            }
        }
        Ok(Domain {
            dim,
            edge,
            cell_size,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn edge(&self) -> f64 {
        self.edge
    }

    pub fn volume(&self) -> f64 {
        self.edge.powi(self.dim as i32)
    }

    pub fn metric(&self) -> Metric {
        Metric::Torus { edge: self.edge }
    }
}

/// How the initial configuration is drawn.
#[derive(Clone, Debug)]
pub enum InitialState {
    /// Homogeneous Poisson field with the given intensity.
    Poisson { intensity: f64 },
    /// Explicit positions (wrapped into the box).
    Points(Vec<Point>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Event {
    Birth { parent: usize, child: Point },
    Death { victim: usize },
    /// The configuration is empty; the process stays at the empty state.
    Absorbed,
}

#[derive(Clone, Debug)]
enum NeighborMode {
    /// Competition kernel is identically zero.
    NoCompetition,
    /// Finite competition range resolved through a cell list.
    Cells { grid: CellGrid, cutoff: f64 },
    /// Unbounded competition range (wrapped Gaussian): every pair interacts.
    AllPairs,
}

/// Mutable state of one replica.
#[derive(Clone, Debug)]
pub struct SimState {
    domain: Domain,
    pair: KernelPair,
    points: Vec<Point>,
    death_rates: Vec<f64>,
    total_death: f64,
    total_birth: f64,
    dispersal_mass: f64,
    time: f64,
    events: u64,
    events_since_refresh: u64,
    neighbors: NeighborMode,
    fenwick: Option<Fenwick>,
    sampler: DispersalSampler,
    scratch: Vec<(u32, f64)>,
}

/// Builds the initial state, validating kernel admissibility on the torus.
pub fn init<R: Rng + ?Sized>(
    domain: &Domain,
    pair: &KernelPair,
    initial: &InitialState,
    rng: &mut R,
) -> Result<SimState, SimError> {
    if pair.dim() != domain.dim {
        return Err(SimError::DimensionMismatch {
            kernel: pair.dim(),
            domain: domain.dim,
        });
    }
    for (which, kernel) in [
        ("competition", pair.competition()),
        ("dispersal", pair.dispersal()),
    ] {
        if let Some(s) = kernel.support_radius() {
            if s >= domain.edge / 2.0 && !kernel.is_zero() {
                return Err(SimError::KernelRangeExceedsTorus {
                    which,
                    support: s,
                    edge: domain.edge,
                });
            }
        }
    }

    let neighbors = resolve_neighbor_mode(domain, pair)?;
    let points = match initial {
        InitialState::Poisson { intensity } => {
            if !(*intensity >= 0.0) || !intensity.is_finite() {
                return Err(SimError::BadInitial(format!(
                    "Poisson intensity must be nonnegative, got {intensity}"
                )));
            }
            let lambda = intensity * domain.volume();
            let n = if lambda > 0.0 {
                Poisson::new(lambda)
                    .map_err(|e| SimError::BadInitial(e.to_string()))?
                    .sample(rng) as usize
            } else {
                0
            };
            (0..n)
                .map(|_| {
                    let mut p = [0.0; 3];
                    for a in 0..domain.dim {
                        p[a] = rng.random_range(0.0..domain.edge);
                    }
                    p
                })
                .collect()
        }
        InitialState::Points(given) => given
            .iter()
            .map(|p| {
                let mut q = *p;
                geometry::wrap_point(domain.dim, domain.edge, &mut q);
                q
            })
            .collect(),
    };

    let mut state = SimState {
        domain: domain.clone(),
        pair: pair.clone(),
        points,
        death_rates: Vec::new(),
        total_death: 0.0,
        total_birth: 0.0,
        dispersal_mass: pair.dispersal_mass(),
        time: 0.0,
        events: 0,
        events_since_refresh: 0,
        neighbors,
        fenwick: None,
        sampler: DispersalSampler::new(pair.dispersal()),
        scratch: Vec::new(),
    };
    state.rebuild_caches();
    Ok(state)
}

fn resolve_neighbor_mode(domain: &Domain, pair: &KernelPair) -> Result<NeighborMode, SimError> {
    let comp = pair.competition();
    if comp.is_zero() {
        return Ok(NeighborMode::NoCompetition);
    }
    match comp.support_radius() {
        None => Ok(NeighborMode::AllPairs),
        Some(support) => match domain.cell_size {
            Some(cs) => {
                if cs < support {
                    return Err(SimError::CellSizeTooSmall {
                        cell_size: cs,
                        support,
                    });
                }
                let grid = CellGrid::new(domain.dim, domain.edge, cs).ok_or(
                    SimError::TooFewCells {
                        cell_size: cs,
                        edge: domain.edge,
                    },
                )?;
                Ok(NeighborMode::Cells {
                    grid,
                    cutoff: support,
                })
            }
            None => match CellGrid::new(domain.dim, domain.edge, support) {
                Some(grid) => Ok(NeighborMode::Cells {
                    grid,
                    cutoff: support,
                }),
                // Support between L/3 and L/2: legal but too coarse for a
                // 3-cell grid; fall back to the quadratic path.
                None => Ok(NeighborMode::AllPairs),
            },
        },
    }
}

impl SimState {
    pub fn count(&self) -> usize {
        self.points.len()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn death_rates(&self) -> &[f64] {
        &self.death_rates
    }

    pub fn total_death_rate(&self) -> f64 {
        self.total_death
    }

    /// Equals `<a+> * N` up to floating drift; maintained incrementally.
    pub fn total_birth_rate(&self) -> f64 {
        self.total_birth
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn density(&self) -> f64 {
        self.count() as f64 / self.domain.volume()
    }

    /// Competition energy of `x` against the current configuration,
    /// excluding the point `exclude`; neighbor contributions are pushed to
    /// the scratch buffer.
    fn competition_energy(&mut self, x: &Point, exclude: Option<usize>) -> f64 {
        self.scratch.clear();
        match &self.neighbors {
            NeighborMode::NoCompetition => 0.0,
            NeighborMode::Cells { grid, cutoff } => {
                let mut found = std::mem::take(&mut self.scratch);
                grid.neighbors_within(x, *cutoff, &self.points, exclude, &mut found);
                let comp = self.pair.competition();
                let mut total = 0.0;
                for entry in &mut found {
                    let v = comp.eval_radial(entry.1);
                    entry.1 = v;
                    total += v;
                }
                self.scratch = found;
                total
            }
            NeighborMode::AllPairs => {
                let comp = self.pair.competition();
                let metric = self.domain.metric();
                let mut total = 0.0;
                for (j, y) in self.points.iter().enumerate() {
                    if exclude == Some(j) {
                        continue;
                    }
                    let v = comp.eval_between(x, y, metric);
                    if v != 0.0 {
                        self.scratch.push((j as u32, v));
                    }
                    total += v;
                }
                total
            }
        }
    }

    fn insert_point(&mut self, p: Point) {
        let idx = self.points.len();
        let energy = self.competition_energy(&p, None);
        let scratch = std::mem::take(&mut self.scratch);
        for &(j, v) in &scratch {
            self.bump_rate(j as usize, v);
        }
        self.scratch = scratch;
        self.points.push(p);
        self.death_rates.push(self.pair.mortality() + energy);
        if let NeighborMode::Cells { grid, .. } = &mut self.neighbors {
            grid.insert(idx, &p);
        }
        // Neighbor increments are already folded in by bump_rate; the child
        // contributes its own rate on top.
        self.total_death += self.pair.mortality() + energy;
        self.total_birth += self.dispersal_mass;
        self.sync_fenwick_after_insert(idx);
    }

    fn remove_point(&mut self, victim: usize) {
        let p = self.points[victim];
        let energy = self.competition_energy(&p, Some(victim));
        debug_assert!(energy >= 0.0);
        let scratch = std::mem::take(&mut self.scratch);
        for &(j, v) in &scratch {
            self.bump_rate(j as usize, -v);
        }
        self.scratch = scratch;
        self.total_death -= self.death_rates[victim];
        self.total_birth -= self.dispersal_mass;

        let last = self.points.len() - 1;
        if let Some(f) = self.fenwick.as_mut() {
            let moved = self.death_rates[last];
            if victim != last {
                f.add(victim, moved - self.death_rates[victim]);
                f.add(last, -moved);
            } else {
                f.add(victim, -self.death_rates[victim]);
            }
        }
        if let NeighborMode::Cells { grid, .. } = &mut self.neighbors {
            grid.swap_remove(victim);
        }
        self.points.swap_remove(victim);
        self.death_rates.swap_remove(victim);
    }

    fn bump_rate(&mut self, j: usize, delta: f64) {
        // Clamp at zero: decrements can undershoot by rounding.
        let updated = (self.death_rates[j] + delta).max(0.0);
        let applied = updated - self.death_rates[j];
        self.death_rates[j] = updated;
        self.total_death += applied;
        if let Some(f) = self.fenwick.as_mut() {
            f.add(j, applied);
        }
    }

    fn sync_fenwick_after_insert(&mut self, idx: usize) {
        let n = self.points.len();
        match self.fenwick.as_mut() {
            Some(f) => {
                if f.capacity() <= idx {
                    self.fenwick = Some(Fenwick::from_values(&padded(&self.death_rates)));
                } else {
                    f.add(idx, self.death_rates[idx]);
                }
            }
            None => {
                if n >= FENWICK_THRESHOLD {
                    self.fenwick = Some(Fenwick::from_values(&padded(&self.death_rates)));
                }
            }
        }
    }

    /// Recomputes every cached rate from scratch.
    pub fn rebuild_caches(&mut self) {
        let n = self.points.len();
        let mut rates = vec![0.0; n];
        match &self.neighbors {
            NeighborMode::NoCompetition => {
                for r in &mut rates {
                    *r = self.pair.mortality();
                }
            }
            NeighborMode::Cells { grid, cutoff } => {
                let mut found = Vec::new();
                for i in 0..n {
                    grid.neighbors_within(&self.points[i], *cutoff, &self.points, Some(i), &mut found);
                    let e: f64 = found
                        .iter()
                        .map(|&(_, d)| self.pair.competition().eval_radial(d))
                        .sum();
                    rates[i] = self.pair.mortality() + e;
                }
            }
            NeighborMode::AllPairs => {
                let metric = self.domain.metric();
                for i in 0..n {
                    let mut e = 0.0;
                    for j in 0..n {
                        if i != j {
                            e += self
                                .pair
                                .competition()
                                .eval_between(&self.points[i], &self.points[j], metric);
                        }
                    }
                    rates[i] = self.pair.mortality() + e;
                }
            }
        }
        self.death_rates = rates;
        self.total_death = self.death_rates.iter().sum();
        self.total_birth = self.dispersal_mass * n as f64;
        self.fenwick = (n >= FENWICK_THRESHOLD)
            .then(|| Fenwick::from_values(&padded(&self.death_rates)));
        self.events_since_refresh = 0;
    }

    fn waiting_time<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = self.total_death + self.total_birth;
        if total <= 0.0 {
            return f64::INFINITY;
        }
        let e: f64 = Exp1.sample(rng);
        e / total
    }

    fn select_victim<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let n = self.points.len();
        if let Some(f) = &self.fenwick {
            let target = rng.random::<f64>() * f.total();
            return f.select(target, n);
        }
        let target = rng.random::<f64>() * self.total_death;
        let mut acc = 0.0;
        for (i, &r) in self.death_rates.iter().enumerate() {
            acc += r;
            if acc > target {
                return i;
            }
        }
        n - 1
    }

    fn apply_event<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Event {
        self.events += 1;
        self.events_since_refresh += 1;
        if self.events_since_refresh >= REFRESH_INTERVAL {
            self.rebuild_caches();
        }
        let total = self.total_death + self.total_birth;
        let ev = if rng.random::<f64>() * total < self.total_birth {
            let parent = rng.random_range(0..self.points.len());
            let xi = self.sampler.sample(self.domain.dim, rng);
            let mut child = self.points[parent];
            for a in 0..self.domain.dim {
                child[a] += xi[a];
            }
            geometry::wrap_point(self.domain.dim, self.domain.edge, &mut child);
            self.insert_point(child);
            Event::Birth { parent, child }
        } else {
            let victim = self.select_victim(rng);
            self.remove_point(victim);
            Event::Death { victim }
        };
        ev
    }

    /// Advances the state by one event: exponential waiting time in the total
    /// rate, then a birth or death in proportion to the two totals. Returns
    /// `Absorbed` without advancing when the configuration is empty.
    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Event {
        if self.points.is_empty() {
            return Event::Absorbed;
        }
        let dt = self.waiting_time(rng);
        self.time += dt;
        self.apply_event(rng)
    }

    fn snapshot(&self, at: f64, record_points: bool) -> Snapshot {
        Snapshot {
            time: at,
            count: self.count(),
            density: self.density(),
            points: record_points.then(|| self.points.clone()),
        }
    }
}

fn padded(values: &[f64]) -> Vec<f64> {
    // Grow capacity geometrically so the tree is not rebuilt on every birth.
    let cap = (values.len().max(FENWICK_THRESHOLD) * 2).next_power_of_two();
    let mut out = values.to_vec();
    out.resize(cap, 0.0);
    out
}

/// One observation of a replica.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub count: usize,
    pub density: f64,
    pub points: Option<Vec<Point>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RunOutcome {
    Completed,
    /// The population hit zero; later observations report the empty state.
    Absorbed { at: f64 },
    /// The `max_points` guard tripped; observations stop at that time.
    Truncated { at: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub replica: u64,
    pub snapshots: Vec<Snapshot>,
    pub outcome: RunOutcome,
    pub events: u64,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub t_end: f64,
    pub observe_every: f64,
    pub max_points: usize,
    pub record_points: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            t_end: 1.0,
            observe_every: 0.1,
            max_points: 1_000_000,
            record_points: false,
        }
    }
}

impl RunConfig {
    fn validate(&self) -> Result<(), SimError> {
        if !(self.t_end >= 0.0) {
            return Err(SimError::BadRunConfig(format!(
                "t_end must be nonnegative, got {}",
                self.t_end
            )));
        }
        if self.t_end > 0.0 && !(self.observe_every > 0.0) {
            return Err(SimError::BadRunConfig(format!(
                "observe_every must be positive, got {}",
                self.observe_every
            )));
        }
        if self.max_points == 0 {
            return Err(SimError::BadRunConfig("max_points must be positive".into()));
        }
        Ok(())
    }
}

/// Observation grid: multiples of `every` up to and including `t_end`.
pub fn observation_times(t_end: f64, every: f64) -> Vec<f64> {
    let mut out = vec![0.0];
    if t_end <= 0.0 {
        return out;
    }
    let mut k = 1u64;
    loop {
        let t = k as f64 * every;
        if t >= t_end - 1e-12 * t_end.max(1.0) {
            break;
        }
        out.push(t);
        k += 1;
    }
    out.push(t_end);
    out
}

/// Runs one replica to `t_end`, emitting snapshots on the observation grid.
/// Deterministic in the state of `rng`.
pub fn run<R: Rng + ?Sized>(
    state: &mut SimState,
    cfg: &RunConfig,
    rng: &mut R,
    replica: u64,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let obs = observation_times(cfg.t_end, cfg.observe_every);
    let mut snapshots: Vec<Snapshot> = Vec::with_capacity(obs.len());
    let mut next_obs = 0usize;
    let outcome = loop {
        if state.count() == 0 {
            let at = state.time;
            while next_obs < obs.len() {
                snapshots.push(state.snapshot(obs[next_obs], cfg.record_points));
                next_obs += 1;
            }
            break RunOutcome::Absorbed { at };
        }
        let dt = state.waiting_time(rng);
        let t_next = state.time + dt;
        while next_obs < obs.len() && obs[next_obs] <= t_next {
            snapshots.push(state.snapshot(obs[next_obs], cfg.record_points));
            next_obs += 1;
        }
        if next_obs == obs.len() {
            break RunOutcome::Completed;
        }
        state.time = t_next;
        state.apply_event(rng);
        if state.count() > cfg.max_points {
            break RunOutcome::Truncated { at: state.time };
        }
    };
    Ok(Trajectory {
        replica,
        snapshots,
        outcome,
        events: state.events(),
    })
}

/// An ensemble of replicas over a common observation grid.
#[derive(Clone, Debug)]
pub struct Ensemble {
    pub domain: Domain,
    pub trajectories: Vec<Trajectory>,
}

impl Ensemble {
    /// Observation times present in every replica (truncated runs stop early).
    pub fn common_times(&self) -> Vec<f64> {
        let mut min_len = usize::MAX;
        for t in &self.trajectories {
            min_len = min_len.min(t.snapshots.len());
        }
        if self.trajectories.is_empty() || min_len == usize::MAX {
            return Vec::new();
        }
        self.trajectories[0].snapshots[..min_len]
            .iter()
            .map(|s| s.time)
            .collect()
    }
}

/// Runs `replicas` independent copies in parallel. Replica seeds derive from
/// the master seed in counter mode, so results do not depend on the thread
/// count or schedule.
pub fn run_ensemble(
    domain: &Domain,
    pair: &KernelPair,
    initial: &InitialState,
    cfg: &RunConfig,
    replicas: usize,
    master_seed: u64,
) -> Result<Ensemble, SimError> {
    cfg.validate()?;
    if replicas == 0 {
        return Err(SimError::BadRunConfig("replicas must be positive".into()));
    }
    // Validate the setup once up front so configuration errors surface
    // deterministically rather than inside the parallel loop.
    {
        let mut probe = ChaCha8Rng::seed_from_u64(master_seed);
        init(domain, pair, initial, &mut probe)?;
    }
    let trajectories: Result<Vec<Trajectory>, SimError> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
            rng.set_stream(r + 1);
            let mut state = init(domain, pair, initial, &mut rng)?;
            run(&mut state, cfg, &mut rng, r)
        })
        .collect();
    Ok(Ensemble {
        domain: domain.clone(),
        trajectories: trajectories?,
    })
}
