//! bdlp: a toolkit for the spatial birth-death-competition point process.
//!
//! A population of point individuals on a d-dimensional torus reproduces
//! through a dispersal kernel `a+` (each individual gives birth at rate
//! `<a+>`, offspring displaced by `a+ / <a+>`) and dies at rate
//! `m + E^-(x, gamma \ x)`, where the competition kernel `a-` couples each
//! individual to its neighbors. The crate provides:
//!
//! * [`kernels`] — kernel shapes, norms and energy functionals;
//! * [`stability`] — certified `(theta, b)` levels for which
//!   `b|eta| + E^-(eta) >= theta E^+(eta)`, plus a brute-force falsifier;
//! * [`sim`] — exact event-driven simulation of the jump process;
//! * [`statistics`] — density and pair-correlation estimators over replica
//!   ensembles;
//! * [`hierarchy`] — the correlation-function evolution truncated at second
//!   order with Poisson or Kirkwood closure;
//! * [`bounds`] — closed-form norm bounds, existence horizons and growth /
//!   extinction envelopes checked against trajectories;
//! * [`config`] / [`experiment`] — the TOML-driven experiment harness behind
//!   the `bdlp` command-line interface.

pub mod bounds;
pub mod config;
pub mod experiment;
pub mod geometry;
pub mod hierarchy;
pub mod kernels;
pub mod sim;
pub mod stability;
pub mod statistics;
