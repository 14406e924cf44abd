//! Points, displacements and the two metrics the toolkit works with:
//! plain Euclidean space and the flat torus `[0, L)^d` with minimum-image
//! distances.

/// A position or displacement in up to three dimensions. Components beyond
/// the active dimension must be zero.
pub type Point = [f64; 3];

pub const ORIGIN: Point = [0.0, 0.0, 0.0];

/// Distance convention used when evaluating kernels and energies.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Metric {
    Euclidean,
    /// Periodic box of the given edge length; distances are minima over
    /// periodic images.
    Torus { edge: f64 },
}

impl Metric {
    /// Displacement `x - y`, wrapped to `[-L/2, L/2)` per axis on the torus.
    pub fn displacement(&self, dim: usize, x: &Point, y: &Point) -> Point {
        let mut out = ORIGIN;
        match *self {
            Metric::Euclidean => {
                for a in 0..dim {
                    out[a] = x[a] - y[a];
                }
            }
            Metric::Torus { edge } => {
                for a in 0..dim {
                    out[a] = wrap_half(x[a] - y[a], edge);
                }
            }
        }
        out
    }

    pub fn distance_sq(&self, dim: usize, x: &Point, y: &Point) -> f64 {
        let d = self.displacement(dim, x, y);
        norm_sq(dim, &d)
    }

    pub fn distance(&self, dim: usize, x: &Point, y: &Point) -> f64 {
        self.distance_sq(dim, x, y).sqrt()
    }
}

pub fn norm_sq(dim: usize, x: &Point) -> f64 {
    let mut s = 0.0;
    for a in 0..dim {
        s += x[a] * x[a];
    }
    s
}

pub fn norm(dim: usize, x: &Point) -> f64 {
    norm_sq(dim, x).sqrt()
}

/// Wraps a coordinate difference into `[-edge/2, edge/2)`.
pub fn wrap_half(u: f64, edge: f64) -> f64 {
    let mut v = u % edge;
    if v < -edge / 2.0 {
        v += edge;
    } else if v >= edge / 2.0 {
        v -= edge;
    }
    v
}

/// Wraps a position into `[0, edge)` per active axis.
pub fn wrap_point(dim: usize, edge: f64, p: &mut Point) {
    for a in 0..dim {
        let mut v = p[a] % edge;
        if v < 0.0 {
            v += edge;
        }
        // `-1e-17 % edge` rounds back to `edge`; fold it to 0.
        if v >= edge {
            v = 0.0;
        }
        p[a] = v;
    }
}

/// Volume of the unit ball in `dim` dimensions (V_0 = 1, V_1 = 2, V_d = V_{d-2} * 2 pi / d).
pub fn unit_ball_volume(dim: usize) -> f64 {
    match dim {
        0 => 1.0,
        1 => 2.0,
        d => unit_ball_volume(d - 2) * 2.0 * std::f64::consts::PI / d as f64,
    }
}

/// Volume of the ball of radius `r` in `dim` dimensions.
pub fn ball_volume(dim: usize, r: f64) -> f64 {
    unit_ball_volume(dim) * r.powi(dim as i32)
}

/// Surface area of the unit sphere S^{d-1} embedded in `dim` dimensions.
pub fn unit_sphere_surface(dim: usize) -> f64 {
    dim as f64 * unit_ball_volume(dim)
}
