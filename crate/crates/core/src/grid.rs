//! Time grids on `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::Scalar;

/// Strictly increasing grid of times inside `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TimeGrid<S: Scalar = f64> {
    points: Vec<S>,
}

impl<S: Scalar> TimeGrid<S> {
    /// Uniform grid with `2^n_exponent` cells.
    pub fn dyadic(t_start: S, t_end: S, n_exponent: u32) -> Result<Self> {
        if n_exponent > 30 {
            return Err(domain(format!("n_exponent {n_exponent} too large")));
        }
        Self::uniform(t_start, t_end, 1usize << n_exponent)
    }

    /// Uniform grid with `n_cells` cells. Points are computed as
    /// `t_start + k * (t_end - t_start) / n_cells` so that dyadic grids nest exactly.
    pub fn uniform(t_start: S, t_end: S, n_cells: usize) -> Result<Self> {
        if !(t_start >= S::zero() && t_start < t_end && t_end <= S::one()) {
            return Err(domain(format!(
                "invalid interval [{t_start}, {t_end}], need 0 <= t_start < t_end <= 1"
            )));
        }
        if n_cells == 0 {
            return Err(domain("grid needs at least one cell"));
        }
        let n = S::from_usize_lossy(n_cells);
        let len = t_end - t_start;
        let mut points: Vec<S> = (0..=n_cells)
            .map(|k| t_start + len * S::from_usize_lossy(k) / n)
            .collect();
        points[n_cells] = t_end;
        Ok(Self { points })
    }

    /// Arbitrary strictly increasing points in `[0, 1]`.
    pub fn from_points(points: Vec<S>) -> Result<Self> {
        if points.len() < 2 {
            return Err(domain("grid needs at least two points"));
        }
        if points[0] < S::zero() || points[points.len() - 1] > S::one() {
            return Err(domain("grid points must lie in [0, 1]"));
        }
        if points.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(domain("grid points must be strictly increasing"));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[S] {
        &self.points
    }

    pub fn n_cells(&self) -> usize {
        self.points.len() - 1
    }

    pub fn t_start(&self) -> S {
        self.points[0]
    }

    pub fn t_end(&self) -> S {
        self.points[self.points.len() - 1]
    }

    /// `(left, right)` endpoints of cell `i`.
    pub fn cell(&self, i: usize) -> (S, S) {
        (self.points[i], self.points[i + 1])
    }

    /// Grid extended by one extra terminal point.
    pub fn with_endpoint(&self, t: S) -> Result<Self> {
        let mut pts = self.points.clone();
        pts.push(t);
        Self::from_points(pts)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_examples() {
        assert_eq!(TimeGrid::dyadic(0.0, 1.0, 0).unwrap().points(), &[0.0, 1.0]);
        assert_eq!(
            TimeGrid::dyadic(0.0, 1.0, 2).unwrap().points(),
            &[0.0, 0.25, 0.5, 0.75, 1.0]
        );
        assert_eq!(TimeGrid::dyadic(0.5, 1.0, 1).unwrap().points(), &[0.5, 0.75, 1.0]);
    }

    #[test]
    fn invalid_intervals_are_rejected() {
        assert!(TimeGrid::dyadic(0.5, 0.5, 1).is_err());
        assert!(TimeGrid::dyadic(-0.1, 1.0, 1).is_err());
        assert!(TimeGrid::dyadic(0.0, 1.5, 1).is_err());
        assert!(TimeGrid::<f64>::from_points(vec![0.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn dyadic_refinement_nests() {
        for n in 0..10 {
            let coarse = TimeGrid::dyadic(0.125, 0.875, n).unwrap();
            let fine = TimeGrid::dyadic(0.125, 0.875, n + 1).unwrap();
            for (k, t) in coarse.points().iter().enumerate() {
                assert_eq!(*t, fine.points()[2 * k]);
            }
        }
    }

    #[test]
    fn f32_grid_is_monotone() {
        let g = TimeGrid::<f32>::dyadic(0.0, 1.0, 12).unwrap();
        assert_eq!(g.n_cells(), 4096);
        assert!(g.points().windows(2).all(|w| w[0] < w[1]));
    }
}
