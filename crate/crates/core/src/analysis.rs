//! Radius clipping, summary statistics, contour levels, and a smoothness score.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::LandscapeGrid;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StatsError {
    #[error("grid has no finite loss values")]
    NoFiniteValues,
    #[error("contour count must be at least 1")]
    ZeroContours,
    #[error("invalid clip radius `{0}` (expected a positive number or `auto`)")]
    Radius(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClipSpec {
    /// Radius of the circle inscribed in the grid's bounding box, measured
    /// from the origin: `min(max|x|, max|y|)`.
    Auto,
    Radius(f64),
}

impl FromStr for ClipSpec {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "auto" {
            return Ok(ClipSpec::Auto);
        }
        match s.parse::<f64>() {
            Ok(r) if r > 0.0 && r.is_finite() => Ok(ClipSpec::Radius(r)),
            _ => Err(StatsError::Radius(s.to_string())),
        }
    }
}

impl fmt::Display for ClipSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ClipSpec::Auto => f.write_str("auto"),
            ClipSpec::Radius(r) => write!(f, "{r}"),
        }
    }
}

impl ClipSpec {
    pub fn radius_for(&self, grid: &LandscapeGrid) -> f64 {
        match *self {
            ClipSpec::Radius(r) => r,
            ClipSpec::Auto => {
                let reach = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                reach(grid.x_values()).min(reach(grid.y_values()))
            }
        }
    }
}

/// Masks (sets to NaN) every point farther than the clip radius from the origin.
///
/// Distance is `hypot`, so on-axis points at exactly the radius are kept
/// (`sqrt(y * y)` can round above `|y|`).
pub fn clip_radius(grid: &LandscapeGrid, spec: ClipSpec) -> LandscapeGrid {
    let r = spec.radius_for(grid);
    let xs = grid.x_values();
    let losses = grid
        .y_values()
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x, y)))
        .zip(grid.losses())
        .map(|((x, y), &v)| if x.hypot(y) > r { f64::NAN } else { v })
        .collect();
    grid.with_losses(losses).expect("same axes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub min_loss: f64,
    pub max_loss: f64,
    pub mean_loss: f64,
    /// Loss at `(0, 0)` when both axes contain zero. Serialized as `null`
    /// when absent or non-finite.
    #[serde(serialize_with = "finite_or_null")]
    pub center_loss: Option<f64>,
    pub argmin_x: f64,
    pub argmin_y: f64,
    pub finite_count: usize,
    /// Masked, infinite, and NaN entries.
    pub masked_count: usize,
}

fn finite_or_null<S: serde::Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
    match v {
        Some(x) if x.is_finite() => s.serialize_some(x),
        _ => s.serialize_none(),
    }
}

/// Statistics over the finite entries of a grid.
///
/// Ties for the minimum resolve to the smallest y, then the smallest x.
pub fn summary_stats(grid: &LandscapeGrid) -> Result<SummaryStats, StatsError> {
    let mut best: Option<(f64, usize, usize)> = None;
    let mut max = f64::NEG_INFINITY;
    let mut count = 0usize;
    let mut sum = 0.0f64;
    let mut compensation = 0.0f64;
    for (j, row) in grid.rows().enumerate() {
        for (i, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                continue;
            }
            count += 1;
            // Neumaier summation
            let t = sum + v;
            if sum.abs() >= v.abs() {
                compensation += (sum - t) + v;
            } else {
                compensation += (v - t) + sum;
            }
            sum = t;
            max = max.max(v);
            if best.is_none_or(|(m, _, _)| v < m) {
                best = Some((v, i, j));
            }
        }
    }
    let (min, i, j) = best.ok_or(StatsError::NoFiniteValues)?;
    let mean = ((sum + compensation) / count as f64).clamp(min, max);
    let center_loss = grid.origin_index().map(|(ci, cj)| grid.at(ci, cj));
    Ok(SummaryStats {
        min_loss: min,
        max_loss: max,
        mean_loss: mean,
        center_loss,
        argmin_x: grid.x_values()[i],
        argmin_y: grid.y_values()[j],
        finite_count: count,
        masked_count: grid.losses().len() - count,
    })
}

/// `n` levels evenly spaced strictly inside the finite loss range:
/// `min + (max - min) * k / (n + 1)` for `k = 1..=n`. A flat grid yields the
/// single constant.
pub fn contour_levels(grid: &LandscapeGrid, n: usize) -> Result<Vec<f64>, StatsError> {
    if n == 0 {
        return Err(StatsError::ZeroContours);
    }
    let (lo, hi) = grid
        .losses()
        .iter()
        .filter(|v| v.is_finite())
        .fold(None, |acc: Option<(f64, f64)>, &v| {
            Some(acc.map_or((v, v), |(a, b)| (a.min(v), b.max(v))))
        })
        .ok_or(StatsError::NoFiniteValues)?;
    if lo == hi {
        return Ok(vec![lo]);
    }
    Ok((1..=n).map(|k| lo + (hi - lo) * k as f64 / (n + 1) as f64).collect())
}

/// Mean absolute discrete Laplacian, in grid-index units:
///
/// `L(i, j) = f(i+1, j) + f(i-1, j) + f(i, j+1) + f(i, j-1) - 4 f(i, j)`
///
/// averaged as `|L|` over interior points whose five stencil values are all
/// finite. `None` when no interior point qualifies (grids narrower than 3).
pub fn mean_abs_laplacian(grid: &LandscapeGrid) -> Option<f64> {
    let (nx, ny) = (grid.resolution_x(), grid.resolution_y());
    let mut total = 0.0;
    let mut n = 0usize;
    for j in 1..ny.saturating_sub(1) {
        for i in 1..nx.saturating_sub(1) {
            let c = grid.at(i, j);
            let stencil = [grid.at(i + 1, j), grid.at(i - 1, j), grid.at(i, j + 1), grid.at(i, j - 1)];
            if !c.is_finite() || stencil.iter().any(|v| !v.is_finite()) {
                continue;
            }
            total += (stencil.iter().sum::<f64>() - 4.0 * c).abs();
            n += 1;
        }
    }
    (n > 0).then(|| total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;

    fn quad(n: usize) -> LandscapeGrid {
        LandscapeGrid::from_fn(&GridSpec::square(-1.0, 1.0, n), |x, y| x * x + y * y).unwrap()
    }

    #[test]
    fn auto_clip_masks_exactly_the_corners_of_3x3() {
        let g = clip_radius(&quad(3), ClipSpec::Auto);
        let masked: Vec<usize> = (0..9).filter(|&k| g.losses()[k].is_nan()).collect();
        assert_eq!(masked, vec![0, 2, 6, 8]);
    }

    #[test]
    fn large_radius_is_identity_and_clip_is_idempotent() {
        let g = quad(5);
        assert_eq!(clip_radius(&g, ClipSpec::Radius(2f64.sqrt() + 1e-9)), g);
        let once = clip_radius(&g, ClipSpec::Auto);
        assert_eq!(clip_radius(&once, ClipSpec::Auto), once);
        assert!(g.losses().iter().all(|v| !v.is_nan()), "input untouched");
    }

    #[test]
    fn clip_spec_parsing() {
        assert_eq!("auto".parse::<ClipSpec>().unwrap(), ClipSpec::Auto);
        assert_eq!("0.5".parse::<ClipSpec>().unwrap(), ClipSpec::Radius(0.5));
        for bad in ["0", "-1", "x", "NaN", "inf"] {
            assert!(bad.parse::<ClipSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn constant_grid_stats() {
        let g = LandscapeGrid::from_fn(&GridSpec::square(-1.0, 1.0, 7), |_, _| 0.1).unwrap();
        let s = summary_stats(&g).unwrap();
        assert_eq!((s.min_loss, s.mean_loss, s.max_loss), (0.1, 0.1, 0.1));
        assert_eq!(s.center_loss, Some(0.1));
        assert_eq!((s.argmin_x, s.argmin_y), (-1.0, -1.0));
        assert_eq!((s.finite_count, s.masked_count), (49, 0));
    }

    #[test]
    fn quadratic_stats_find_the_origin() {
        let s = summary_stats(&quad(21)).unwrap();
        assert_eq!((s.argmin_x, s.argmin_y, s.min_loss), (0.0, 0.0, 0.0));
        assert_eq!(s.center_loss, Some(0.0));
        assert_eq!(summary_stats(&quad(4)).unwrap().center_loss, None);
    }

    #[test]
    fn infinite_corner_is_excluded() {
        let g = LandscapeGrid::from_fn(&GridSpec::square(0.0, 1.0, 2), |x, y| {
            if x == 1.0 && y == 1.0 { f64::INFINITY } else { x + y }
        })
        .unwrap();
        let s = summary_stats(&g).unwrap();
        assert_eq!(s.max_loss, 1.0);
        assert_eq!(s.mean_loss, 2.0 / 3.0);
        assert_eq!((s.finite_count, s.masked_count), (3, 1));
    }

    #[test]
    fn all_masked_is_an_error() {
        let g = clip_radius(&quad(3), ClipSpec::Radius(1e-9));
        let g = g.with_losses(vec![f64::NAN; 9]).unwrap();
        assert_eq!(summary_stats(&g), Err(StatsError::NoFiniteValues));
        assert_eq!(contour_levels(&g, 3), Err(StatsError::NoFiniteValues));
    }

    #[test]
    fn contour_examples() {
        let two = LandscapeGrid::new(vec![0.0, 1.0], vec![0.0], vec![0.0, 2.0]).unwrap();
        assert_eq!(contour_levels(&two, 1).unwrap(), vec![1.0]);
        let four = LandscapeGrid::new(vec![0.0, 1.0], vec![0.0], vec![4.0, 0.0]).unwrap();
        assert_eq!(contour_levels(&four, 3).unwrap(), vec![1.0, 2.0, 3.0]);
        let flat = LandscapeGrid::new(vec![0.0, 1.0], vec![0.0], vec![7.0, 7.0]).unwrap();
        assert_eq!(contour_levels(&flat, 5).unwrap(), vec![7.0]);
        assert_eq!(contour_levels(&flat, 0), Err(StatsError::ZeroContours));
    }

    #[test]
    fn laplacian_of_quadratic_is_constant() {
        // f = x^2 + y^2 with spacing h: stencil gives 4 h^2 at every interior point
        let g = quad(11);
        let h = 0.2;
        let l = mean_abs_laplacian(&g).unwrap();
        assert!((l - 4.0 * h * h).abs() < 1e-12, "{l}");
        let plane = LandscapeGrid::from_fn(&GridSpec::square(-1.0, 1.0, 5), |x, y| 3.0 * x - y).unwrap();
        assert!(mean_abs_laplacian(&plane).unwrap() < 1e-12);
        assert_eq!(mean_abs_laplacian(&quad(2)), None);
    }
}
