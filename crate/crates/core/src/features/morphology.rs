//! Statistics of binary phase masks.
//!
//! Connectivity is 4-neighbour throughout. Segment and pair statistics pool
//! both axes and only use in-bounds pixels (no periodic wrap).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::image::{Axis, Mask};
use crate::error::{Error, Result};

/// Fraction of axis-aligned segments spanning `d + 1` pixels that lie
/// entirely in the phase. Zero when no segment fits.
pub fn lineal_path(m: &Mask, d: usize) -> f64 {
    let mut hits = 0usize;
    let mut total = 0usize;
    let mut scan = |len: usize, lines: usize, get: &dyn Fn(usize, usize) -> bool| {
        if d >= len {
            return;
        }
        for line in 0..lines {
            // running length of phase pixels ending at position i
            let mut run = 0usize;
            for i in 0..len {
                run = if get(line, i) { run + 1 } else { 0 };
                if i >= d {
                    total += 1;
                    if run > d {
                        hits += 1;
                    }
                }
            }
        }
    };
    scan(m.nx, m.ny, &|row, i| m.get(i, row));
    if m.ny > 1 {
        scan(m.ny, m.nx, &|col, i| m.get(col, i));
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}

/// Least-squares fit of `log L(d) = log a - b d` over the given distances.
///
/// Distances where the lineal path vanishes carry no log-information and are
/// skipped. With fewer than two usable points the fit degenerates to `b = 0`
/// and `a` = mean of the lineal-path values.
pub fn lineal_path_fit(m: &Mask, distances: &[usize]) -> Result<(f64, f64)> {
    if distances.is_empty() {
        return Err(Error::invalid(
            "lineal path fit needs at least one distance",
        ));
    }
    let values: Vec<f64> = distances.iter().map(|&d| lineal_path(m, d)).collect();
    let pts: Vec<(f64, f64)> = distances
        .iter()
        .zip(&values)
        .filter(|(_, &v)| v > 0.0)
        .map(|(&d, &v)| (d as f64, v.ln()))
        .collect();
    if pts.len() < 2 {
        return Ok((values.iter().sum::<f64>() / values.len() as f64, 0.0));
    }
    Ok(exp_fit(&pts))
}

/// Fit of `(x, log y)` pairs to `log a - b x`.
pub fn exp_fit(pts: &[(f64, f64)]) -> (f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    ((my - slope * mx).exp(), -slope)
}

/// Probability that two pixels `d` apart along an axis both lie in the phase.
pub fn two_point(m: &Mask, d: usize) -> Result<f64> {
    if d == 0 {
        return Ok(m.count() as f64 / m.bits.len() as f64);
    }
    let mut hits = 0usize;
    let mut total = 0usize;
    if d < m.nx {
        for iy in 0..m.ny {
            for ix in 0..m.nx - d {
                total += 1;
                hits += (m.get(ix, iy) && m.get(ix + d, iy)) as usize;
            }
        }
    }
    if d < m.ny {
        for iy in 0..m.ny - d {
            for ix in 0..m.nx {
                total += 1;
                hits += (m.get(ix, iy) && m.get(ix, iy + d)) as usize;
            }
        }
    }
    if total == 0 {
        return Err(Error::invalid(format!(
            "offset {d} exceeds the {}x{} image",
            m.nx, m.ny
        )));
    }
    Ok(hits as f64 / total as f64)
}

/// `-4 dS₂/dd` at zero, by forward difference. Zero for single-pixel images.
pub fn specific_surface(m: &Mask) -> f64 {
    match (two_point(m, 0), two_point(m, 1)) {
        (Ok(s0), Ok(s1)) => -4.0 * (s1 - s0),
        _ => 0.0,
    }
}

/// One connected component of the phase.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub pixels: Vec<(usize, usize)>,
}

impl Blob {
    /// Bounding-box extent in pixels along an axis.
    pub fn extent(&self, axis: Axis) -> usize {
        let coord = |p: &(usize, usize)| match axis {
            Axis::X => p.0,
            Axis::Y => p.1,
        };
        let lo = self.pixels.iter().map(coord).min().unwrap_or(0);
        let hi = self.pixels.iter().map(coord).max().unwrap_or(0);
        if self.pixels.is_empty() {
            0
        } else {
            hi - lo + 1
        }
    }

    /// Pixels whose centers lie in the convex hull of the blob's pixel centers.
    pub fn convex_area(&self) -> usize {
        let hull = convex_hull(&self.pixels);
        let (x0, x1) = min_max(self.pixels.iter().map(|p| p.0));
        let (y0, y1) = min_max(self.pixels.iter().map(|p| p.1));
        let mut n = 0;
        for y in y0..=y1 {
            for x in x0..=x1 {
                if in_hull(&hull, (x as i64, y as i64)) {
                    n += 1;
                }
            }
        }
        n
    }
}

fn min_max(it: impl Iterator<Item = usize>) -> (usize, usize) {
    it.fold((usize::MAX, 0), |(a, b), v| (a.min(v), b.max(v)))
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Counter-clockwise hull by monotone chain; collinear points dropped.
fn convex_hull(pixels: &[(usize, usize)]) -> Vec<(i64, i64)> {
    let mut pts: Vec<(i64, i64)> = pixels.iter().map(|&(x, y)| (x as i64, y as i64)).collect();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let mut lower: Vec<(i64, i64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(i64, i64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn in_hull(hull: &[(i64, i64)], p: (i64, i64)) -> bool {
    match hull.len() {
        0 => false,
        1 => hull[0] == p,
        2 => {
            let (a, b) = (hull[0], hull[1]);
            cross(a, b, p) == 0
                && p.0 >= a.0.min(b.0)
                && p.0 <= a.0.max(b.0)
                && p.1 >= a.1.min(b.1)
                && p.1 <= a.1.max(b.1)
        }
        n => (0..n).all(|i| cross(hull[i], hull[(i + 1) % n], p) >= 0),
    }
}

const NEIGHBOURS: [(i64, i64); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

pub fn blobs(m: &Mask) -> Vec<Blob> {
    let mut label = vec![false; m.bits.len()];
    let mut out = Vec::new();
    for start in 0..m.bits.len() {
        if !m.bits[start] || label[start] {
            continue;
        }
        label[start] = true;
        let mut pixels = Vec::new();
        let mut stack = vec![start];
        while let Some(i) = stack.pop() {
            let (x, y) = (i % m.nx, i / m.nx);
            pixels.push((x, y));
            for (dx, dy) in NEIGHBOURS {
                let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                if nx < 0 || ny < 0 || nx >= m.nx as i64 || ny >= m.ny as i64 {
                    continue;
                }
                let j = ny as usize * m.nx + nx as usize;
                if m.bits[j] && !label[j] {
                    label[j] = true;
                    stack.push(j);
                }
            }
        }
        out.push(Blob { pixels });
    }
    out
}

pub fn max_extent(m: &Mask, axis: Axis) -> f64 {
    blobs(m).iter().map(|b| b.extent(axis)).max().unwrap_or(0) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Var,
    Max,
}

impl Statistic {
    pub fn as_str(self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Var => "var",
            Statistic::Max => "max",
        }
    }

    /// Population statistic; zero for an empty slice.
    pub fn apply(self, v: &[f64]) -> f64 {
        if v.is_empty() {
            return 0.0;
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        match self {
            Statistic::Mean => mean,
            Statistic::Var => v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n,
            Statistic::Max => v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

pub fn convex_area(m: &Mask, stat: Statistic) -> f64 {
    let areas: Vec<f64> = blobs(m).iter().map(|b| b.convex_area() as f64).collect();
    stat.apply(&areas)
}

/// Largest number of phase pixels on one row (`X`) or column (`Y`).
pub fn pixel_cross(m: &Mask, axis: Axis) -> f64 {
    let best = match axis {
        Axis::X => (0..m.ny)
            .map(|iy| (0..m.nx).filter(|&ix| m.get(ix, iy)).count())
            .max(),
        Axis::Y => (0..m.nx)
            .map(|ix| (0..m.ny).filter(|&iy| m.get(ix, iy)).count())
            .max(),
    };
    best.unwrap_or(0) as f64
}

/// `1 / (pixels on the shortest phase path between opposite faces)`, 0 if none.
pub fn connected_path_invdist(m: &Mask, axis: Axis) -> f64 {
    let (start, end): (
        Box<dyn Fn(usize, usize) -> bool>,
        Box<dyn Fn(usize, usize) -> bool>,
    ) = match axis {
        Axis::X => (Box::new(|x, _| x == 0), Box::new(move |x, _| x == m.nx - 1)),
        Axis::Y => (Box::new(|_, y| y == 0), Box::new(move |_, y| y == m.ny - 1)),
    };
    let mut dist = vec![usize::MAX; m.bits.len()];
    let mut queue = VecDeque::new();
    for i in 0..m.bits.len() {
        if m.bits[i] && start(i % m.nx, i / m.nx) {
            dist[i] = 1;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % m.nx, i / m.nx);
        if end(x, y) {
            return 1.0 / dist[i] as f64;
        }
        for (dx, dy) in NEIGHBOURS {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= m.nx as i64 || ny >= m.ny as i64 {
                continue;
            }
            let j = ny as usize * m.nx + nx as usize;
            if m.bits[j] && dist[j] == usize::MAX {
                dist[j] = dist[i] + 1;
                queue.push_back(j);
            }
        }
    }
    0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Cityblock,
    Chessboard,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::Cityblock => "cityblock",
            Metric::Chessboard => "chessboard",
        }
    }
}

/// Distance from every pixel to the nearest phase pixel (exact, separable).
///
/// An image without the phase gets the image diagonal everywhere.
pub fn distance_transform(m: &Mask, metric: Metric) -> Vec<f64> {
    if m.is_empty() {
        let diag = ((m.nx * m.nx + m.ny * m.ny) as f64).sqrt();
        return vec![diag; m.bits.len()];
    }
    // row pass: horizontal distance to the nearest phase pixel in the same row
    let inf = f64::INFINITY;
    let mut g = vec![inf; m.bits.len()];
    for iy in 0..m.ny {
        let phase_x: Vec<usize> = (0..m.nx).filter(|&ix| m.get(ix, iy)).collect();
        for ix in 0..m.nx {
            g[iy * m.nx + ix] = phase_x
                .iter()
                .map(|&px| (px as f64 - ix as f64).abs())
                .fold(inf, f64::min);
        }
    }
    let mut out = vec![0.0; m.bits.len()];
    for ix in 0..m.nx {
        for iy in 0..m.ny {
            let mut best = inf;
            for jy in 0..m.ny {
                let gx = g[jy * m.nx + ix];
                if gx == inf {
                    continue;
                }
                let dy = (iy as f64 - jy as f64).abs();
                let d = match metric {
                    Metric::Euclidean => gx * gx + dy * dy,
                    Metric::Cityblock => gx + dy,
                    Metric::Chessboard => gx.max(dy),
                };
                best = best.min(d);
            }
            out[iy * m.nx + ix] = if metric == Metric::Euclidean {
                best.sqrt()
            } else {
                best
            };
        }
    }
    out
}

/// Ising energy `-Σ s_i s_j` over 4-neighbour pairs, spin +1 for the phase.
pub fn ising_energy(m: &Mask) -> f64 {
    let s = |ix: usize, iy: usize| if m.get(ix, iy) { 1.0 } else { -1.0 };
    let mut e = 0.0;
    for iy in 0..m.ny {
        for ix in 0..m.nx {
            if ix + 1 < m.nx {
                e -= s(ix, iy) * s(ix + 1, iy);
            }
            if iy + 1 < m.ny {
                e -= s(ix, iy) * s(ix, iy + 1);
            }
        }
    }
    e
}
