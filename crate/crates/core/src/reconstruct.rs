//! Atomic-measure fits on grids and coordinate-by-coordinate recovery of
//! time series.
//!
//! A moment vector `y` is matched by a nonnegative measure on finitely many
//! grid points by solving
//!
//! ```text
//! minimize λ  subject to  -λ <= y - A w <= λ,  w >= 0,   A[α][β] = z_β^α
//! ```
//!
//! with the interior-point solver. The support is read off by relative
//! thresholding. For occupation measures only the bivariate `(t, coord)`
//! marginal moments are fitted, one coordinate at a time, and the atoms of
//! each fit are averaged per time cell into way-points.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::lp::{solve_ipm_from, IpmOptions, IpmStart, LpStandardForm, LpStatus, Residuals};
use crate::moments::{
    enumerate_indices, monomial, AffineMap, BoxDomain, Coord, Interval, Layout, MomentVector, MultiIndex,
};
use crate::oracle::SampledProcess;

/// Hard limit on the number of grid points.
pub const MAX_GRID_POINTS: usize = 1_000_000;
pub const DEFAULT_THRESHOLD: f64 = 1e-3;
pub const DEFAULT_GRID_POINTS: usize = 101;
/// Atoms of one time cell whose values spread over more than this fraction
/// of the coordinate range are reported individually.
pub const MULTIMODAL_SPREAD: f64 = 0.25;

const MATRIX_CHUNK: usize = 256;

/// Finite set of points in the sub-box spanned by some coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    layout: Layout,
    coords: Vec<Coord>,
    positions: Vec<usize>,
    domain: BoxDomain,
    points: Vec<Vec<f64>>,
    resolution: Vec<f64>,
}

impl Grid {
    /// Uniform tensor grid with both endpoints on every axis. `domain` is the
    /// sub-box of `coords`, in that order; `points_per_axis` has one entry
    /// per coordinate. Points are ordered with the last coordinate fastest.
    pub fn uniform(layout: Layout, coords: &[Coord], domain: &BoxDomain, points_per_axis: &[usize]) -> Result<Grid> {
        let d = coords.len();
        if d == 0 {
            return Err(Error::Empty("grid coordinates".into()));
        }
        if domain.dim() != d || points_per_axis.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: if domain.dim() != d {
                    domain.dim()
                } else {
                    points_per_axis.len()
                },
            });
        }
        if let Some(&p) = points_per_axis.iter().find(|&&p| p < 2) {
            return Err(Error::InvalidArgument(format!("need >= 2 points per axis, got {p}")));
        }
        let mut positions = Vec::with_capacity(d);
        for (i, &c) in coords.iter().enumerate() {
            let p = layout
                .position(c)
                .ok_or_else(|| Error::InvalidArgument(format!("coordinate {c} not in the layout")))?;
            if positions.contains(&p) {
                return Err(Error::InvalidArgument(format!("coordinate {c} listed twice")));
            }
            if i > 0 && p < positions[i - 1] {
                return Err(Error::InvalidArgument(
                    "grid coordinates must follow canonical order".into(),
                ));
            }
            positions.push(p);
        }
        let total = points_per_axis
            .iter()
            .try_fold(1usize, |acc, &p| acc.checked_mul(p))
            .unwrap_or(usize::MAX);
        if total > MAX_GRID_POINTS {
            return Err(Error::GridTooLarge {
                points: total,
                limit: MAX_GRID_POINTS,
            });
        }
        let axes: Vec<Vec<f64>> = domain
            .intervals()
            .iter()
            .zip(points_per_axis)
            .map(|(iv, &p)| {
                let h = iv.width() / (p - 1) as f64;
                (0..p)
                    .map(|k| if k + 1 == p { iv.hi } else { iv.lo + k as f64 * h })
                    .collect()
            })
            .collect();
        let resolution = domain
            .intervals()
            .iter()
            .zip(points_per_axis)
            .map(|(iv, &p)| iv.width() / (p - 1) as f64 / 2.0)
            .collect();
        let points = (0..total)
            .map(|mut k| {
                let mut z = vec![0.0; d];
                for i in (0..d).rev() {
                    z[i] = axes[i][k % points_per_axis[i]];
                    k /= points_per_axis[i];
                }
                z
            })
            .collect();
        Ok(Grid {
            layout,
            coords: coords.to_vec(),
            positions,
            domain: domain.clone(),
            points,
            resolution,
        })
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    /// Positions of the grid coordinates in the layout.
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }

    pub fn domain(&self) -> &BoxDomain {
        &self.domain
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Covering radius per coordinate, half the spacing.
    pub fn resolution(&self) -> &[f64] {
        &self.resolution
    }

    /// The same grid restricted to the points at `keep`.
    pub fn subset(&self, keep: &[usize]) -> Grid {
        Grid {
            points: keep.iter().map(|&k| self.points[k].clone()).collect(),
            ..self.clone()
        }
    }
}

/// Free-function form of [`Grid::uniform`].
pub fn build_grid(layout: Layout, coords: &[Coord], domain: &BoxDomain, points_per_axis: &[usize]) -> Result<Grid> {
    Grid::uniform(layout, coords, domain, points_per_axis)
}

/// `A[α][β] = z_β^α` for full-layout indices supported on the grid
/// coordinates.
pub fn build_moment_matrix(grid: &Grid, indices: &[MultiIndex], exec: Execution) -> Result<DMatrix<f64>> {
    build_matrix_on(grid.points(), grid, indices, exec)
}

fn build_matrix_on(points: &[Vec<f64>], grid: &Grid, indices: &[MultiIndex], exec: Execution) -> Result<DMatrix<f64>> {
    let q = grid.layout.dim();
    let mut local = Vec::with_capacity(indices.len());
    for alpha in indices {
        if alpha.dim() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: alpha.dim(),
            });
        }
        if let Some(p) = (0..q).find(|p| alpha.entries()[*p] > 0 && !grid.positions.contains(p)) {
            return Err(Error::ExcludedCoordinate {
                index: alpha.clone(),
                coord: grid.layout.coord(p).name(),
            });
        }
        local.push(alpha.project(&grid.positions));
    }
    let n = points.len();
    let blocks = exec.map_chunks(n, MATRIX_CHUNK, |range| {
        let mut block = DMatrix::zeros(local.len(), range.len());
        for (c, k) in range.enumerate() {
            for (r, a) in local.iter().enumerate() {
                block[(r, c)] = monomial(&points[k], a);
            }
        }
        block
    });
    let mut a = DMatrix::zeros(local.len(), n);
    for (b, block) in blocks.into_iter().enumerate() {
        a.columns_mut(b * MATRIX_CHUNK, block.ncols()).copy_from(&block);
    }
    Ok(a)
}

/// Coordinates in which the fit LP is posed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scaling {
    /// Moments and grid mapped to `[-1, 1]` per coordinate.
    #[default]
    Unit,
    /// Moments and grid as given.
    None,
}

/// Residual level at which an iteration-limited fit is still accepted.
pub const DEFAULT_FIT_ACCEPT: f64 = 1e-6;

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub scaling: Scaling,
    pub ipm: IpmOptions,
    /// An LP that stops at its iteration limit is accepted when its best
    /// iterate has residuals at most this large. Interior-point methods on
    /// these highly degenerate fits often stall just above `ipm.tol`.
    pub accept_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            scaling: Scaling::default(),
            ipm: IpmOptions::default(),
            accept_tol: DEFAULT_FIT_ACCEPT,
        }
    }
}

/// Nonnegative weights on grid points with the LP mismatch `λ*`.
///
/// `fit_error` is measured on the moments in the coordinates selected by
/// [`FitOptions::scaling`].
#[derive(Debug, Clone, PartialEq)]
pub struct AtomicMeasure {
    pub grid: Grid,
    pub weights: Vec<f64>,
    pub fit_error: f64,
    pub iterations: usize,
    pub residuals: Residuals,
}

impl AtomicMeasure {
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Points with their weights.
    pub fn atoms(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.grid
            .points()
            .iter()
            .map(Vec::as_slice)
            .zip(self.weights.iter().copied())
    }
}

/// Indices of `y` whose powers sit on the grid coordinates only.
fn indices_on(y: &MomentVector, grid: &Grid) -> Vec<MultiIndex> {
    y.iter()
        .map(|(a, _)| a)
        .filter(|a| a.supported_on(grid.positions()))
        .cloned()
        .collect()
}

/// Solves the minimum ∞-norm fit of the moments of `y` supported on the grid
/// coordinates.
pub fn fit_atomic(y: &MomentVector, grid: &Grid, opts: &FitOptions) -> Result<AtomicMeasure> {
    if grid.is_empty() {
        return Err(Error::Empty("grid".into()));
    }
    if y.layout() != grid.layout() {
        return Err(Error::InvalidArgument("moment layout differs from grid layout".into()));
    }
    let indices = indices_on(y, grid);
    let restricted: BTreeMap<MultiIndex, f64> = indices.iter().map(|a| (a.clone(), y.get(a).unwrap_or(0.0))).collect();
    let sub = MomentVector::new(y.layout(), y.degree(), y.domain().clone(), restricted)?;
    let (b, points) = match opts.scaling {
        Scaling::Unit => {
            let map = AffineMap::to_unit(y.domain());
            let scaled = sub.rescale(&map)?;
            let local = map.select(grid.positions());
            let pts: Vec<Vec<f64>> = grid.points().iter().map(|z| local.apply(z)).collect();
            let b: Vec<f64> = indices.iter().map(|a| scaled.require(a)).collect::<Result<_>>()?;
            (b, pts)
        }
        Scaling::None => {
            let b: Vec<f64> = indices.iter().map(|a| sub.require(a)).collect::<Result<_>>()?;
            (b, grid.points().to_vec())
        }
    };
    let a = build_matrix_on(&points, grid, &indices, opts.ipm.exec)?;
    let (k, n) = (a.nrows(), a.ncols());

    // columns: w (n), λ, s1 (k), s2 (k)
    let cols = n + 1 + 2 * k;
    let mut m = DMatrix::zeros(2 * k, cols);
    m.view_mut((0, 0), (k, n)).copy_from(&a);
    m.view_mut((k, 0), (k, n)).copy_from(&a);
    for i in 0..k {
        m[(i, n)] = 1.0;
        m[(k + i, n)] = -1.0;
        m[(i, n + 1 + i)] = -1.0;
        m[(k + i, n + 1 + k + i)] = 1.0;
    }
    let mut c = vec![0.0; cols];
    c[n] = 1.0;
    let rhs: Vec<f64> = b.iter().chain(&b).copied().collect();
    let lp = LpStandardForm::new(c, m, rhs)?;
    let sol = solve_ipm_from(&lp, opts.ipm, &fit_start(&a, &b))?;
    let stalled = sol.status == LpStatus::IterationLimit && sol.residuals.max() <= opts.accept_tol;
    if stalled {
        log::warn!(
            "moment fit on {:?} stopped at the iteration limit with residuals {:.3e}; accepted",
            grid.coords(),
            sol.residuals.max()
        );
    }
    if !sol.is_optimal() && !stalled {
        return Err(Error::Lp {
            status: sol.status,
            message: format!(
                "moment fit on {} ({} points, {} moments): {} iterations, residuals {:.3e}/{:.3e}/{:.3e}",
                grid.coords().iter().map(|c| c.name()).collect::<Vec<_>>().join(","),
                n,
                k,
                sol.iterations,
                sol.residuals.primal,
                sol.residuals.dual,
                sol.residuals.gap
            ),
        });
    }
    let weights: Vec<f64> = sol.primal.rows(0, n).iter().map(|&w| w.max(0.0)).collect();
    Ok(AtomicMeasure {
        grid: grid.clone(),
        weights,
        fit_error: sol.primal[n].max(0.0),
        iterations: sol.iterations,
        residuals: sol.residuals,
    })
}

/// Strictly feasible primal–dual point of the fit LP. The primal spreads the
/// zeroth moment uniformly with `λ` above every moment; the dual uses that
/// the zeroth row of `A` is all ones, which must be the first row.
fn fit_start(a: &DMatrix<f64>, b: &[f64]) -> IpmStart {
    let (k, n) = a.shape();
    let w = b[0].abs().max(1e-3) / n as f64;
    let aw: Vec<f64> = (0..k).map(|i| w * a.row(i).sum()).collect();
    let spread = b.iter().zip(&aw).fold(0.0f64, |m, (bi, ai)| m.max((bi - ai).abs()));
    let lambda = 2.0 * spread + 1.0;
    let (eps, delta) = (1.0 / (4.0 * k as f64), 0.25);
    let cols = n + 1 + 2 * k;
    let mut x = DVector::from_element(cols, w);
    let mut s = DVector::from_element(cols, delta);
    let mut y = DVector::zeros(2 * k);
    x[n] = lambda;
    s[n] = 1.0 - 2.0 * k as f64 * eps - delta;
    for i in 0..k {
        x[n + 1 + i] = aw[i] + lambda - b[i];
        x[n + 1 + k + i] = b[i] - aw[i] + lambda;
        y[i] = eps;
        y[k + i] = -eps;
        s[n + 1 + i] = eps;
        s[n + 1 + k + i] = eps;
    }
    y[k] -= delta;
    s[n + 1 + k] += delta;
    IpmStart { x, y, s }
}

/// `‖y - A w‖∞` of a measure against the moments of `y` on its coordinates,
/// in the original (unscaled) coordinates.
pub fn moment_mismatch(y: &MomentVector, mu: &AtomicMeasure) -> Result<f64> {
    let indices = indices_on(y, &mu.grid);
    let a = build_moment_matrix(&mu.grid, &indices, Execution::Sequential)?;
    let b = DVector::from_iterator(indices.len(), indices.iter().map(|i| y.get(i).unwrap_or(0.0)));
    Ok((b - a * DVector::from_column_slice(&mu.weights)).amax())
}

/// Atoms kept by [`extract_support`] with the mass bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct Support {
    pub measure: AtomicMeasure,
    pub fitted_mass: f64,
    pub retained_mass: f64,
}

impl Support {
    /// Fraction of the fitted mass dropped by the threshold.
    pub fn lost_fraction(&self) -> f64 {
        if self.fitted_mass > 0.0 {
            1.0 - self.retained_mass / self.fitted_mass
        } else {
            0.0
        }
    }
}

/// Keeps atoms whose weight is at least `rel_threshold` times the largest.
pub fn extract_support(mu: &AtomicMeasure, rel_threshold: f64) -> Result<Support> {
    if !(rel_threshold > 0.0 && rel_threshold < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold must lie in (0, 1), got {rel_threshold}"
        )));
    }
    let max = mu.weights.iter().copied().fold(0.0f64, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::AllBelowThreshold(rel_threshold));
    }
    let keep: Vec<usize> = (0..mu.weights.len())
        .filter(|&k| mu.weights[k] >= rel_threshold * max)
        .collect();
    let weights: Vec<f64> = keep.iter().map(|&k| mu.weights[k]).collect();
    let retained = weights.iter().sum();
    Ok(Support {
        measure: AtomicMeasure {
            grid: mu.grid.subset(&keep),
            weights,
            ..mu.clone()
        },
        fitted_mass: mu.mass(),
        retained_mass: retained,
    })
}

/// Indices over `(t, coord)` only, up to total degree `degree`, in
/// canonical order.
pub fn marginal_indices(layout: Layout, coord: Coord, degree: u32) -> Result<Vec<MultiIndex>> {
    if coord == Coord::Time {
        return Err(Error::InvalidArgument(
            "time is always part of a marginal; pick a state or control".into(),
        ));
    }
    let t = layout
        .position(Coord::Time)
        .ok_or_else(|| Error::InvalidArgument("marginals need a time coordinate".into()))?;
    let j = layout
        .position(coord)
        .ok_or_else(|| Error::InvalidArgument(format!("coordinate {coord} not in the layout")))?;
    Ok(enumerate_indices(2, degree)
        .into_iter()
        .map(|a| a.embed(&[t, j], layout.dim()))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WayPoint {
    pub time: f64,
    pub value: f64,
    pub weight: f64,
}

/// Time series of one coordinate read off a `(t, coord)` fit.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateSeries {
    pub coord: Coord,
    pub interval: Interval,
    /// Time-sorted.
    pub points: Vec<WayPoint>,
    pub fit_error: f64,
    pub fitted_mass: f64,
    pub retained_mass: f64,
    /// Time cells whose atoms were reported individually.
    pub multimodal_cells: Vec<f64>,
    /// The thresholded atoms in `(t, coord)` order.
    pub support: AtomicMeasure,
}

#[derive(Debug, Clone, Copy)]
pub struct ReconstructOptions {
    pub threshold: f64,
    pub fit: FitOptions,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        ReconstructOptions {
            threshold: DEFAULT_THRESHOLD,
            fit: FitOptions::default(),
        }
    }
}

/// Marginal `(t, coord)` grid on the moment box with the given resolution.
pub fn marginal_grid(y: &MomentVector, coord: Coord, grid_t: usize, grid_coord: usize) -> Result<Grid> {
    let layout = y.layout();
    let pos = |c: Coord| {
        layout
            .position(c)
            .ok_or_else(|| Error::InvalidArgument(format!("coordinate {c} not in the layout")))
    };
    let positions = [pos(Coord::Time)?, pos(coord)?];
    Grid::uniform(
        layout,
        &[Coord::Time, coord],
        &y.domain().select(&positions),
        &[grid_t, grid_coord],
    )
}

/// Fits the `(t, coord)` marginal of `y` on `grid2d`, thresholds, and
/// averages each time cell into one way-point.
pub fn reconstruct_coordinate(
    y: &MomentVector,
    coord: Coord,
    grid2d: &Grid,
    opts: &ReconstructOptions,
) -> Result<CoordinateSeries> {
    if grid2d.coords() != [Coord::Time, coord] {
        return Err(Error::InvalidArgument(format!("grid must span (t, {coord})")));
    }
    let mu = fit_atomic(y, grid2d, &opts.fit)?;
    let support = extract_support(&mu, opts.threshold)?;
    let interval = grid2d.domain().interval(1);
    let t_box = grid2d.domain().interval(0);
    let cell = 2.0 * grid2d.resolution()[0];

    let mut cells: BTreeMap<i64, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for (z, w) in support.measure.atoms() {
        let key = ((z[0] - t_box.lo) / cell).round() as i64;
        cells.entry(key).or_default().push((z[0], z[1], w));
    }
    let mut points = Vec::new();
    let mut multimodal = Vec::new();
    for atoms in cells.values() {
        let lo = atoms.iter().map(|a| a.1).fold(f64::INFINITY, f64::min);
        let hi = atoms.iter().map(|a| a.1).fold(f64::NEG_INFINITY, f64::max);
        if hi - lo > MULTIMODAL_SPREAD * interval.width() {
            let mut sorted = atoms.clone();
            sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
            multimodal.push(t_box.clamp(atoms[0].0));
            points.extend(sorted.iter().map(|&(t, v, w)| WayPoint {
                time: t_box.clamp(t),
                value: interval.clamp(v),
                weight: w,
            }));
        } else {
            let w: f64 = atoms.iter().map(|a| a.2).sum();
            let t = atoms.iter().map(|a| a.0 * a.2).sum::<f64>() / w;
            let v = atoms.iter().map(|a| a.1 * a.2).sum::<f64>() / w;
            points.push(WayPoint {
                time: t_box.clamp(t),
                value: interval.clamp(v),
                weight: w,
            });
        }
    }
    Ok(CoordinateSeries {
        coord,
        interval,
        points,
        fit_error: mu.fit_error,
        fitted_mass: support.fitted_mass,
        retained_mass: support.retained_mass,
        multimodal_cells: multimodal,
        support: support.measure,
    })
}

/// Every state and control of `y`, reconstructed independently and merged
/// in coordinate order.
pub fn reconstruct_all(
    y: &MomentVector,
    grid_t: usize,
    grid_coord: usize,
    opts: &ReconstructOptions,
    exec: Execution,
) -> Result<Vec<CoordinateSeries>> {
    let coords: Vec<Coord> = y.layout().coords().into_iter().filter(|&c| c != Coord::Time).collect();
    exec.map(coords.len(), |i| {
        let grid = marginal_grid(y, coords[i], grid_t, grid_coord)?;
        reconstruct_coordinate(y, coords[i], &grid, opts)
    })
    .into_iter()
    .collect()
}

/// Way-point series assembled into a process on a common time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructedProcess {
    pub states: Vec<CoordinateSeries>,
    pub controls: Vec<CoordinateSeries>,
    pub process: SampledProcess,
}

impl ReconstructedProcess {
    pub fn fit_errors(&self) -> Vec<(Coord, f64)> {
        self.controls
            .iter()
            .chain(&self.states)
            .map(|s| (s.coord, s.fit_error))
            .collect()
    }
}

/// Merges way-points at equal times into their weighted mean.
fn merged(points: &[WayPoint]) -> Vec<(f64, f64)> {
    let mut sorted = points.to_vec();
    sorted.sort_by(|a, b| a.time.total_cmp(&b.time));
    let mut out: Vec<(f64, f64, f64)> = Vec::new();
    for p in sorted {
        match out.last_mut() {
            Some(last) if (p.time - last.0).abs() <= 1e-12 * (1.0 + p.time.abs()) => {
                let w = last.2 + p.weight;
                if w > 0.0 {
                    last.1 = (last.1 * last.2 + p.value * p.weight) / w;
                }
                last.2 = w;
            }
            _ => out.push((p.time, p.value, p.weight)),
        }
    }
    out.into_iter().map(|(t, v, _)| (t, v)).collect()
}

/// Piecewise-linear interpolation, constant beyond the ends.
fn interpolate(series: &[(f64, f64)], t: f64) -> f64 {
    let k = series.partition_point(|p| p.0 <= t);
    if k == 0 {
        return series[0].1;
    }
    if k == series.len() {
        return series[k - 1].1;
    }
    let (a, b) = (series[k - 1], series[k]);
    a.1 + (b.1 - a.1) * (t - a.0) / (b.0 - a.0)
}

/// Samples every series on `n_time_samples` uniform times over `span`
/// (defaults to the extent of the way-points). Controls are clamped into
/// their box.
pub fn assemble_process(
    series: &[CoordinateSeries],
    n_time_samples: usize,
    span: Option<(f64, f64)>,
) -> Result<ReconstructedProcess> {
    let mut states: Vec<CoordinateSeries> = series
        .iter()
        .filter(|s| matches!(s.coord, Coord::State(_)))
        .cloned()
        .collect();
    let mut controls: Vec<CoordinateSeries> = series
        .iter()
        .filter(|s| matches!(s.coord, Coord::Control(_)))
        .cloned()
        .collect();
    if states.is_empty() {
        return Err(Error::Empty("no state series".into()));
    }
    states.sort_by_key(|s| s.coord);
    controls.sort_by_key(|s| s.coord);
    for (k, s) in states.iter().enumerate() {
        if s.coord != Coord::State(k) {
            return Err(Error::Empty(format!("series for x{}", k + 1)));
        }
    }
    for (k, s) in controls.iter().enumerate() {
        if s.coord != Coord::Control(k) {
            return Err(Error::Empty(format!("series for u{}", k + 1)));
        }
    }
    if let Some(s) = states.iter().chain(&controls).find(|s| s.points.is_empty()) {
        return Err(Error::Empty(format!("series for {} has no way-points", s.coord)));
    }
    let (t0, t1) = match span {
        Some(s) => s,
        None => {
            let all = states
                .iter()
                .chain(&controls)
                .flat_map(|s| s.points.iter().map(|p| p.time));
            all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t), hi.max(t)))
        }
    };
    if !(t1 > t0) {
        return Err(Error::InvalidArgument(format!("empty time span [{t0}, {t1}]")));
    }
    let n = n_time_samples.max(2);
    let times: Vec<f64> = (0..n)
        .map(|k| {
            if k + 1 == n {
                t1
            } else {
                t0 + (t1 - t0) * k as f64 / (n - 1) as f64
            }
        })
        .collect();
    let sample = |s: &CoordinateSeries, clamp: bool| -> Vec<f64> {
        let m = merged(&s.points);
        times
            .iter()
            .map(|&t| {
                let v = interpolate(&m, t);
                if clamp {
                    s.interval.clamp(v)
                } else {
                    v
                }
            })
            .collect()
    };
    let xs: Vec<Vec<f64>> = states.iter().map(|s| sample(s, false)).collect();
    let us: Vec<Vec<f64>> = controls.iter().map(|s| sample(s, true)).collect();
    let process = SampledProcess::new(
        times.clone(),
        (0..n).map(|k| us.iter().map(|u| u[k]).collect()).collect(),
        (0..n).map(|k| xs.iter().map(|x| x[k]).collect()).collect(),
    )?;
    Ok(ReconstructedProcess {
        states,
        controls,
        process,
    })
}

/// Coefficients `c` of `x_j(t) ≈ Σ c_k t^k` from the moment equations
/// `⟨t^i x_j⟩ = Σ_k c_k ⟨t^{i+k}⟩`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityFit {
    pub coefficients: Vec<f64>,
    /// Whether the Tikhonov fallback was used.
    pub regularized: bool,
}

impl DensityFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.coefficients.iter().rev().fold(0.0, |acc, &c| acc * t + c)
    }
}

const DENSITY_RCOND: f64 = 1e-13;

/// Polynomial-density baseline for coordinate `coord` with polynomial
/// degree `d`. Every equation whose moments are available is used, in the
/// least-squares sense when there are more than `d + 1`.
pub fn polynomial_density_baseline(y: &MomentVector, coord: Coord, d: u32) -> Result<DensityFit> {
    let layout = y.layout();
    let q = layout.dim();
    let t = layout
        .position(Coord::Time)
        .ok_or_else(|| Error::InvalidArgument("density baseline needs a time coordinate".into()))?;
    let j = match coord {
        Coord::Time => return Err(Error::InvalidArgument("coordinate must be a state or control".into())),
        c => layout
            .position(c)
            .ok_or_else(|| Error::InvalidArgument(format!("coordinate {c} not in the layout")))?,
    };
    let time_moment = |i: u32| y.get(&MultiIndex::unit(q, t, i));
    let mixed = |i: u32| y.get(&MultiIndex::unit(q, t, i).add(&MultiIndex::unit(q, j, 1)));
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0.. {
        let (Some(r), Some(_)) = (mixed(i), time_moment(i + d)) else {
            break;
        };
        rows.push(
            (0..=d)
                .map(|k| time_moment(i + k).expect("lower moments present"))
                .collect::<Vec<_>>(),
        );
        rhs.push(r);
    }
    if rows.len() < d as usize + 1 {
        return Err(Error::MissingMoment(MultiIndex::unit(q, t, rows.len() as u32 + d)));
    }
    let a = DMatrix::from_fn(rows.len(), d as usize + 1, |r, c| rows[r][c]);
    let b = DVector::from_vec(rhs);
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin > DENSITY_RCOND * smax {
        let c = svd.solve(&b, 0.0).map_err(|e| Error::Singular(e.to_string()))?;
        return Ok(DensityFit {
            coefficients: c.iter().copied().collect(),
            regularized: false,
        });
    }
    // Tikhonov: (A'A + δ I) c = A'b
    let delta = (DENSITY_RCOND * smax).powi(2);
    let ata = a.transpose() * &a + DMatrix::identity(d as usize + 1, d as usize + 1) * delta;
    let c = ata
        .cholesky()
        .ok_or_else(|| Error::Singular("regularized density system".into()))?
        .solve(&(a.transpose() * b));
    Ok(DensityFit {
        coefficients: c.iter().copied().collect(),
        regularized: true,
    })
}

/// Fit on a joint grid over all coordinates of `grid` followed by
/// thresholding. Used for invariant measures.
pub fn reconstruct_support(y: &MomentVector, grid: &Grid, opts: &ReconstructOptions) -> Result<Support> {
    let mu = fit_atomic(y, grid, &opts.fit)?;
    extract_support(&mu, opts.threshold)
}

/// Largest distance from a reference point to its nearest atom.
pub fn one_sided_hausdorff(reference: &[Vec<f64>], atoms: &[Vec<f64>]) -> f64 {
    reference
        .iter()
        .map(|r| {
            atoms
                .iter()
                .map(|a| r.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moments::{atomic_moments, Interval};

    fn line(lo: f64, hi: f64) -> BoxDomain {
        BoxDomain::new(vec![Interval::new(lo, hi)]).unwrap()
    }

    fn dirac(layout: Layout, domain: BoxDomain, at: &[f64], degree: u32) -> MomentVector {
        let idx = enumerate_indices(layout.dim(), degree);
        let vals = atomic_moments(&[at.to_vec()], &[1.0], &idx);
        MomentVector::from_values(layout, degree, domain, &vals).unwrap()
    }

    #[test]
    fn grid_examples() {
        let l = Layout::state_only(1);
        let g = build_grid(l, &[Coord::State(0)], &line(0.0, 1.0), &[3]).unwrap();
        assert_eq!(g.points(), &[vec![0.0], vec![0.5], vec![1.0]]);
        assert_eq!(g.resolution(), &[0.25]);

        let l2 = Layout::state_only(2);
        let d2 = BoxDomain::from_bounds(&[(0.0, 1.0), (-1.0, 1.0)]).unwrap();
        assert_eq!(
            build_grid(l2, &[Coord::State(0), Coord::State(1)], &d2, &[3, 3])
                .unwrap()
                .len(),
            9
        );

        let occ = Layout::occupation(2, 1);
        let tu = BoxDomain::from_bounds(&[(0.0, 3.5), (-1.0, 1.0)]).unwrap();
        assert_eq!(
            build_grid(occ, &[Coord::Time, Coord::Control(0)], &tu, &[101, 41])
                .unwrap()
                .len(),
            4141
        );
    }

    #[test]
    fn grid_guards() {
        let l = Layout::state_only(2);
        let d = BoxDomain::from_bounds(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let c = [Coord::State(0), Coord::State(1)];
        assert!(matches!(
            build_grid(l, &c, &d, &[1001, 1001]),
            Err(Error::GridTooLarge { .. })
        ));
        assert!(build_grid(l, &c, &d, &[1, 3]).is_err());
        assert!(build_grid(l, &[Coord::State(1), Coord::State(0)], &d, &[3, 3]).is_err());
    }

    #[test]
    fn matrix_examples() {
        let l = Layout::state_only(1);
        let g = build_grid(l, &[Coord::State(0)], &line(0.0, 1.0), &[2]).unwrap();
        let idx = enumerate_indices(1, 2);
        let a = build_moment_matrix(&g, &idx, Execution::Sequential).unwrap();
        assert_eq!(a, DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 0.0, 1.0, 0.0, 1.0]));

        let g = build_grid(l, &[Coord::State(0)], &line(-1.0, 1.0), &[3]).unwrap();
        let a = build_moment_matrix(&g, &[MultiIndex::new(vec![2])], Execution::Sequential).unwrap();
        assert_eq!(a.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 1.0]);
    }

    #[test]
    fn matrix_rejects_excluded_coordinate() {
        let l = Layout::occupation(1, 1);
        let d = BoxDomain::from_bounds(&[(0.0, 1.0), (0.0, 1.0)]).unwrap();
        let g = build_grid(l, &[Coord::Time, Coord::State(0)], &d, &[3, 3]).unwrap();
        let bad = MultiIndex::new(vec![0, 1, 0]);
        assert!(matches!(
            build_moment_matrix(&g, &[bad], Execution::Sequential),
            Err(Error::ExcludedCoordinate { .. })
        ));
    }

    #[test]
    fn dirac_on_grid_point_is_recovered() {
        let l = Layout::state_only(1);
        let dom = line(0.0, 1.0);
        let g = build_grid(l, &[Coord::State(0)], &dom, &[11]).unwrap();
        let y = dirac(l, dom, &[0.3], 4);
        let mu = fit_atomic(&y, &g, &FitOptions::default()).unwrap();
        assert!(mu.fit_error <= 1e-8, "{}", mu.fit_error);
        let s = extract_support(&mu, 1e-3).unwrap();
        assert_eq!(s.measure.grid.points().len(), 1);
        assert!((s.measure.grid.points()[0][0] - 0.3).abs() < 1e-12);
        assert!((s.measure.weights[0] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn dirac_between_two_points() {
        // brute force over the weight simplex: min over w1, w2 of the worst
        // moment mismatch of δ(0.5) against atoms at 0.4 and 0.6
        let l = Layout::state_only(1);
        let dom = line(0.0, 1.0);
        let g = build_grid(
            l,
            &[Coord::State(0)],
            &BoxDomain::from_bounds(&[(0.4, 0.6)]).unwrap(),
            &[2],
        )
        .unwrap();
        let y = dirac(l, dom, &[0.5], 2);
        let opts = FitOptions {
            scaling: Scaling::None,
            ..Default::default()
        };
        let mu = fit_atomic(&y, &g, &opts).unwrap();
        let mut brute = f64::INFINITY;
        for i in 0..=400 {
            for k in 0..=400 {
                let (w1, w2) = (i as f64 / 200.0, k as f64 / 200.0);
                let e = [1.0 - w1 - w2, 0.5 - 0.4 * w1 - 0.6 * w2, 0.25 - 0.16 * w1 - 0.36 * w2]
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()));
                brute = brute.min(e);
            }
        }
        assert!(mu.fit_error <= 0.01 + 1e-9);
        assert!(mu.fit_error <= brute + 1e-7 && mu.fit_error >= brute - 1e-3);
        assert!((moment_mismatch(&y, &mu).unwrap() - mu.fit_error).abs() < 1e-7);
    }

    #[test]
    fn threshold_examples() {
        let l = Layout::state_only(1);
        let g = build_grid(l, &[Coord::State(0)], &line(0.0, 1.0), &[3]).unwrap();
        let mu = AtomicMeasure {
            grid: g.clone(),
            weights: vec![0.5, 1e-9, 0.5],
            fit_error: 0.0,
            iterations: 0,
            residuals: Residuals::default(),
        };
        let s = extract_support(&mu, 1e-6).unwrap();
        assert_eq!(s.measure.grid.points(), &[vec![0.0], vec![1.0]]);
        assert!(s.lost_fraction() < 1e-8);

        let uniform = AtomicMeasure {
            weights: vec![0.2; 3],
            ..mu.clone()
        };
        assert_eq!(extract_support(&uniform, 0.999).unwrap().measure.weights.len(), 3);

        let zero = AtomicMeasure {
            weights: vec![0.0; 3],
            ..mu
        };
        assert!(matches!(extract_support(&zero, 1e-3), Err(Error::AllBelowThreshold(_))));
        assert!(extract_support(&uniform, 1.0).is_err());
    }

    #[test]
    fn marginal_index_examples() {
        let l = Layout::occupation(2, 1);
        let got = marginal_indices(l, Coord::State(0), 2).unwrap();
        let want: Vec<MultiIndex> = [
            [0, 0, 0, 0],
            [1, 0, 0, 0],
            [0, 0, 1, 0],
            [2, 0, 0, 0],
            [1, 0, 1, 0],
            [0, 0, 2, 0],
        ]
        .iter()
        .map(|e| MultiIndex::new(e.to_vec()))
        .collect();
        assert_eq!(got, want);
        assert_eq!(marginal_indices(l, Coord::Control(0), 8).unwrap().len(), 45);
        assert!(marginal_indices(l, Coord::Time, 8).is_err());
    }

    #[test]
    fn density_baseline_examples() {
        use crate::oracle::{occupation_moments, QuadratureOptions};
        let dom = BoxDomain::from_bounds(&[(0.0, 1.0), (-1.0, 1.0)]).unwrap();
        let ramp = SampledProcess::new(vec![0.0, 1.0], vec![vec![], vec![]], vec![vec![0.0], vec![1.0]]).unwrap();
        let y = occupation_moments(&ramp, &dom, 8, QuadratureOptions::default()).unwrap();
        let fit = polynomial_density_baseline(&y, Coord::State(0), 2).unwrap();
        for (c, want) in fit.coefficients.iter().zip([0.0, 1.0, 0.0]) {
            assert!((c - want).abs() < 1e-6, "{:?}", fit.coefficients);
        }
        let flat = SampledProcess::new(vec![0.0, 1.0], vec![vec![], vec![]], vec![vec![0.3], vec![0.3]]).unwrap();
        let y = occupation_moments(&flat, &dom, 8, QuadratureOptions::default()).unwrap();
        let fit = polynomial_density_baseline(&y, Coord::State(0), 3).unwrap();
        assert!((fit.coefficients[0] - 0.3).abs() < 1e-6);
        assert!(fit.coefficients[1..].iter().all(|c| c.abs() < 1e-5));
    }

    #[test]
    fn assemble_diagonal() {
        let g = build_grid(
            Layout::occupation(1, 0),
            &[Coord::Time, Coord::State(0)],
            &BoxDomain::from_bounds(&[(0.0, 1.0), (0.0, 1.0)]).unwrap(),
            &[3, 3],
        )
        .unwrap();
        let series = CoordinateSeries {
            coord: Coord::State(0),
            interval: Interval::new(0.0, 1.0),
            points: (0..=10)
                .map(|k| WayPoint {
                    time: k as f64 / 10.0,
                    value: k as f64 / 10.0,
                    weight: 0.1,
                })
                .collect(),
            fit_error: 0.0,
            fitted_mass: 1.0,
            retained_mass: 1.0,
            multimodal_cells: vec![],
            support: AtomicMeasure {
                grid: g,
                weights: vec![0.0; 9],
                fit_error: 0.0,
                iterations: 0,
                residuals: Residuals::default(),
            },
        };
        let r = assemble_process(std::slice::from_ref(&series), 21, None).unwrap();
        for k in 0..21 {
            assert!((r.process.states()[k][0] - r.process.times()[k]).abs() < 1e-12);
        }
        // duplicate times collapse to the weighted mean
        let mut dup = series.clone();
        dup.points = vec![
            WayPoint {
                time: 0.0,
                value: 0.0,
                weight: 1.0,
            },
            WayPoint {
                time: 1.0,
                value: 0.2,
                weight: 1.0,
            },
            WayPoint {
                time: 1.0,
                value: 0.8,
                weight: 3.0,
            },
        ];
        let r = assemble_process(&[dup], 3, None).unwrap();
        assert!((r.process.states()[2][0] - 0.65).abs() < 1e-12);
        assert!(assemble_process(&[], 3, None).is_err());
    }
}
