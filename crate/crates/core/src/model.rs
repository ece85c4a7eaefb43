//! Driving diffusions and exact path simulation.
//!
//! `Y` is either a standard `d`-dimensional Brownian motion `W` or the
//! coordinate-wise geometric Brownian motion `Y_k = exp(W_k - t/2)`.
//! Paths store `W` only; `Y` is derived on demand.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FracnetError, Result};
use crate::rng::{StreamKey, DOMAIN_PATHS};
use crate::timenet::TimeNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    BrownianMotion,
    GeometricBrownianMotion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiffusionModel {
    kind: ModelKind,
    dim: usize,
}

impl DiffusionModel {
    pub fn new(kind: ModelKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(FracnetError::invalid("model dimension must be at least 1"));
        }
        Ok(DiffusionModel { kind, dim })
    }

    pub fn brownian(dim: usize) -> Result<Self> {
        Self::new(ModelKind::BrownianMotion, dim)
    }

    pub fn geometric(dim: usize) -> Result<Self> {
        Self::new(ModelKind::GeometricBrownianMotion, dim)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_geometric(&self) -> bool {
        self.kind == ModelKind::GeometricBrownianMotion
    }

    /// Start value `Y_0`.
    pub fn start(&self) -> Vec<f64> {
        match self.kind {
            ModelKind::BrownianMotion => vec![0.0; self.dim],
            ModelKind::GeometricBrownianMotion => vec![1.0; self.dim],
        }
    }

    /// Checks that `y` lies in the state space `E`.
    pub fn check_state(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.dim {
            return Err(FracnetError::invalid(format!(
                "state has {} coordinates, model dimension is {}",
                y.len(),
                self.dim
            )));
        }
        if self.is_geometric() {
            if let Some(bad) = y.iter().find(|v| !(**v > 0.0)) {
                return Err(FracnetError::Domain(format!(
                    "geometric Brownian motion state must be positive, got {bad}"
                )));
            }
        }
        Ok(())
    }

    /// Diffusion matrix `σ(y)` in `dY = σ(Y) dW`.
    pub fn sigma(&self, y: &[f64]) -> Result<DMatrix<f64>> {
        self.check_state(y)?;
        Ok(match self.kind {
            ModelKind::BrownianMotion => DMatrix::identity(self.dim, self.dim),
            ModelKind::GeometricBrownianMotion => {
                DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(y))
            }
        })
    }

    /// Diagonal entry `σ_kk(y)`; σ is diagonal for both models.
    #[inline]
    pub fn sigma_diag(&self, y_k: f64) -> f64 {
        match self.kind {
            ModelKind::BrownianMotion => 1.0,
            ModelKind::GeometricBrownianMotion => y_k,
        }
    }

    /// Coordinate map from `W_t` to `Y_t`.
    #[inline]
    pub fn y_coord(&self, t: f64, w: f64) -> f64 {
        match self.kind {
            ModelKind::BrownianMotion => w,
            ModelKind::GeometricBrownianMotion => (w - 0.5 * t).exp(),
        }
    }

    pub fn map_w_to_y(&self, t: f64, w: &[f64]) -> Vec<f64> {
        w.iter().map(|&x| self.y_coord(t, x)).collect()
    }

    pub fn map_w_to_y_into(&self, t: f64, w: &[f64], y: &mut [f64]) {
        for (yk, &wk) in y.iter_mut().zip(w) {
            *yk = self.y_coord(t, wk);
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnotTag {
    pub net: bool,
    pub quadrature: bool,
}

/// Strictly increasing knots on `[0, 1]` including both endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    knots: Vec<f64>,
    tags: Vec<KnotTag>,
}

/// Default number of dyadic horizon bands `1 - 2^{-j}`.
pub const DEFAULT_HORIZON_BANDS: u32 = 40;

impl TimeGrid {
    pub fn new(knots: Vec<f64>, tags: Vec<KnotTag>) -> Result<Self> {
        if knots.len() != tags.len() {
            return Err(FracnetError::invalid("knots and tags differ in length"));
        }
        if knots.len() < 2 || knots[0] != 0.0 || *knots.last().unwrap() != 1.0 {
            return Err(FracnetError::invalid("grid must start at 0 and end at 1"));
        }
        if let Some(i) = knots.windows(2).position(|w| !(w[1] > w[0])) {
            return Err(FracnetError::invalid(format!(
                "grid knots not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(TimeGrid { knots, tags })
    }

    pub fn builder() -> TimeGridBuilder {
        TimeGridBuilder::default()
    }

    /// Grid containing exactly the knots of `net`.
    pub fn from_net(net: &TimeNet) -> Self {
        Self::builder().net(net).build()
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn tags(&self) -> &[KnotTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.knots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.knots.is_empty()
    }

    /// Index of the knot equal to `t` (within 1e-13).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.knots.partition_point(|&k| k < t - 1e-13);
        (i < self.knots.len() && (self.knots[i] - t).abs() <= 1e-13).then_some(i)
    }

    /// Index of the first knot `>= t` (with 1e-12 slack), if any.
    pub fn first_at_or_after(&self, t: f64) -> Option<usize> {
        let i = self.knots.partition_point(|&k| k < t - 1e-12);
        (i < self.knots.len()).then_some(i)
    }

    /// Grid indices of every knot of `net`.
    pub fn locate(&self, net: &TimeNet) -> Result<Vec<usize>> {
        net.knots()
            .iter()
            .map(|&t| {
                self.index_of(t)
                    .ok_or(FracnetError::MissingKnot { time: t })
            })
            .collect()
    }

    pub fn contains_net(&self, net: &TimeNet) -> bool {
        self.locate(net).is_ok()
    }
}

#[derive(Debug, Clone, Default)]
pub struct TimeGridBuilder {
    net_knots: Vec<f64>,
    quad_knots: Vec<f64>,
}

impl TimeGridBuilder {
    pub fn net(mut self, net: &TimeNet) -> Self {
        self.net_knots.extend_from_slice(net.knots());
        self
    }

    pub fn quadrature_knots<I: IntoIterator<Item = f64>>(mut self, knots: I) -> Self {
        self.quad_knots.extend(knots);
        self
    }

    /// Uniform knots `i/m`.
    pub fn uniform(self, m: usize) -> Self {
        let m = m.max(1);
        self.quadrature_knots((0..=m).map(|i| i as f64 / m as f64))
    }

    /// Geometric refinement toward the horizon: the knots `1 - 2^{-j}`,
    /// `j = 1..=bands`, with each dyadic band split into `per_band`
    /// equal pieces.
    pub fn horizon_refinement(self, bands: u32, per_band: usize) -> Self {
        let per_band = per_band.max(1);
        let mut knots = Vec::with_capacity(bands as usize * per_band + 1);
        for j in 0..bands {
            let lo = 1.0 - 0.5f64.powi(j as i32);
            let hi = 1.0 - 0.5f64.powi(j as i32 + 1);
            for k in 0..per_band {
                knots.push(lo + (hi - lo) * k as f64 / per_band as f64);
            }
        }
        knots.push(1.0 - 0.5f64.powi(bands as i32));
        self.quadrature_knots(knots)
    }

    pub fn build(self) -> TimeGrid {
        let mut all: Vec<(f64, KnotTag)> = Vec::new();
        all.push((0.0, KnotTag::default()));
        all.push((1.0, KnotTag::default()));
        all.extend(self.net_knots.iter().map(|&t| {
            (
                t,
                KnotTag {
                    net: true,
                    quadrature: false,
                },
            )
        }));
        all.extend(self.quad_knots.iter().map(|&t| {
            (
                t,
                KnotTag {
                    net: false,
                    quadrature: true,
                },
            )
        }));
        all.retain(|(t, _)| (0.0..=1.0).contains(t));
        all.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut knots: Vec<f64> = Vec::with_capacity(all.len());
        let mut tags: Vec<KnotTag> = Vec::with_capacity(all.len());
        for (t, tag) in all {
            if knots.last() == Some(&t) {
                let last = tags.last_mut().unwrap();
                last.net |= tag.net;
                last.quadrature |= tag.quadrature;
            } else {
                knots.push(t);
                tags.push(tag);
            }
        }
        TimeGrid { knots, tags }
    }
}

/// Upper bound on the memory a single [`PathBatch`] may request.
pub const MAX_BATCH_BYTES: u64 = 4 << 30;

/// Generates Brownian paths on a grid; path `i` depends only on
/// `(seed, i)`.
#[derive(Debug, Clone)]
pub struct PathGenerator {
    key: StreamKey,
    sqrt_dt: Vec<f64>,
    dim: usize,
}

impl PathGenerator {
    pub fn new(grid: &TimeGrid, dim: usize, seed: u64) -> Self {
        let sqrt_dt = grid
            .knots()
            .windows(2)
            .map(|w| (w[1] - w[0]).sqrt())
            .collect();
        PathGenerator {
            key: StreamKey::new(seed, DOMAIN_PATHS),
            sqrt_dt,
            dim,
        }
    }

    pub fn values_per_path(&self) -> usize {
        (self.sqrt_dt.len() + 1) * self.dim
    }

    /// Writes `W` at every knot (knot-major, coordinate-minor) into `out`.
    pub fn fill(&self, path: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.values_per_path());
        let mut rng = self.key.stream(path);
        let d = self.dim;
        out[..d].fill(0.0);
        for (k, &s) in self.sqrt_dt.iter().enumerate() {
            for c in 0..d {
                let z: f64 = StandardNormal.sample(&mut rng);
                out[(k + 1) * d + c] = out[k * d + c] + s * z;
            }
        }
    }
}

/// Seeded batch of Brownian paths sampled at the knots of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    grid: TimeGrid,
    dim: usize,
    n_paths: usize,
    seed: u64,
    w: Vec<f64>,
}

impl PathBatch {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Brownian values of one path, knot-major.
    pub fn path(&self, i: usize) -> PathView<'_> {
        let stride = self.grid.len() * self.dim;
        PathView {
            grid: &self.grid,
            dim: self.dim,
            w: &self.w[i * stride..(i + 1) * stride],
        }
    }

    pub fn w_at(&self, path: usize, knot: usize) -> &[f64] {
        self.path(path).w_at(knot)
    }

    pub fn y_at(&self, model: &DiffusionModel, path: usize, knot: usize) -> Vec<f64> {
        self.path(path).y_at(model, knot)
    }
}

/// Borrowed view on one path.
#[derive(Debug, Clone, Copy)]
pub struct PathView<'a> {
    pub grid: &'a TimeGrid,
    pub dim: usize,
    pub w: &'a [f64],
}

impl<'a> PathView<'a> {
    pub fn w_at(&self, knot: usize) -> &'a [f64] {
        &self.w[knot * self.dim..(knot + 1) * self.dim]
    }

    pub fn y_at(&self, model: &DiffusionModel, knot: usize) -> Vec<f64> {
        model.map_w_to_y(self.grid.knots()[knot], self.w_at(knot))
    }
}

pub fn simulate_paths(
    model: &DiffusionModel,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<PathBatch> {
    if n_paths == 0 {
        return Err(FracnetError::invalid("n_paths must be at least 1"));
    }
    let generator = PathGenerator::new(grid, model.dim(), seed);
    let stride = generator.values_per_path();
    let requested = (n_paths as u64)
        .saturating_mul(stride as u64)
        .saturating_mul(8);
    if requested > MAX_BATCH_BYTES {
        return Err(FracnetError::Resource {
            requested,
            available: MAX_BATCH_BYTES,
        });
    }
    let mut w: Vec<f64> = Vec::new();
    w.try_reserve_exact(n_paths * stride)
        .map_err(|_| FracnetError::Resource {
            requested,
            available: MAX_BATCH_BYTES,
        })?;
    w.resize(n_paths * stride, 0.0);
    w.par_chunks_mut(stride)
        .enumerate()
        .for_each(|(i, out)| generator.fill(i as u64, out));
    Ok(PathBatch {
        grid: grid.clone(),
        dim: model.dim(),
        n_paths,
        seed,
        w,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigma_matches_model() {
        let bm = DiffusionModel::brownian(2).unwrap();
        assert_eq!(bm.sigma(&[5.0, -3.0]).unwrap(), DMatrix::identity(2, 2));
        let gbm = DiffusionModel::geometric(2).unwrap();
        let s = gbm.sigma(&[2.0, 3.0]).unwrap();
        assert_eq!(s, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]));
        let one = DiffusionModel::geometric(1).unwrap();
        assert_eq!(one.sigma(&[1.0]).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn sigma_rejects_non_positive_gbm_state() {
        let gbm = DiffusionModel::geometric(2).unwrap();
        assert!(matches!(
            gbm.sigma(&[1.0, 0.0]),
            Err(FracnetError::Domain(_))
        ));
        assert!(matches!(
            gbm.sigma(&[-1.0, 2.0]),
            Err(FracnetError::Domain(_))
        ));
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(DiffusionModel::brownian(0).is_err());
    }

    #[test]
    fn w_to_y_map() {
        let gbm = DiffusionModel::geometric(3).unwrap();
        assert_eq!(gbm.map_w_to_y(0.0, &[0.0; 3]), vec![1.0; 3]);
        assert_eq!(gbm.map_w_to_y(1.0, &[0.5]), vec![1.0]);
        let bm = DiffusionModel::brownian(2).unwrap();
        assert_eq!(bm.map_w_to_y(0.37, &[1.5, -2.0]), vec![1.5, -2.0]);
    }

    #[test]
    fn grid_builder_merges_tags() {
        let net = TimeNet::equidistant(4).unwrap();
        let grid = TimeGrid::builder()
            .net(&net)
            .horizon_refinement(3, 1)
            .build();
        assert_eq!(grid.knots(), &[0.0, 0.25, 0.5, 0.75, 0.875, 1.0]);
        let i = grid.index_of(0.75).unwrap();
        assert!(grid.tags()[i].net && grid.tags()[i].quadrature);
        assert!(!grid.tags()[grid.index_of(0.875).unwrap()].net);
        assert!(grid.contains_net(&net));
        assert!(!grid.contains_net(&TimeNet::equidistant(3).unwrap()));
    }

    #[test]
    fn invalid_grids_rejected() {
        let tags = vec![KnotTag::default(); 3];
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.9], tags.clone()).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 0.5], tags.clone()).is_err());
        assert!(TimeGrid::new(vec![0.0, 0.5, 1.0], tags).is_ok());
    }

    #[test]
    fn paths_start_at_zero_and_replay() {
        let model = DiffusionModel::brownian(2).unwrap();
        let grid = TimeGrid::from_net(&TimeNet::equidistant(8).unwrap());
        let a = simulate_paths(&model, &grid, 50, 11).unwrap();
        let b = simulate_paths(&model, &grid, 50, 11).unwrap();
        assert_eq!(a, b);
        for i in 0..50 {
            assert_eq!(a.w_at(i, 0), &[0.0, 0.0]);
        }
        let c = simulate_paths(&model, &grid, 50, 12).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn prefix_of_batch_is_independent_of_batch_size() {
        let model = DiffusionModel::brownian(1).unwrap();
        let grid = TimeGrid::from_net(&TimeNet::equidistant(5).unwrap());
        let small = simulate_paths(&model, &grid, 10, 3).unwrap();
        let large = simulate_paths(&model, &grid, 100, 3).unwrap();
        for i in 0..10 {
            assert_eq!(small.path(i).w, large.path(i).w);
        }
    }

    #[test]
    fn oversized_batch_reports_sizes() {
        let model = DiffusionModel::brownian(1).unwrap();
        let grid = TimeGrid::from_net(&TimeNet::equidistant(1000).unwrap());
        match simulate_paths(&model, &grid, 1 << 30, 0) {
            Err(FracnetError::Resource {
                requested,
                available,
            }) => {
                assert!(requested > available);
                assert_eq!(available, MAX_BATCH_BYTES);
            }
            other => panic!("expected resource error, got {other:?}"),
        }
    }
}
