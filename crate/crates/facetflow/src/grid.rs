//! Uniform rectangular grids, nodal scalar fields, and boundary data.
//!
//! Grids are node-centered: an axis with `c` cells carries `c + 1` nodes at
//! positions `i·h`. Fields are immutable snapshots; the solver produces a
//! fresh field per time level.

use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimension must be 1, 2, or 3, got {0}")]
    BadDim(usize),
    #[error("axis {axis} needs at least one cell and positive extent")]
    BadAxis { axis: usize },
    #[error("total node count {total} exceeds the configured cap {cap}")]
    TooManyNodes { total: usize, cap: usize },
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("field contains a non-finite value at node {0}")]
    NonFinite(usize),
}

pub const DEFAULT_NODE_CAP: usize = 2_000_000;

/// Uniform rectangular grid in 1–3 dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    /// cells per axis (inactive axes hold 1)
    pub cells: [usize; 3],
    /// physical extent per axis
    pub extent: [f64; 3],
    /// spacing per axis, `extent / cells`
    pub h: [f64; 3],
    /// nodes per axis, `cells + 1` on active axes, 1 otherwise
    pub nodes: [usize; 3],
}

impl Grid {
    pub fn new(dim: usize, cells: &[usize], extent: &[f64]) -> Result<Self, GridError> {
        Self::with_cap(dim, cells, extent, DEFAULT_NODE_CAP)
    }

    pub fn with_cap(
        dim: usize,
        cells: &[usize],
        extent: &[f64],
        cap: usize,
    ) -> Result<Self, GridError> {
        if !(1..=3).contains(&dim) {
            return Err(GridError::BadDim(dim));
        }
        let mut c = [1usize; 3];
        let mut e = [1.0f64; 3];
        let mut h = [1.0f64; 3];
        let mut n = [1usize; 3];
        let mut total = 1usize;
        for a in 0..dim {
            let ca = *cells.get(a).ok_or(GridError::BadAxis { axis: a })?;
            let ea = *extent.get(a).ok_or(GridError::BadAxis { axis: a })?;
            if ca == 0 || !(ea > 0.0) {
                return Err(GridError::BadAxis { axis: a });
            }
            c[a] = ca;
            e[a] = ea;
            h[a] = ea / ca as f64;
            n[a] = ca + 1;
            total = total.saturating_mul(n[a]);
        }
        if total > cap {
            return Err(GridError::TooManyNodes { total, cap });
        }
        Ok(Grid { dim, cells: c, extent: e, h, nodes: n })
    }

    pub fn node_count(&self) -> usize {
        self.nodes[0] * self.nodes[1] * self.nodes[2]
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.nodes[0] * (iy + self.nodes[1] * iz)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let ix = idx % self.nodes[0];
        let rest = idx / self.nodes[0];
        let iy = rest % self.nodes[1];
        let iz = rest / self.nodes[1];
        [ix, iy, iz]
    }

    pub fn position(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        [c[0] as f64 * self.h[0], c[1] as f64 * self.h[1], c[2] as f64 * self.h[2]]
    }

    /// True iff the node lies on the spatial boundary.
    pub fn is_boundary(&self, idx: usize) -> bool {
        let c = self.coords(idx);
        (0..self.dim).any(|a| c[a] == 0 || c[a] == self.nodes[a] - 1)
    }

    /// Node volume cell with trapezoidal boundary weights, for quadrature.
    pub fn node_weight(&self, idx: usize) -> f64 {
        let c = self.coords(idx);
        let mut w = 1.0;
        for a in 0..self.dim {
            w *= self.h[a]
                * if c[a] == 0 || c[a] == self.nodes[a] - 1 { 0.5 } else { 1.0 };
        }
        w
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim).map(|a| self.extent[a]).product()
    }
}

/// Scalar field: one value per node, stamped with its time level.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScalarField {
    pub grid: Arc<Grid>,
    pub values: Vec<f64>,
    pub time: f64,
}

impl ScalarField {
    pub fn constant(grid: &Arc<Grid>, value: f64, time: f64) -> Self {
        ScalarField { grid: grid.clone(), values: vec![value; grid.node_count()], time }
    }

    pub fn from_fn(grid: &Arc<Grid>, time: f64, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.node_count())
            .map(|idx| f(&grid.position(idx)[..grid.dim]))
            .collect();
        ScalarField { grid: grid.clone(), values, time }
    }

    pub fn validate_finite(&self) -> Result<(), GridError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(i) => Err(GridError::NonFinite(i)),
            None => Ok(()),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }

    /// Node-centered gradient: central differences in the interior,
    /// 3-point one-sided stencils on the boundary (second-order throughout).
    pub fn gradient(&self) -> Vec<Vec<f64>> {
        let g = &self.grid;
        let n = g.node_count();
        let mut out = vec![vec![0.0; g.dim]; n];
        let strides = [1usize, g.nodes[0], g.nodes[0] * g.nodes[1]];
        for idx in 0..n {
            let c = g.coords(idx);
            for a in 0..g.dim {
                let s = strides[a];
                let last = g.nodes[a] - 1;
                let h = g.h[a];
                let v = &self.values;
                // The one-sided stencils are grouped as differences so that
                // constant fields produce an exact zero.
                let d = if c[a] == 0 {
                    (3.0 * (v[idx + s] - v[idx]) - (v[idx + 2 * s] - v[idx + s])) / (2.0 * h)
                } else if c[a] == last {
                    (3.0 * (v[idx] - v[idx - s]) - (v[idx - s] - v[idx - 2 * s])) / (2.0 * h)
                } else {
                    (v[idx + s] - v[idx - s]) / (2.0 * h)
                };
                out[idx][a] = d;
            }
        }
        out
    }
}

/// Prescribed data on the parabolic boundary (initial slice plus lateral
/// boundary of the space-time box).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum BoundaryData {
    /// `u_* ≡ c`
    Constant(f64),
    /// `u_*(x) = a + b·x` (time-independent)
    Affine { a: f64, b: [f64; 3] },
    /// samples over the lateral boundary: per boundary node, values on a
    /// uniform time grid `0 = t_0 < … < t_m = t_end`, linearly interpolated
    /// in time; the initial slice is carried separately by [`InitialData`].
    Tabulated { t_end: f64, steps: usize, boundary_nodes: Vec<usize>, values: Vec<Vec<f64>> },
}

impl BoundaryData {
    /// Evaluate at a spatial position and time. Tabulated data requires the
    /// node index instead, see [`BoundaryData::value_at_node`].
    pub fn value(&self, x: &[f64], t: f64) -> Option<f64> {
        match self {
            BoundaryData::Constant(c) => Some(*c),
            BoundaryData::Affine { a, b } => {
                Some(a + x.iter().zip(b.iter()).map(|(xi, bi)| xi * bi).sum::<f64>())
            }
            BoundaryData::Tabulated { .. } => {
                let _ = (x, t);
                None
            }
        }
    }

    /// Boundary value at a grid node.
    pub fn value_at_node(&self, grid: &Grid, idx: usize, t: f64) -> f64 {
        match self {
            BoundaryData::Constant(c) => *c,
            BoundaryData::Affine { a, b } => {
                let pos = grid.position(idx);
                a + (0..grid.dim).map(|d| pos[d] * b[d]).sum::<f64>()
            }
            BoundaryData::Tabulated { t_end, steps, boundary_nodes, values } => {
                let k = boundary_nodes
                    .binary_search(&idx)
                    .unwrap_or_else(|_| panic!("node {idx} is not a boundary node"));
                let series = &values[k];
                if *steps == 0 {
                    return series[0];
                }
                let dt = t_end / *steps as f64;
                let s = (t / dt).clamp(0.0, *steps as f64);
                let i = (s.floor() as usize).min(*steps - 1);
                let frac = s - i as f64;
                series[i] * (1.0 - frac) + series[i + 1] * frac
            }
        }
    }

    /// Is the data constant in time?
    pub fn is_static(&self) -> bool {
        match self {
            BoundaryData::Constant(_) | BoundaryData::Affine { .. } => true,
            BoundaryData::Tabulated { values, .. } => values
                .iter()
                .all(|series| series.iter().all(|v| (v - series[0]).abs() == 0.0)),
        }
    }

    /// Sup norm of the data over the lateral boundary for `t ∈ [0, t_end]`.
    pub fn sup_norm(&self, grid: &Grid, t_end: f64) -> f64 {
        match self {
            BoundaryData::Constant(c) => c.abs(),
            BoundaryData::Affine { .. } => {
                let mut m: f64 = 0.0;
                for idx in 0..grid.node_count() {
                    if grid.is_boundary(idx) {
                        m = m.max(self.value_at_node(grid, idx, 0.0).abs());
                    }
                }
                let _ = t_end;
                m
            }
            BoundaryData::Tabulated { values, .. } => values
                .iter()
                .flat_map(|s| s.iter())
                .fold(0.0f64, |m, v| m.max(v.abs())),
        }
    }

    /// Extremes (min, max) of the data over the lateral boundary.
    pub fn range(&self, grid: &Grid, t_end: f64) -> (f64, f64) {
        match self {
            BoundaryData::Constant(c) => (*c, *c),
            BoundaryData::Affine { .. } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for idx in 0..grid.node_count() {
                    if grid.is_boundary(idx) {
                        let v = self.value_at_node(grid, idx, 0.0);
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                }
                let _ = t_end;
                (lo, hi)
            }
            BoundaryData::Tabulated { values, .. } => {
                let mut lo = f64::INFINITY;
                let mut hi = f64::NEG_INFINITY;
                for s in values {
                    for v in s {
                        lo = lo.min(*v);
                        hi = hi.max(*v);
                    }
                }
                (lo, hi)
            }
        }
    }
}

/// Initial slice of the parabolic boundary data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum InitialData {
    /// Transfinite (multilinear boolean-sum) interpolation of the boundary
    /// values at `t = 0`; reproduces constants and affine data exactly.
    FromBoundary,
    /// Smooth product-of-sines bump `a·Π sin²(πxᵢ/Lᵢ)`, vanishing on the
    /// boundary.
    Bump { amplitude: f64 },
    /// Explicit nodal values.
    Field(Vec<f64>),
}

impl InitialData {
    pub fn build(&self, grid: &Arc<Grid>, bc: &BoundaryData) -> ScalarField {
        match self {
            InitialData::Field(values) => {
                assert_eq!(values.len(), grid.node_count(), "initial field size mismatch");
                ScalarField { grid: grid.clone(), values: clone_vals(values), time: 0.0 }
            }
            InitialData::Bump { amplitude } => {
                let a = *amplitude;
                let dims = grid.dim;
                let ext = grid.extent;
                ScalarField::from_fn(grid, 0.0, move |x| {
                    let mut v = a;
                    for d in 0..dims {
                        let s = (std::f64::consts::PI * x[d] / ext[d]).sin();
                        v *= s * s;
                    }
                    v
                })
            }
            InitialData::FromBoundary => transfinite(grid, bc),
        }
    }
}

fn clone_vals(v: &[f64]) -> Vec<f64> {
    v.to_vec()
}

/// Boolean-sum transfinite interpolation of the boundary values at `t = 0`.
/// In 1D this is the linear interpolant of the endpoint values; in higher
/// dimensions the inclusion–exclusion over axis projections.
fn transfinite(grid: &Arc<Grid>, bc: &BoundaryData) -> ScalarField {
    let dim = grid.dim;
    let mut values = vec![0.0; grid.node_count()];
    // Boundary values are needed at projected points, all of which are
    // nodes because projections snap coordinates to axis ends.
    let bval = |c: [usize; 3]| -> f64 {
        let idx = grid.index(c[0], c[1], c[2]);
        bc.value_at_node(grid, idx, 0.0)
    };
    for idx in 0..grid.node_count() {
        if grid.is_boundary(idx) {
            values[idx] = bc.value_at_node(grid, idx, 0.0);
            continue;
        }
        let c = grid.coords(idx);
        let xi: Vec<f64> = (0..dim).map(|a| c[a] as f64 / (grid.nodes[a] - 1) as f64).collect();
        // Boolean sum over nonempty axis subsets with alternating sign.
        let mut total = 0.0;
        for mask in 1u32..(1 << dim) {
            let sign = if mask.count_ones() % 2 == 1 { 1.0 } else { -1.0 };
            // blend of boundary values with each axis in the mask snapped
            // to its two ends, weighted (1−ξ) and ξ
            let mut acc = 0.0;
            let axes: Vec<usize> = (0..dim).filter(|a| mask & (1 << a) != 0).collect();
            let m = axes.len();
            for corner in 0u32..(1 << m) {
                let mut cc = c;
                let mut w = 1.0;
                for (bit, &a) in axes.iter().enumerate() {
                    let high = corner & (1 << bit) != 0;
                    cc[a] = if high { grid.nodes[a] - 1 } else { 0 };
                    w *= if high { xi[a] } else { 1.0 - xi[a] };
                }
                acc += w * bval(cc);
            }
            total += sign * acc;
        }
        values[idx] = total;
    }
    ScalarField { grid: grid.clone(), values, time: 0.0 }
}
