//! Tensor grids over `(x_check, x)`, the Brownian quadrature used for
//! conditional expectations, and the interpolation and differencing
//! primitives shared by the solver and the simulator.

use serde::{Deserialize, Serialize};

use crate::error::{FbsdeError, Result};
use crate::quadrature::gauss_hermite_normal;

/// Largest factor dimension the tensor-grid solver accepts.
pub const MAX_FACTOR_DIM: usize = 3;
/// Multiple of `sup|sigma| sqrt(T)` the wealth axis must extend on each
/// side of the initial wealth.
pub const X_MARGIN_SIGMAS: f64 = 6.0;

const SNAP_TOL: f64 = 1e-9;

/// A uniform axis `lo = n_0 < ... < n_{count-1} = hi`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count < 3 {
            return Err(FbsdeError::InvalidGrid(format!("axis needs at least 3 nodes, got {count}")));
        }
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(FbsdeError::InvalidGrid(format!("axis bounds must satisfy lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi, count })
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.count - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.hi
        } else {
            self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.count).map(|i| self.node(i)).collect()
    }

    pub fn scaled(&self, factor: f64) -> Axis {
        Axis {
            lo: self.lo * factor,
            hi: self.hi * factor,
            count: self.count,
        }
    }

    /// Cell index and local coordinate of `v`. The local coordinate falls
    /// outside `[0, 1]` beyond the axis, which turns the interpolant into a
    /// linear extrapolation of the boundary cell.
    pub fn locate(&self, v: f64) -> (usize, f64) {
        let mut s = (v - self.lo) / self.step();
        let r = s.round();
        if (s - r).abs() < SNAP_TOL {
            s = r;
        }
        let i = if s <= 0.0 {
            0
        } else {
            (s.floor() as usize).min(self.count - 2)
        };
        (i, s - i as f64)
    }
}

/// Resolution and domain of a solve, as written in run configurations.
/// Factor axes are given in original (unscaled) coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub horizon: f64,
    pub steps: usize,
    pub x: Axis,
    pub xtilde: Vec<Axis>,
    pub quad_nodes: usize,
    #[serde(default)]
    pub x0: f64,
    #[serde(default)]
    pub xtilde0: Option<Vec<f64>>,
}

/// Time grid, spatial axes in scaled coordinates, and the tensor
/// Gauss-Hermite rule over the `d` Brownian directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub horizon: f64,
    pub steps: usize,
    pub xcheck_axes: Vec<Axis>,
    pub x_axis: Axis,
    pub quad_nodes: usize,
    pub brownian_dim: usize,
    #[serde(skip)]
    pub quad: TensorRule,
}

/// Tensor Gauss-Hermite rule for `N(0, I_d)`, stored point by point.
/// Point `q` and point `len - 1 - q` are negatives of each other.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorRule {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl TensorRule {
    pub fn new(m: usize, dim: usize) -> Self {
        let (x, w) = gauss_hermite_normal(m);
        let len = m.pow(dim as u32);
        let mut points = Vec::with_capacity(len * dim);
        let mut weights = Vec::with_capacity(len);
        for q in 0..len {
            let mut rest = q;
            let mut digits = vec![0; dim];
            for slot in digits.iter_mut().rev() {
                *slot = rest % m;
                rest /= m;
            }
            let mut wq = 1.0;
            for &i in &digits {
                points.push(x[i]);
                wq *= w[i];
            }
            weights.push(wq);
        }
        Self { dim, points, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, q: usize) -> &[f64] {
        &self.points[q * self.dim..(q + 1) * self.dim]
    }
}

/// Factor corners of a multilinear stencil: flat offsets of the wealth
/// index 0 and their weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactorStencil {
    offsets: [usize; 1 << MAX_FACTOR_DIM],
    weights: [f64; 1 << MAX_FACTOR_DIM],
    len: usize,
}

/// Builds the solver grid at scale `epsilon`. `sigma_bound` bounds the
/// wealth volatility and drives the margin rule on the wealth axis.
pub fn build_grid(
    spec: &GridSpec,
    dim_n: usize,
    dim_d: usize,
    epsilon: f64,
    sigma_bound: f64,
) -> Result<Grid> {
    if dim_n == 0 || dim_n > MAX_FACTOR_DIM {
        return Err(FbsdeError::InvalidGrid(format!(
            "factor dimension {dim_n} outside 1..={MAX_FACTOR_DIM}"
        )));
    }
    if spec.xtilde.len() != dim_n {
        return Err(FbsdeError::InvalidGrid(format!(
            "{} factor axes given for a {dim_n}-dimensional factor",
            spec.xtilde.len()
        )));
    }
    if !(spec.horizon.is_finite() && spec.horizon > 0.0) {
        return Err(FbsdeError::InvalidGrid(format!("horizon must be > 0, got {}", spec.horizon)));
    }
    if spec.steps == 0 {
        return Err(FbsdeError::InvalidGrid("at least one time step is required".into()));
    }
    if spec.quad_nodes < 2 {
        return Err(FbsdeError::InvalidGrid(format!(
            "need at least 2 quadrature nodes, got {}",
            spec.quad_nodes
        )));
    }
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(FbsdeError::InvalidGrid(format!("epsilon must be > 0, got {epsilon}")));
    }
    let x_axis = Axis::new(spec.x.lo, spec.x.hi, spec.x.count)?;
    let mut xcheck_axes = Vec::with_capacity(dim_n);
    for a in &spec.xtilde {
        xcheck_axes.push(Axis::new(a.lo, a.hi, a.count)?.scaled(1.0 / epsilon));
    }
    let required = X_MARGIN_SIGMAS * sigma_bound * spec.horizon.sqrt();
    let margin = (spec.x0 - x_axis.lo).min(x_axis.hi - spec.x0);
    if !(margin >= required) {
        return Err(FbsdeError::DomainTooSmall {
            lo: x_axis.lo,
            hi: x_axis.hi,
            x0: spec.x0,
            margin,
            required,
        });
    }
    Ok(Grid {
        horizon: spec.horizon,
        steps: spec.steps,
        xcheck_axes,
        x_axis,
        quad_nodes: spec.quad_nodes,
        brownian_dim: dim_d,
        quad: TensorRule::new(spec.quad_nodes, dim_d),
    })
}

impl Grid {
    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.steps as f64
        }
    }

    pub fn dim_n(&self) -> usize {
        self.xcheck_axes.len()
    }

    /// Number of spatial nodes.
    pub fn len(&self) -> usize {
        self.factor_len() * self.x_axis.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn factor_len(&self) -> usize {
        self.xcheck_axes.iter().map(|a| a.count).product()
    }

    /// Restores the quadrature rule after deserialization.
    pub fn rebuild_quadrature(&mut self) {
        self.quad = TensorRule::new(self.quad_nodes, self.brownian_dim);
    }

    /// Axis indices of flat node `idx`; the wealth index is last.
    pub fn multi_index(&self, idx: usize) -> (Vec<usize>, usize) {
        let nx = self.x_axis.count;
        let ix = idx % nx;
        let mut rest = idx / nx;
        let mut out = vec![0; self.dim_n()];
        for (j, a) in self.xcheck_axes.iter().enumerate().rev() {
            out[j] = rest % a.count;
            rest /= a.count;
        }
        (out, ix)
    }

    /// Coordinates `(x_check, x)` of flat node `idx`.
    pub fn node(&self, idx: usize) -> (Vec<f64>, f64) {
        let (ic, ix) = self.multi_index(idx);
        let xc = ic
            .iter()
            .zip(&self.xcheck_axes)
            .map(|(&i, a)| a.node(i))
            .collect();
        (xc, self.x_axis.node(ix))
    }

    /// Flat stride of factor axis `j`; the wealth axis has stride 1.
    pub fn stride(&self, j: usize) -> usize {
        self.xcheck_axes[j + 1..].iter().map(|a| a.count).product::<usize>() * self.x_axis.count
    }

    /// Multilinear interpolation of node values at `(x_check, x)`, with
    /// linear extrapolation from the boundary cells.
    pub fn interpolate(&self, values: &[f64], xcheck: &[f64], x: f64) -> f64 {
        self.interpolate_at(values, &self.locate_factor(xcheck), x)
    }

    /// Factor-side part of the interpolation stencil at `x_check`.
    pub fn locate_factor(&self, xcheck: &[f64]) -> FactorStencil {
        let n = self.dim_n();
        let mut cell = [(0usize, 0.0f64); MAX_FACTOR_DIM];
        for (j, slot) in cell.iter_mut().enumerate().take(n) {
            let (i, w) = self.xcheck_axes[j].locate(xcheck[j]);
            *slot = (i * self.stride(j), w);
        }
        let mut st = FactorStencil {
            offsets: [0; 1 << MAX_FACTOR_DIM],
            weights: [0.0; 1 << MAX_FACTOR_DIM],
            len: 0,
        };
        for corner in 0..(1usize << n) {
            let mut weight = 1.0;
            let mut off = 0;
            for (j, &(base, w)) in cell.iter().enumerate().take(n) {
                off += base;
                if corner >> j & 1 == 1 {
                    weight *= w;
                    off += self.stride(j);
                } else {
                    weight *= 1.0 - w;
                }
            }
            if weight != 0.0 {
                st.offsets[st.len] = off;
                st.weights[st.len] = weight;
                st.len += 1;
            }
        }
        st
    }

    /// Completes the interpolation at wealth `x` for a located factor point.
    pub fn interpolate_at(&self, values: &[f64], st: &FactorStencil, x: f64) -> f64 {
        let (ix, wx) = self.x_axis.locate(x);
        let mut acc = 0.0;
        for c in 0..st.len {
            let off = st.offsets[c] + ix;
            let along = if wx == 0.0 {
                values[off]
            } else if wx == 1.0 {
                values[off + 1]
            } else {
                (1.0 - wx) * values[off] + wx * values[off + 1]
            };
            acc += st.weights[c] * along;
        }
        acc
    }

    /// [`Grid::interpolate_at`] on two node arrays sharing one stencil.
    pub fn interpolate_pair_at(&self, a: &[f64], b: &[f64], st: &FactorStencil, x: f64) -> (f64, f64) {
        let (ix, wx) = self.x_axis.locate(x);
        let (mut acc_a, mut acc_b) = (0.0, 0.0);
        for c in 0..st.len {
            let off = st.offsets[c] + ix;
            let w = st.weights[c];
            if wx == 0.0 {
                acc_a += w * a[off];
                acc_b += w * b[off];
            } else {
                acc_a += w * ((1.0 - wx) * a[off] + wx * a[off + 1]);
                acc_b += w * ((1.0 - wx) * b[off] + wx * b[off + 1]);
            }
        }
        (acc_a, acc_b)
    }

    /// Finite-difference derivative of node values along one axis: central
    /// inside, one-sided at the ends. `axis == dim_n()` is the wealth axis.
    pub fn difference(&self, values: &[f64], axis: usize) -> Vec<f64> {
        let (stride, a) = if axis == self.dim_n() {
            (1, self.x_axis)
        } else {
            (self.stride(axis), self.xcheck_axes[axis])
        };
        let h = a.step();
        let mut out = vec![0.0; values.len()];
        for (idx, o) in out.iter_mut().enumerate() {
            let i = (idx / stride) % a.count;
            *o = if i == 0 {
                (values[idx + stride] - values[idx]) / h
            } else if i + 1 == a.count {
                (values[idx] - values[idx - stride]) / h
            } else {
                (values[idx + stride] - values[idx - stride]) / (2.0 * h)
            };
        }
        out
    }
}
