//! Polar tensor grid on the annulus {r0 < r < 1}.
//!
//! Angular direction: uniform nodes, spectral (trigonometric) differentiation
//! and trapezoid quadrature, both exact for resolved modes. Radial direction:
//! Chebyshev-Gauss-Lobatto nodes with global polynomial collocation
//! differentiation (exact on polynomials up to degree n_r - 1) and
//! Clenshaw-Curtis quadrature with the polar r-Jacobian absorbed into the
//! weights. Exact polynomial differentiation matters beyond accuracy: the
//! descent in `minimizer` is restricted to polynomial radial profiles, and a
//! derivative operator that underestimated their oscillation would let the
//! minimizer park spurious energy in badly differentiated modes.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use ndarray::{Array2, Zip};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::par;
use crate::radial_solver::{GramSolver, ModeSolver};

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub r0: f64,
    pub n_r: usize,
    pub n_theta: usize,
}

impl GridSpec {
    pub fn new(r0: f64, n_r: usize, n_theta: usize) -> Result<Self> {
        if !(r0 > 0.0 && r0 < 1.0) {
            return Err(Error::InvalidSpec(format!("r0 must lie in (0,1), got {r0}")));
        }
        if n_r < 8 {
            return Err(Error::InvalidSpec(format!("n_r must be >= 8, got {n_r}")));
        }
        if n_theta < 8 || n_theta % 2 != 0 {
            return Err(Error::InvalidSpec(format!(
                "n_theta must be even and >= 8, got {n_theta}"
            )));
        }
        Ok(Self { r0, n_r, n_theta })
    }
}

/// Outward normal sign on each boundary circle: +e_r on r=1, -e_r on r=r0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryRing {
    pub radial_index: usize,
    pub normal_sign: f64,
}

pub struct AnnulusGrid {
    pub spec: GridSpec,
    pub r_nodes: Vec<f64>,
    pub theta_nodes: Vec<f64>,
    /// Full area weight per radial node: Clenshaw-Curtis * r * dtheta.
    /// Constant in theta.
    pub node_weights: Vec<f64>,
    pub inner_ring: BoundaryRing,
    pub outer_ring: BoundaryRing,
    /// Collocation radial differentiation matrices, (n_r x n_r).
    d1: Array2<f64>,
    d2: Array2<f64>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
    /// Cached mode-wise solvers, built on first use.
    pub(crate) dirichlet_solver: OnceLock<Arc<ModeSolver>>,
    pub(crate) gram_solver: OnceLock<Arc<GramSolver>>,
}

impl std::fmt::Debug for AnnulusGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("AnnulusGrid").field("spec", &self.spec).finish()
    }
}

/// Fornberg weights for the `order`-th derivative at `x0` given nodes `xs`.
pub(crate) fn fd_weights(x0: f64, xs: &[f64], order: usize) -> Vec<f64> {
    let n = xs.len();
    let mut c = vec![vec![0.0; order + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = xs[0] - x0;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(order);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = xs[i] - x0;
        for j in 0..i {
            let c3 = xs[i] - xs[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[order]).collect()
}

/// Clenshaw-Curtis weights for the n Chebyshev-Gauss-Lobatto nodes on
/// [-1, 1], exact for polynomials up to degree n - 1.
fn clenshaw_curtis_weights(n: usize) -> Vec<f64> {
    let big_n = n - 1;
    let mut w = vec![0.0; n];
    let end = if big_n % 2 == 0 {
        1.0 / ((big_n * big_n) as f64 - 1.0)
    } else {
        1.0 / (big_n * big_n) as f64
    };
    w[0] = end;
    w[big_n] = end;
    for j in 1..big_n {
        let theta = PI * j as f64 / big_n as f64;
        let mut v = 1.0;
        for k in 1..=(big_n - 1) / 2 {
            v -= 2.0 * (2.0 * k as f64 * theta).cos() / ((4 * k * k) as f64 - 1.0);
        }
        if big_n % 2 == 0 {
            v -= (big_n as f64 * theta).cos() / ((big_n * big_n) as f64 - 1.0);
        }
        w[j] = 2.0 * v / big_n as f64;
    }
    w
}

/// Dense collocation differentiation matrix on arbitrary nodes: row i holds
/// the Fornberg weights of the full-width stencil, so the matrix is exact on
/// polynomials up to degree n - 1.
fn build_diff_matrix(r: &[f64], order: usize) -> Array2<f64> {
    let n = r.len();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        let w = fd_weights(r[i], r, order);
        for (j, wj) in w.iter().enumerate() {
            d[[i, j]] = *wj;
        }
    }
    d
}

pub fn build_grid(spec: GridSpec) -> Result<Arc<AnnulusGrid>> {
    GridSpec::new(spec.r0, spec.n_r, spec.n_theta)?;
    let n_r = spec.n_r;
    let n_theta = spec.n_theta;
    let span = 1.0 - spec.r0;
    // Chebyshev-Gauss-Lobatto nodes mapped to [r0, 1], in increasing order
    let r_nodes: Vec<f64> = (0..n_r)
        .map(|i| spec.r0 + span * (1.0 - (PI * i as f64 / (n_r - 1) as f64).cos()) / 2.0)
        .collect();
    let theta_nodes: Vec<f64> = (0..n_theta).map(|j| 2.0 * PI * j as f64 / n_theta as f64).collect();

    let radial_weights = clenshaw_curtis_weights(n_r);
    let dtheta = 2.0 * PI / n_theta as f64;
    let node_weights: Vec<f64> = radial_weights
        .iter()
        .zip(&r_nodes)
        .map(|(w, r)| w * span / 2.0 * r * dtheta)
        .collect();

    let d1 = build_diff_matrix(&r_nodes, 1);
    let d2 = build_diff_matrix(&r_nodes, 2);

    let mut planner = FftPlanner::new();
    let fft_fwd = planner.plan_fft_forward(n_theta);
    let fft_inv = planner.plan_fft_inverse(n_theta);

    Ok(Arc::new(AnnulusGrid {
        spec,
        r_nodes,
        theta_nodes,
        node_weights,
        inner_ring: BoundaryRing { radial_index: 0, normal_sign: -1.0 },
        outer_ring: BoundaryRing { radial_index: n_r - 1, normal_sign: 1.0 },
        d1,
        d2,
        fft_fwd,
        fft_inv,
        dirichlet_solver: OnceLock::new(),
        gram_solver: OnceLock::new(),
    }))
}

impl AnnulusGrid {
    pub fn n_r(&self) -> usize {
        self.spec.n_r
    }

    pub fn n_theta(&self) -> usize {
        self.spec.n_theta
    }

    pub fn total_weight(&self) -> f64 {
        self.node_weights.iter().sum::<f64>() * self.spec.n_theta as f64
    }

    pub(crate) fn d1(&self) -> &Array2<f64> {
        &self.d1
    }

    pub(crate) fn d2(&self) -> &Array2<f64> {
        &self.d2
    }

    /// Forward angular transform of one real row, normalized so that
    /// f_j = sum_k c_k exp(i k theta_j).
    fn row_modes(&self, row: &[f64], out: &mut [Complex64]) {
        for (o, v) in out.iter_mut().zip(row) {
            *o = Complex64::new(*v, 0.0);
        }
        self.fft_fwd.process(out);
        let scale = 1.0 / self.spec.n_theta as f64;
        for o in out.iter_mut() {
            *o *= scale;
        }
    }

    /// Discrete angular transform, shape (n_r, n_theta); column k holds c_k(r)
    /// with k interpreted mod n_theta (columns above n_theta/2 are negative modes).
    pub fn theta_modes(&self, values: &Array2<f64>) -> Array2<Complex64> {
        let n_theta = self.spec.n_theta;
        let mut out = Array2::<Complex64>::zeros((values.nrows(), n_theta));
        let vals = values.as_slice().expect("standard layout");
        let buf = out.as_slice_mut().expect("standard layout");
        par::for_each_row(buf, n_theta, |i, row| {
            self.row_modes(&vals[i * n_theta..(i + 1) * n_theta], row);
        });
        out
    }

    pub fn inverse_theta_modes(&self, modes: &Array2<Complex64>) -> Array2<f64> {
        let n_theta = self.spec.n_theta;
        let mut work = modes.clone();
        let buf = work.as_slice_mut().expect("standard layout");
        par::for_each_row(buf, n_theta, |_, row| {
            self.fft_inv.process(row);
        });
        let mut out = Array2::<f64>::zeros((modes.nrows(), n_theta));
        Zip::from(&mut out).and(&work).for_each(|o, w| *o = w.re);
        out
    }

    /// Spectral d/dtheta. The Nyquist mode has no well-defined derivative on a
    /// real grid and is zeroed.
    pub fn theta_derivative(&self, values: &Array2<f64>) -> Array2<f64> {
        self.theta_apply(values, |k| Complex64::new(0.0, k as f64), true)
    }

    /// Spectral d2/dtheta2. The Nyquist mode is dropped, matching
    /// [`Self::theta_derivative`], so that the discrete Laplacian is exactly
    /// the divergence of the discrete gradient in theta and integration by
    /// parts holds mode-by-mode.
    pub fn theta_second_derivative(&self, values: &Array2<f64>) -> Array2<f64> {
        self.theta_apply(values, |k| Complex64::new(-((k * k) as f64), 0.0), true)
    }

    fn theta_apply(
        &self,
        values: &Array2<f64>,
        symbol: impl Fn(i64) -> Complex64 + Sync,
        zero_nyquist: bool,
    ) -> Array2<f64> {
        let n_theta = self.spec.n_theta;
        let half = n_theta / 2;
        let mut modes = self.theta_modes(values);
        let buf = modes.as_slice_mut().expect("standard layout");
        par::for_each_row(buf, n_theta, |_, row| {
            for (j, c) in row.iter_mut().enumerate() {
                let k = if j <= half { j as i64 } else { j as i64 - n_theta as i64 };
                if zero_nyquist && j == half {
                    *c = Complex64::new(0.0, 0.0);
                } else {
                    *c *= symbol(k);
                }
            }
        });
        self.inverse_theta_modes(&modes)
    }

    /// Collocation radial derivative of every angular column.
    pub fn radial_derivative(&self, values: &Array2<f64>) -> Array2<f64> {
        self.d1.dot(values)
    }

    pub fn radial_second_derivative(&self, values: &Array2<f64>) -> Array2<f64> {
        self.d2.dot(values)
    }

    /// Transpose of [`Self::radial_derivative`] as a plain node-space
    /// operator; used to assemble exact adjoints of the weak forms.
    pub fn radial_derivative_transpose(&self, values: &Array2<f64>) -> Array2<f64> {
        self.d1.t().dot(values)
    }

    /// Laplacian in polar coordinates: f_rr + f_r / r + f_tt / r^2.
    pub fn laplacian(&self, values: &Array2<f64>) -> Array2<f64> {
        let mut out = self.radial_second_derivative(values);
        let fr = self.radial_derivative(values);
        let ftt = self.theta_second_derivative(values);
        for (i, r) in self.r_nodes.iter().enumerate() {
            let inv_r = 1.0 / r;
            let inv_r2 = inv_r * inv_r;
            for j in 0..self.spec.n_theta {
                out[[i, j]] += inv_r * fr[[i, j]] + inv_r2 * ftt[[i, j]];
            }
        }
        out
    }
}

/// Neumaier compensated accumulator. The quadrature sums run over tens of
/// thousands of terms; naive accumulation noise (~n*eps) is larger than the
/// energy decrease per descent step near a minimum and stalls the line search.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    pub(crate) fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Real samples on an [`AnnulusGrid`].
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: Arc<AnnulusGrid>,
    pub values: Array2<f64>,
}

impl ScalarField {
    pub fn new(grid: Arc<AnnulusGrid>, values: Array2<f64>) -> Result<Self> {
        if values.dim() != (grid.spec.n_r, grid.spec.n_theta) {
            return Err(Error::GridMismatch);
        }
        let f = Self { grid, values };
        f.check_finite("ScalarField::new")?;
        Ok(f)
    }

    pub fn from_fn(grid: &Arc<AnnulusGrid>, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Array2::zeros((grid.spec.n_r, grid.spec.n_theta));
        for (i, r) in grid.r_nodes.iter().enumerate() {
            for (j, t) in grid.theta_nodes.iter().enumerate() {
                values[[i, j]] = f(*r, *t);
            }
        }
        Self { grid: Arc::clone(grid), values }
    }

    /// The coordinate function x = r cos(theta).
    pub fn coord_x(grid: &Arc<AnnulusGrid>) -> Self {
        Self::from_fn(grid, |r, t| r * t.cos())
    }

    /// The coordinate function y = r sin(theta).
    pub fn coord_y(grid: &Arc<AnnulusGrid>) -> Self {
        Self::from_fn(grid, |r, t| r * t.sin())
    }

    pub fn zeros(grid: &Arc<AnnulusGrid>) -> Self {
        Self {
            grid: Arc::clone(grid),
            values: Array2::zeros((grid.spec.n_r, grid.spec.n_theta)),
        }
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.values.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn same_grid(&self, other: &ScalarField) -> bool {
        Arc::ptr_eq(&self.grid, &other.grid) || self.grid.spec == other.grid.spec
    }

    /// Gradient in both frames; polar components are physical (d_r, r^-1 d_theta).
    pub fn gradient(&self) -> VectorField {
        let grid = &self.grid;
        let r_comp = grid.radial_derivative(&self.values);
        let mut t_comp = grid.theta_derivative(&self.values);
        for (i, r) in grid.r_nodes.iter().enumerate() {
            let inv_r = 1.0 / r;
            for j in 0..grid.spec.n_theta {
                t_comp[[i, j]] *= inv_r;
            }
        }
        VectorField { grid: Arc::clone(grid), r_comp, t_comp }
    }

    /// Quadrature-weighted integral over the annulus.
    pub fn integrate(&self) -> f64 {
        let grid = &self.grid;
        let mut total = Kahan::default();
        for (i, w) in grid.node_weights.iter().enumerate() {
            for j in 0..grid.spec.n_theta {
                total.add(w * self.values[[i, j]]);
            }
        }
        total.total()
    }

    /// Integral of the product f*g without materializing it.
    pub fn weighted_dot(&self, other: &ScalarField) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        let grid = &self.grid;
        let mut total = Kahan::default();
        for (i, w) in grid.node_weights.iter().enumerate() {
            for j in 0..grid.spec.n_theta {
                total.add(w * self.values[[i, j]] * other.values[[i, j]]);
            }
        }
        Ok(total.total())
    }

    /// Dirichlet inner product: integral of grad(f) . grad(g).
    pub fn dirichlet_inner(&self, other: &ScalarField) -> Result<f64> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        let gf = self.gradient();
        let gg = other.gradient();
        let grid = &self.grid;
        let mut total = Kahan::default();
        for (i, w) in grid.node_weights.iter().enumerate() {
            for j in 0..grid.spec.n_theta {
                total.add(
                    w * (gf.r_comp[[i, j]] * gg.r_comp[[i, j]]
                        + gf.t_comp[[i, j]] * gg.t_comp[[i, j]]),
                );
            }
        }
        Ok(total.total())
    }

    /// L2 norm of the gradient.
    pub fn grad_norm_sq(&self) -> f64 {
        self.dirichlet_inner(self).expect("same grid")
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn scale(&self, t: f64) -> ScalarField {
        ScalarField { grid: Arc::clone(&self.grid), values: &self.values * t }
    }

    pub fn add(&self, other: &ScalarField) -> Result<ScalarField> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        Ok(ScalarField {
            grid: Arc::clone(&self.grid),
            values: &self.values + &other.values,
        })
    }

    pub fn axpy(&self, t: f64, other: &ScalarField) -> Result<ScalarField> {
        if !self.same_grid(other) {
            return Err(Error::GridMismatch);
        }
        Ok(ScalarField {
            grid: Arc::clone(&self.grid),
            values: &self.values + &(&other.values * t),
        })
    }
}

/// Vector field stored in the physical polar frame, convertible to Cartesian.
#[derive(Debug, Clone)]
pub struct VectorField {
    pub grid: Arc<AnnulusGrid>,
    /// e_r component.
    pub r_comp: Array2<f64>,
    /// e_theta component (already includes the 1/r factor for gradients).
    pub t_comp: Array2<f64>,
}

impl VectorField {
    /// Rotate to the Cartesian frame: (v_x, v_y).
    pub fn to_cartesian(&self) -> (Array2<f64>, Array2<f64>) {
        let grid = &self.grid;
        let mut vx = Array2::zeros(self.r_comp.dim());
        let mut vy = Array2::zeros(self.r_comp.dim());
        for i in 0..grid.spec.n_r {
            for (j, t) in grid.theta_nodes.iter().enumerate() {
                let (s, c) = t.sin_cos();
                vx[[i, j]] = c * self.r_comp[[i, j]] - s * self.t_comp[[i, j]];
                vy[[i, j]] = s * self.r_comp[[i, j]] + c * self.t_comp[[i, j]];
            }
        }
        (vx, vy)
    }

    pub fn from_cartesian(grid: &Arc<AnnulusGrid>, vx: &Array2<f64>, vy: &Array2<f64>) -> Self {
        let mut r_comp = Array2::zeros(vx.dim());
        let mut t_comp = Array2::zeros(vx.dim());
        for i in 0..grid.spec.n_r {
            for (j, t) in grid.theta_nodes.iter().enumerate() {
                let (s, c) = t.sin_cos();
                r_comp[[i, j]] = c * vx[[i, j]] + s * vy[[i, j]];
                t_comp[[i, j]] = -s * vx[[i, j]] + c * vy[[i, j]];
            }
        }
        Self { grid: Arc::clone(grid), r_comp, t_comp }
    }

    /// Pointwise squared magnitude, frame independent.
    pub fn magnitude_sq(&self) -> Array2<f64> {
        &self.r_comp * &self.r_comp + &self.t_comp * &self.t_comp
    }
}
