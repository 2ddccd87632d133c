//! Mode-wise radial boundary-value solver.
//!
//! After the angular transform, every operator of the form
//! `shift - laplacian` decouples into one radial two-point boundary-value
//! problem per angular mode k:
//!
//!   shift*c - (c'' + c'/r - k^2 c / r^2) = f_k(r)
//!
//! Each mode's matrix is factored once per grid and reused; a solve is then
//! two banded-size triangular substitutions per mode (real and imaginary
//! parts share the real factorization).

use nalgebra::{DMatrix, DVector, Dyn};
use ndarray::Array2;
use num_complex::Complex64;

use crate::grid::AnnulusGrid;
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryRows {
    /// Solution value pinned on both rings.
    Dirichlet,
    /// Radial derivative pinned on both rings.
    NeumannRadial,
}

pub struct ModeSolver {
    bc: BoundaryRows,
    /// LU factorizations for modes k = 0..=n_theta/2.
    lus: Vec<nalgebra::LU<f64, Dyn, Dyn>>,
    /// Factorizations of the transposed mode matrices, for adjoint solves.
    lus_t: Vec<nalgebra::LU<f64, Dyn, Dyn>>,
}

impl ModeSolver {
    pub fn new(grid: &AnnulusGrid, bc: BoundaryRows, shift: f64) -> Self {
        let n_r = grid.n_r();
        let half = grid.n_theta() / 2;
        let d1 = grid.d1();
        let d2 = grid.d2();
        let factored = par::map_indices(half + 1, |k| {
            // Nyquist carries no angular stiffness, matching the spectral
            // derivative which cannot represent it
            let k2 = if k == half { 0.0 } else { (k * k) as f64 };
            let mut a = DMatrix::<f64>::zeros(n_r, n_r);
            for i in 1..n_r - 1 {
                let r = grid.r_nodes[i];
                let inv_r = 1.0 / r;
                for j in 0..n_r {
                    a[(i, j)] = -(d2[[i, j]] + inv_r * d1[[i, j]]);
                }
                a[(i, i)] += k2 * inv_r * inv_r + shift;
            }
            match bc {
                BoundaryRows::Dirichlet => {
                    a[(0, 0)] = 1.0;
                    a[(n_r - 1, n_r - 1)] = 1.0;
                }
                BoundaryRows::NeumannRadial => {
                    for j in 0..n_r {
                        a[(0, j)] = d1[[0, j]];
                        a[(n_r - 1, j)] = d1[[n_r - 1, j]];
                    }
                }
            }
            (a.clone().lu(), a.transpose().lu())
        });
        let (lus, lus_t) = factored.into_iter().unzip();
        Self { bc, lus, lus_t }
    }

    pub fn boundary_rows(&self) -> BoundaryRows {
        self.bc
    }

    /// Solve for a real right-hand side with homogeneous boundary data.
    pub fn solve(&self, grid: &AnnulusGrid, rhs: &Array2<f64>) -> Array2<f64> {
        self.solve_with_boundary(grid, rhs, None, None, false)
    }

    /// Forced-sequential variant, used by the benches for comparison.
    pub fn solve_seq(&self, grid: &AnnulusGrid, rhs: &Array2<f64>) -> Array2<f64> {
        self.solve_with_boundary(grid, rhs, None, None, true)
    }

    /// Solve with optional inhomogeneous boundary data.
    ///
    /// `bc_inner` / `bc_outer` give, per theta node, the boundary value
    /// (Dirichlet rows) or the radial derivative (Neumann rows) on the
    /// respective ring. `None` means zero.
    pub fn solve_with_boundary(
        &self,
        grid: &AnnulusGrid,
        rhs: &Array2<f64>,
        bc_inner: Option<&[f64]>,
        bc_outer: Option<&[f64]>,
        force_seq: bool,
    ) -> Array2<f64> {
        let n_r = grid.n_r();
        let n_theta = grid.n_theta();
        let half = n_theta / 2;

        let rhs_modes = grid.theta_modes(rhs);
        let bc_modes = |bc: Option<&[f64]>| -> Vec<Complex64> {
            match bc {
                None => vec![Complex64::new(0.0, 0.0); n_theta],
                Some(vals) => {
                    let row = Array2::from_shape_vec((1, n_theta), vals.to_vec())
                        .expect("boundary slice length");
                    let m = grid.theta_modes(&row);
                    m.row(0).to_vec()
                }
            }
        };
        let inner_modes = bc_modes(bc_inner);
        let outer_modes = bc_modes(bc_outer);

        let solve_mode = |k: usize| -> (DVector<f64>, DVector<f64>) {
            let mut re = DVector::<f64>::zeros(n_r);
            let mut im = DVector::<f64>::zeros(n_r);
            for i in 1..n_r - 1 {
                re[i] = rhs_modes[[i, k]].re;
                im[i] = rhs_modes[[i, k]].im;
            }
            re[0] = inner_modes[k].re;
            im[0] = inner_modes[k].im;
            re[n_r - 1] = outer_modes[k].re;
            im[n_r - 1] = outer_modes[k].im;
            let lu = &self.lus[k];
            let sre = lu.solve(&re).expect("radial system is nonsingular");
            let sim = lu.solve(&im).expect("radial system is nonsingular");
            (sre, sim)
        };
        let solved: Vec<(DVector<f64>, DVector<f64>)> = if force_seq {
            par::map_indices_seq(half + 1, solve_mode)
        } else {
            par::map_indices(half + 1, solve_mode)
        };

        let mut out_modes = Array2::<Complex64>::zeros((n_r, n_theta));
        for (k, (re, im)) in solved.iter().enumerate() {
            for i in 0..n_r {
                let c = Complex64::new(re[i], im[i]);
                out_modes[[i, k]] = c;
                if k > 0 && k < half {
                    out_modes[[i, n_theta - k]] = c.conj();
                }
            }
        }
        grid.inverse_theta_modes(&out_modes)
    }

    /// Adjoint solve: applies the transpose of [`Self::solve`] as a real
    /// node-space operator. The full right-hand side is used (including
    /// boundary rows); the caller zeroes boundary rows of the result when the
    /// adjoint of the zero-boundary-data restriction is wanted.
    pub fn solve_transpose(&self, grid: &AnnulusGrid, rhs: &Array2<f64>) -> Array2<f64> {
        let n_r = grid.n_r();
        let n_theta = grid.n_theta();
        let half = n_theta / 2;
        let rhs_modes = grid.theta_modes(rhs);
        let solved: Vec<(DVector<f64>, DVector<f64>)> = par::map_indices(half + 1, |k| {
            let mut re = DVector::<f64>::zeros(n_r);
            let mut im = DVector::<f64>::zeros(n_r);
            for i in 0..n_r {
                re[i] = rhs_modes[[i, k]].re;
                im[i] = rhs_modes[[i, k]].im;
            }
            let lu = &self.lus_t[k];
            (
                lu.solve(&re).expect("radial system is nonsingular"),
                lu.solve(&im).expect("radial system is nonsingular"),
            )
        });
        let mut out_modes = Array2::<Complex64>::zeros((n_r, n_theta));
        for (k, (re, im)) in solved.iter().enumerate() {
            for i in 0..n_r {
                let c = Complex64::new(re[i], im[i]);
                out_modes[[i, k]] = c;
                if k > 0 && k < half {
                    out_modes[[i, n_theta - k]] = c.conj();
                }
            }
        }
        grid.inverse_theta_modes(&out_modes)
    }
}

/// Admissible radial degree: profiles are polynomials of degree <= n_r/4.
///
/// The first-derivative stencil nearly annihilates radial oscillations at the
/// grid scale, so the full nodal space contains modes whose discrete Dirichlet
/// energy badly underestimates the true one; a minimizer will drain energy
/// into them. Restricting descent to well-resolved polynomial profiles keeps
/// every discrete quadratic form an honest approximation of its continuum
/// counterpart while losing only spectrally small resolution for smooth
/// solutions.
pub(crate) fn radial_degree(n_r: usize) -> usize {
    n_r / 4
}

/// Mode-wise Galerkin reduction of the discrete H1 Gram matrix
///
///   G_k = D1^T W D1 + W (k^2 / r^2 + 1),
///
/// onto the radial polynomial subspace of [`radial_degree`], in a Legendre
/// basis B: solving (B^T G_k B) c = B^T l_k and returning B c yields the H1
/// Riesz representative of the functional l_k within the subspace. W is the
/// diagonal of area quadrature weights; natural (Neumann-type) boundary
/// conditions are built into the weak form, so no boundary rows are needed.
pub struct GramSolver {
    /// Legendre basis values on the radial nodes, n_r x (degree + 1).
    basis: DMatrix<f64>,
    /// Reduced Gram factorizations for modes k = 0..=n_theta/2.
    lus: Vec<nalgebra::LU<f64, Dyn, Dyn>>,
    /// Factorization of B^T W B, for weighted least-squares projection.
    mass_lu: nalgebra::LU<f64, Dyn, Dyn>,
    /// W B, the projection right-hand-side operator.
    wb: DMatrix<f64>,
}

impl GramSolver {
    pub fn new(grid: &AnnulusGrid) -> Self {
        let n_r = grid.n_r();
        let half = grid.n_theta() / 2;
        let cols = radial_degree(n_r) + 1;

        let mut basis = DMatrix::<f64>::zeros(n_r, cols);
        let r0 = grid.spec.r0;
        for (i, r) in grid.r_nodes.iter().enumerate() {
            let s = 2.0 * (r - r0) / (1.0 - r0) - 1.0;
            basis[(i, 0)] = 1.0;
            if cols > 1 {
                basis[(i, 1)] = s;
            }
            for q in 1..cols - 1 {
                basis[(i, q + 1)] = ((2 * q + 1) as f64 * s * basis[(i, q)]
                    - q as f64 * basis[(i, q - 1)])
                    / (q + 1) as f64;
            }
        }

        let d1 = grid.d1();
        let mut d1m = DMatrix::<f64>::zeros(n_r, n_r);
        for i in 0..n_r {
            for j in 0..n_r {
                d1m[(i, j)] = d1[[i, j]];
            }
        }
        let mut wd1 = d1m.clone();
        for l in 0..n_r {
            let w = grid.node_weights[l];
            for j in 0..n_r {
                wd1[(l, j)] *= w;
            }
        }
        let weighted = |f: &dyn Fn(usize) -> f64| -> DMatrix<f64> {
            let mut wb = basis.clone();
            for i in 0..n_r {
                let w = f(i);
                for q in 0..cols {
                    wb[(i, q)] *= w;
                }
            }
            basis.transpose() * wb
        };
        let stiffness = basis.transpose() * (d1m.transpose() * (wd1 * &basis));
        let mass = weighted(&|i| grid.node_weights[i]);
        let angular = weighted(&|i| grid.node_weights[i] / (grid.r_nodes[i] * grid.r_nodes[i]));

        let lus = par::map_indices(half + 1, |k| {
            // Nyquist carries no angular stiffness, matching theta_derivative
            let k2 = if k == half { 0.0 } else { (k * k) as f64 };
            (&stiffness + &angular * k2 + &mass).lu()
        });
        let mut wb = basis.clone();
        for i in 0..n_r {
            let w = grid.node_weights[i];
            for q in 0..cols {
                wb[(i, q)] *= w;
            }
        }
        Self { basis, lus, mass_lu: mass.lu(), wb }
    }

    /// Solve the reduced system for one signed mode; `k_eff` is the unsigned
    /// frequency (Nyquist mapped to the last factorization). Input and output
    /// are nodal radial vectors; the output lies in the polynomial subspace.
    pub fn solve_mode(&self, k_eff: usize, rhs_re: &[f64], rhs_im: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let lu = &self.lus[k_eff];
        let bt = self.basis.transpose();
        let solve = |rhs: &[f64]| -> Vec<f64> {
            let reduced = &bt * DVector::from_column_slice(rhs);
            let c = lu.solve(&reduced).expect("reduced Gram matrix is positive definite");
            (&self.basis * c).data.into()
        };
        (solve(rhs_re), solve(rhs_im))
    }

    /// Weighted least-squares projection of nodal values onto the radial
    /// polynomial subspace, applied independently per theta column.
    pub fn project_radial(&self, values: &Array2<f64>) -> Array2<f64> {
        let (n_r, n_theta) = values.dim();
        let mut v = DMatrix::<f64>::zeros(n_r, n_theta);
        for i in 0..n_r {
            for j in 0..n_theta {
                v[(i, j)] = values[[i, j]];
            }
        }
        let coeffs = self
            .mass_lu
            .solve(&(self.wb.transpose() * v))
            .expect("basis mass matrix is positive definite");
        let out = &self.basis * coeffs;
        Array2::from_shape_fn((n_r, n_theta), |(i, j)| out[(i, j)])
    }
}
