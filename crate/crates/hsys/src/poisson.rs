//! Jacobian bracket {a,b} = a_x b_y - a_y b_x and the Dirichlet problem
//! -lap phi = {a,b}, phi = 0 on both boundary circles, solved mode-by-mode
//! in theta. Also the empirical compensated-compactness diagnostic
//! (||phi||_inf + ||grad phi||_2) / (||grad a||_2 ||grad b||_2).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::grid::{AnnulusGrid, ScalarField};
use crate::radial_solver::{BoundaryRows, ModeSolver};

/// Jacobian determinant of the map (a,b), computed in the polar frame as
/// the cross product of the two physical gradients. Antisymmetric exactly.
pub fn bracket(a: &ScalarField, b: &ScalarField) -> Result<ScalarField> {
    if !a.same_grid(b) {
        return Err(Error::GridMismatch);
    }
    let ga = a.gradient();
    let gb = b.gradient();
    let values = &ga.r_comp * &gb.t_comp - &ga.t_comp * &gb.r_comp;
    ScalarField::new(Arc::clone(&a.grid), values)
}

pub(crate) fn dirichlet_solver(grid: &Arc<AnnulusGrid>) -> Arc<ModeSolver> {
    Arc::clone(
        grid.dirichlet_solver
            .get_or_init(|| Arc::new(ModeSolver::new(grid, BoundaryRows::Dirichlet, 0.0))),
    )
}

/// Solve -lap phi = f with phi = 0 on both boundary circles.
pub fn solve_dirichlet(f: &ScalarField) -> Result<ScalarField> {
    f.check_finite("solve_dirichlet rhs")?;
    let solver = dirichlet_solver(&f.grid);
    let values = solver.solve(&f.grid, &f.values);
    ScalarField::new(Arc::clone(&f.grid), values)
}

/// Sequential variant of [`solve_dirichlet`], for benchmarking against the
/// rayon path.
pub fn solve_dirichlet_seq(f: &ScalarField) -> Result<ScalarField> {
    f.check_finite("solve_dirichlet rhs")?;
    let solver = dirichlet_solver(&f.grid);
    let values = solver.solve_seq(&f.grid, &f.values);
    ScalarField::new(Arc::clone(&f.grid), values)
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct WenteReport {
    pub sup_norm_phi: f64,
    pub grad_norm_phi: f64,
    pub grad_norm_a: f64,
    pub grad_norm_b: f64,
    /// (sup phi + ||grad phi||_2) / (||grad a||_2 ||grad b||_2)
    pub ratio: f64,
}

/// Solve the Dirichlet problem for {a,b} and report the norms entering the
/// Wente-type estimate. The sup norm is the node max, so the ratio is an
/// empirical lower envelope for the domain constant, not a certified one.
pub fn wente_report(a: &ScalarField, b: &ScalarField) -> Result<WenteReport> {
    let grad_norm_a = a.grad_norm_sq().sqrt();
    let grad_norm_b = b.grad_norm_sq().sqrt();
    // round-off floor: differentiating a constant leaves ~1e-13 noise
    if grad_norm_a <= 1e-10 * (1.0 + a.sup_norm()) {
        return Err(Error::ZeroGradient("wente_report: a has zero gradient".into()));
    }
    if grad_norm_b <= 1e-10 * (1.0 + b.sup_norm()) {
        return Err(Error::ZeroGradient("wente_report: b has zero gradient".into()));
    }
    let phi = solve_dirichlet(&bracket(a, b)?)?;
    let sup_norm_phi = phi.sup_norm();
    let grad_norm_phi = phi.grad_norm_sq().sqrt();
    Ok(WenteReport {
        sup_norm_phi,
        grad_norm_phi,
        grad_norm_a,
        grad_norm_b,
        ratio: (sup_norm_phi + grad_norm_phi) / (grad_norm_a * grad_norm_b),
    })
}

/// Normalized residual of the integration-by-parts identity
/// int phi {a,b} = int a {b,phi}, valid when phi*a vanishes on the boundary.
pub fn lemma2_identity_residual(
    a: &ScalarField,
    b: &ScalarField,
    phi: &ScalarField,
) -> Result<f64> {
    if !a.same_grid(b) || !a.same_grid(phi) {
        return Err(Error::GridMismatch);
    }
    let grid = &a.grid;
    let n_r = grid.n_r();
    let scale = 1.0 + a.sup_norm() * phi.sup_norm();
    for j in 0..grid.n_theta() {
        for i in [0, n_r - 1] {
            let prod = (phi.values[[i, j]] * a.values[[i, j]]).abs();
            if prod > 1e-10 * scale {
                return Err(Error::BoundaryPrecondition(format!(
                    "phi*a = {prod:.3e} on the boundary"
                )));
            }
        }
    }
    let lhs = phi.weighted_dot(&bracket(a, b)?)?;
    let rhs = a.weighted_dot(&bracket(b, phi)?)?;
    Ok((lhs - rhs).abs() / (1.0 + lhs.abs()))
}

/// Closed-form radial solution of -lap phi = 1 on the annulus with zero
/// boundary values: phi(r) = (1 - r^2)/4 + c1 ln r, c1 = (r0^2 - 1)/(4 ln r0).
pub fn radial_unit_solution(r0: f64, r: f64) -> f64 {
    let c1 = (r0 * r0 - 1.0) / (4.0 * r0.ln());
    (1.0 - r * r) / 4.0 + c1 * r.ln()
}

/// Exact squared L2 norm of the gradient of [`radial_unit_solution`]:
/// 2 pi int (phi')^2 r dr with phi' = -r/2 + c1/r.
pub fn radial_unit_grad_norm_sq(r0: f64) -> f64 {
    let c1 = (r0 * r0 - 1.0) / (4.0 * r0.ln());
    let quartic = (1.0 - r0.powi(4)) / 16.0;
    let cross = c1 * (1.0 - r0 * r0) / 2.0;
    let log = -c1 * c1 * r0.ln();
    2.0 * std::f64::consts::PI * (quartic - cross + log)
}
