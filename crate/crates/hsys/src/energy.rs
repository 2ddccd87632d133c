//! The scale-invariant energy E(a,b) = (||grad a||^2 + ||grad b||^2) /
//! (2 ||grad phi||_2), its first variation, the strong Euler-Lagrange
//! residual, and the H1 (Sobolev) gradient used as a descent direction.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;

use crate::equivariance::{mode_allowed, pair_from_w_modes, FieldPair, SymmetryOrder};
use crate::error::{Error, Result};
use crate::grid::{AnnulusGrid, ScalarField};
use crate::par;
use crate::poisson::{bracket, dirichlet_solver, solve_dirichlet, solve_dirichlet_seq};
use crate::radial_solver::GramSolver;

#[derive(Debug, Clone)]
pub struct EnergyEval {
    /// E itself.
    pub value: f64,
    pub grad_a_sq: f64,
    pub grad_b_sq: f64,
    /// ||grad phi||_2 (not squared).
    pub grad_phi_norm: f64,
    /// Negative root, so the exported map u = (lambda a, lambda b, lambda^2 phi).
    pub lambda: f64,
    pub phi: ScalarField,
}

fn finish_eval(p: &FieldPair, phi: ScalarField) -> Result<EnergyEval> {
    let grad_a_sq = p.a.grad_norm_sq();
    let grad_b_sq = p.b.grad_norm_sq();
    let numerator = grad_a_sq + grad_b_sq;
    if numerator <= 0.0 {
        return Err(Error::DegeneratePair("both gradients vanish".into()));
    }
    let grad_phi_sq = phi.grad_norm_sq();
    // phi == 0 can happen exactly (bracket(a,a)) or to round-off
    if grad_phi_sq <= 1e-28 * numerator * numerator {
        return Err(Error::DegeneratePair(
            "phi is (numerically) zero; E is undefined for this pair".into(),
        ));
    }
    let grad_phi_norm = grad_phi_sq.sqrt();
    Ok(EnergyEval {
        value: numerator / (2.0 * grad_phi_norm),
        grad_a_sq,
        grad_b_sq,
        grad_phi_norm,
        lambda: -(numerator / (2.0 * grad_phi_sq)).sqrt(),
        phi,
    })
}

/// Solve the Dirichlet problem for {a,b} and assemble the energy.
pub fn evaluate(p: &FieldPair) -> Result<EnergyEval> {
    finish_eval(p, solve_dirichlet(&bracket(&p.a, &p.b)?)?)
}

/// Sequential variant for benchmarking.
pub fn evaluate_seq(p: &FieldPair) -> Result<EnergyEval> {
    finish_eval(p, solve_dirichlet_seq(&bracket(&p.a, &p.b)?)?)
}

/// dE/dt at t = 0 along p + t*dir, via the first-order expansion
/// E * [ 2 (int grad a . grad alpha + grad b . grad beta) / (|grad a|^2 + |grad b|^2)
///       - (int grad phi . grad psi) / |grad phi|^2 ],
/// where psi solves the Dirichlet problem for {alpha,b} + {a,beta}.
///
/// The phi-term equals int phi ({alpha,b} + {a,beta}) in the continuum; the
/// grad-phi form is used because it is the exact derivative of the discrete
/// energy (same quadrature, same solver), so scale invariance gives exactly
/// zero along dir = p.
pub fn first_variation(p: &FieldPair, dir: &FieldPair) -> Result<f64> {
    let eval = evaluate(p)?;
    first_variation_with(p, dir, &eval)
}

pub fn first_variation_with(p: &FieldPair, dir: &FieldPair, eval: &EnergyEval) -> Result<f64> {
    if !p.a.same_grid(&dir.a) {
        return Err(Error::GridMismatch);
    }
    let numerator = eval.grad_a_sq + eval.grad_b_sq;
    let dirichlet_term =
        p.a.dirichlet_inner(&dir.a)? + p.b.dirichlet_inner(&dir.b)?;
    let mixed = bracket(&dir.a, &p.b)?.add(&bracket(&p.a, &dir.b)?)?;
    let psi = solve_dirichlet(&mixed)?;
    let phi_term = eval.phi.dirichlet_inner(&psi)?;
    Ok(eval.value
        * (2.0 * dirichlet_term / numerator - phi_term / (eval.grad_phi_norm * eval.grad_phi_norm)))
}

/// Strong-form Euler-Lagrange residual pair
/// (-lap a - lambda^2 {b,phi}, -lap b - lambda^2 {phi,a}).
/// Boundary rows carry one-sided stencils; consumers restrict to the interior.
pub fn euler_lagrange_strong(p: &FieldPair, eval: &EnergyEval) -> Result<FieldPair> {
    let grid = p.grid();
    let lambda_sq = eval.lambda * eval.lambda;
    let lap_a = grid.laplacian(&p.a.values);
    let lap_b = grid.laplacian(&p.b.values);
    let br_b_phi = bracket(&p.b, &eval.phi)?;
    let br_phi_a = bracket(&eval.phi, &p.a)?;
    let res_a = -&lap_a - &(&br_b_phi.values * lambda_sq);
    let res_b = -&lap_b - &(&br_phi_a.values * lambda_sq);
    FieldPair::new(
        ScalarField::new(Arc::clone(grid), res_a)?,
        ScalarField::new(Arc::clone(grid), res_b)?,
    )
}

pub(crate) fn gram_solver(grid: &Arc<AnnulusGrid>) -> Arc<GramSolver> {
    Arc::clone(grid.gram_solver.get_or_init(|| Arc::new(GramSolver::new(grid))))
}

/// K f = grad^T W grad f as a plain node-space vector, so that the plain dot
/// alpha . (K f) equals the quadrature inner product <grad alpha, grad f>
/// exactly (the theta-derivative transpose is its negative; the radial one
/// is the matrix transpose).
fn stiffness_apply(f: &ScalarField) -> Array2<f64> {
    let grid = &f.grid;
    let mut fr = grid.radial_derivative(&f.values);
    let mut ft = grid.theta_derivative(&f.values);
    for (i, w) in grid.node_weights.iter().enumerate() {
        let r = grid.r_nodes[i];
        let w_r2 = w / (r * r);
        for j in 0..grid.n_theta() {
            fr[[i, j]] *= w;
            ft[[i, j]] *= w_r2;
        }
    }
    grid.radial_derivative_transpose(&fr) - grid.theta_derivative(&ft)
}

/// Transpose of the Cartesian d/dx = cos(t) d_r - (sin(t)/r) d_t.
fn dx_transpose(grid: &AnnulusGrid, u: &Array2<f64>) -> Array2<f64> {
    let mut radial = Array2::<f64>::zeros(u.dim());
    let mut angular = Array2::<f64>::zeros(u.dim());
    for (i, r) in grid.r_nodes.iter().enumerate() {
        for (j, t) in grid.theta_nodes.iter().enumerate() {
            let (s, c) = t.sin_cos();
            radial[[i, j]] = c * u[[i, j]];
            angular[[i, j]] = s / r * u[[i, j]];
        }
    }
    grid.radial_derivative_transpose(&radial) + grid.theta_derivative(&angular)
}

/// Transpose of the Cartesian d/dy = sin(t) d_r + (cos(t)/r) d_t.
fn dy_transpose(grid: &AnnulusGrid, u: &Array2<f64>) -> Array2<f64> {
    let mut radial = Array2::<f64>::zeros(u.dim());
    let mut angular = Array2::<f64>::zeros(u.dim());
    for (i, r) in grid.r_nodes.iter().enumerate() {
        for (j, t) in grid.theta_nodes.iter().enumerate() {
            let (s, c) = t.sin_cos();
            radial[[i, j]] = s * u[[i, j]];
            angular[[i, j]] = c / r * u[[i, j]];
        }
    }
    grid.radial_derivative_transpose(&radial) - grid.theta_derivative(&angular)
}

/// The adjoint weight chi = P L^-T K phi, so that chi . f equals
/// <grad phi, grad psi> exactly for psi the Dirichlet solve of f.
fn dirichlet_adjoint_weight(eval: &EnergyEval) -> Array2<f64> {
    let grid = &eval.phi.grid;
    let k_phi = stiffness_apply(&eval.phi);
    let mut chi = dirichlet_solver(grid).solve_transpose(grid, &k_phi);
    let n_r = grid.n_r();
    for j in 0..grid.n_theta() {
        chi[[0, j]] = 0.0;
        chi[[n_r - 1, j]] = 0.0;
    }
    chi
}

/// The H1 representative of the first variation within the equivariant
/// class: the unique g in F_m with <g, d>_H1 = first_variation(p, d) for all
/// discrete d in F_m, obtained by assembling the variation as an exact nodal
/// linear functional and solving the mode-wise H1 Gram system. The operator
/// is the weak form of (-lap + I) with natural (Neumann-type) boundary
/// conditions; exactness makes g vanish at discrete critical points instead
/// of flooring at the strong-form scheme error.
pub fn sobolev_gradient(p: &FieldPair, m: SymmetryOrder) -> Result<FieldPair> {
    let eval = evaluate(p)?;
    sobolev_gradient_with(p, m, &eval)
}

pub fn sobolev_gradient_with(
    p: &FieldPair,
    m: SymmetryOrder,
    eval: &EnergyEval,
) -> Result<FieldPair> {
    let grid = p.grid();
    m.check_divides(grid)?;
    let inv_d = 1.0 / eval.grad_phi_norm;
    let lambda_sq = eval.lambda * eval.lambda;
    let chi = dirichlet_adjoint_weight(eval);

    let (ax, ay) = p.a.gradient().to_cartesian();
    let (bx, by) = p.b.gradient().to_cartesian();
    // chi . {alpha, b} = alpha . [dx^T(chi by) - dy^T(chi bx)], and the
    // beta-part mirrors it with a's gradient
    let l_a = {
        let adj = &dx_transpose(grid, &(&chi * &by)) - &dy_transpose(grid, &(&chi * &bx));
        &stiffness_apply(&p.a) * inv_d - &(&adj * (lambda_sq * inv_d))
    };
    let l_b = {
        let adj = &dy_transpose(grid, &(&chi * &ax)) - &dx_transpose(grid, &(&chi * &ay));
        &stiffness_apply(&p.b) * inv_d - &(&adj * (lambda_sq * inv_d))
    };

    // Riesz solve per angular mode of lw = l_a + i l_b, restricted to F_m
    let lw = {
        let ma = grid.theta_modes(&l_a);
        let mb = grid.theta_modes(&l_b);
        &ma + &(mb.mapv(|c| c * Complex64::i()))
    };
    let n_r = grid.n_r();
    let n_theta = grid.n_theta();
    let half = n_theta / 2;
    let solver = gram_solver(grid);
    let columns: Vec<Option<(Vec<f64>, Vec<f64>)>> = par::map_indices(n_theta, |k| {
        if !mode_allowed(k, n_theta, m.m) {
            return None;
        }
        let k_eff = if k <= half { k } else { n_theta - k };
        let re: Vec<f64> = (0..n_r).map(|i| lw[[i, k]].re).collect();
        let im: Vec<f64> = (0..n_r).map(|i| lw[[i, k]].im).collect();
        Some(solver.solve_mode(k_eff, &re, &im))
    });
    let mut g_modes = Array2::<Complex64>::zeros((n_r, n_theta));
    for (k, col) in columns.iter().enumerate() {
        if let Some((re, im)) = col {
            for i in 0..n_r {
                g_modes[[i, k]] = Complex64::new(re[i], im[i]);
            }
        }
    }
    pair_from_w_modes(grid, &g_modes)
}

/// The H1 inner product sum over both components.
pub fn h1_inner(p: &FieldPair, q: &FieldPair) -> Result<f64> {
    Ok(p.a.dirichlet_inner(&q.a)?
        + p.a.weighted_dot(&q.a)?
        + p.b.dirichlet_inner(&q.b)?
        + p.b.weighted_dot(&q.b)?)
}

pub fn h1_norm(p: &FieldPair) -> Result<f64> {
    Ok(h1_inner(p, p)?.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equivariance::random_equivariant;
    use crate::grid::{build_grid, GridSpec};
    use crate::poisson::radial_unit_grad_norm_sq;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn grid(r0: f64, n_r: usize, n_theta: usize) -> Arc<AnnulusGrid> {
        build_grid(GridSpec { r0, n_r, n_theta }).unwrap()
    }

    fn order(m: usize) -> SymmetryOrder {
        SymmetryOrder::new(m).unwrap()
    }

    #[test]
    fn coordinate_pair_energy_matches_radial_oracle() {
        let g = grid(0.5, 129, 32);
        let p = FieldPair::coordinates(&g);
        let eval = evaluate(&p).unwrap();
        let area = PI * 0.75;
        let expect = 2.0 * area / (2.0 * radial_unit_grad_norm_sq(0.5).sqrt());
        assert_relative_eq!(eval.value, expect, max_relative = 1e-7);
        assert_relative_eq!(eval.grad_a_sq, area, max_relative = 1e-9);
        assert_relative_eq!(eval.grad_b_sq, area, max_relative = 1e-9);
        // invariant wiring
        assert_relative_eq!(
            eval.value,
            (eval.grad_a_sq + eval.grad_b_sq) / (2.0 * eval.grad_phi_norm),
            epsilon = 1e-14
        );
        assert!(eval.lambda < 0.0);
        assert_relative_eq!(
            eval.lambda,
            -((eval.grad_a_sq + eval.grad_b_sq)
                / (2.0 * eval.grad_phi_norm * eval.grad_phi_norm))
                .sqrt(),
            epsilon = 1e-14
        );
    }

    #[test]
    fn energy_is_scale_invariant() {
        let g = grid(0.5, 33, 24);
        let p = random_equivariant(&g, order(3), 5, 0.5).unwrap();
        let e1 = evaluate(&p).unwrap().value;
        for t in [0.1, 2.0, -3.0] {
            let e2 = evaluate(&p.scale(t)).unwrap().value;
            assert_relative_eq!(e1, e2, max_relative = 1e-12);
        }
    }

    #[test]
    fn degenerate_pair_is_a_distinct_error() {
        let g = grid(0.5, 16, 16);
        let a = ScalarField::coord_x(&g);
        let p = FieldPair::new(a.clone(), a).unwrap();
        assert!(matches!(evaluate(&p), Err(Error::DegeneratePair(_))));
    }

    #[test]
    fn energy_is_rotation_invariant() {
        // exact grid rotation of the domain composed with the target rotation
        let g = grid(0.5, 33, 24);
        let p = random_equivariant(&g, order(1), 9, 0.5).unwrap();
        let m = 4;
        let shift = 24 / m;
        let alpha = 2.0 * PI / m as f64;
        let (sn, cs) = alpha.sin_cos();
        let mut a = p.a.values.clone();
        let mut b = p.b.values.clone();
        for i in 0..g.n_r() {
            for j in 0..24 {
                let js = (j + shift) % 24;
                a[[i, j]] = cs * p.a.values[[i, js]] - sn * p.b.values[[i, js]];
                b[[i, j]] = sn * p.a.values[[i, js]] + cs * p.b.values[[i, js]];
            }
        }
        let rotated = FieldPair::new(
            ScalarField::new(Arc::clone(&g), a).unwrap(),
            ScalarField::new(Arc::clone(&g), b).unwrap(),
        )
        .unwrap();
        let e1 = evaluate(&p).unwrap().value;
        let e2 = evaluate(&rotated).unwrap().value;
        assert_relative_eq!(e1, e2, max_relative = 1e-10);
    }

    #[test]
    fn first_variation_vanishes_along_scaling() {
        let g = grid(0.5, 65, 24);
        let p = random_equivariant(&g, order(3), 2, 0.5).unwrap();
        let fv = first_variation(&p, &p).unwrap();
        assert!(fv.abs() <= 1e-8, "fv={fv:.3e}");
    }

    #[test]
    fn first_variation_matches_finite_differences() {
        let g = grid(0.5, 65, 24);
        for seed in 0..6_u64 {
            let p = random_equivariant(&g, order(3), seed, 0.5).unwrap();
            let d = random_equivariant(&g, order(3), seed + 100, 0.5).unwrap();
            let fv = first_variation(&p, &d).unwrap();
            let h = 1e-5;
            let ep = evaluate(&p.axpy(h, &d).unwrap()).unwrap().value;
            let em = evaluate(&p.axpy(-h, &d).unwrap()).unwrap().value;
            let fd = (ep - em) / (2.0 * h);
            assert_relative_eq!(fv, fd, max_relative = 1e-5);
        }
    }

    #[test]
    fn el_residual_scales_linearly() {
        let g = grid(0.5, 33, 24);
        let p = random_equivariant(&g, order(3), 4, 0.5).unwrap();
        let e1 = evaluate(&p).unwrap();
        let r1 = euler_lagrange_strong(&p, &e1).unwrap();
        let t = 2.5;
        let pt = p.scale(t);
        let e2 = evaluate(&pt).unwrap();
        // lambda scales as 1/t, so lambda^2 {b,phi} stays linear in t
        assert_relative_eq!(e1.lambda, t * e2.lambda, max_relative = 1e-12);
        let r2 = euler_lagrange_strong(&pt, &e2).unwrap();
        for (u, v) in r1.a.values.iter().zip(r2.a.values.iter()) {
            assert!((t * u - v).abs() <= 1e-9 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn sobolev_gradient_represents_the_variation() {
        let g = grid(0.5, 97, 24);
        let m = order(3);
        let p = random_equivariant(&g, m, 12, 0.4).unwrap();
        let eval = evaluate(&p).unwrap();
        let grad = sobolev_gradient_with(&p, m, &eval).unwrap();
        let gn = h1_norm(&grad).unwrap();
        for seed in 0..20_u64 {
            let d = random_equivariant(&g, m, 500 + seed, 0.4).unwrap();
            let lhs = h1_inner(&grad, &d).unwrap();
            let rhs = first_variation_with(&p, &d, &eval).unwrap();
            // relative to the natural scale of the pairing, since dE(d) can
            // be arbitrarily small for a near-orthogonal direction
            let scale = gn * h1_norm(&d).unwrap();
            assert!(
                (lhs - rhs).abs() <= 1e-5 * scale,
                "seed={seed} lhs={lhs:.6e} rhs={rhs:.6e} scale={scale:.3e}"
            );
        }
    }

    #[test]
    fn sobolev_gradient_is_a_descent_direction() {
        let g = grid(0.5, 33, 24);
        let m = order(3);
        for seed in [1_u64, 2, 3] {
            let p = random_equivariant(&g, m, seed, 0.5).unwrap();
            let grad = sobolev_gradient(&p, m).unwrap();
            let norm = h1_norm(&grad).unwrap();
            if norm > 1e-10 {
                let fv = first_variation(&p, &grad.scale(-1.0)).unwrap();
                assert!(fv < 0.0, "seed={seed} fv={fv:.3e}");
            }
        }
    }

    #[test]
    fn sobolev_gradient_stays_equivariant() {
        let g = grid(0.5, 33, 24);
        let m = order(4);
        let p = random_equivariant(&g, m, 8, 0.5).unwrap();
        let grad = sobolev_gradient(&p, m).unwrap();
        let defect = crate::equivariance::equivariance_defect(&grad, m).unwrap();
        assert!(defect <= 1e-10 * (1.0 + h1_norm(&grad).unwrap()), "defect={defect:.3e}");
    }
}
