//! Post-hoc certification of a Solution: Eq. (1) residual, Eq. (4) boundary
//! residuals, the Lemma 3 balance identities, Lemma 4 means, the Hopf form
//! tau/z^2, and the conformality defect of Eq. (1bis).

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::energy::EnergyEval;
use crate::grid::{AnnulusGrid, Kahan, ScalarField};
use crate::minimizer::Solution;

/// Least-squares fit of z^2 <Psi_z, Psi_z> by a single complex constant.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HopfFit {
    /// Fitted constant c in <Psi_z, Psi_z> ~ c / z^2, as [re, im].
    pub tau: [f64; 2],
    /// Relative L2 misfit of the constant fit over interior nodes.
    pub fit_residual: f64,
    /// |Im tau| / (|tau| + eps); the paper proves tau is real.
    pub imag_fraction: f64,
}

impl HopfFit {
    pub fn tau_complex(&self) -> Complex64 {
        Complex64::new(self.tau[0], self.tau[1])
    }
}

/// Conformality defect of Eq. (1bis): omega = 0 means both components vanish.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConformalDefect {
    /// Normalized L2 norm of |u_x|^2 - |u_y|^2.
    pub diag: f64,
    /// Normalized L2 norm of 2 <u_x, u_y>.
    pub cross: f64,
    /// Combined defect, equal to 4 ||h||_2 (normalized) up to round-off.
    pub total: f64,
    /// |total - 4||h||| / (total + eps): the algebraic identity check.
    pub hopf_identity_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateReport {
    /// Interior max of the Eq. (1) residual, relative to the max RHS size.
    pub el_residual_interior: f64,
    /// Max |phi| over both boundary circles.
    pub bc_phi: f64,
    /// Max |da/dn| over both boundary circles.
    pub bc_neumann_a: f64,
    pub bc_neumann_b: f64,
    /// |int grad a . grad b| / (||grad a|| + ||grad b||)^2.
    pub grad_orthogonality: f64,
    /// | ||grad a|| - ||grad b|| | / (||grad a|| + ||grad b||).
    pub norm_balance: f64,
    /// Mean values of a and b over the annulus (area-normalized).
    pub mean_a: f64,
    pub mean_b: f64,
    pub hopf: HopfFit,
    pub conformal: ConformalDefect,
    pub passed: bool,
    /// Names of fields exceeding their tolerances.
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CertificateTolerances {
    pub el_residual: f64,
    pub boundary: f64,
    pub orthogonality: f64,
    pub balance: f64,
    pub means: f64,
    pub hopf_residual: f64,
    pub hopf_imag: f64,
    pub conformal_identity: f64,
}

impl CertificateTolerances {
    /// Defaults scaled by the measured operator error at this grid, so the
    /// certificate stays meaningful across resolutions.
    pub fn grid_aware(grid: &AnnulusGrid) -> Self {
        let e = scheme_error(grid);
        Self {
            el_residual: 10.0 * e,
            boundary: 10.0 * e,
            orthogonality: 1e-6,
            balance: 1e-6,
            means: 1e-9,
            hopf_residual: 1e-3,
            hopf_imag: 1e-3,
            conformal_identity: 1e-10,
        }
    }

    /// Widen the strong-form tolerances by the residual gradient norm of a
    /// finished minimization. A descent stopped at gradient norm g still
    /// carries an O(g) strong residual no matter how accurate the operators
    /// are, so certifying such a solution against the bare operator error
    /// would reject converged minimizers.
    pub fn with_convergence(mut self, grad_norm: f64) -> Self {
        self.el_residual += 10.0 * grad_norm;
        self.boundary += 10.0 * grad_norm;
        self
    }
}

/// Relative max-norm error of the discrete Laplacian on the admissible-space
/// projection of a manufactured smooth field; the yardstick for grid-aware
/// certificate tolerances. Projecting first matters: differentiation itself
/// is spectrally exact, so the accuracy limit of anything the minimizer can
/// represent is the truncation of the radial polynomial subspace, and that is
/// what a strong-form residual check must be measured against.
pub fn scheme_error(grid: &AnnulusGrid) -> f64 {
    let r0 = grid.spec.r0;
    let kappa = 2.5 * std::f64::consts::PI / (1.0 - r0);
    let mut w = Array2::<f64>::zeros((grid.n_r(), grid.n_theta()));
    for (i, r) in grid.r_nodes.iter().enumerate() {
        for (j, t) in grid.theta_nodes.iter().enumerate() {
            w[[i, j]] = (kappa * (r - r0)).sin() * (3.0 * t).cos();
        }
    }
    let w = crate::radial_solver::GramSolver::new(grid).project_radial(&w);
    let lap = grid.laplacian(&w);
    let mut err: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (i, r) in grid.r_nodes.iter().enumerate() {
        let (s, c) = (kappa * (r - r0)).sin_cos();
        for (j, t) in grid.theta_nodes.iter().enumerate() {
            let exact =
                (-kappa * kappa * s + kappa * c / r - 9.0 * s / (r * r)) * (3.0 * t).cos();
            err = err.max((lap[[i, j]] - exact).abs());
            scale = scale.max(exact.abs());
        }
    }
    err / scale
}

// certification helpers operate on raw fields so tests can probe constructed
// maps; the Solution-taking entry points are the public contract

/// The map u = (lambda a, lambda b, lambda^2 phi).
fn u_components(
    a: &ScalarField,
    b: &ScalarField,
    phi: &ScalarField,
    lambda: f64,
) -> [ScalarField; 3] {
    [a.scale(lambda), b.scale(lambda), phi.scale(lambda * lambda)]
}

/// Cartesian-frame gradients (f_x, f_y) of each component.
fn cartesian_gradients(u: &[ScalarField; 3]) -> [(Array2<f64>, Array2<f64>); 3] {
    [
        u[0].gradient().to_cartesian(),
        u[1].gradient().to_cartesian(),
        u[2].gradient().to_cartesian(),
    ]
}

/// Interior rows, excluding the two rings on each side where one-sided
/// stencils degrade accuracy.
fn interior_rows(n_r: usize) -> std::ops::Range<usize> {
    2..n_r - 2
}

/// Nodewise h = <Psi_z, Psi_z> with d_z = (d_x - i d_y)/2.
fn hopf_density(u: &[ScalarField; 3]) -> Array2<Complex64> {
    let grads = cartesian_gradients(u);
    let dim = grads[0].0.dim();
    let mut h = Array2::<Complex64>::zeros(dim);
    for (gx, gy) in &grads {
        for ((hv, x), y) in h.iter_mut().zip(gx.iter()).zip(gy.iter()) {
            let dz = Complex64::new(*x, -*y) * 0.5;
            *hv += dz * dz;
        }
    }
    h
}

/// Fit a single complex constant to z^2 h(z) over interior nodes.
pub fn hopf_fit_fields(
    a: &ScalarField,
    b: &ScalarField,
    phi: &ScalarField,
    lambda: f64,
) -> HopfFit {
    let grid = &a.grid;
    let u = u_components(a, b, phi, lambda);
    let h = hopf_density(&u);
    let n_r = grid.n_r();
    let mut num = Complex64::new(0.0, 0.0);
    let mut den = 0.0;
    let mut q = Array2::<Complex64>::zeros(h.dim());
    for i in interior_rows(n_r) {
        let w = grid.node_weights[i];
        let r = grid.r_nodes[i];
        for (j, t) in grid.theta_nodes.iter().enumerate() {
            let z = Complex64::from_polar(r, *t);
            let qv = z * z * h[[i, j]];
            q[[i, j]] = qv;
            num += w * qv;
            den += w;
        }
    }
    let tau = num / den;
    let mut misfit = 0.0;
    let mut norm = 0.0;
    for i in interior_rows(n_r) {
        let w = grid.node_weights[i];
        for j in 0..grid.n_theta() {
            misfit += w * (q[[i, j]] - tau).norm_sqr();
            norm += w * q[[i, j]].norm_sqr();
        }
    }
    let fit_residual = if norm > 0.0 { (misfit / norm).sqrt() } else { 0.0 };
    HopfFit {
        tau: [tau.re, tau.im],
        fit_residual,
        imag_fraction: tau.im.abs() / (tau.norm() + 1e-300),
    }
}

pub fn hopf_fit(sol: &Solution) -> HopfFit {
    hopf_fit_fields(&sol.pair.a, &sol.pair.b, &sol.eval.phi, sol.eval.lambda)
}

/// Normalized L2 norms of the two Eq. (1bis) components, plus the algebraic
/// cross-check against 4|h|.
pub fn conformal_defect_fields(
    a: &ScalarField,
    b: &ScalarField,
    phi: &ScalarField,
    lambda: f64,
) -> ConformalDefect {
    let grid = &a.grid;
    let u = u_components(a, b, phi, lambda);
    let grads = cartesian_gradients(&u);
    let h = hopf_density(&u);
    let mut diag = Kahan::default();
    let mut cross = Kahan::default();
    let mut hnorm = Kahan::default();
    let mut scale = Kahan::default();
    let mut area = 0.0;
    for (i, w) in grid.node_weights.iter().enumerate() {
        for j in 0..grid.n_theta() {
            let mut p = 0.0;
            let mut qq = 0.0;
            let mut e = 0.0;
            for (gx, gy) in &grads {
                let x = gx[[i, j]];
                let y = gy[[i, j]];
                p += x * x - y * y;
                qq += 2.0 * x * y;
                e += x * x + y * y;
            }
            diag.add(w * p * p);
            cross.add(w * qq * qq);
            hnorm.add(w * h[[i, j]].norm_sqr());
            scale.add(w * e);
            area += w;
        }
    }
    let mean_energy = (scale.total() / area).max(1e-300);
    let rms = |v: f64| (v / area).sqrt() / mean_energy;
    let diag_n = rms(diag.total());
    let cross_n = rms(cross.total());
    let total = rms(diag.total() + cross.total());
    let four_h = 4.0 * rms(hnorm.total());
    ConformalDefect {
        diag: diag_n,
        cross: cross_n,
        total,
        hopf_identity_gap: (total - four_h).abs() / (total + 1e-300),
    }
}

pub fn conformal_defect(sol: &Solution) -> ConformalDefect {
    conformal_defect_fields(&sol.pair.a, &sol.pair.b, &sol.eval.phi, sol.eval.lambda)
}

/// Full certificate for the fields of a Solution.
pub fn certify_fields(
    a: &ScalarField,
    b: &ScalarField,
    eval: &EnergyEval,
    tol: &CertificateTolerances,
) -> CertificateReport {
    let grid = &a.grid;
    let n_r = grid.n_r();
    let lambda = eval.lambda;
    let phi = &eval.phi;
    let u = u_components(a, b, phi, lambda);

    // Eq. (1): Delta u = u_y wedge u_x in this orientation convention, fixed
    // by consistency with Eq. (2) (-Delta phi = {a,b})
    let laps: Vec<Array2<f64>> = u.iter().map(|f| grid.laplacian(&f.values)).collect();
    let grads = cartesian_gradients(&u);
    let mut el_max: f64 = 0.0;
    let mut rhs_max: f64 = 0.0;
    for i in interior_rows(n_r) {
        for j in 0..grid.n_theta() {
            let ux: Vec<f64> = grads.iter().map(|(gx, _)| gx[[i, j]]).collect();
            let uy: Vec<f64> = grads.iter().map(|(_, gy)| gy[[i, j]]).collect();
            let cross = [
                uy[1] * ux[2] - uy[2] * ux[1],
                uy[2] * ux[0] - uy[0] * ux[2],
                uy[0] * ux[1] - uy[1] * ux[0],
            ];
            for c in 0..3 {
                el_max = el_max.max((laps[c][[i, j]] - cross[c]).abs());
                rhs_max = rhs_max.max(cross[c].abs());
            }
        }
    }
    let el_residual_interior = el_max / rhs_max.max(1e-300);

    let boundary_max = |vals: &Array2<f64>| -> f64 {
        let mut m: f64 = 0.0;
        for j in 0..grid.n_theta() {
            m = m.max(vals[[0, j]].abs()).max(vals[[n_r - 1, j]].abs());
        }
        m
    };
    let bc_phi = boundary_max(&phi.values);
    let bc_neumann_a = boundary_max(&grid.radial_derivative(&a.values));
    let bc_neumann_b = boundary_max(&grid.radial_derivative(&b.values));

    let na = eval.grad_a_sq.sqrt();
    let nb = eval.grad_b_sq.sqrt();
    let denom = (na + nb).powi(2).max(1e-300);
    let grad_orthogonality = a.dirichlet_inner(b).expect("same grid").abs() / denom;
    let norm_balance = (na - nb).abs() / (na + nb).max(1e-300);

    let area = grid.total_weight();
    let mean_a = a.integrate() / area;
    let mean_b = b.integrate() / area;

    let hopf = hopf_fit_fields(a, b, phi, lambda);
    let conformal = conformal_defect_fields(a, b, phi, lambda);

    let mut failures = Vec::new();
    let mut check = |name: &str, value: f64, bound: f64| {
        if value > bound {
            failures.push(name.to_string());
        }
    };
    check("el_residual_interior", el_residual_interior, tol.el_residual);
    check("bc_phi", bc_phi, tol.boundary);
    check("bc_neumann_a", bc_neumann_a, tol.boundary);
    check("bc_neumann_b", bc_neumann_b, tol.boundary);
    check("grad_orthogonality", grad_orthogonality, tol.orthogonality);
    check("norm_balance", norm_balance, tol.balance);
    check("mean_a", mean_a.abs(), tol.means);
    check("mean_b", mean_b.abs(), tol.means);
    check("hopf_fit_residual", hopf.fit_residual, tol.hopf_residual);
    check("hopf_imag_fraction", hopf.imag_fraction, tol.hopf_imag);
    check(
        "conformal_identity",
        conformal.hopf_identity_gap,
        tol.conformal_identity,
    );
    let passed = failures.is_empty();

    CertificateReport {
        el_residual_interior,
        bc_phi,
        bc_neumann_a,
        bc_neumann_b,
        grad_orthogonality,
        norm_balance,
        mean_a,
        mean_b,
        hopf,
        conformal,
        passed,
        failures,
    }
}

pub fn certify(sol: &Solution, tol: &CertificateTolerances) -> CertificateReport {
    certify_fields(&sol.pair.a, &sol.pair.b, &sol.eval, tol)
}
