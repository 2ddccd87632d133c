//! Projected Sobolev-gradient descent over the equivariant class F_m, with
//! renormalization, convergence tracing, concentration diagnostics, and the
//! sqrt(m) threshold check.

use serde::{Deserialize, Serialize};

use std::sync::Arc;

use crate::energy::{
    evaluate, first_variation_with, gram_solver, h1_inner, h1_norm, sobolev_gradient_with,
    EnergyEval,
};
use crate::equivariance::{project_fm, random_equivariant, FieldPair, SymmetryOrder};
use crate::error::{Error, Result};
use crate::grid::{build_grid, GridSpec, ScalarField};
use crate::poisson::{bracket, solve_dirichlet};

/// How the starting pair is produced.
#[derive(Debug, Clone)]
pub enum InitMode {
    /// The section-4 test pair (x, y), equivariant for every m.
    PaperXy,
    /// (x, y) plus a seeded random equivariant perturbation; breaks the high
    /// symmetry of the bare coordinate pair.
    RandomEquivariant,
    /// A caller-supplied pair (e.g. loaded from a solution file).
    FromPair(Box<FieldPair>),
}

#[derive(Debug, Clone)]
pub struct MinimizeConfig {
    pub spec: GridSpec,
    pub m: SymmetryOrder,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub initial_step: f64,
    /// Line-search contraction factor in (0, 1).
    pub backtrack: f64,
    pub min_step: f64,
    pub seed: u64,
    pub init: InitMode,
}

impl MinimizeConfig {
    pub fn new(spec: GridSpec, m: SymmetryOrder) -> Self {
        Self {
            spec,
            m,
            max_iters: 10_000,
            grad_tol: 1e-7,
            initial_step: 1.0,
            backtrack: 0.5,
            min_step: 1e-14,
            seed: 0,
            init: InitMode::RandomEquivariant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidConfig("grad_tol must be > 0".into()));
        }
        if !(self.initial_step > 0.0 && self.min_step > 0.0) {
            return Err(Error::InvalidConfig("step sizes must be > 0".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidConfig("backtrack factor must lie in (0,1)".into()));
        }
        if self.spec.n_theta % self.m.m != 0 {
            return Err(Error::Divisibility { m: self.m.m, n_theta: self.spec.n_theta });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub energy: f64,
    pub grad_norm: f64,
    pub step: f64,
    /// Max cell fraction of the nu = |grad phi|^2 mass over 8x8 polar boxes.
    pub concentration: f64,
}

/// The minimizing sequence (a_n, b_n, phi_n), one record per iterate.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Trace {
    pub records: Vec<TraceRecord>,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub pair: FieldPair,
    pub eval: EnergyEval,
    pub m: SymmetryOrder,
    pub trace: Trace,
    pub converged: bool,
}

/// Coarse surrogates for the concentration measures mu_n and nu_n.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConcentrationReport {
    /// Max over cells of the fraction of the |grad phi|^2 mass.
    pub cell_fraction_nu: f64,
    /// Max over cells of the fraction of the (|grad a|^2 + |grad b|^2)/2 mass.
    pub cell_fraction_mu: f64,
    pub cells: usize,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ThresholdReport {
    /// Energy of the section-4 test pair (x, y).
    pub e_xy: f64,
    /// Upper estimate of the unconstrained infimum G(Omega), from an m=1 run.
    pub g_hat: f64,
    pub m: usize,
    pub sqrt_m_times_g_hat: f64,
    /// Whether sqrt(m) * G_hat > E_xy. Evidence only, not proof: G_hat is an
    /// upper estimate of G(Omega), while the true Lemma 7 test needs G itself.
    pub condition_met: bool,
}

/// Scale so that |grad a|^2 + |grad b|^2 = 2; exact under scale invariance.
fn renormalize(p: &FieldPair) -> Result<FieldPair> {
    let n = p.a.grad_norm_sq() + p.b.grad_norm_sq();
    if n <= 0.0 {
        return Err(Error::DegeneratePair("cannot normalize a gradient-free pair".into()));
    }
    Ok(p.scale((2.0 / n).sqrt()))
}

/// Project onto the discrete admissible class: the angular F_m modes of
/// `project_fm` tensored with the radial polynomial subspace of the gradient
/// solver. Descent directions live in this space, so applying the projection
/// to the start point keeps every iterate admissible.
fn project_admissible(p: &FieldPair, m: SymmetryOrder) -> Result<FieldPair> {
    let q = project_fm(p, m)?;
    let grid = q.grid();
    let solver = gram_solver(grid);
    FieldPair::new(
        ScalarField::new(Arc::clone(grid), solver.project_radial(&q.a.values))?,
        ScalarField::new(Arc::clone(grid), solver.project_radial(&q.b.values))?,
    )
}

fn initial_pair(cfg: &MinimizeConfig) -> Result<FieldPair> {
    let grid = build_grid(cfg.spec)?;
    match &cfg.init {
        InitMode::PaperXy => Ok(FieldPair::coordinates(&grid)),
        InitMode::RandomEquivariant => {
            let base = FieldPair::coordinates(&grid);
            let noise = random_equivariant(&grid, cfg.m, cfg.seed, 0.4)?;
            let scale = 0.1 * (base.a.grad_norm_sq() + base.b.grad_norm_sq()).sqrt()
                / (noise.a.grad_norm_sq() + noise.b.grad_norm_sq()).sqrt().max(1e-300);
            base.axpy(scale, &noise)
        }
        InitMode::FromPair(p) => {
            if p.grid().spec != cfg.spec {
                return Err(Error::GridMismatch);
            }
            Ok((**p).clone())
        }
    }
}

const ARMIJO_C1: f64 = 1e-4;
/// Noise allowance in the sufficient-decrease test. Computed E carries an
/// erratic absolute error of order 1e-12 from the 1/h-amplified rounding in
/// the radial derivative stencils; near a minimum the true decrease per step
/// drops below that floor and a strict Armijo test stalls on noise long
/// before grad_tol is reached. Gradient norms stay accurate (the noise is
/// small relative to them), so descent remains well directed.
const NOISE_SLACK: f64 = 2e-12;
const BB_MAX_STEP: f64 = 1e3;
const TRACE_CELLS: usize = 8;

/// Minimize E over F_m by projected Sobolev-gradient descent: iterate
/// x <- project_fm(x - s g), renormalized each accepted step, with a
/// Barzilai-Borwein trial step safeguarded by Armijo backtracking so that E
/// decreases monotonically. Stops at grad_tol or max_iters; a line-search
/// stall below min_step returns the best iterate with converged = false.
pub fn minimize(cfg: &MinimizeConfig) -> Result<Solution> {
    cfg.validate()?;
    let mut p = renormalize(&project_admissible(&initial_pair(cfg)?, cfg.m)?)?;
    let mut eval = evaluate(&p)?;
    let mut trace = Trace::default();
    let mut step = cfg.initial_step;
    let mut prev: Option<(FieldPair, FieldPair)> = None;
    let mut converged = false;

    for iteration in 0..cfg.max_iters {
        let g = sobolev_gradient_with(&p, cfg.m, &eval)?;
        let gn = h1_norm(&g)?;
        if !gn.is_finite() {
            return Err(Error::NonFinite("gradient norm".into()));
        }
        if let Some((pp, pg)) = &prev {
            // Barzilai-Borwein trial step in the H1 metric
            let dx = p.axpy(-1.0, pp)?;
            let dg = g.axpy(-1.0, pg)?;
            let denom = h1_inner(&dx, &dg)?;
            if denom > 0.0 {
                step = (h1_inner(&dx, &dx)? / denom).clamp(cfg.min_step, BB_MAX_STEP);
            }
        }
        trace.records.push(TraceRecord {
            iteration,
            energy: eval.value,
            grad_norm: gn,
            step,
            concentration: nu_fraction(&eval, TRACE_CELLS),
        });
        if gn <= cfg.grad_tol {
            converged = true;
            break;
        }

        // directional derivative along -g; falls back to the H1 identity
        // -|g|^2 if round-off pushes the computed value nonnegative
        let mut slope = -first_variation_with(&p, &g, &eval)?;
        if slope >= 0.0 {
            slope = -gn * gn;
        }
        let mut accepted = None;
        while step >= cfg.min_step {
            let candidate = renormalize(&project_fm(&p.axpy(-step, &g)?, cfg.m)?);
            let trial = candidate.and_then(|c| Ok((evaluate(&c)?, c)));
            match trial {
                Ok((ev, c))
                    if ev.value
                        <= eval.value
                            + ARMIJO_C1 * step * slope
                            + NOISE_SLACK * (1.0 + eval.value.abs()) =>
                {
                    accepted = Some((c, ev));
                    break;
                }
                _ => step *= cfg.backtrack,
            }
        }
        let Some((next, next_eval)) = accepted else {
            // stall: every trial step failed the decrease test
            break;
        };
        prev = Some((p, g));
        p = next;
        eval = next_eval;
    }

    Ok(Solution { pair: p, eval, m: cfg.m, trace, converged })
}

/// Max fraction of the quadrature mass of `density` over cells x cells polar
/// boxes. `density` is indexed (i radial, j angular); weights include the
/// area Jacobian.
fn max_cell_fraction(
    grid: &crate::grid::AnnulusGrid,
    density: &ndarray::Array2<f64>,
    cells: usize,
) -> f64 {
    let n_r = grid.n_r();
    let n_theta = grid.n_theta();
    let r0 = grid.spec.r0;
    let mut sums = vec![0.0_f64; cells * cells];
    let mut total = 0.0;
    for i in 0..n_r {
        let band = (((grid.r_nodes[i] - r0) / (1.0 - r0) * cells as f64) as usize).min(cells - 1);
        let w = grid.node_weights[i];
        for j in 0..n_theta {
            let sector = (j * cells / n_theta).min(cells - 1);
            let mass = w * density[[i, j]];
            sums[band * cells + sector] += mass;
            total += mass;
        }
    }
    if total <= 0.0 {
        return 0.0;
    }
    sums.iter().fold(0.0_f64, |m, s| m.max(s / total))
}

fn nu_fraction(eval: &EnergyEval, cells: usize) -> f64 {
    let nu = eval.phi.gradient().magnitude_sq();
    max_cell_fraction(&eval.phi.grid, &nu, cells)
}

/// Coarse-cell concentration fractions of the measures mu and nu for a pair.
pub fn concentration_report(p: &FieldPair, cells: usize) -> Result<ConcentrationReport> {
    if cells < 2 {
        return Err(Error::InvalidConfig("concentration cells must be >= 2".into()));
    }
    let grid = p.grid();
    let phi = solve_dirichlet(&bracket(&p.a, &p.b)?)?;
    let nu = phi.gradient().magnitude_sq();
    let mu = {
        let ga = p.a.gradient().magnitude_sq();
        let gb = p.b.gradient().magnitude_sq();
        (&ga + &gb) * 0.5
    };
    Ok(ConcentrationReport {
        cell_fraction_nu: max_cell_fraction(grid, &nu, cells),
        cell_fraction_mu: max_cell_fraction(grid, &mu, cells),
        cells,
    })
}

/// Lemma 7 threshold diagnostic: compares sqrt(m) * G_hat with E_xy, where
/// G_hat comes from an unconstrained (m=1) minimization run and is therefore
/// only an upper estimate of G(Omega). A met condition is evidence for the
/// strict-inequality regime, never a proof.
pub fn threshold_check(
    spec: GridSpec,
    m: SymmetryOrder,
    budget: &MinimizeConfig,
) -> Result<ThresholdReport> {
    let grid = build_grid(spec)?;
    let e_xy = evaluate(&FieldPair::coordinates(&grid))?.value;
    let mut inner = budget.clone();
    inner.spec = spec;
    inner.m = SymmetryOrder::new(1)?;
    let sol = minimize(&inner)?;
    let g_hat = sol.eval.value;
    let sqrt_m_times_g_hat = (m.m as f64).sqrt() * g_hat;
    Ok(ThresholdReport {
        e_xy,
        g_hat,
        m: m.m,
        sqrt_m_times_g_hat,
        condition_met: sqrt_m_times_g_hat > e_xy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equivariance::equivariance_defect;
    use crate::grid::ScalarField;
    use crate::poisson::radial_unit_grad_norm_sq;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn spec(n_r: usize, n_theta: usize) -> GridSpec {
        GridSpec::new(0.5, n_r, n_theta).unwrap()
    }

    fn order(m: usize) -> SymmetryOrder {
        SymmetryOrder::new(m).unwrap()
    }

    #[test]
    fn noop_run_returns_the_initial_pair() {
        let mut cfg = MinimizeConfig::new(spec(33, 24), order(3));
        cfg.init = InitMode::PaperXy;
        cfg.max_iters = 1;
        cfg.grad_tol = 1e9;
        let sol = minimize(&cfg).unwrap();
        assert!(sol.converged);
        assert_eq!(sol.trace.records.len(), 1);
        // (x, y) renormalized to |grad a|^2 + |grad b|^2 = 2
        let n = sol.pair.a.grad_norm_sq() + sol.pair.b.grad_norm_sq();
        assert_relative_eq!(n, 2.0, epsilon = 1e-12);
        let e_xy = 2.0 * PI * 0.75 / (2.0 * radial_unit_grad_norm_sq(0.5).sqrt());
        assert_relative_eq!(sol.eval.value, e_xy, max_relative = 1e-6);
    }

    #[test]
    fn descent_is_monotone_and_stays_equivariant() {
        let mut cfg = MinimizeConfig::new(spec(49, 28), order(7));
        cfg.max_iters = 60;
        cfg.grad_tol = 1e-12;
        cfg.seed = 3;
        let sol = minimize(&cfg).unwrap();
        let recs = &sol.trace.records;
        assert!(recs.len() > 2);
        // monotone up to the E evaluation noise floor
        for w in recs.windows(2) {
            assert!(w[1].energy <= w[0].energy + 1e-11 * (1.0 + w[0].energy.abs()));
        }
        assert!(equivariance_defect(&sol.pair, order(7)).unwrap() <= 1e-9);
        // Lemma 4 means vanish on the equivariant class for m >= 2
        assert!(sol.pair.a.integrate().abs() <= 1e-9);
        assert!(sol.pair.b.integrate().abs() <= 1e-9);
        let n = sol.pair.a.grad_norm_sq() + sol.pair.b.grad_norm_sq();
        assert_relative_eq!(n, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn paper_xy_start_descends_below_e_xy() {
        let mut cfg = MinimizeConfig::new(spec(49, 28), order(7));
        cfg.init = InitMode::PaperXy;
        cfg.max_iters = 400;
        cfg.grad_tol = 1e-5;
        let sol = minimize(&cfg).unwrap();
        let e_xy = 2.0 * PI * 0.75 / (2.0 * radial_unit_grad_norm_sq(0.5).sqrt());
        assert!(sol.eval.value <= e_xy + 1e-10, "E={} E_xy={}", sol.eval.value, e_xy);
    }

    #[test]
    fn identical_configs_give_identical_traces() {
        let mut cfg = MinimizeConfig::new(spec(33, 24), order(3));
        cfg.max_iters = 25;
        cfg.grad_tol = 1e-12;
        cfg.seed = 11;
        let s1 = minimize(&cfg).unwrap();
        let s2 = minimize(&cfg).unwrap();
        assert_eq!(s1.trace.records.len(), s2.trace.records.len());
        for (r1, r2) in s1.trace.records.iter().zip(&s2.trace.records) {
            assert_eq!(r1.energy.to_bits(), r2.energy.to_bits());
            assert_eq!(r1.grad_norm.to_bits(), r2.grad_norm.to_bits());
            assert_eq!(r1.step.to_bits(), r2.step.to_bits());
        }
        for (u, v) in s1.pair.a.values.iter().zip(s2.pair.a.values.iter()) {
            assert_eq!(u.to_bits(), v.to_bits());
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = MinimizeConfig::new(spec(33, 24), order(3));
        cfg.max_iters = 0;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let mut cfg = MinimizeConfig::new(spec(33, 24), order(7));
        cfg.backtrack = 1.5;
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        let cfg = MinimizeConfig::new(spec(33, 24), order(7));
        assert!(matches!(cfg.validate(), Err(Error::Divisibility { .. })));
    }

    #[test]
    fn radial_nu_spreads_evenly_over_sectors() {
        // (x, y) has a radial phi, so every angular sector carries the same
        // nu mass; with 8 sectors no cell can hold more than a few radial
        // bands' worth of 1/8 of the mass
        let g = build_grid(spec(65, 32)).unwrap();
        let p = FieldPair::coordinates(&g);
        let rep = concentration_report(&p, 8).unwrap();
        assert!(rep.cell_fraction_nu <= 1.0 / 8.0 + 1e-12, "{}", rep.cell_fraction_nu);
        assert!(rep.cell_fraction_nu >= 0.2 / 8.0);
        assert!(rep.cell_fraction_mu <= 1.0 / 8.0 + 1e-12);
        assert!((0.0..=1.0).contains(&rep.cell_fraction_nu));
        assert!((0.0..=1.0).contains(&rep.cell_fraction_mu));
    }

    #[test]
    fn concentrated_field_hits_fraction_near_one() {
        let g = build_grid(spec(65, 32)).unwrap();
        // bump supported well inside one polar box
        let bump = ScalarField::from_fn(&g, |r, t| {
            let dr = (r - 0.53) / 0.01;
            let dt = (t - 0.4) / 0.08;
            (-dr * dr - dt * dt).exp()
        });
        let p = FieldPair::new(bump, ScalarField::zeros(&g)).unwrap();
        let rep = concentration_report(&p, 8).unwrap();
        assert!(rep.cell_fraction_mu > 0.9, "{}", rep.cell_fraction_mu);
        let _ = Arc::clone(&g);
    }

    #[test]
    fn concentration_rejects_tiny_cell_counts() {
        let g = build_grid(spec(33, 24)).unwrap();
        let p = FieldPair::coordinates(&g);
        assert!(matches!(
            concentration_report(&p, 1),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn threshold_m1_cannot_meet_the_condition() {
        let mut budget = MinimizeConfig::new(spec(33, 24), order(1));
        budget.max_iters = 120;
        budget.grad_tol = 1e-6;
        let rep = threshold_check(spec(33, 24), order(1), &budget).unwrap();
        assert!(rep.e_xy >= rep.g_hat - 1e-6);
        assert!(!rep.condition_met);
    }

    #[test]
    fn threshold_scales_with_sqrt_m() {
        let mut budget = MinimizeConfig::new(spec(33, 24), order(1));
        budget.max_iters = 120;
        budget.grad_tol = 1e-6;
        let r4 = threshold_check(spec(33, 24), order(4), &budget).unwrap();
        let r16 = threshold_check(spec(33, 24), order(16), &budget).unwrap();
        assert_eq!(r4.g_hat.to_bits(), r16.g_hat.to_bits());
        assert!(r16.sqrt_m_times_g_hat > r4.sqrt_m_times_g_hat);
        assert_relative_eq!(
            r16.sqrt_m_times_g_hat,
            2.0 * r4.sqrt_m_times_g_hat,
            epsilon = 1e-12
        );
    }
}
