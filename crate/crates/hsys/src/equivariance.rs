//! The rotation-equivariant class: pairs (a,b) commuting with the
//! simultaneous rotation of domain and target plane by 2*pi/m.
//!
//! In the complex combination w = a + i*b the constraint reads
//! w(e^{i alpha} z) = e^{i alpha} w(z) for alpha = 2*pi/m, which on angular
//! Fourier modes keeps exactly the modes k = 1 (mod m). This mode picture is
//! derived, not quoted, so `equivariance_defect` re-checks it against the
//! literal commutation of grid rotation and target rotation.
//!
//! The discrete class additionally carries the quarter-rule band limit of
//! `mode_allowed`, so the quadratic bracket of two admissible fields never
//! aliases on the angular grid.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{AnnulusGrid, ScalarField};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SymmetryOrder {
    pub m: usize,
}

impl SymmetryOrder {
    pub fn new(m: usize) -> Result<Self> {
        if m < 1 {
            return Err(Error::InvalidConfig("symmetry order m must be >= 1".into()));
        }
        Ok(Self { m })
    }

    pub fn check_divides(&self, grid: &AnnulusGrid) -> Result<()> {
        if grid.n_theta() % self.m != 0 {
            return Err(Error::Divisibility { m: self.m, n_theta: grid.n_theta() });
        }
        Ok(())
    }
}

/// The pair Theta = (a, b) being optimized.
#[derive(Debug, Clone)]
pub struct FieldPair {
    pub a: ScalarField,
    pub b: ScalarField,
}

impl FieldPair {
    pub fn new(a: ScalarField, b: ScalarField) -> Result<Self> {
        if !a.same_grid(&b) {
            return Err(Error::GridMismatch);
        }
        a.check_finite("FieldPair a")?;
        b.check_finite("FieldPair b")?;
        Ok(Self { a, b })
    }

    /// The coordinate pair (x, y), equivariant for every m.
    pub fn coordinates(grid: &Arc<AnnulusGrid>) -> Self {
        Self {
            a: ScalarField::coord_x(grid),
            b: ScalarField::coord_y(grid),
        }
    }

    pub fn grid(&self) -> &Arc<AnnulusGrid> {
        &self.a.grid
    }

    pub fn scale(&self, t: f64) -> Self {
        Self { a: self.a.scale(t), b: self.b.scale(t) }
    }

    pub fn axpy(&self, t: f64, dir: &FieldPair) -> Result<Self> {
        Ok(Self { a: self.a.axpy(t, &dir.a)?, b: self.b.axpy(t, &dir.b)? })
    }

    /// Complex combination w = a + i b, as angular modes per radius.
    pub(crate) fn complex_modes(&self) -> Array2<Complex64> {
        let grid = self.grid();
        let ma = grid.theta_modes(&self.a.values);
        let mb = grid.theta_modes(&self.b.values);
        &ma + &(mb.mapv(|c| c * Complex64::i()))
    }
}

/// Whether FFT index k belongs to the discrete admissible space: the signed
/// frequency must be 1 (mod m) and lie within the dealiasing band
/// |k| <= n_theta/4. The band limit makes every bracket product of two
/// admissible fields exactly representable on the grid (2 * n/4 <= Nyquist),
/// closing the aliasing channel that otherwise lets grid-scale modes fake a
/// large ||grad phi|| and drive the discrete energy below its continuum value.
pub(crate) fn mode_allowed(k: usize, n_theta: usize, m: usize) -> bool {
    let half = n_theta / 2;
    let abs_k = if k <= half { k } else { n_theta - k };
    // k is a residue mod n_theta and m | n_theta, so the residue test is
    // well defined on indices
    abs_k <= n_theta / 4 && (k + m - 1) % m == 0
}

/// L2-orthogonal projection onto the discrete equivariant class: zero every
/// angular mode of w = a + ib with k != 1 (mod m) or outside the dealiasing
/// band. Idempotent. Applies the band limit for m = 1 as well.
pub fn project_fm(p: &FieldPair, m: SymmetryOrder) -> Result<FieldPair> {
    let grid = p.grid();
    m.check_divides(grid)?;
    let n_theta = grid.n_theta();
    let mut modes = p.complex_modes();
    for mut row in modes.rows_mut() {
        for k in 0..n_theta {
            if !mode_allowed(k, n_theta, m.m) {
                row[k] = Complex64::new(0.0, 0.0);
            }
        }
    }
    pair_from_w_modes(grid, &modes)
}

/// Rebuild (a, b) from the angular modes of w = a + ib.
/// Split w's spectrum into the spectra of its real and imaginary parts:
/// a_k = (w_k + conj(w_{-k}))/2, b_k = (w_k - conj(w_{-k}))/(2i).
pub(crate) fn pair_from_w_modes(
    grid: &Arc<AnnulusGrid>,
    modes: &Array2<Complex64>,
) -> Result<FieldPair> {
    let n_theta = grid.n_theta();
    let mut a_modes = Array2::<Complex64>::zeros(modes.dim());
    let mut b_modes = Array2::<Complex64>::zeros(modes.dim());
    for i in 0..grid.n_r() {
        for k in 0..n_theta {
            let neg = (n_theta - k) % n_theta;
            let wk = modes[[i, k]];
            let wneg = modes[[i, neg]].conj();
            a_modes[[i, k]] = (wk + wneg) * 0.5;
            b_modes[[i, k]] = (wk - wneg) * Complex64::new(0.0, -0.5);
        }
    }
    let a = grid.inverse_theta_modes(&a_modes);
    let b = grid.inverse_theta_modes(&b_modes);
    FieldPair::new(
        ScalarField { grid: Arc::clone(grid), values: a },
        ScalarField { grid: Arc::clone(grid), values: b },
    )
}

/// Max-node norm of Theta(A x) - A Theta(x), where A rotates the domain by
/// the exact n_theta/m grid shift and the target by the 2x2 rotation matrix.
pub fn equivariance_defect(p: &FieldPair, m: SymmetryOrder) -> Result<f64> {
    let grid = p.grid();
    m.check_divides(grid)?;
    let n_theta = grid.n_theta();
    let shift = n_theta / m.m;
    let alpha = 2.0 * std::f64::consts::PI / m.m as f64;
    let (sin_a, cos_a) = alpha.sin_cos();
    let mut worst = 0.0_f64;
    for i in 0..grid.n_r() {
        for j in 0..n_theta {
            let jr = (j + shift) % n_theta;
            let da = p.a.values[[i, jr]] - (cos_a * p.a.values[[i, j]] - sin_a * p.b.values[[i, j]]);
            let db = p.b.values[[i, jr]] - (sin_a * p.a.values[[i, j]] + cos_a * p.b.values[[i, j]]);
            worst = worst.max((da * da + db * db).sqrt());
        }
    }
    Ok(worst)
}

/// Deterministic random pair in the equivariant class: allowed modes
/// k = 1 (mod m) with coefficients decaying like decay^|k|, smooth radial
/// profiles, mode 0 always excluded so the means vanish for every m.
pub fn random_equivariant(
    grid: &Arc<AnnulusGrid>,
    m: SymmetryOrder,
    seed: u64,
    decay: f64,
) -> Result<FieldPair> {
    m.check_divides(grid)?;
    if decay <= 0.0 {
        return Err(Error::InvalidConfig("decay must be > 0".into()));
    }
    let n_theta = grid.n_theta();
    let half = (n_theta / 2) as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r0 = grid.spec.r0;
    let span = 1.0 - r0;
    let n_r = grid.n_r();

    let mut a = Array2::zeros((n_r, n_theta));
    let mut b = Array2::zeros((n_r, n_theta));
    for k in (-half + 1)..half {
        if k == 0 {
            continue;
        }
        let residue = k.rem_euclid(m.m as i64) as usize;
        if residue != 1 % m.m || k.unsigned_abs() > (n_theta / 4) as u64 {
            continue;
        }
        let amp = decay.powi(k.unsigned_abs() as u32 as i32);
        if amp < 1e-14 {
            continue;
        }
        // smooth radial profile: a few low Legendre modes in the mapped
        // coordinate, so the pair lies in the admissible polynomial subspace
        let coeffs: Vec<(f64, f64)> = (0..4)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        for (i, r) in grid.r_nodes.iter().enumerate() {
            let s = 2.0 * (r - r0) / span - 1.0;
            let mut re = 0.0;
            let mut im = 0.0;
            let mut p_prev = 0.0;
            let mut p = 1.0;
            for (q, (cr, ci)) in coeffs.iter().enumerate() {
                re += cr * p;
                im += ci * p;
                let next = if q == 0 {
                    s
                } else {
                    ((2 * q + 1) as f64 * s * p - q as f64 * p_prev) / (q + 1) as f64
                };
                p_prev = p;
                p = next;
            }
            for (j, theta) in grid.theta_nodes.iter().enumerate() {
                // w += amp * (re + i im) e^{i k theta}; a = Re w, b = Im w
                let (st, ct) = (k as f64 * theta).sin_cos();
                a[[i, j]] += amp * (re * ct - im * st);
                b[[i, j]] += amp * (re * st + im * ct);
            }
        }
    }
    FieldPair::new(
        ScalarField { grid: Arc::clone(grid), values: a },
        ScalarField { grid: Arc::clone(grid), values: b },
    )
}
