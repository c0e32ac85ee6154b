//! Position estimators.
//!
//! * [`wls_solve`]: the QuERLoc estimator. Sign-balanced schemes make every readout
//!   linear in the position, `u_kᵀx = h_k`, and the noise model turns the MLE into a
//!   weighted least-squares problem with weights `λ̃_k⁻²`.
//! * [`multilateration_init`] + [`gd_refine`]: the classical multilateration baseline.
//! * [`tdoa_chan_solve`]: Chan's pseudo-linear TDoA solver.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};

use crate::linalg::{lstsq, lstsq_owned, min_norm_lstsq};
use crate::model::{validate_scheme, AnchorSet, Position, ProbeScheme};
use crate::{Error, Result};

/// Relative weight floor: weights never exceed `(EPS_W · median|λ̃|)⁻²`.
pub const EPS_W: f64 = 1e-6;
/// If every `|λ̃|` is below `TINY_LAMBDA · κ_s²` the weights are all set to one.
pub const TINY_LAMBDA: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverId {
    Wls,
    Multilateration,
    GradientDescent,
    TdoaChan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub x_hat: Position,
    pub solver: SolverId,
    pub iterations: usize,
    pub solve_time: Duration,
}

/// `L x ≈ h̃` with diagonal weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    /// `m × d`; row `k` is `u_kᵀ = 2 Σ w_{i,k} a_iᵀ`.
    pub l: DMatrix<f64>,
    /// `h̃_k = Σ w_{i,k} ‖a_i‖² - λ̃_k`.
    pub h_tilde: DVector<f64>,
    /// Diagonal of `W̃`, clamped `λ̃_k⁻²`.
    pub weights: DVector<f64>,
}

impl LinearSystem {
    pub fn rows(&self) -> usize {
        self.l.nrows()
    }

    pub fn dim(&self) -> usize {
        self.l.ncols()
    }

    /// `‖√W̃ (L x - h̃)‖²`.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        let r = &self.l * x - &self.h_tilde;
        r.iter().zip(self.weights.iter()).map(|(r, w)| w * r * r).sum()
    }

    /// `Lᵀ W̃ L`.
    pub fn normal_matrix(&self) -> DMatrix<f64> {
        let mut wl = self.l.clone();
        for (mut row, w) in wl.row_iter_mut().zip(self.weights.iter()) {
            row *= *w;
        }
        self.l.transpose() * wl
    }

    pub fn with_scaled_weights(&self, factor: f64) -> Self {
        Self {
            weights: &self.weights * factor,
            ..self.clone()
        }
    }
}

/// `λ̃⁻²` with the floor described at [`EPS_W`] / [`TINY_LAMBDA`].
pub fn clamped_weights(lambdas_tilde: &[f64], kappa_s: f64) -> Vec<f64> {
    let tiny = TINY_LAMBDA * kappa_s * kappa_s;
    if lambdas_tilde.iter().all(|l| l.abs() < tiny) {
        return vec![1.0; lambdas_tilde.len()];
    }
    let mut mags: Vec<f64> = lambdas_tilde.iter().map(|l| l.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let n = mags.len();
    let median = if n % 2 == 1 {
        mags[n / 2]
    } else {
        0.5 * (mags[n / 2 - 1] + mags[n / 2])
    };
    let floor = (EPS_W * median).max(tiny);
    lambdas_tilde
        .iter()
        .map(|l| {
            let m = l.abs().max(floor);
            1.0 / (m * m)
        })
        .collect()
}

pub fn build_linear_system(
    anchors: &AnchorSet,
    schemes: &[ProbeScheme],
    lambdas_tilde: &[f64],
    kappa_s: f64,
) -> Result<LinearSystem> {
    if schemes.len() != lambdas_tilde.len() {
        return Err(Error::LengthMismatch {
            what: "schemes vs readouts",
            left: schemes.len(),
            right: lambdas_tilde.len(),
        });
    }
    if schemes.is_empty() {
        return Err(Error::Empty("no rangings"));
    }
    let d = anchors.dim();
    let m = schemes.len();
    let mut l = DMatrix::zeros(m, d);
    let mut h = DVector::zeros(m);
    for (k, (scheme, lam)) in schemes.iter().zip(lambdas_tilde).enumerate() {
        validate_scheme(scheme).map_err(Error::InvalidScheme)?;
        let mut offset = 0.0;
        for member in scheme.members() {
            let a = anchors.get(member.anchor)?;
            let w = member.sign.value();
            for (j, c) in a.coords().iter().enumerate() {
                l[(k, j)] += 2.0 * w * c;
            }
            offset += w * a.norm_sq();
        }
        h[k] = offset - lam;
    }
    Ok(LinearSystem {
        l,
        h_tilde: h,
        weights: DVector::from_vec(clamped_weights(lambdas_tilde, kappa_s)),
    })
}

/// Minimizer of `‖√W̃ (L x - h̃)‖²`, computed by SVD of the row-scaled system.
pub fn wls_solve(sys: &LinearSystem) -> Result<Estimate> {
    let start = Instant::now();
    let (m, d) = sys.l.shape();
    if m < d {
        return Err(Error::SingularGeometry(format!(
            "{m} rangings for {d} unknowns"
        )));
    }
    // Normalizing by the largest weight keeps the result independent of weight scale.
    let w_max = sys.weights.max();
    if !(w_max > 0.0) || !w_max.is_finite() {
        return Err(Error::InvalidParameter("weights must be positive and finite".into()));
    }
    let mut a = sys.l.clone();
    let mut b = sys.h_tilde.clone();
    for k in 0..m {
        let s = (sys.weights[k] / w_max).sqrt();
        a.row_mut(k).scale_mut(s);
        b[k] *= s;
    }
    let x = lstsq_owned(a, b)?;
    Ok(Estimate {
        x_hat: Position::new(x.iter().copied().collect())?,
        solver: SolverId::Wls,
        iterations: 0,
        solve_time: start.elapsed(),
    })
}

fn check_ranges(anchors: &[Position], ranges: &[f64], what: &'static str) -> Result<usize> {
    if anchors.len() != ranges.len() {
        return Err(Error::LengthMismatch {
            what,
            left: anchors.len(),
            right: ranges.len(),
        });
    }
    let first = anchors.first().ok_or(Error::Empty("no anchors"))?;
    let d = first.dim();
    if let Some(bad) = anchors.iter().find(|a| a.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.dim(),
        });
    }
    Ok(d)
}

fn multilateration_rows(anchors: &[Position], d_tildes: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let d = anchors[0].dim();
    let a1 = &anchors[0];
    let rows = anchors.len() - 1;
    let mut a = DMatrix::zeros(rows, d);
    let mut b = DVector::zeros(rows);
    for i in 1..anchors.len() {
        let ai = &anchors[i];
        for j in 0..d {
            a[(i - 1, j)] = 2.0 * (ai.coords()[j] - a1.coords()[j]);
        }
        b[i - 1] = d_tildes[0] * d_tildes[0] - d_tildes[i] * d_tildes[i] + ai.norm_sq() - a1.norm_sq();
    }
    (a, b)
}

/// Linear multilateration: subtract the first anchor's squared-range equation from
/// the others and solve `2(a_i - a_1)ᵀx = d̃_1² - d̃_i² + ‖a_i‖² - ‖a_1‖²`.
pub fn multilateration_init(anchors: &[Position], d_tildes: &[f64]) -> Result<Estimate> {
    let start = Instant::now();
    let d = check_ranges(anchors, d_tildes, "anchors vs distances")?;
    if anchors.len() < d + 1 {
        return Err(Error::SingularGeometry(format!(
            "{} anchors cannot fix a point in {d} dimensions",
            anchors.len()
        )));
    }
    let (a, b) = multilateration_rows(anchors, d_tildes);
    let x = lstsq(&a, &b)?;
    Ok(Estimate {
        x_hat: Position::new(x.iter().copied().collect())?,
        solver: SolverId::Multilateration,
        iterations: 0,
        solve_time: start.elapsed(),
    })
}

/// [`multilateration_init`] that falls back to the minimum-norm solution when the
/// anchors alone cannot determine the point.
pub fn multilateration_init_min_norm(anchors: &[Position], d_tildes: &[f64]) -> Result<Estimate> {
    match multilateration_init(anchors, d_tildes) {
        Err(Error::SingularGeometry(_)) if anchors.len() >= 2 => {
            let start = Instant::now();
            let (a, b) = multilateration_rows(anchors, d_tildes);
            let x = min_norm_lstsq(&a, &b)?;
            Ok(Estimate {
                x_hat: Position::new(x.iter().copied().collect())?,
                solver: SolverId::Multilateration,
                iterations: 0,
                solve_time: start.elapsed(),
            })
        }
        other => other,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GdOptions {
    pub max_iters: usize,
    pub grad_tol: f64,
    pub initial_step: f64,
    /// Problem scale (κ_s); sets the anchor-collision nudge.
    pub scale: f64,
}

impl GdOptions {
    pub fn for_scale(kappa_s: f64) -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-9 * kappa_s,
            initial_step: 1.0,
            scale: kappa_s,
        }
    }
}

/// `f(x) = Σ (‖x - a_i‖ - d̃_i)²`.
pub fn range_objective(x: &[f64], anchors: &[Position], d_tildes: &[f64]) -> f64 {
    anchors
        .iter()
        .zip(d_tildes)
        .map(|(a, d)| {
            let r = dist(x, a.coords()) - d;
            r * r
        })
        .sum()
}

/// `∇f`; undefined when `x` coincides with an anchor.
pub fn range_gradient(x: &[f64], anchors: &[Position], d_tildes: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    range_gradient_into(x, anchors, d_tildes, &mut g);
    g
}

fn range_gradient_into(x: &[f64], anchors: &[Position], d_tildes: &[f64], g: &mut [f64]) {
    g.iter_mut().for_each(|v| *v = 0.0);
    for (a, d) in anchors.iter().zip(d_tildes) {
        let dist = dist(x, a.coords());
        let coef = 2.0 * (dist - d) / dist;
        for (gj, (xj, aj)) in g.iter_mut().zip(x.iter().zip(a.coords())) {
            *gj += coef * (xj - aj);
        }
    }
}

fn dist(x: &[f64], a: &[f64]) -> f64 {
    x.iter().zip(a).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn nudge_off_anchors(x: &mut [f64], anchors: &[Position], scale: f64) {
    let step = 1e-9 * scale / (x.len() as f64).sqrt();
    while anchors.iter().any(|a| dist(x, a.coords()) < 1e-12) {
        x.iter_mut().for_each(|c| *c += step);
    }
}

/// Gradient descent with Armijo backtracking (halving from `initial_step`) on the
/// range residual objective. The returned objective never exceeds `f(x0)`.
pub fn gd_refine(
    x0: &Position,
    anchors: &[Position],
    d_tildes: &[f64],
    opts: &GdOptions,
) -> Result<Estimate> {
    const ARMIJO: f64 = 1e-4;
    const MAX_HALVINGS: usize = 60;

    let start = Instant::now();
    let d = check_ranges(anchors, d_tildes, "anchors vs distances")?;
    if x0.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: x0.dim(),
        });
    }
    let mut x = x0.coords().to_vec();
    nudge_off_anchors(&mut x, anchors, opts.scale);
    let mut f = range_objective(&x, anchors, d_tildes);
    let mut g = vec![0.0; d];
    let mut trial = vec![0.0; d];
    let mut iterations = 0;
    while iterations < opts.max_iters {
        range_gradient_into(&x, anchors, d_tildes, &mut g);
        let g2: f64 = g.iter().map(|v| v * v).sum();
        if g2.sqrt() <= opts.grad_tol {
            break;
        }
        let mut step = opts.initial_step;
        let mut accepted = false;
        for _ in 0..MAX_HALVINGS {
            for ((t, xi), gi) in trial.iter_mut().zip(&x).zip(&g) {
                *t = xi - step * gi;
            }
            nudge_off_anchors(&mut trial, anchors, opts.scale);
            let ft = range_objective(&trial, anchors, d_tildes);
            if ft <= f - ARMIJO * step * g2 {
                std::mem::swap(&mut x, &mut trial);
                f = ft;
                accepted = true;
                break;
            }
            step /= 2.0;
        }
        if !accepted {
            break;
        }
        iterations += 1;
    }
    Ok(Estimate {
        x_hat: Position::new(x)?,
        solver: SolverId::GradientDescent,
        iterations,
        solve_time: start.elapsed(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdoaOptions {
    /// Re-solve with rows weighted by `1/d̂_i²` from the first-stage estimate.
    pub second_stage: bool,
    /// With fewer than `d + 1` range differences, return the minimum-norm solution
    /// of the first-stage system instead of failing.
    pub allow_underdetermined: bool,
}

impl Default for TdoaOptions {
    fn default() -> Self {
        Self {
            second_stage: true,
            allow_underdetermined: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TdoaEstimate {
    pub estimate: Estimate,
    /// Estimated range to the reference anchor (not constrained to be ≥ 0).
    pub d1_hat: f64,
}

/// Chan's pseudo-linear TDoA solver with anchor 1 as reference.
///
/// `ranges[i-1]` is the range difference `d_{i+1} - d_1` for the `(i+1)`-th anchor.
/// With `d + 1` differences or more the system
/// `2(a_i - a_1)ᵀx + 2 r_i d_1 = ‖a_i‖² - ‖a_1‖² - r_i²` is solved by least squares
/// over `(x, d_1)`. With exactly `d` differences `x` is solved as an affine function
/// of `d_1` and closed with `‖x - a_1‖ = d_1`; of the admissible roots the one
/// nearest the anchor centroid is kept.
pub fn tdoa_chan_solve(
    anchors: &[Position],
    ranges: &[f64],
    opts: &TdoaOptions,
) -> Result<TdoaEstimate> {
    let start = Instant::now();
    let first = anchors.first().ok_or(Error::Empty("no anchors"))?;
    let d = first.dim();
    if ranges.len() + 1 != anchors.len() {
        return Err(Error::LengthMismatch {
            what: "range differences vs anchors - 1",
            left: ranges.len(),
            right: anchors.len().saturating_sub(1),
        });
    }
    if let Some(bad) = anchors.iter().find(|a| a.dim() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.dim(),
        });
    }
    let a1 = first;
    let rows = ranges.len();
    let mut g = DMatrix::zeros(rows, d + 1);
    let mut h = DVector::zeros(rows);
    for (i, r) in ranges.iter().enumerate() {
        let ai = &anchors[i + 1];
        for j in 0..d {
            g[(i, j)] = 2.0 * (ai.coords()[j] - a1.coords()[j]);
        }
        g[(i, d)] = 2.0 * r;
        h[i] = ai.norm_sq() - a1.norm_sq() - r * r;
    }

    // With all range differences zero the d₁ column vanishes and x is fixed by
    // the anchor rows alone.
    let d1_free = g.column(d).norm() <= 1e-12 * g.columns(0, d).norm();
    let (g, unknowns) = if d1_free {
        (g.columns(0, d).into_owned(), d)
    } else {
        (g, d + 1)
    };

    let (x, d1) = if rows >= unknowns {
        let z = lstsq(&g, &h)?;
        let mut x: Vec<f64> = z.rows(0, d).iter().copied().collect();
        let mut d1 = if d1_free { dist(&x, a1.coords()) } else { z[d] };
        if opts.second_stage {
            let span = anchors
                .iter()
                .map(|a| a.dist(a1))
                .fold(0.0f64, f64::max)
                .max(1.0);
            let mut gw = g.clone();
            let mut hw = h.clone();
            for i in 0..rows {
                let di = dist(&x, anchors[i + 1].coords()).max(1e-6 * span);
                gw.row_mut(i).scale_mut(1.0 / di);
                hw[i] /= di;
            }
            if let Ok(z2) = lstsq(&gw, &hw) {
                x = z2.rows(0, d).iter().copied().collect();
                d1 = if d1_free { dist(&x, a1.coords()) } else { z2[d] };
            }
        }
        (x, d1)
    } else if rows == d {
        constrained_minimal(&g, &h, anchors)?
    } else if opts.allow_underdetermined {
        let z = min_norm_lstsq(&g, &h)?;
        (z.rows(0, d).iter().copied().collect(), z[d])
    } else {
        return Err(Error::SingularGeometry(format!(
            "{rows} range differences cannot fix a point in {d} dimensions"
        )));
    };

    Ok(TdoaEstimate {
        estimate: Estimate {
            x_hat: Position::new(x)?,
            solver: SolverId::TdoaChan,
            iterations: 0,
            solve_time: start.elapsed(),
        },
        d1_hat: d1,
    })
}

fn constrained_minimal(
    g: &DMatrix<f64>,
    h: &DVector<f64>,
    anchors: &[Position],
) -> Result<(Vec<f64>, f64)> {
    let d = g.nrows();
    let a = g.columns(0, d).into_owned();
    let col = g.column(d).into_owned();
    // x = p - q d1
    let p = lstsq(&a, h)?;
    let q = lstsq(&a, &col)?;
    let a1 = DVector::from_column_slice(anchors[0].coords());
    let pa = &p - &a1;
    let qa = q.dot(&q) - 1.0;
    let qb = -2.0 * q.dot(&pa);
    let qc = pa.dot(&pa);
    let mut roots = Vec::with_capacity(2);
    if qa.abs() < 1e-12 {
        if qb.abs() > 0.0 {
            roots.push(-qc / qb);
        }
    } else {
        let disc = (qb * qb - 4.0 * qa * qc).max(0.0).sqrt();
        roots.push((-qb + disc) / (2.0 * qa));
        roots.push((-qb - disc) / (2.0 * qa));
    }
    if roots.is_empty() {
        return Err(Error::SingularGeometry("degenerate range-difference constraint".into()));
    }
    let nonneg: Vec<f64> = roots.iter().copied().filter(|r| *r >= 0.0).collect();
    let candidates = if nonneg.is_empty() { roots } else { nonneg };
    let n = anchors.len() as f64;
    let centroid: Vec<f64> = (0..d)
        .map(|j| anchors.iter().map(|a| a.coords()[j]).sum::<f64>() / n)
        .collect();
    candidates
        .into_iter()
        .map(|d1| {
            let x: Vec<f64> = (0..d).map(|j| p[j] - q[j] * d1).collect();
            (dist(&x, &centroid), x, d1)
        })
        .min_by(|l, r| l.0.total_cmp(&r.0))
        .map(|(_, x, d1)| (x, d1))
        .ok_or_else(|| Error::SingularGeometry("no admissible root".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::default_scheme_list;
    use crate::ranging::quer_lambda;
    use crate::rng;
    use proptest::prelude::*;
    use rand::Rng;

    fn p(c: &[f64]) -> Position {
        Position::new(c.to_vec()).unwrap()
    }

    fn pair_anchors() -> AnchorSet {
        AnchorSet::new(vec![p(&[0.0, 0.0, 0.0]), p(&[50.0, 0.0, 0.0])]).unwrap()
    }

    #[test]
    fn single_pair_row() {
        let sys = build_linear_system(
            &pair_anchors(),
            &[ProbeScheme::from_pairs(&[(1, 1), (2, -1)])],
            &[-1500.0],
            100.0,
        )
        .unwrap();
        assert_eq!(sys.l.row(0).iter().copied().collect::<Vec<_>>(), vec![-100.0, 0.0, 0.0]);
        assert_eq!(sys.h_tilde[0], -1000.0);
        let x = DVector::from_vec(vec![10.0, 20.0, 30.0]);
        assert_eq!((sys.l.row(0) * x)[0], -1000.0);
        assert_eq!(sys.weights[0], 1.0 / (1500.0 * 1500.0));
    }

    #[test]
    fn zero_anchor_scheme_gives_zero_row() {
        let anchors = AnchorSet::new(vec![p(&[0.0, 0.0, 0.0]), p(&[0.0, 0.0, 0.0])]).unwrap();
        let sys = build_linear_system(
            &anchors,
            &[ProbeScheme::from_pairs(&[(1, 1), (2, -1)])],
            &[0.0],
            100.0,
        )
        .unwrap();
        assert!(sys.l.iter().all(|v| *v == 0.0));
        assert!(matches!(wls_solve(&sys), Err(Error::SingularGeometry(_))));
    }

    #[test]
    fn table1_m3_system_is_square() {
        let anchors = AnchorSet::table1(50.0);
        let schemes = default_scheme_list(3, 10).unwrap();
        let sys = build_linear_system(&anchors, &schemes, &[1.0, 2.0, 3.0], 100.0).unwrap();
        assert_eq!(sys.l.shape(), (3, 3));
        assert!(build_linear_system(&anchors, &schemes, &[1.0], 100.0).is_err());
    }

    #[test]
    fn weight_clamping() {
        let w = clamped_weights(&[0.0, 100.0, 200.0], 100.0);
        assert_eq!(w[0], 1.0 / (1e-6 * 100.0f64).powi(2));
        assert_eq!(w[1], 1e-4);
        assert_eq!(clamped_weights(&[0.0, 1e-10], 100.0), vec![1.0, 1.0]);
    }

    #[test]
    fn identity_system() {
        let sys = LinearSystem {
            l: DMatrix::identity(3, 3),
            h_tilde: DVector::from_vec(vec![10.0, 20.0, 30.0]),
            weights: DVector::from_element(3, 1.0),
        };
        let e = wls_solve(&sys).unwrap();
        for (a, b) in e.x_hat.coords().iter().zip([10.0, 20.0, 30.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn noise_free_system(x: &Position, m: usize) -> LinearSystem {
        let anchors = AnchorSet::table1(50.0);
        let schemes = default_scheme_list(m, 10).unwrap();
        let lambdas: Vec<f64> = schemes.iter().map(|s| quer_lambda(x, &anchors, s).unwrap()).collect();
        build_linear_system(&anchors, &schemes, &lambdas, 100.0).unwrap()
    }

    /// Normal equations solved by Gaussian elimination with partial pivoting.
    #[allow(clippy::needless_range_loop)]
    fn normal_equations_oracle(sys: &LinearSystem) -> Vec<f64> {
        let d = sys.dim();
        let mut a = vec![vec![0.0; d + 1]; d];
        for k in 0..sys.rows() {
            let w = sys.weights[k];
            for i in 0..d {
                for j in 0..d {
                    a[i][j] += w * sys.l[(k, i)] * sys.l[(k, j)];
                }
                a[i][d] += w * sys.l[(k, i)] * sys.h_tilde[k];
            }
        }
        for c in 0..d {
            let piv = (c..d).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..d {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=d {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..d).map(|i| a[i][d] / a[i][i]).collect()
    }

    #[test]
    fn wls_matches_normal_equations() {
        let mut r = rng::seeded(77);
        for _ in 0..50 {
            let l = DMatrix::from_fn(5, 3, |_, _| r.random_range(-100.0..100.0));
            let h = DVector::from_fn(5, |_, _| r.random_range(-1e3..1e3));
            let w = DVector::from_fn(5, |_, _| r.random_range(1e-6..1e-3));
            let sys = LinearSystem { l, h_tilde: h, weights: w };
            let x = wls_solve(&sys).unwrap();
            let oracle = normal_equations_oracle(&sys);
            for (a, b) in x.x_hat.coords().iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn multilateration_exact_and_underdetermined() {
        let anchors = vec![p(&[0.0, 0.0, 0.0]), p(&[50.0, 0.0, 0.0]), p(&[0.0, 50.0, 0.0]), p(&[0.0, 0.0, 50.0])];
        let x = p(&[37.0, 81.0, 12.5]);
        let d: Vec<f64> = anchors.iter().map(|a| a.dist(&x)).collect();
        let e = multilateration_init(&anchors, &d).unwrap();
        assert!(e.x_hat.dist(&x) <= 1e-9 * 100.0);
        assert!(matches!(
            multilateration_init(&anchors[..3], &d[..3]),
            Err(Error::SingularGeometry(_))
        ));
        let mn = multilateration_init_min_norm(&anchors[..3], &d[..3]).unwrap();
        // x and y are determined by the two difference equations.
        assert!((mn.x_hat.coords()[0] - 37.0).abs() < 1e-9);
        assert!((mn.x_hat.coords()[1] - 81.0).abs() < 1e-9);
        assert!(mn.x_hat.coords()[2].abs() < 1e-9);
    }

    /// Nested grid search minimizing the range residuals, refined 8 times by 10x.
    fn grid_oracle(anchors: &[Position], d: &[f64], center: &[f64], half: f64) -> Vec<f64> {
        let mut c = center.to_vec();
        let mut h = half;
        for _ in 0..12 {
            let n = 10i32;
            let mut best = (f64::INFINITY, c.clone());
            for i in -n..=n {
                for j in -n..=n {
                    for k in -n..=n {
                        let q = [
                            c[0] + h * i as f64 / n as f64,
                            c[1] + h * j as f64 / n as f64,
                            c[2] + h * k as f64 / n as f64,
                        ];
                        let f = range_objective(&q, anchors, d);
                        if f < best.0 {
                            best = (f, q.to_vec());
                        }
                    }
                }
            }
            c = best.1;
            h /= 5.0;
        }
        c
    }

    #[test]
    fn multilateration_matches_grid_oracle() {
        let mut r = rng::seeded(8);
        for _ in 0..5 {
            let anchors: Vec<Position> = (0..5)
                .map(|_| p(&[r.random_range(0.0..50.0), r.random_range(0.0..50.0), r.random_range(0.0..50.0)]))
                .collect();
            let x = p(&[r.random_range(0.0..100.0), r.random_range(0.0..100.0), r.random_range(0.0..100.0)]);
            let d: Vec<f64> = anchors.iter().map(|a| a.dist(&x)).collect();
            let e = multilateration_init(&anchors, &d).unwrap();
            let g = grid_oracle(&anchors, &d, &[50.0, 50.0, 50.0], 60.0);
            assert!(dist(e.x_hat.coords(), &g) <= 1e-6, "{} vs {:?}", e.x_hat, g);
        }
    }

    #[test]
    fn gd_from_truth_stays_put() {
        let anchors = vec![p(&[0.0, 0.0, 0.0]), p(&[50.0, 0.0, 0.0]), p(&[0.0, 50.0, 0.0]), p(&[0.0, 0.0, 50.0])];
        let x = p(&[37.0, 81.0, 12.5]);
        let d: Vec<f64> = anchors.iter().map(|a| a.dist(&x)).collect();
        let opts = GdOptions::for_scale(100.0);
        let e = gd_refine(&x, &anchors, &d, &opts).unwrap();
        assert_eq!(e.iterations, 0);
        assert_eq!(e.x_hat, x);

        let start = p(&[38.0, 80.0, 13.0]);
        let e = gd_refine(&start, &anchors, &d, &GdOptions { max_iters: 20_000, ..opts }).unwrap();
        assert!(e.x_hat.dist(&x) < 1e-6, "{}", e.x_hat);
    }

    #[test]
    fn gd_from_anchor_is_nudged() {
        let anchors = vec![p(&[0.0, 0.0]), p(&[10.0, 0.0]), p(&[0.0, 10.0])];
        let x = p(&[3.0, 4.0]);
        let d: Vec<f64> = anchors.iter().map(|a| a.dist(&x)).collect();
        let e = gd_refine(&anchors[0], &anchors, &d, &GdOptions::for_scale(10.0)).unwrap();
        assert!(e.x_hat.coords().iter().all(|c| c.is_finite()));
        assert!(range_objective(e.x_hat.coords(), &anchors, &d) < range_objective(&[0.0, 0.0], &anchors, &d));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng::seeded(99);
        let anchors: Vec<Position> = (0..5)
            .map(|_| p(&[r.random_range(0.0..50.0), r.random_range(0.0..50.0), r.random_range(0.0..50.0)]))
            .collect();
        let d: Vec<f64> = (0..5).map(|_| r.random_range(10.0..150.0)).collect();
        let h = 1e-6 * 100.0;
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| r.random_range(0.0..100.0)).collect();
            let g = range_gradient(&x, &anchors, &d);
            for j in 0..3 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += h;
                xm[j] -= h;
                let fd = (range_objective(&xp, &anchors, &d) - range_objective(&xm, &anchors, &d)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-5 * g[j].abs().max(1.0), "{fd} vs {}", g[j]);
            }
        }
    }

    #[test]
    fn tdoa_exact_recovery() {
        let anchors: Vec<Position> = AnchorSet::table1(50.0).as_slice()[..5].to_vec();
        let x = p(&[71.0, 12.0, 93.0]);
        let d: Vec<f64> = anchors.iter().map(|a| a.dist(&x)).collect();
        let r: Vec<f64> = d[1..].iter().map(|di| di - d[0]).collect();
        let e = tdoa_chan_solve(&anchors, &r, &TdoaOptions::default()).unwrap();
        assert!(e.estimate.x_hat.dist(&x) <= 1e-8 * 100.0);
        assert!((e.d1_hat - d[0]).abs() <= 1e-8 * 100.0);
    }

    #[test]
    fn tdoa_equidistant_point() {
        // Vertices of a regular simplex-like set equidistant from c.
        let c = [10.0, -4.0, 7.0];
        let dirs = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            [-1.0, 0.0, 0.0],
            [0.0, -0.6, 0.8],
        ];
        let anchors: Vec<Position> = dirs
            .iter()
            .map(|u| p(&[c[0] + 30.0 * u[0], c[1] + 30.0 * u[1], c[2] + 30.0 * u[2]]))
            .collect();
        let e = tdoa_chan_solve(&anchors, &[0.0; 4], &TdoaOptions::default()).unwrap();
        assert!(dist(e.estimate.x_hat.coords(), &c) < 1e-8);
    }

    #[test]
    fn tdoa_minimal_and_underdetermined() {
        let anchors: Vec<Position> = AnchorSet::table1(50.0).as_slice()[..4].to_vec();
        let x = p(&[30.0, 20.0, 40.0]);
        let d: Vec<f64> = anchors.iter().map(|a| a.dist(&x)).collect();
        let r: Vec<f64> = d[1..].iter().map(|di| di - d[0]).collect();
        let e = tdoa_chan_solve(&anchors, &r, &TdoaOptions::default()).unwrap();
        assert!(e.estimate.x_hat.dist(&x) < 1e-6, "{}", e.estimate.x_hat);

        let strict = tdoa_chan_solve(&anchors[..3], &r[..2], &TdoaOptions::default());
        assert!(matches!(strict, Err(Error::SingularGeometry(_))));
        let loose = TdoaOptions {
            allow_underdetermined: true,
            ..Default::default()
        };
        assert!(tdoa_chan_solve(&anchors[..3], &r[..2], &loose).is_ok());
        assert!(tdoa_chan_solve(&anchors[..3], &r, &loose).is_err());
    }

    #[test]
    fn tdoa_noisy_close_to_nls_oracle() {
        let mut rr = rng::seeded(4);
        let anchors: Vec<Position> = AnchorSet::table1(50.0).as_slice().to_vec();
        for _ in 0..5 {
            let x = p(&[rr.random_range(0.0..100.0), rr.random_range(0.0..100.0), rr.random_range(0.0..100.0)]);
            let d: Vec<f64> = anchors.iter().map(|a| a.dist(&x) * (1.0 + 0.01 * (rr.random::<f64>() - 0.5))).collect();
            let r: Vec<f64> = d[1..].iter().map(|di| di - d[0]).collect();
            let stage1 = tdoa_chan_solve(
                &anchors,
                &r,
                &TdoaOptions {
                    second_stage: false,
                    ..Default::default()
                },
            )
            .unwrap();
            // NLS oracle over (x) for range-difference residuals: grid + polish.
            let obj = |q: &[f64]| -> f64 {
                let d1 = dist(q, anchors[0].coords());
                anchors[1..]
                    .iter()
                    .zip(&r)
                    .map(|(a, ri)| {
                        let e = dist(q, a.coords()) - d1 - ri;
                        e * e
                    })
                    .sum()
            };
            let mut c = vec![50.0, 50.0, 50.0];
            let mut h = 60.0;
            for _ in 0..10 {
                let n = 10i32;
                let mut best = (f64::INFINITY, c.clone());
                for i in -n..=n {
                    for j in -n..=n {
                        for k in -n..=n {
                            let q = [c[0] + h * i as f64 / n as f64, c[1] + h * j as f64 / n as f64, c[2] + h * k as f64 / n as f64];
                            let f = obj(&q);
                            if f < best.0 {
                                best = (f, q.to_vec());
                            }
                        }
                    }
                }
                c = best.1;
                h /= 5.0;
            }
            let oracle_err = dist(&c, x.coords());
            let chan_err = stage1.estimate.x_hat.dist(&x);
            assert!(chan_err <= 3.0 * oracle_err + 1.0, "chan {chan_err} oracle {oracle_err}");
        }
    }

    proptest! {
        #[test]
        fn zero_noise_exactness(x in proptest::collection::vec(0.0f64..100.0, 3), m in 3usize..=5) {
            let x = p(&x);
            let e = wls_solve(&noise_free_system(&x, m)).unwrap();
            prop_assert!(e.x_hat.dist(&x) <= 1e-9 * 100.0);
        }

        #[test]
        fn wls_is_optimal_and_scale_invariant(seed in any::<u64>()) {
            let mut r = rng::seeded(seed);
            let x = p(&[r.random_range(0.0..100.0), r.random_range(0.0..100.0), r.random_range(0.0..100.0)]);
            let mut sys = noise_free_system(&x, 5);
            for k in 0..5 {
                sys.h_tilde[k] += r.random_range(-50.0..50.0);
            }
            let e = wls_solve(&sys).unwrap();
            let f0 = sys.objective(e.x_hat.coords());
            for _ in 0..100 {
                let dir: Vec<f64> = (0..3).map(|_| r.random_range(-1.0..1.0)).collect();
                let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                let q: Vec<f64> = e.x_hat.coords().iter().zip(&dir).map(|(a, b)| a + 0.1 * b / n).collect();
                prop_assert!(sys.objective(&q) >= f0);
            }
            let scaled = wls_solve(&sys.with_scaled_weights(37.5)).unwrap();
            for (a, b) in scaled.x_hat.coords().iter().zip(e.x_hat.coords()) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{} vs {}", a, b);
            }
        }

        #[test]
        fn gd_objective_never_increases(seed in any::<u64>()) {
            let mut r = rng::seeded(seed);
            let anchors: Vec<Position> = AnchorSet::table1(50.0).as_slice()[..5].to_vec();
            let x = p(&[r.random_range(0.0..100.0), r.random_range(0.0..100.0), r.random_range(0.0..100.0)]);
            let d: Vec<f64> = anchors.iter().map(|a| a.dist(&x) * (1.0 + r.random_range(-0.05..0.05))).collect();
            let x0 = p(&[r.random_range(0.0..100.0), r.random_range(0.0..100.0), r.random_range(0.0..100.0)]);
            let f0 = range_objective(x0.coords(), &anchors, &d);
            let mut prev = f0;
            for iters in [1usize, 2, 5, 20, 100] {
                let opts = GdOptions { max_iters: iters, ..GdOptions::for_scale(100.0) };
                let e = gd_refine(&x0, &anchors, &d, &opts).unwrap();
                let f = range_objective(e.x_hat.coords(), &anchors, &d);
                prop_assert!(f <= prev * (1.0 + 1e-12) + 1e-12);
                prev = f;
            }
        }

        #[test]
        fn estimators_translation_equivariant(seed in any::<u64>(), v in proptest::collection::vec(-500.0f64..500.0, 3)) {
            let mut r = rng::seeded(seed);
            let anchors = AnchorSet::table1(50.0);
            let x = p(&[r.random_range(0.0..100.0), r.random_range(0.0..100.0), r.random_range(0.0..100.0)]);
            let moved_anchors = anchors.translated(&v);
            let moved_x = x.translated(&v);

            let schemes = default_scheme_list(5, 10).unwrap();
            let noisy = |xx: &Position, aa: &AnchorSet| -> Vec<f64> {
                schemes.iter().enumerate().map(|(k, s)| quer_lambda(xx, aa, s).unwrap() * (1.0 + 0.01 * k as f64)).collect()
            };
            let e = wls_solve(&build_linear_system(&anchors, &schemes, &noisy(&x, &anchors), 100.0).unwrap()).unwrap();
            let em = wls_solve(&build_linear_system(&moved_anchors, &schemes, &noisy(&moved_x, &moved_anchors), 100.0).unwrap()).unwrap();
            prop_assert!(e.x_hat.translated(&v).dist(&em.x_hat) < 1e-6);

            let sub = &anchors.as_slice()[..6];
            let msub = &moved_anchors.as_slice()[..6];
            let d: Vec<f64> = sub.iter().enumerate().map(|(i, a)| a.dist(&x) * (1.0 + 0.003 * i as f64)).collect();
            let ml = multilateration_init(sub, &d).unwrap();
            let mlm = multilateration_init(msub, &d).unwrap();
            prop_assert!(ml.x_hat.translated(&v).dist(&mlm.x_hat) < 1e-6);

            let rd: Vec<f64> = d[1..].iter().map(|di| di - d[0]).collect();
            let t = tdoa_chan_solve(sub, &rd, &TdoaOptions::default()).unwrap();
            let tm = tdoa_chan_solve(msub, &rd, &TdoaOptions::default()).unwrap();
            prop_assert!(t.estimate.x_hat.translated(&v).dist(&tm.estimate.x_hat) < 1e-6);
        }
    }
}
