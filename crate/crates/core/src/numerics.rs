//! Dense linear-algebra kernels: SVD pseudo-inverse with rank detection,
//! projectors onto a riskless direction, and nonnegative least squares used
//! to project a price vector onto the cone spanned by payoff columns.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Default relative singular-value cutoff for [`pinv`].
pub const DEFAULT_PINV_RTOL: f64 = 1e-10;
/// KKT tolerance for [`nnls`], relative to `‖G'b‖∞`.
pub const NNLS_KKT_RTOL: f64 = 1e-10;
/// Outer iterations allowed per generator.
pub const NNLS_ITERATIONS_PER_GENERATOR: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("vector must be nonzero")]
    ZeroVector,
    #[error("cone needs at least one generator")]
    NoGenerators,
    #[error("generator matrix has {rows} rows but target has length {len}")]
    DimensionMismatch { rows: usize, len: usize },
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("nnls did not reach a KKT point after {iterations} iterations (worst violation {violation:e})")]
    NonConvergence {
        iterations: usize,
        violation: f64,
        best: Box<ConeProjection>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoInverseResult {
    pub pinv: DMatrix<f64>,
    pub rank: usize,
    pub cutoff: f64,
    /// Descending.
    pub singular_values: DVector<f64>,
}

/// Thin singular value decomposition `A = U·diag(σ)·V'` of an `m × n` matrix
/// with `m ≥ n`, by one-sided Jacobi rotations. Returns `(U·diag(σ), σ, V)`:
/// the first factor keeps the unnormalized left vectors.
fn jacobi_svd_tall(a: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    const MAX_SWEEPS: usize = 80;
    let n = a.ncols();
    let mut u = a.clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = u.column(p).norm_squared();
                let beta = u.column(q).norm_squared();
                let gamma = u.column(p).dot(&u.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut u, &mut v] {
                    for r in 0..mat.nrows() {
                        let (xp, xq) = (mat[(r, p)], mat[(r, q)]);
                        mat[(r, p)] = c * xp - s * xq;
                        mat[(r, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let sigma = DVector::from_fn(n, |j, _| u.column(j).norm());
    (u, sigma, v)
}

/// Moore-Penrose inverse via SVD. Singular values `≤ rtol·σ_max` are zeroed.
pub fn pinv(m: &DMatrix<f64>, rtol: f64) -> PseudoInverseResult {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return PseudoInverseResult {
            pinv: DMatrix::zeros(cols, rows),
            rank: 0,
            cutoff: 0.0,
            singular_values: DVector::zeros(0),
        };
    }
    let wide = rows < cols;
    let tall = if wide { m.transpose() } else { m.clone() };
    let (us, sigma, v) = jacobi_svd_tall(&tall);
    let sigma_max = sigma.amax();
    let cutoff = rtol * sigma_max;

    // pinv(tall) = Σ_j v_j (u_j σ_j)' / σ_j²
    let mut inv = DMatrix::zeros(tall.ncols(), tall.nrows());
    let mut rank = 0;
    for (j, &value) in sigma.iter().enumerate() {
        if value <= cutoff || value == 0.0 {
            continue;
        }
        rank += 1;
        inv.ger(1.0 / (value * value), &v.column(j), &us.column(j), 1.0);
    }
    let mut singular_values: Vec<f64> = sigma.iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    PseudoInverseResult {
        pinv: if wide { inv.transpose() } else { inv },
        rank,
        cutoff,
        singular_values: DVector::from_vec(singular_values),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RisklessProjectors {
    /// `ζζ'/ζ'ζ`
    pub parallel: DMatrix<f64>,
    /// `I - ζζ'/ζ'ζ`
    pub perpendicular: DMatrix<f64>,
}

pub fn riskless_projectors(zeta: &DVector<f64>) -> Result<RisklessProjectors, NumericsError> {
    if zeta.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite("zeta"));
    }
    let norm_sq = zeta.norm_squared();
    if norm_sq == 0.0 {
        return Err(NumericsError::ZeroVector);
    }
    let n = zeta.len();
    let parallel = zeta * zeta.transpose() / norm_sq;
    let perpendicular = DMatrix::identity(n, n) - &parallel;
    Ok(RisklessProjectors {
        parallel,
        perpendicular,
    })
}

/// Closest point of a finitely generated cone to a target.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeProjection {
    /// `G·c`, the closest point in the cone.
    pub point: DVector<f64>,
    /// Nonnegative generator weights `c`.
    pub coefficients: DVector<f64>,
    /// `‖G·c − b‖₂`
    pub residual_norm: f64,
    pub iterations: usize,
    /// KKT tolerance the solution was certified against.
    pub kkt_tolerance: f64,
}

impl ConeProjection {
    fn from_coefficients(
        g: &DMatrix<f64>,
        b: &DVector<f64>,
        coefficients: DVector<f64>,
        iterations: usize,
        kkt_tolerance: f64,
    ) -> Self {
        let point = g * &coefficients;
        let residual_norm = (&point - b).norm();
        ConeProjection {
            point,
            coefficients,
            residual_norm,
            iterations,
            kkt_tolerance,
        }
    }
}

/// Largest violation of the nnls optimality conditions at `c`:
/// dual feasibility `g ≥ 0` and complementary slackness `c_j·g_j ≤ 0`, where
/// `g = G'(Gc − b)`. Negative coefficients also count.
pub fn kkt_violation(g: &DMatrix<f64>, b: &DVector<f64>, c: &DVector<f64>) -> f64 {
    let grad = g.tr_mul(&(g * c - b));
    let mut worst: f64 = 0.0;
    for j in 0..c.len() {
        worst = worst.max(-grad[j]).max(c[j] * grad[j]).max(-c[j]);
    }
    worst
}

fn least_squares_on(g: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> DVector<f64> {
    let cols: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let sub = g.select_columns(&cols);
    let sol = pinv(&sub, 1e-13).pinv * b;
    let mut full = DVector::zeros(passive.len());
    for (pos, &j) in cols.iter().enumerate() {
        full[j] = sol[pos];
    }
    full
}

/// Nonnegative least squares `min ‖G·c − b‖₂, c ≥ 0` by the Lawson–Hanson
/// active-set method. Columns of `g` are the cone generators.
///
/// The entering variable is the one with the most negative gradient
/// component, lowest index on ties.
pub fn nnls(g: &DMatrix<f64>, b: &DVector<f64>) -> Result<ConeProjection, NumericsError> {
    let (m, k) = g.shape();
    if k == 0 {
        return Err(NumericsError::NoGenerators);
    }
    if m != b.len() {
        return Err(NumericsError::DimensionMismatch { rows: m, len: b.len() });
    }
    if g.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite("generators"));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(NumericsError::NonFinite("target"));
    }

    let tol = NNLS_KKT_RTOL * g.tr_mul(b).amax();
    let cap = NNLS_ITERATIONS_PER_GENERATOR * k;
    let mut x = DVector::<f64>::zeros(k);
    let mut passive = vec![false; k];
    // Columns whose entry failed to produce a positive weight; cleared
    // whenever the passive set changes successfully.
    let mut blocked = vec![false; k];
    let mut iterations = 0;

    loop {
        let w = g.tr_mul(&(b - g * &x));
        let mut entering: Option<(usize, f64)> = None;
        for j in 0..k {
            if passive[j] || blocked[j] || w[j] <= tol {
                continue;
            }
            if entering.is_none_or(|(_, best)| w[j] > best) {
                entering = Some((j, w[j]));
            }
        }
        let Some((j, _)) = entering else { break };
        if iterations >= cap {
            let violation = kkt_violation(g, b, &x);
            return Err(NumericsError::NonConvergence {
                iterations,
                violation,
                best: Box::new(ConeProjection::from_coefficients(g, b, x, iterations, tol)),
            });
        }
        iterations += 1;
        passive[j] = true;

        let mut s = least_squares_on(g, b, &passive);
        if s[j] <= 0.0 {
            // rounding made the entering column useless
            passive[j] = false;
            blocked[j] = true;
            continue;
        }
        loop {
            let mut step = f64::INFINITY;
            let mut leaving = None;
            for i in 0..k {
                if passive[i] && s[i] <= 0.0 {
                    let a = x[i] / (x[i] - s[i]);
                    if a < step {
                        step = a;
                        leaving = Some(i);
                    }
                }
            }
            let Some(leaving) = leaving else { break };
            x += (&s - &x) * step;
            x[leaving] = 0.0;
            for i in 0..k {
                if passive[i] && x[i] <= 0.0 {
                    passive[i] = false;
                    x[i] = 0.0;
                }
            }
            s = least_squares_on(g, b, &passive);
        }
        x = s;
        blocked.iter_mut().for_each(|v| *v = false);
    }

    let violation = kkt_violation(g, b, &x);
    let projection = ConeProjection::from_coefficients(g, b, x, iterations, tol);
    if violation > tol {
        return Err(NumericsError::NonConvergence {
            iterations,
            violation,
            best: Box::new(projection),
        });
    }
    Ok(projection)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pinv_of_identity_and_zero() {
        let id = DMatrix::<f64>::identity(4, 4);
        let r = pinv(&id, DEFAULT_PINV_RTOL);
        assert_eq!(r.rank, 4);
        assert!((r.pinv - &id).amax() < 1e-15);

        let z = DMatrix::<f64>::zeros(3, 2);
        let r = pinv(&z, DEFAULT_PINV_RTOL);
        assert_eq!(r.rank, 0);
        assert_eq!(r.pinv.shape(), (2, 3));
        assert_eq!(r.pinv.amax(), 0.0);
    }

    #[test]
    fn pinv_of_singular_diagonal() {
        let v = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0384]);
        let r = pinv(&v, DEFAULT_PINV_RTOL);
        assert_eq!(r.rank, 1);
        assert!(r.pinv[(0, 0)].abs() < 1e-15);
        assert!((r.pinv[(1, 1)] - 1.0 / 0.0384).abs() < 1e-12);
        assert!((r.pinv[(1, 1)] - 26.0416667).abs() < 1e-7);
    }

    #[test]
    fn pinv_rectangular_shape() {
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let r = pinv(&a, DEFAULT_PINV_RTOL);
        assert_eq!(r.pinv.shape(), (3, 2));
        assert_eq!(r.rank, 2);
        assert!((&a * &r.pinv * &a - &a).amax() < 1e-12);
    }

    #[test]
    fn projector_examples() {
        let p = riskless_projectors(&DVector::from_vec(vec![1.0, 0.0])).unwrap();
        assert_eq!(p.parallel, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]));
        assert_eq!(p.perpendicular, DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 1.0]));

        let p = riskless_projectors(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert!(p.parallel.iter().all(|&v| (v - 0.5).abs() < 1e-15));

        assert_eq!(
            riskless_projectors(&DVector::zeros(3)).unwrap_err(),
            NumericsError::ZeroVector
        );
    }

    proptest! {
        #[test]
        fn projector_algebra(z in prop::collection::vec(-5.0f64..5.0, 1..7)) {
            let zeta = DVector::from_vec(z);
            prop_assume!(zeta.norm() > 1e-3);
            let p = riskless_projectors(&zeta).unwrap();
            let n = zeta.len();
            prop_assert!((&p.parallel * &p.parallel - &p.parallel).amax() < 1e-12);
            prop_assert!((&p.perpendicular * &p.perpendicular - &p.perpendicular).amax() < 1e-12);
            prop_assert!((&p.parallel + &p.perpendicular - DMatrix::identity(n, n)).amax() < 1e-15);
            prop_assert!((&p.parallel * &p.perpendicular).amax() < 1e-12);
            prop_assert!((&p.parallel * &zeta - &zeta).amax() < 1e-12 * zeta.amax());
            prop_assert!((&p.perpendicular * &zeta).amax() < 1e-12 * zeta.amax());
        }
    }

    #[test]
    fn nnls_feasible_target() {
        let g = DMatrix::from_row_slice(3, 3, &[1.0, 0.5, 0.0, 0.2, 1.0, 0.3, 0.0, 0.4, 1.0]);
        let c0 = DVector::from_vec(vec![0.7, 1.3, 0.4]);
        let b = &g * &c0;
        let r = nnls(&g, &b).unwrap();
        assert!(r.residual_norm <= 1e-9);
        assert!((r.coefficients - c0).amax() < 1e-12);
    }

    #[test]
    fn nnls_single_generator_opposite_target() {
        let g = DMatrix::from_row_slice(2, 1, &[1.0, 0.0]);
        let b = DVector::from_vec(vec![-1.0, 0.0]);
        let r = nnls(&g, &b).unwrap();
        assert_eq!(r.coefficients[0], 0.0);
        assert_eq!(r.point, DVector::zeros(2));
        assert!((r.residual_norm - 1.0).abs() < 1e-15);
    }

    #[test]
    fn nnls_two_payoff_columns() {
        let g = DMatrix::from_row_slice(2, 2, &[1.1, 1.1, 1.3, 0.9]);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let r = nnls(&g, &b).unwrap();
        assert!((r.coefficients[0] - 5.0 / 11.0).abs() < 1e-12);
        assert!((r.coefficients[1] - 5.0 / 11.0).abs() < 1e-12);
        assert!(r.residual_norm < 1e-12);
    }

    #[test]
    fn nnls_rejects_bad_input() {
        let g = DMatrix::<f64>::zeros(2, 0);
        assert_eq!(nnls(&g, &DVector::zeros(2)).unwrap_err(), NumericsError::NoGenerators);
        let g = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            nnls(&g, &DVector::zeros(3)),
            Err(NumericsError::DimensionMismatch { rows: 2, len: 3 })
        ));
    }

    #[test]
    fn nnls_zero_target() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let r = nnls(&g, &DVector::zeros(2)).unwrap();
        assert_eq!(r.coefficients, DVector::zeros(2));
        assert_eq!(r.residual_norm, 0.0);
    }

    #[test]
    fn nnls_collinear_generators_are_handled() {
        // duplicated and scaled columns make the active set rank deficient
        let g = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 1.0, 1.0, 2.0, 0.0]);
        let b = DVector::from_vec(vec![3.0, 1.0]);
        let r = nnls(&g, &b).unwrap();
        assert!(r.residual_norm < 1e-12);
        assert!(r.coefficients.iter().all(|&c| c >= 0.0));
    }

    fn grid_oracle(g: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
        // exhaustive search over c ∈ [0,3]^k with step 1e-2
        let k = g.ncols();
        let steps = 301;
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; k];
        let mut c = DVector::zeros(k);
        loop {
            for j in 0..k {
                c[j] = idx[j] as f64 * 1e-2;
            }
            best = best.min((g * &c - b).norm_squared());
            let mut pos = 0;
            loop {
                if pos == k {
                    return best;
                }
                idx[pos] += 1;
                if idx[pos] < steps {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
    }

    #[test]
    fn nnls_never_beaten_by_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for case in 0..8 {
            let k = 1 + case % 3;
            let m = 1 + (case / 2) % 3;
            let g = DMatrix::from_fn(m, k, |_, _| rng.gen_range(-2.0..2.0));
            let b = DVector::from_fn(m, |_, _| rng.gen_range(-3.0..3.0));
            let r = nnls(&g, &b).unwrap();
            let obj = r.residual_norm.powi(2);
            let oracle = grid_oracle(&g, &b);
            assert!(oracle >= obj - 1e-3, "case {case}: grid {oracle} < nnls {obj}");
        }
    }

    fn random_matrix(rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let rows = rng.gen_range(1..=8);
        let cols = rng.gen_range(1..=8);
        let base = DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0));
        if rng.gen_bool(0.5) {
            return base;
        }
        // rank-deficient: U Σ U' with some zeroed singular values
        let n = rows;
        let q = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0)).qr().q();
        let sigma = DVector::from_fn(n, |_, _| {
            if rng.gen_bool(0.4) {
                0.0
            } else {
                rng.gen_range(0.1..10.0)
            }
        });
        &q * DMatrix::from_diagonal(&sigma) * q.transpose()
    }

    pub(crate) fn penrose_gap(a: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
        let rel = |lhs: DMatrix<f64>, rhs: &DMatrix<f64>| {
            (lhs - rhs).amax() / rhs.amax().max(1.0)
        };
        let ap = a * p;
        let pa = p * a;
        rel(&ap * a, a)
            .max(rel(&pa * p, p))
            .max(rel(ap.transpose(), &ap))
            .max(rel(pa.transpose(), &pa))
    }

    #[test]
    fn penrose_conditions_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let a = random_matrix(&mut rng);
            let r = pinv(&a, DEFAULT_PINV_RTOL);
            let gap = penrose_gap(&a, &r.pinv);
            assert!(gap <= 1e-8, "gap {gap:e} sv {:?} shape {:?}", r.singular_values.as_slice(), a.shape());
            let above = r.singular_values.iter().filter(|&&s| s > r.cutoff).count();
            assert_eq!(above, r.rank);
        }
    }

    #[test]
    fn cone_projection_is_orthogonal_to_its_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let m = rng.gen_range(1..=6);
            let k = rng.gen_range(1..=10);
            let g = DMatrix::from_fn(m, k, |_, _| rng.gen_range(-1.0..2.0));
            let b = DVector::from_fn(m, |_, _| rng.gen_range(-2.0..2.0));
            let r = nnls(&g, &b).unwrap();
            let xi = &r.point - &b;
            assert!(xi.dot(&r.point).abs() <= 1e-8 * b.norm_squared().max(1e-300));
            assert!(r.coefficients.iter().all(|&c| c >= 0.0));
            assert!(kkt_violation(&g, &b, &r.coefficients) <= r.kkt_tolerance);
        }
    }
}
