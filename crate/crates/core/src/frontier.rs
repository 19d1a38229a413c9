//! Efficient portfolios: minimum variance of realized return for a target
//! expected realized return, subject to unit cost.
//!
//! Two regimes are handled. When the covariance of payoffs is invertible the
//! closed-form solution through the constants `A, B, C, D` applies. When it is
//! singular because a riskless portfolio exists, efficient portfolios are
//! affine combinations of the riskless portfolio and the tangency fund.

use nalgebra::DVector;
use thiserror::Error;

use crate::market::{
    is_zero_cost, moments, realized_return, Market, MarketError, Moments, Portfolio,
};
use crate::numerics::{pinv, DEFAULT_PINV_RTOL};

/// Least-squares residual allowed when solving `X'ζ = 1`, times `√|Ω|`.
pub const RISKLESS_RESIDUAL_TOL: f64 = 1e-9;
/// `|D| ≤ DEGENERATE_D_RTOL·|A·C|` means only one expected return is attainable.
pub const DEGENERATE_D_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FrontierError {
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("covariance is singular (rank {rank} of {dimension}); use the riskless route")]
    SingularCovariance { rank: usize, dimension: usize },
    #[error("D = AC - B² = {d:e} vanishes; only one expected return is attainable")]
    DegenerateFrontier { d: f64 },
    #[error("arbitrage present: {0}")]
    ArbitragePresent(String),
    #[error("tangency fund is degenerate (E[X] = R·x); target {target} differs from the riskless return {riskless_return}")]
    DegenerateAlpha { target: f64, riskless_return: f64 },
    #[error("covariance is singular (rank {rank} of {dimension}) and no riskless portfolio exists")]
    UnsupportedMarket { rank: usize, dimension: usize },
    #[error("fund targets coincide ({rho0} = {rho1})")]
    IndistinctTargets { rho0: f64, rho1: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierConstants {
    /// `x'V⁻¹x`
    pub a: f64,
    /// `x'V⁻¹E[X]`
    pub b: f64,
    /// `E[X]'V⁻¹x`, equal to `b` up to rounding
    pub b_transposed: f64,
    /// `E[X]'V⁻¹E[X]`
    pub c: f64,
    /// `AC − B²`
    pub d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontierMode {
    Nonsingular,
    RisklessRoute,
}

impl FrontierMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            FrontierMode::Nonsingular => "nonsingular",
            FrontierMode::RisklessRoute => "riskless_route",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierSolution {
    /// Efficient portfolio with unit cost.
    pub xi: Portfolio,
    pub lambda: f64,
    /// Weight on the risky fund; in the riskless route this is the beta of
    /// `ξ` against the tangency fund.
    pub mu: f64,
    pub target_mean: f64,
    pub variance: f64,
    pub mode: FrontierMode,
    /// `(lambda, mu) / multiplier_scale` are the multipliers of the
    /// first-order conditions. In the riskless route the scale is the cost of
    /// the unnormalized tangency fund; otherwise it is 1.
    pub multiplier_scale: f64,
}

impl FrontierSolution {
    /// Multipliers `(λ, μ)` with `Vξ = λx + μE[X]`.
    pub fn lagrange_multipliers(&self) -> (f64, f64) {
        (
            self.lambda / self.multiplier_scale,
            self.mu / self.multiplier_scale,
        )
    }

    /// `‖Vξ − λx − μE[X]‖∞` with the first-order multipliers.
    pub fn stationarity_residual(&self, m: &Market, mo: &Moments) -> f64 {
        let (lambda, mu) = self.lagrange_multipliers();
        (&mo.covariance * self.xi.as_vector() - m.prices() * lambda - &mo.mean * mu).amax()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RisklessInfo {
    /// Riskless portfolio with `ζ'x = 1`.
    pub zeta: Portfolio,
    /// Its constant realized return `R`.
    pub riskless_return: f64,
    /// Tangency fund `V⁺(E[X] − R·x)` normalized to unit cost, or `None`
    /// when it is degenerate.
    pub alpha: Option<Portfolio>,
    /// Cost of the unnormalized tangency fund.
    pub alpha_cost: f64,
}

/// Looks for a portfolio with constant payoff. Returns `None` when no
/// combination of payoffs is constant across outcomes.
pub fn find_riskless(m: &Market) -> Result<Option<RisklessInfo>, FrontierError> {
    let x = m.payoffs();
    let k = m.num_outcomes();
    let ones = DVector::from_element(k, 1.0);
    let px = pinv(x, DEFAULT_PINV_RTOL);
    // min-norm least-squares solution of X'ζ = 1
    let zeta0 = px.pinv.tr_mul(&ones);
    let residual = (x.tr_mul(&zeta0) - &ones).norm();
    if residual > RISKLESS_RESIDUAL_TOL * (k as f64).sqrt() {
        return Ok(None);
    }

    // Any portfolio with zero payoff but nonzero cost would give a second
    // riskless return.
    let prices = m.prices();
    let in_span = x * (&px.pinv * prices);
    let off_span = (prices - in_span).norm();
    if off_span > RISKLESS_RESIDUAL_TOL * prices.norm().max(1.0) {
        return Err(FrontierError::ArbitragePresent(format!(
            "riskless portfolios with different returns exist (price component {off_span:e} outside the payoff span)"
        )));
    }
    let zeta0 = Portfolio::from_vector(zeta0);
    let cost = m.cost(&zeta0);
    if is_zero_cost(m, &zeta0, cost) {
        return Err(FrontierError::ArbitragePresent(
            "a zero-cost portfolio pays a constant nonzero amount".into(),
        ));
    }
    let zeta = zeta0.scaled(1.0 / cost);
    let riskless_return = 1.0 / cost;

    let mo = moments(m);
    let v_pinv = pinv(&mo.covariance, DEFAULT_PINV_RTOL).pinv;
    let excess = &mo.mean - prices * riskless_return;
    let alpha_raw = Portfolio::from_vector(v_pinv * excess);
    let alpha_cost = m.cost(&alpha_raw);
    let alpha = if is_zero_cost(m, &alpha_raw, alpha_cost) {
        None
    } else {
        Some(alpha_raw.scaled(1.0 / alpha_cost))
    };
    Ok(Some(RisklessInfo {
        zeta,
        riskless_return,
        alpha,
        alpha_cost,
    }))
}

struct InverseApplied {
    constants: FrontierConstants,
    v_inv_x: DVector<f64>,
    /// `V⁻¹e` where `e` is the part of `E` orthogonal to `x` in the `V⁻¹` inner product.
    v_inv_excess: DVector<f64>,
    /// `e′V⁻¹e = D / A`.
    excess_norm: f64,
}

fn constants_from(m: &Market, mo: &Moments) -> Result<InverseApplied, FrontierError> {
    let n = m.num_instruments();
    let inv = pinv(&mo.covariance, DEFAULT_PINV_RTOL);
    if inv.rank < n {
        return Err(FrontierError::SingularCovariance {
            rank: inv.rank,
            dimension: n,
        });
    }
    let x = m.prices();
    let v_inv_x = &inv.pinv * x;
    let v_inv_mean = &inv.pinv * &mo.mean;
    let a = x.dot(&v_inv_x);
    let b = x.dot(&v_inv_mean);
    let b_transposed = mo.mean.dot(&v_inv_x);
    let c = mo.mean.dot(&v_inv_mean);
    // AC − B² cancels badly when x and E are nearly parallel under V⁻¹.
    // Orthogonalize E against x instead (one extra pass to mop up), so
    // D = A·e′V⁻¹e is a sum of squares.
    let mut excess = &mo.mean - x * (b / a);
    let mut v_inv_excess = &inv.pinv * &excess;
    let drift = x.dot(&v_inv_excess) / a;
    excess -= x * drift;
    v_inv_excess = &inv.pinv * &excess;
    let excess_norm = excess.dot(&v_inv_excess);
    Ok(InverseApplied {
        constants: FrontierConstants {
            a,
            b,
            b_transposed,
            c,
            d: a * excess_norm,
        },
        v_inv_x,
        v_inv_excess,
        excess_norm,
    })
}

/// `A, B, C, D` for a market with invertible covariance.
pub fn frontier_constants(m: &Market) -> Result<FrontierConstants, FrontierError> {
    constants_from(m, &moments(m)).map(|k| k.constants)
}

/// Minimum-variance unit-cost portfolio with expected realized return `rho`.
pub fn efficient_portfolio(m: &Market, rho: f64) -> Result<FrontierSolution, FrontierError> {
    let mo = moments(m);
    match constants_from(m, &mo) {
        Ok(inv) => nonsingular_solution(&inv, rho),
        Err(FrontierError::SingularCovariance { rank, dimension }) => match find_riskless(m)? {
            Some(info) => riskless_solution(m, &info, rho),
            None => Err(FrontierError::UnsupportedMarket { rank, dimension }),
        },
        Err(e) => Err(e),
    }
}

fn nonsingular_solution(inv: &InverseApplied, rho: f64) -> Result<FrontierSolution, FrontierError> {
    let FrontierConstants { a, b, c, d, .. } = inv.constants;
    if d.abs() <= DEGENERATE_D_RTOL * (a * c).abs() {
        return Err(FrontierError::DegenerateFrontier { d });
    }
    // Same λ, μ as (C − ρB)/D and (ρA − B)/D, rearranged so that
    // ξ = V⁻¹x/A + μV⁻¹e avoids subtracting two O(1/D) vectors.
    let rho_min = b / a;
    let mu = (rho - rho_min) / inv.excess_norm;
    let lambda = 1.0 / a - mu * rho_min;
    let xi = &inv.v_inv_x / a + &inv.v_inv_excess * mu;
    Ok(FrontierSolution {
        xi: Portfolio::from_vector(xi),
        lambda,
        mu,
        target_mean: rho,
        // (C − 2Bρ + Aρ²)/D written as 1/A + (ρ − B/A)²·A/D.
        variance: 1.0 / a + (rho - rho_min) * mu,
        mode: FrontierMode::Nonsingular,
        multiplier_scale: 1.0,
    })
}

/// Efficient portfolio `μα + (1 − μ)ζ` in the riskless regime.
pub fn riskless_solution(
    m: &Market,
    info: &RisklessInfo,
    rho: f64,
) -> Result<FrontierSolution, FrontierError> {
    let r = info.riskless_return;
    let Some(alpha) = &info.alpha else {
        if (rho - r).abs() <= 1e-12 * r.abs().max(1.0) {
            return Ok(FrontierSolution {
                xi: info.zeta.clone(),
                lambda: 0.0,
                mu: 0.0,
                target_mean: rho,
                variance: 0.0,
                mode: FrontierMode::RisklessRoute,
                multiplier_scale: 1.0,
            });
        }
        return Err(FrontierError::DegenerateAlpha {
            target: rho,
            riskless_return: r,
        });
    };
    let alpha_profile = realized_return(m, alpha)?;
    let mu = (rho - r) / (alpha_profile.mean - r);
    Ok(FrontierSolution {
        xi: info.zeta.mix(alpha, mu),
        lambda: -mu * r,
        mu,
        target_mean: rho,
        variance: mu * mu * alpha_profile.variance,
        mode: FrontierMode::RisklessRoute,
        multiplier_scale: info.alpha_cost,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoFund {
    pub beta: f64,
    pub xi: Portfolio,
}

/// `ξ = (1 − β)ξ₀ + βξ₁` with `β = (ρ − ρ₀)/(ρ₁ − ρ₀)`.
pub fn two_fund_compose(
    m: &Market,
    f0: &FrontierSolution,
    f1: &FrontierSolution,
    rho: f64,
) -> Result<TwoFund, FrontierError> {
    m.check_dimension(&f0.xi)?;
    m.check_dimension(&f1.xi)?;
    let (rho0, rho1) = (f0.target_mean, f1.target_mean);
    if (rho1 - rho0).abs() <= 1e-12 * rho0.abs().max(rho1.abs()).max(1.0) {
        return Err(FrontierError::IndistinctTargets { rho0, rho1 });
    }
    let beta = (rho - rho0) / (rho1 - rho0);
    Ok(TwoFund {
        beta,
        xi: f0.xi.mix(&f1.xi, beta),
    })
}
