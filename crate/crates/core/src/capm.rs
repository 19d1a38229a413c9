//! Beta and the realized-return CAPM identity.
//!
//! For efficient `ξ, ξ₀, ξ₁` the identity `R(ξ) − R(ξ₀) = β(R(ξ₁) − R(ξ₀))`
//! holds outcome by outcome, not only after taking expectations. The report
//! here evaluates both sides on every outcome.

use nalgebra::DVector;
use thiserror::Error;

use crate::market::{realized_return, Market, MarketError, Portfolio};

/// Relative floor on `Var(R(ξ₁) − R(ξ₀))`.
pub const DEGENERATE_VARIANCE_RTOL: f64 = 1e-12;
/// Largest return variance still treated as riskless.
pub const RISKLESS_VARIANCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CapmError {
    #[error(transparent)]
    Market(#[from] MarketError),
    #[error("the two funds have indistinguishable realized returns (Var = {variance:e})")]
    DegenerateFunds { variance: f64 },
    #[error("portfolio passed as riskless has return variance {variance:e}")]
    NotRiskless { variance: f64 },
    #[error("market portfolio has zero return variance")]
    RisklessMarketPortfolio,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityReport {
    pub beta: f64,
    /// `(R(ξ) − R(ξ₀)) − β(R(ξ₁) − R(ξ₀))` per outcome.
    pub residual_per_outcome: DVector<f64>,
    pub max_abs_residual: f64,
    /// `|(E[R] − E[R₀]) − β(E[R₁] − E[R₀])|`
    pub expectation_gap: f64,
    /// `max(1, max_ω |R(ξ)(ω)|)`
    pub scale: f64,
}

impl IdentityReport {
    pub fn scaled_max_residual(&self) -> f64 {
        self.max_abs_residual / self.scale
    }

    pub fn holds(&self, tol: f64) -> bool {
        self.scaled_max_residual() <= tol
    }
}

struct Excess {
    lhs: DVector<f64>,
    fund: DVector<f64>,
    rmax: f64,
}

fn excess_returns(
    m: &Market,
    xi: &Portfolio,
    xi0: &Portfolio,
    xi1: &Portfolio,
) -> Result<Excess, CapmError> {
    let r = realized_return(m, xi)?.per_outcome;
    let r0 = realized_return(m, xi0)?.per_outcome;
    let r1 = realized_return(m, xi1)?.per_outcome;
    let rmax = r.amax();
    Ok(Excess {
        lhs: &r - &r0,
        fund: &r1 - &r0,
        rmax,
    })
}

fn beta_of(m: &Market, e: &Excess, fund_scale: f64) -> Result<f64, CapmError> {
    let variance = m.variance(&e.fund);
    if variance <= DEGENERATE_VARIANCE_RTOL * fund_scale * fund_scale {
        return Err(CapmError::DegenerateFunds { variance });
    }
    Ok(m.covariance(&e.lhs, &e.fund) / variance)
}

fn fund_scale(m: &Market, xi0: &Portfolio, xi1: &Portfolio) -> Result<f64, CapmError> {
    let a = realized_return(m, xi0)?.per_outcome.amax();
    let b = realized_return(m, xi1)?.per_outcome.amax();
    Ok(a.max(b).max(1.0))
}

/// `Cov(R(ξ) − R(ξ₀), R(ξ₁) − R(ξ₀)) / Var(R(ξ₁) − R(ξ₀))` under `p`.
pub fn beta(m: &Market, xi: &Portfolio, xi0: &Portfolio, xi1: &Portfolio) -> Result<f64, CapmError> {
    let e = excess_returns(m, xi, xi0, xi1)?;
    beta_of(m, &e, fund_scale(m, xi0, xi1)?)
}

/// Evaluates the realized-return identity on every outcome. No judgement is
/// made about whether the inputs are efficient.
pub fn verify_realized_identity(
    m: &Market,
    xi: &Portfolio,
    xi0: &Portfolio,
    xi1: &Portfolio,
) -> Result<IdentityReport, CapmError> {
    let e = excess_returns(m, xi, xi0, xi1)?;
    let beta = beta_of(m, &e, fund_scale(m, xi0, xi1)?)?;
    let residual_per_outcome = &e.lhs - &e.fund * beta;
    let max_abs_residual = residual_per_outcome.amax();
    let expectation_gap = (m.expectation(&e.lhs) - beta * m.expectation(&e.fund)).abs();
    Ok(IdentityReport {
        beta,
        residual_per_outcome,
        max_abs_residual,
        expectation_gap,
        scale: e.rmax.max(1.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassicalCapm {
    /// `Cov(R(ξ), R(ξ₁)) / Var(R(ξ₁))`
    pub beta: f64,
    /// `E[R(ξ)] − R₀`
    pub lhs: f64,
    /// `β(E[R(ξ₁)] − R₀)`
    pub rhs: f64,
    pub riskless_return: f64,
}

/// Expectation form `E[R] − R₀ = β(E[R₁] − R₀)` against a riskless portfolio.
pub fn classical_capm(
    m: &Market,
    xi: &Portfolio,
    market_pf: &Portfolio,
    riskless: &Portfolio,
) -> Result<ClassicalCapm, CapmError> {
    let r0 = realized_return(m, riskless)?;
    if r0.variance > RISKLESS_VARIANCE_TOL {
        return Err(CapmError::NotRiskless {
            variance: r0.variance,
        });
    }
    let r = realized_return(m, xi)?;
    let r1 = realized_return(m, market_pf)?;
    if r1.variance <= 0.0 {
        return Err(CapmError::RisklessMarketPortfolio);
    }
    let beta = m.covariance(&r.per_outcome, &r1.per_outcome) / r1.variance;
    let riskless_return = r0.mean;
    Ok(ClassicalCapm {
        beta,
        lhs: r.mean - riskless_return,
        rhs: beta * (r1.mean - riskless_return),
        riskless_return,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontier::efficient_portfolio;
    use crate::market::fixtures::{m1, m3};
    use crate::market::normalize_portfolio;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pf(v: &[f64]) -> Portfolio {
        Portfolio::new(v.to_vec())
    }

    #[test]
    fn beta_examples() {
        let m = m1();
        let (xi, z, a) = (pf(&[0.5, 0.5]), pf(&[1.0, 0.0]), pf(&[0.0, 1.0]));
        // hand covariance: LHS (0.1, -0.1), fund (0.2, -0.2) ⇒ β = 0.5
        assert!((beta(&m, &xi, &z, &a).unwrap() - 0.5).abs() < 1e-12);
        assert!((beta(&m, &a, &z, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(beta(&m, &z, &z, &a).unwrap(), 0.0);
        let mu = efficient_portfolio(&m, 1.12).unwrap().mu;
        assert!((beta(&m, &xi, &z, &a).unwrap() - mu).abs() < 1e-12);
    }

    #[test]
    fn identical_funds_are_rejected() {
        let m = m1();
        let a = pf(&[0.0, 1.0]);
        assert!(matches!(
            beta(&m, &pf(&[0.5, 0.5]), &a, &a.scaled(2.0)),
            Err(CapmError::DegenerateFunds { .. })
        ));
    }

    #[test]
    fn m1_identity_has_zero_residual() {
        let m = m1();
        let rep =
            verify_realized_identity(&m, &pf(&[0.5, 0.5]), &pf(&[1.0, 0.0]), &pf(&[0.0, 1.0]))
                .unwrap();
        assert!((rep.beta - 0.5).abs() < 1e-12);
        assert!(rep.max_abs_residual < 1e-12);
        assert_eq!(rep.residual_per_outcome.len(), 2);

        let rep =
            verify_realized_identity(&m, &pf(&[0.0, 1.0]), &pf(&[1.0, 0.0]), &pf(&[0.0, 1.0]))
                .unwrap();
        assert!((rep.beta - 1.0).abs() < 1e-12);
        assert!(rep.max_abs_residual < 1e-15);
    }

    #[test]
    fn m3_efficient_triple() {
        let m = m3();
        let xi = efficient_portfolio(&m, 1.12).unwrap().xi;
        let xi0 = efficient_portfolio(&m, 1.05).unwrap().xi;
        let xi1 = efficient_portfolio(&m, 1.20).unwrap().xi;
        let rep = verify_realized_identity(&m, &xi, &xi0, &xi1).unwrap();
        assert!(rep.max_abs_residual <= 1e-8);
        assert!((rep.beta - (1.12 - 1.05) / (1.20 - 1.05)).abs() < 1e-9);
    }

    #[test]
    fn classical_examples() {
        let m = m1();
        let (xi, mk, rf) = (pf(&[0.5, 0.5]), pf(&[0.0, 1.0]), pf(&[1.0, 0.0]));
        let c = classical_capm(&m, &xi, &mk, &rf).unwrap();
        assert!((c.beta - 0.5).abs() < 1e-12);
        assert!((c.lhs - 0.02).abs() < 1e-12);
        assert!((c.rhs - 0.02).abs() < 1e-12);

        let c = classical_capm(&m, &rf, &mk, &rf).unwrap();
        assert_eq!(c.beta, 0.0);
        assert!(c.lhs.abs() < 1e-15 && c.rhs.abs() < 1e-15);

        let c = classical_capm(&m, &mk, &mk, &rf).unwrap();
        assert!((c.beta - 1.0).abs() < 1e-12);
        assert!((c.lhs - c.rhs).abs() < 1e-12);

        assert!(matches!(
            classical_capm(&m, &xi, &mk, &xi),
            Err(CapmError::NotRiskless { .. })
        ));
    }

    fn random_market(rng: &mut ChaCha8Rng, min_n: usize) -> Market {
        let n = rng.gen_range(min_n..=6);
        let k = rng.gen_range(n + 1..=12);
        let prices: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..2.0)).collect();
        let payoffs = prices
            .iter()
            .map(|&p| (0..k).map(|_| p * rng.gen_range(0.7..1.5)).collect())
            .collect();
        let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..1.0)).collect();
        let s: f64 = w.iter().sum();
        Market::new(
            (0..n).map(|i| format!("s{i}")).collect(),
            prices,
            payoffs,
            w.iter().map(|v| v / s).collect(),
        )
        .unwrap()
    }

    #[test]
    fn expectation_gap_bounded_by_pointwise_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let m = random_market(&mut rng, 2);
            let n = m.num_instruments();
            let draw = |rng: &mut ChaCha8Rng| {
                Portfolio::new((0..n).map(|_| rng.gen_range(-1.0..2.0)).collect())
            };
            let (xi, xi0, xi1) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let Ok(rep) = verify_realized_identity(&m, &xi, &xi0, &xi1) else { continue };
            let weighted: f64 = rep
                .residual_per_outcome
                .iter()
                .zip(m.probabilities().iter())
                .map(|(r, p)| p * r.abs())
                .sum();
            assert!(rep.expectation_gap <= weighted + 1e-12);
        }
    }

    #[test]
    fn rescaling_a_fund_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..50 {
            let m = random_market(&mut rng, 2);
            let (Ok(f), Ok(f0), Ok(f1)) = (
                efficient_portfolio(&m, 1.1),
                efficient_portfolio(&m, 1.0),
                efficient_portfolio(&m, 1.25),
            ) else {
                continue;
            };
            let a = verify_realized_identity(&m, &f.xi, &f0.xi, &f1.xi).unwrap();
            let doubled = normalize_portfolio(&m, &f1.xi.scaled(2.0)).unwrap();
            let b = verify_realized_identity(&m, &f.xi, &f0.xi, &doubled).unwrap();
            assert!((a.beta - b.beta).abs() <= 1e-12 * a.beta.abs().max(1.0));
            assert!((a.residual_per_outcome - b.residual_per_outcome).amax() <= 1e-12);
        }
    }

    #[test]
    fn identity_separates_efficient_from_random_portfolios() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let (mut draws, mut flagged) = (0, 0);
        while draws < 200 {
            let m = random_market(&mut rng, 3);
            let (Ok(f0), Ok(f1)) = (efficient_portfolio(&m, 1.0), efficient_portfolio(&m, 1.25))
            else {
                continue;
            };
            let n = m.num_instruments();
            let raw = Portfolio::new((0..n).map(|_| rng.gen_range(-1.0..2.0)).collect());
            let Ok(xi) = normalize_portfolio(&m, &raw) else { continue };
            let rep = verify_realized_identity(&m, &xi, &f0.xi, &f1.xi).unwrap();
            draws += 1;
            if rep.max_abs_residual > 1e-4 {
                flagged += 1;
            }
        }
        assert!(flagged as f64 >= 0.95 * draws as f64, "{flagged}/{draws}");
    }
}
