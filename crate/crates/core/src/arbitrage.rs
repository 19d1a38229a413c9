//! Constructive no-arbitrage test.
//!
//! The price vector is projected onto the cone generated by the payoff
//! columns `X(·,ω)`. If it lies in the cone the generator weights are a
//! pricing measure `Π`. Otherwise `ξ = x* − x`, the difference between the
//! closest cone point and the prices, costs strictly less than zero and pays
//! a nonnegative amount in every outcome.

use nalgebra::DVector;
use thiserror::Error;

use crate::market::{Market, Portfolio};
use crate::numerics::{nnls, NumericsError};

pub const DEFAULT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArbitrageError {
    #[error(transparent)]
    Solver(#[from] NumericsError),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
    #[error("all prices are zero; the pricing measure has zero mass")]
    ZeroMass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PricingMeasure {
    /// Weight per outcome, `x = Σ_ω X(·,ω)π(ω)`.
    pub pi: DVector<f64>,
    /// `‖Π‖ = Σ_ω π(ω)`
    pub mass: f64,
    /// Risk-neutral probabilities `Π/‖Π‖`.
    pub q: DVector<f64>,
    /// `1/‖Π‖`
    pub implied_return: f64,
    /// `‖X·π − x‖₂` reported by the cone projection.
    pub residual_norm: f64,
    /// Every `π(ω)` exceeds the tolerance.
    pub strictly_positive: bool,
    /// Residual is within a factor two of the acceptance threshold.
    pub near_boundary: bool,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArbitrageCertificate {
    pub xi: Portfolio,
    /// `ξ'x`
    pub cost: f64,
    /// `min_ω ξ'X(·,ω)`
    pub worst_payoff: f64,
    pub payoffs: DVector<f64>,
    /// Closest point of the payoff cone to the prices.
    pub cone_point: DVector<f64>,
    /// Slack allowed on the payoff sign test.
    pub payoff_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArbitrageOutcome {
    Measure(PricingMeasure),
    Arbitrage(ArbitrageCertificate),
}

impl ArbitrageOutcome {
    pub fn is_arbitrage(&self) -> bool {
        matches!(self, ArbitrageOutcome::Arbitrage(_))
    }
}

/// `tol·max(1, ‖X‖∞)`, the slack on certificate payoff signs.
pub fn payoff_tolerance(m: &Market, tol: f64) -> f64 {
    let x = m.payoffs();
    let inf_norm = x
        .row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    tol * inf_norm.max(1.0)
}

fn price_tolerance(m: &Market, tol: f64) -> f64 {
    tol * m.prices().norm().max(1.0)
}

/// Returns a pricing measure or a certified arbitrage portfolio.
pub fn check_arbitrage(m: &Market, tol: f64) -> Result<ArbitrageOutcome, ArbitrageError> {
    if !tol.is_finite() || tol <= 0.0 {
        return Err(ArbitrageError::BadTolerance(tol));
    }
    let x = m.prices();
    let projection = nnls(m.payoffs(), x)?;
    let threshold = price_tolerance(m, tol);

    if projection.residual_norm <= threshold {
        let pi = projection.coefficients;
        let mass: f64 = pi.iter().sum();
        if mass <= 0.0 {
            return Err(ArbitrageError::ZeroMass);
        }
        return Ok(ArbitrageOutcome::Measure(PricingMeasure {
            q: &pi / mass,
            implied_return: 1.0 / mass,
            strictly_positive: pi.iter().all(|&v| v > tol),
            near_boundary: projection.residual_norm > 0.5 * threshold,
            residual_norm: projection.residual_norm,
            mass,
            pi,
            tolerance: tol,
        }));
    }

    let xi = Portfolio::from_vector(&projection.point - x);
    let payoffs = m.payoff(&xi);
    Ok(ArbitrageOutcome::Arbitrage(ArbitrageCertificate {
        cost: m.cost(&xi),
        worst_payoff: payoffs.min(),
        payoffs,
        xi,
        cone_point: projection.point,
        payoff_tolerance: payoff_tolerance(m, tol),
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Condition {
    pub name: &'static str,
    pub passed: bool,
    /// The recomputed quantity being tested.
    pub value: f64,
    /// Distance to the threshold; nonnegative when the condition passes.
    pub slack: f64,
}

impl Condition {
    fn at_most(name: &'static str, value: f64, bound: f64) -> Self {
        Condition {
            name,
            passed: value <= bound,
            value,
            slack: bound - value,
        }
    }

    fn at_least(name: &'static str, value: f64, bound: f64) -> Self {
        Condition {
            name,
            passed: value >= bound,
            value,
            slack: value - bound,
        }
    }

    fn below(name: &'static str, value: f64, bound: f64) -> Self {
        Condition {
            name,
            passed: value < bound,
            value,
            slack: bound - value,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport {
    pub conditions: Vec<Condition>,
    pub tolerance: f64,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.passed)
    }

    pub fn violations(&self) -> Vec<&'static str> {
        self.conditions
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name)
            .collect()
    }
}

/// Re-checks a solver result with plain matrix arithmetic.
pub fn verify_certificate(m: &Market, result: &ArbitrageOutcome, tol: f64) -> VerificationReport {
    let conditions = match result {
        ArbitrageOutcome::Measure(pm) => verify_measure(m, pm, tol),
        ArbitrageOutcome::Arbitrage(cert) => verify_arbitrage(m, &cert.xi, tol),
    };
    VerificationReport {
        conditions,
        tolerance: tol,
    }
}

fn verify_measure(m: &Market, pm: &PricingMeasure, tol: f64) -> Vec<Condition> {
    let x = m.prices();
    let mut conditions = Vec::new();
    if pm.pi.len() != m.num_outcomes() || pm.q.len() != m.num_outcomes() {
        conditions.push(Condition {
            name: "dimension",
            passed: false,
            value: pm.pi.len() as f64,
            slack: -1.0,
        });
        return conditions;
    }
    let replicated = m.payoffs() * &pm.pi;
    conditions.push(Condition::at_most(
        "replicates_prices",
        (replicated - x).norm(),
        price_tolerance(m, tol),
    ));
    conditions.push(Condition::at_least("pi_nonnegative", pm.pi.min(), 0.0));
    let mass: f64 = pm.pi.iter().sum();
    conditions.push(Condition::at_most("mass_consistent", (mass - pm.mass).abs(), 1e-12 * mass.abs().max(1.0)));
    conditions.push(Condition::at_most("q_normalized", (pm.q.sum() - 1.0).abs(), 1e-12));
    conditions.push(Condition::at_least("q_nonnegative", pm.q.min(), 0.0));
    conditions.push(Condition::at_most(
        "implied_return_consistent",
        (pm.implied_return * mass - 1.0).abs(),
        1e-12,
    ));
    conditions
}

fn verify_arbitrage(m: &Market, xi: &Portfolio, tol: f64) -> Vec<Condition> {
    if xi.len() != m.num_instruments() {
        return vec![Condition {
            name: "dimension",
            passed: false,
            value: xi.len() as f64,
            slack: -1.0,
        }];
    }
    let cost = xi.as_vector().dot(m.prices());
    let worst = m.payoffs().tr_mul(xi.as_vector()).min();
    vec![
        Condition::below("negative_cost", cost, 0.0),
        Condition::at_least("nonnegative_payoffs", worst, -payoff_tolerance(m, tol)),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentCheck {
    pub instrument: String,
    /// `E_Q[X_i]`
    pub expected_payoff: f64,
    /// `R·x_i`
    pub grown_price: f64,
    pub deviation: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyReport {
    pub implied_return: f64,
    pub instruments: Vec<InstrumentCheck>,
    pub tolerance: f64,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.instruments.iter().all(|c| c.passed)
    }
}

/// Checks `E_Q[X_i] = R·x_i` for every instrument, so every unit-cost
/// portfolio has expected realized return `R` under `Q`.
pub fn risk_neutral_consistency(m: &Market, pm: &PricingMeasure, tol: f64) -> ConsistencyReport {
    let expected = m.payoffs() * &pm.q;
    let instruments = m
        .instruments()
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let grown = pm.implied_return * m.prices()[i];
            let deviation = (expected[i] - grown).abs();
            let bound = tol * pm.implied_return.abs().max(1.0) * m.prices().norm().max(1.0);
            InstrumentCheck {
                instrument: name.clone(),
                expected_payoff: expected[i],
                grown_price: grown,
                deviation,
                passed: deviation <= bound,
            }
        })
        .collect();
    ConsistencyReport {
        implied_return: pm.implied_return,
        instruments,
        tolerance: tol,
    }
}
