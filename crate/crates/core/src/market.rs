//! One-period market data: prices, outcome-dependent payoffs, and outcome
//! probabilities over a finite outcome set.
//!
//! Payoffs are stored instrument-major: row `i` holds the final price of
//! instrument `i` in every outcome, so the payoff of a portfolio `ξ` is the
//! row vector `ξ'X`.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use thiserror::Error;

/// Absolute tolerance on `Σ p(ω) = 1`.
pub const PROBABILITY_SUM_TOL: f64 = 1e-9;
/// Smallest admissible outcome probability.
pub const MIN_PROBABILITY: f64 = 1e-12;
/// Relative threshold below which a portfolio cost counts as zero.
pub const ZERO_COST_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarketError {
    #[error("market needs at least one instrument and one outcome")]
    Empty,
    #[error("{what}: expected length {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("probability of outcome {index} is {value}, must be at least {MIN_PROBABILITY:e}")]
    NonPositiveProbability { index: usize, value: f64 },
    #[error("probabilities sum to {sum}, expected 1")]
    ProbabilitySum { sum: f64 },
    #[error("non-finite {what} entry at index {index}")]
    NonFinite { what: &'static str, index: String },
    #[error("portfolio has zero cost (ξ'x = {cost:e}); realized return is undefined")]
    ZeroCost { cost: f64 },
    #[error("portfolio has {found} entries but the market has {expected} instruments")]
    PortfolioDimension { expected: usize, found: usize },
    #[error("invalid market file: {0}")]
    Parse(String),
}

/// A validated one-period market.
#[derive(Debug, Clone, PartialEq)]
pub struct Market {
    instruments: Vec<String>,
    prices: DVector<f64>,
    payoffs: DMatrix<f64>,
    probabilities: DVector<f64>,
    outcome_labels: Option<Vec<String>>,
}

impl Market {
    /// Builds a market from its raw parts. `payoffs` has one row per instrument
    /// and one column per outcome.
    pub fn new(
        instruments: Vec<String>,
        prices: Vec<f64>,
        payoffs: Vec<Vec<f64>>,
        probabilities: Vec<f64>,
    ) -> Result<Self, MarketError> {
        let n = instruments.len();
        let k = probabilities.len();
        if n == 0 || k == 0 {
            return Err(MarketError::Empty);
        }
        if prices.len() != n {
            return Err(MarketError::DimensionMismatch {
                what: "prices".into(),
                expected: n,
                found: prices.len(),
            });
        }
        if payoffs.len() != n {
            return Err(MarketError::DimensionMismatch {
                what: "payoff rows".into(),
                expected: n,
                found: payoffs.len(),
            });
        }
        for (i, row) in payoffs.iter().enumerate() {
            if row.len() != k {
                return Err(MarketError::DimensionMismatch {
                    what: format!("payoff row {i}"),
                    expected: k,
                    found: row.len(),
                });
            }
        }
        let payoffs = DMatrix::from_fn(n, k, |i, w| payoffs[i][w]);
        validate_market(Market {
            instruments,
            prices: DVector::from_vec(prices),
            payoffs,
            probabilities: DVector::from_vec(probabilities),
            outcome_labels: None,
        })
    }

    pub fn with_outcome_labels(mut self, labels: Vec<String>) -> Result<Self, MarketError> {
        if labels.len() != self.num_outcomes() {
            return Err(MarketError::DimensionMismatch {
                what: "outcome_labels".into(),
                expected: self.num_outcomes(),
                found: labels.len(),
            });
        }
        self.outcome_labels = Some(labels);
        Ok(self)
    }

    /// Parses the JSON market file format. Unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self, MarketError> {
        let file: MarketFile =
            serde_json::from_str(text).map_err(|e| MarketError::Parse(e.to_string()))?;
        let market = Market::new(file.instruments, file.prices, file.payoffs, file.probabilities)?;
        match file.outcome_labels {
            Some(labels) => market.with_outcome_labels(labels),
            None => Ok(market),
        }
    }

    pub fn instruments(&self) -> &[String] {
        &self.instruments
    }

    pub fn prices(&self) -> &DVector<f64> {
        &self.prices
    }

    pub fn payoffs(&self) -> &DMatrix<f64> {
        &self.payoffs
    }

    pub fn probabilities(&self) -> &DVector<f64> {
        &self.probabilities
    }

    pub fn outcome_labels(&self) -> Option<&[String]> {
        self.outcome_labels.as_deref()
    }

    /// Outcome labels, falling back to the outcome index.
    pub fn labels(&self) -> Vec<String> {
        match &self.outcome_labels {
            Some(l) => l.clone(),
            None => (0..self.num_outcomes()).map(|w| w.to_string()).collect(),
        }
    }

    pub fn num_instruments(&self) -> usize {
        self.prices.len()
    }

    pub fn num_outcomes(&self) -> usize {
        self.probabilities.len()
    }

    /// Cost `ξ'x` of a portfolio.
    pub fn cost(&self, xi: &Portfolio) -> f64 {
        xi.as_vector().dot(&self.prices)
    }

    /// Payoff `ξ'X(·,ω)` in every outcome.
    pub fn payoff(&self, xi: &Portfolio) -> DVector<f64> {
        self.payoffs.tr_mul(xi.as_vector())
    }

    /// Expectation of an outcome-indexed vector under `p`.
    pub fn expectation(&self, values: &DVector<f64>) -> f64 {
        values.dot(&self.probabilities)
    }

    /// Probability-weighted covariance of two outcome-indexed vectors.
    pub fn covariance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let ma = self.expectation(a);
        let mb = self.expectation(b);
        a.iter()
            .zip(b.iter())
            .zip(self.probabilities.iter())
            .map(|((&u, &v), &p)| p * (u - ma) * (v - mb))
            .sum()
    }

    pub fn variance(&self, a: &DVector<f64>) -> f64 {
        self.covariance(a, a).max(0.0)
    }

    pub(crate) fn check_dimension(&self, xi: &Portfolio) -> Result<(), MarketError> {
        if xi.len() != self.num_instruments() {
            return Err(MarketError::PortfolioDimension {
                expected: self.num_instruments(),
                found: xi.len(),
            });
        }
        Ok(())
    }

    /// Returns a copy with a different probability vector, re-validated.
    pub fn with_probabilities(&self, probabilities: Vec<f64>) -> Result<Self, MarketError> {
        if probabilities.len() != self.num_outcomes() {
            return Err(MarketError::DimensionMismatch {
                what: "probabilities".into(),
                expected: self.num_outcomes(),
                found: probabilities.len(),
            });
        }
        validate_market(Market {
            probabilities: DVector::from_vec(probabilities),
            ..self.clone()
        })
    }

    /// Returns a copy with a different price vector, re-validated.
    pub fn with_prices(&self, prices: Vec<f64>) -> Result<Self, MarketError> {
        if prices.len() != self.num_instruments() {
            return Err(MarketError::DimensionMismatch {
                what: "prices".into(),
                expected: self.num_instruments(),
                found: prices.len(),
            });
        }
        validate_market(Market {
            prices: DVector::from_vec(prices),
            ..self.clone()
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MarketFile {
    instruments: Vec<String>,
    prices: Vec<f64>,
    probabilities: Vec<f64>,
    payoffs: Vec<Vec<f64>>,
    #[serde(default)]
    outcome_labels: Option<Vec<String>>,
}

/// Checks every market invariant and returns the market unchanged.
pub fn validate_market(raw: Market) -> Result<Market, MarketError> {
    let n = raw.instruments.len();
    let k = raw.probabilities.len();
    if n == 0 || k == 0 {
        return Err(MarketError::Empty);
    }
    if raw.prices.len() != n {
        return Err(MarketError::DimensionMismatch {
            what: "prices".into(),
            expected: n,
            found: raw.prices.len(),
        });
    }
    if raw.payoffs.nrows() != n {
        return Err(MarketError::DimensionMismatch {
            what: "payoff rows".into(),
            expected: n,
            found: raw.payoffs.nrows(),
        });
    }
    if raw.payoffs.ncols() != k {
        return Err(MarketError::DimensionMismatch {
            what: "payoff columns".into(),
            expected: k,
            found: raw.payoffs.ncols(),
        });
    }
    if let Some(i) = raw.prices.iter().position(|v| !v.is_finite()) {
        return Err(MarketError::NonFinite {
            what: "price",
            index: i.to_string(),
        });
    }
    for i in 0..n {
        for w in 0..k {
            if !raw.payoffs[(i, w)].is_finite() {
                return Err(MarketError::NonFinite {
                    what: "payoff",
                    index: format!("({i}, {w})"),
                });
            }
        }
    }
    for (w, &p) in raw.probabilities.iter().enumerate() {
        if !p.is_finite() {
            return Err(MarketError::NonFinite {
                what: "probability",
                index: w.to_string(),
            });
        }
        if p < MIN_PROBABILITY {
            return Err(MarketError::NonPositiveProbability { index: w, value: p });
        }
    }
    let sum: f64 = raw.probabilities.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_SUM_TOL {
        return Err(MarketError::ProbabilitySum { sum });
    }
    if let Some(labels) = &raw.outcome_labels {
        if labels.len() != k {
            return Err(MarketError::DimensionMismatch {
                what: "outcome_labels".into(),
                expected: k,
                found: labels.len(),
            });
        }
    }
    Ok(raw)
}

/// Share counts per instrument. Entries may be negative (short positions).
#[derive(Debug, Clone, PartialEq)]
pub struct Portfolio(DVector<f64>);

impl Portfolio {
    pub fn new(shares: Vec<f64>) -> Self {
        Portfolio(DVector::from_vec(shares))
    }

    pub fn from_vector(shares: DVector<f64>) -> Self {
        Portfolio(shares)
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn into_vector(self) -> DVector<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn shares(&self) -> &[f64] {
        self.0.as_slice()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, t: f64) -> Portfolio {
        Portfolio(&self.0 * t)
    }

    /// `(1 - w)·self + w·other`.
    pub fn mix(&self, other: &Portfolio, w: f64) -> Portfolio {
        Portfolio(&self.0 * (1.0 - w) + &other.0 * w)
    }
}

/// E[X], E[XX'] and V derived from a market.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub second_moment: DMatrix<f64>,
    pub covariance: DMatrix<f64>,
}

pub fn moments(m: &Market) -> Moments {
    let x = m.payoffs();
    let p = m.probabilities();
    let n = m.num_instruments();
    let mean = x * p;
    let weighted = DMatrix::from_fn(n, m.num_outcomes(), |i, w| x[(i, w)] * p[w]);
    let second_moment = &weighted * x.transpose();
    // Centred accumulation of E[XX'] - E[X]E[X'] avoids cancellation for
    // near-constant rows, which decides rank downstream.
    let centred = DMatrix::from_fn(n, m.num_outcomes(), |i, w| x[(i, w)] - mean[i]);
    let weighted_centred = DMatrix::from_fn(n, m.num_outcomes(), |i, w| centred[(i, w)] * p[w]);
    let mut covariance = &weighted_centred * centred.transpose();
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (covariance[(i, j)] + covariance[(j, i)]);
            covariance[(i, j)] = s;
            covariance[(j, i)] = s;
        }
    }
    Moments {
        mean,
        second_moment,
        covariance,
    }
}

/// Realized return of a portfolio as a function on the outcome set.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnProfile {
    pub per_outcome: DVector<f64>,
    pub mean: f64,
    pub variance: f64,
}

pub(crate) fn is_zero_cost(m: &Market, xi: &Portfolio, cost: f64) -> bool {
    let scale = (xi.as_vector().norm() * m.prices().norm()).max(1.0);
    cost.abs() <= ZERO_COST_RTOL * scale
}

fn nonzero_cost(m: &Market, xi: &Portfolio) -> Result<f64, MarketError> {
    m.check_dimension(xi)?;
    let cost = m.cost(xi);
    if !cost.is_finite() || is_zero_cost(m, xi, cost) {
        return Err(MarketError::ZeroCost { cost });
    }
    Ok(cost)
}

/// `R(ξ) = ξ'X / ξ'x` in every outcome, with its mean and variance under `p`.
pub fn realized_return(m: &Market, xi: &Portfolio) -> Result<ReturnProfile, MarketError> {
    let cost = nonzero_cost(m, xi)?;
    let per_outcome = m.payoff(xi) / cost;
    let mean = m.expectation(&per_outcome);
    let variance = m.variance(&per_outcome);
    Ok(ReturnProfile {
        per_outcome,
        mean,
        variance,
    })
}

/// Rescales a portfolio to unit cost.
pub fn normalize_portfolio(m: &Market, xi: &Portfolio) -> Result<Portfolio, MarketError> {
    let cost = nonzero_cost(m, xi)?;
    Ok(xi.scaled(1.0 / cost))
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::Market;

    pub fn m1() -> Market {
        Market::new(
            vec!["bond".into(), "stock".into()],
            vec![1.0, 1.0],
            vec![vec![1.1, 1.1], vec![1.3, 0.9]],
            vec![0.6, 0.4],
        )
        .unwrap()
    }

    pub fn m2() -> Market {
        Market::new(
            vec!["a".into(), "b".into()],
            vec![1.0, 1.05],
            vec![vec![1.0, 0.9], vec![1.0, 0.9]],
            vec![0.5, 0.5],
        )
        .unwrap()
    }

    pub fn m3() -> Market {
        let third = 1.0 / 3.0;
        Market::new(
            vec!["s1".into(), "s2".into()],
            vec![1.0, 1.0],
            vec![vec![1.0, 1.1, 1.2], vec![1.4, 1.1, 0.9]],
            vec![third, third, third],
        )
        .unwrap()
    }
}
