//! One-period market model.
//!
//! A market is a vector of instrument prices `x`, a payoff matrix `X` over a
//! finite outcome set, and outcome probabilities. On top of it this crate
//! builds efficient portfolios, checks the CAPM identity on realized returns
//! outcome by outcome, and decides whether the market admits arbitrage,
//! returning either a pricing measure or an arbitrage portfolio.

pub mod arbitrage;
pub mod capm;
pub mod cli;
pub mod frontier;
pub mod market;
pub mod numerics;

pub use arbitrage::{
    check_arbitrage, risk_neutral_consistency, verify_certificate, ArbitrageCertificate,
    ArbitrageError, ArbitrageOutcome, PricingMeasure,
};
pub use capm::{beta, classical_capm, verify_realized_identity, CapmError, IdentityReport};
pub use frontier::{
    efficient_portfolio, find_riskless, frontier_constants, two_fund_compose, FrontierConstants,
    FrontierError, FrontierMode, FrontierSolution, RisklessInfo,
};
pub use market::{
    moments, normalize_portfolio, realized_return, validate_market, Market, MarketError, Moments,
    Portfolio, ReturnProfile,
};
pub use numerics::{nnls, pinv, riskless_projectors, ConeProjection, PseudoInverseResult};
