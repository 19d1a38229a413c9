//! Command-line front end. `run` does all the work and returns the exit
//! status with the rendered report, so it can be driven from tests.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};

use crate::arbitrage::{
    check_arbitrage, risk_neutral_consistency, verify_certificate, ArbitrageCertificate,
    ArbitrageOutcome, PricingMeasure, VerificationReport,
};
use crate::capm::{classical_capm, verify_realized_identity, RISKLESS_VARIANCE_TOL};
use crate::frontier::{efficient_portfolio, find_riskless, FrontierSolution};
use crate::market::{moments, realized_return, Market};
use crate::numerics::{pinv, DEFAULT_PINV_RTOL};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_ARBITRAGE: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Check,
    Frontier,
    Capm,
    Arbitrage,
    Measure,
}

impl CommandKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CommandKind::Check => "check",
            CommandKind::Frontier => "frontier",
            CommandKind::Capm => "capm",
            CommandKind::Arbitrage => "arbitrage",
            CommandKind::Measure => "measure",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub command: CommandKind,
    pub model_path: PathBuf,
    pub rho: Option<f64>,
    pub rho0: Option<f64>,
    pub rho1: Option<f64>,
    pub tol: f64,
    pub output_format: OutputFormat,
}

impl RunConfig {
    pub fn new(command: CommandKind, model_path: impl Into<PathBuf>) -> Self {
        RunConfig {
            command,
            model_path: model_path.into(),
            rho: None,
            rho0: None,
            rho1: None,
            tol: crate::arbitrage::DEFAULT_TOL,
            output_format: OutputFormat::Text,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.tol.is_finite() || self.tol <= 0.0 {
            return Err(format!("--tol must be a positive number, got {}", self.tol));
        }
        let needs_rho = matches!(self.command, CommandKind::Frontier | CommandKind::Capm);
        if needs_rho && self.rho.is_none() {
            return Err(format!("--rho is required for `{}`", self.command.as_str()));
        }
        if self.command != CommandKind::Capm && (self.rho0.is_some() || self.rho1.is_some()) {
            return Err("--rho0/--rho1 are only valid for `capm`".into());
        }
        match (self.rho0, self.rho1) {
            (Some(a), Some(b)) if a == b => Err(format!("--rho0 and --rho1 must differ (both {a})")),
            (Some(_), None) => Err("--rho0 requires --rho1".into()),
            (None, Some(_)) => Err("--rho1 requires --rho0".into()),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "oneperiod", version, about = "One-period market model toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Market file (JSON)
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = crate::arbitrage::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Validate a market and print its moments
    Check(ModelArgs),
    /// Efficient portfolio for a target expected realized return
    Frontier {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, allow_hyphen_values = true)]
        rho: f64,
    },
    /// Realized-return CAPM identity for efficient funds
    Capm {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, allow_hyphen_values = true)]
        rho: f64,
        #[arg(long, allow_hyphen_values = true, requires = "rho1")]
        rho0: Option<f64>,
        #[arg(long, allow_hyphen_values = true, requires = "rho0")]
        rho1: Option<f64>,
    },
    /// Pricing measure or arbitrage certificate
    Arbitrage(ModelArgs),
    /// Pricing measure; fails when arbitrage exists
    Measure(ModelArgs),
}

impl From<Cli> for RunConfig {
    fn from(cli: Cli) -> Self {
        let (command, args, rho, rho0, rho1) = match cli.command {
            CliCommand::Check(a) => (CommandKind::Check, a, None, None, None),
            CliCommand::Frontier { model, rho } => (CommandKind::Frontier, model, Some(rho), None, None),
            CliCommand::Capm { model, rho, rho0, rho1 } => (CommandKind::Capm, model, Some(rho), rho0, rho1),
            CliCommand::Arbitrage(a) => (CommandKind::Arbitrage, a, None, None, None),
            CliCommand::Measure(a) => (CommandKind::Measure, a, None, None, None),
        };
        RunConfig {
            command,
            model_path: args.model,
            rho,
            rho0,
            rho1,
            tol: args.tol,
            output_format: args.format,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
}

impl RunOutcome {
    fn failure(exit_code: i32, message: String) -> Self {
        RunOutcome {
            exit_code,
            stdout: String::new(),
            stderr: format!("error: {message}\n"),
        }
    }
}

struct Failure {
    code: i32,
    message: String,
}

fn validation(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_VALIDATION,
        message: message.into(),
    }
}

fn internal(e: impl std::fmt::Display) -> Failure {
    Failure {
        code: EXIT_INTERNAL,
        message: e.to_string(),
    }
}

pub fn run(config: &RunConfig) -> RunOutcome {
    if let Err(msg) = config.validate() {
        return RunOutcome::failure(EXIT_VALIDATION, msg);
    }
    let text = match std::fs::read_to_string(&config.model_path) {
        Ok(t) => t,
        Err(e) => {
            return RunOutcome::failure(
                EXIT_VALIDATION,
                format!("cannot read model {}: {e}", config.model_path.display()),
            )
        }
    };
    let market = match Market::from_json(&text) {
        Ok(m) => m,
        Err(e) => {
            return RunOutcome::failure(
                EXIT_VALIDATION,
                format!("model {}: {e}", config.model_path.display()),
            )
        }
    };

    let (result, exit_code, note) = match dispatch(config, &market) {
        Ok(r) => r,
        Err(f) => return RunOutcome::failure(f.code, f.message),
    };
    let report = json!({
        "command": config.command.as_str(),
        "model": config.model_path.display().to_string(),
        "tolerance": config.tol,
        "result": result,
    });
    let stdout = match config.output_format {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(&report).expect("report serializes");
            s.push('\n');
            s
        }
        OutputFormat::Text => render_text(&report),
    };
    RunOutcome {
        exit_code,
        stdout,
        stderr: note.map(|n| format!("{n}\n")).unwrap_or_default(),
    }
}

type Dispatch = (Value, i32, Option<String>);

fn dispatch(config: &RunConfig, m: &Market) -> Result<Dispatch, Failure> {
    match config.command {
        CommandKind::Check => Ok((check_report(m), EXIT_OK, None)),
        CommandKind::Frontier => {
            let rho = config.rho.expect("validated");
            let sol = efficient_portfolio(m, rho).map_err(internal)?;
            Ok((frontier_json(m, &sol).map_err(internal)?, EXIT_OK, None))
        }
        CommandKind::Capm => capm_report(config, m).map(|v| (v, EXIT_OK, None)),
        CommandKind::Arbitrage => {
            let out = check_arbitrage(m, config.tol).map_err(internal)?;
            let verification = verify_certificate(m, &out, config.tol);
            let mut v = outcome_json(m, &out, config.tol);
            v["verification"] = verification_json(&verification);
            Ok((v, EXIT_OK, None))
        }
        CommandKind::Measure => {
            let out = check_arbitrage(m, config.tol).map_err(internal)?;
            let verification = verify_certificate(m, &out, config.tol);
            let mut v = outcome_json(m, &out, config.tol);
            v["verification"] = verification_json(&verification);
            match out {
                ArbitrageOutcome::Measure(_) => Ok((v, EXIT_OK, None)),
                ArbitrageOutcome::Arbitrage(_) => {
                    Ok((v, EXIT_ARBITRAGE, Some("arbitrage exists".into())))
                }
            }
        }
    }
}

fn vector(v: &DVector<f64>) -> Value {
    Value::from(v.iter().copied().collect::<Vec<f64>>())
}

fn matrix(m: &DMatrix<f64>) -> Value {
    Value::from(
        m.row_iter()
            .map(|r| Value::from(r.iter().copied().collect::<Vec<f64>>()))
            .collect::<Vec<_>>(),
    )
}

fn per_instrument(m: &Market, key: &str, values: &[f64]) -> Value {
    Value::from(
        m.instruments()
            .iter()
            .zip(values)
            .map(|(name, &v)| {
                let mut o = Map::new();
                o.insert("instrument".into(), Value::from(name.as_str()));
                o.insert(key.into(), Value::from(v));
                Value::Object(o)
            })
            .collect::<Vec<_>>(),
    )
}

fn per_outcome(m: &Market, key: &str, values: &DVector<f64>) -> Value {
    Value::from(
        m.labels()
            .into_iter()
            .zip(values.iter())
            .map(|(label, &v)| {
                let mut o = Map::new();
                o.insert("outcome".into(), Value::from(label));
                o.insert(key.into(), Value::from(v));
                Value::Object(o)
            })
            .collect::<Vec<_>>(),
    )
}

fn check_report(m: &Market) -> Value {
    let mo = moments(m);
    let rank = pinv(&mo.covariance, DEFAULT_PINV_RTOL).rank;
    json!({
        "instruments": m.instruments(),
        "outcomes": m.labels(),
        "prices": vector(m.prices()),
        "probabilities": vector(m.probabilities()),
        "mean": per_instrument(m, "mean", mo.mean.as_slice()),
        "second_moment": matrix(&mo.second_moment),
        "covariance": matrix(&mo.covariance),
        "covariance_rank": rank,
    })
}

fn frontier_json(m: &Market, sol: &FrontierSolution) -> Result<Value, crate::market::MarketError> {
    let profile = realized_return(m, &sol.xi)?;
    let (lagrange_lambda, lagrange_mu) = sol.lagrange_multipliers();
    Ok(json!({
        "mode": sol.mode.as_str(),
        "target_mean": sol.target_mean,
        "weights": per_instrument(m, "shares", sol.xi.shares()),
        "lambda": sol.lambda,
        "mu": sol.mu,
        "variance": sol.variance,
        "multiplier_scale": sol.multiplier_scale,
        "lagrange_lambda": lagrange_lambda,
        "lagrange_mu": lagrange_mu,
        "expected_return": profile.mean,
        "realized_return": per_outcome(m, "return", &profile.per_outcome),
    }))
}

fn fund_json(m: &Market, sol: &FrontierSolution) -> Value {
    json!({
        "target_mean": sol.target_mean,
        "mode": sol.mode.as_str(),
        "weights": per_instrument(m, "shares", sol.xi.shares()),
    })
}

fn capm_report(config: &RunConfig, m: &Market) -> Result<Value, Failure> {
    let rho = config.rho.expect("validated");
    let (rho0, rho1) = match (config.rho0, config.rho1) {
        (Some(a), Some(b)) => (a, b),
        _ => {
            let info = find_riskless(m).map_err(internal)?.ok_or_else(|| {
                validation("--rho0 and --rho1 are required when the market has no riskless portfolio")
            })?;
            let alpha = info.alpha.as_ref().ok_or_else(|| {
                validation("tangency fund is degenerate; pass --rho0 and --rho1")
            })?;
            let mean = realized_return(m, alpha).map_err(internal)?.mean;
            (info.riskless_return, mean)
        }
    };
    let f = efficient_portfolio(m, rho).map_err(internal)?;
    let f0 = efficient_portfolio(m, rho0).map_err(internal)?;
    let f1 = efficient_portfolio(m, rho1).map_err(internal)?;
    let report = verify_realized_identity(m, &f.xi, &f0.xi, &f1.xi).map_err(internal)?;

    let mut v = json!({
        "rho": rho,
        "beta": report.beta,
        "portfolio": fund_json(m, &f),
        "fund0": fund_json(m, &f0),
        "fund1": fund_json(m, &f1),
        "residual_per_outcome": per_outcome(m, "residual", &report.residual_per_outcome),
        "max_abs_residual": report.max_abs_residual,
        "residual_scale": report.scale,
        "scaled_max_residual": report.scaled_max_residual(),
        "expectation_gap": report.expectation_gap,
        "identity_holds": report.holds(config.tol),
    });
    let riskless_fund0 = realized_return(m, &f0.xi).map_err(internal)?.variance <= RISKLESS_VARIANCE_TOL;
    if riskless_fund0 {
        let c = classical_capm(m, &f.xi, &f1.xi, &f0.xi).map_err(internal)?;
        v["classical"] = json!({
            "beta": c.beta,
            "riskless_return": c.riskless_return,
            "lhs": c.lhs,
            "rhs": c.rhs,
        });
    }
    Ok(v)
}

fn measure_json(m: &Market, pm: &PricingMeasure, tol: f64) -> Value {
    let consistency = risk_neutral_consistency(m, pm, tol);
    json!({
        "kind": "measure",
        "pi": per_outcome(m, "weight", &pm.pi),
        "q": per_outcome(m, "probability", &pm.q),
        "mass": pm.mass,
        "implied_return": pm.implied_return,
        "residual_norm": pm.residual_norm,
        "strictly_positive": pm.strictly_positive,
        "near_boundary": pm.near_boundary,
        "risk_neutral_consistent": consistency.passed(),
    })
}

fn certificate_json(m: &Market, cert: &ArbitrageCertificate) -> Value {
    json!({
        "kind": "arbitrage",
        "portfolio": per_instrument(m, "shares", cert.xi.shares()),
        "cost": cert.cost,
        "worst_payoff": cert.worst_payoff,
        "payoffs": per_outcome(m, "payoff", &cert.payoffs),
        "payoff_tolerance": cert.payoff_tolerance,
    })
}

fn outcome_json(m: &Market, out: &ArbitrageOutcome, tol: f64) -> Value {
    match out {
        ArbitrageOutcome::Measure(pm) => measure_json(m, pm, tol),
        ArbitrageOutcome::Arbitrage(c) => certificate_json(m, c),
    }
}

fn verification_json(r: &VerificationReport) -> Value {
    json!({
        "passed": r.passed(),
        "conditions": r.conditions.iter().map(|c| json!({
            "name": c.name,
            "passed": c.passed,
            "value": c.value,
            "slack": c.slack,
        })).collect::<Vec<_>>(),
    })
}

/// Renders a report as indented `key: value` lines. Numbers use the
/// shortest representation that parses back to the same double.
pub fn render_text(report: &Value) -> String {
    let mut out = String::new();
    render_value(&mut out, report, 0);
    out
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::Null => Some("null".into()),
        Value::Bool(b) => Some(b.to_string()),
        Value::Number(n) => Some(match n.as_f64() {
            Some(f) if n.is_f64() => format!("{f:?}"),
            _ => n.to_string(),
        }),
        Value::String(s) => Some(s.clone()),
        _ => None,
    }
}

fn inline_row(v: &Value) -> Option<String> {
    match v {
        Value::Array(items) => {
            let parts: Option<Vec<String>> = items.iter().map(scalar).collect();
            parts.map(|p| format!("[{}]", p.join(", ")))
        }
        Value::Object(map) => {
            let parts: Option<Vec<String>> = map
                .iter()
                .map(|(k, v)| scalar(v).map(|s| format!("{k}={s}")))
                .collect();
            parts.map(|p| p.join("  "))
        }
        other => scalar(other),
    }
}

fn render_value(out: &mut String, v: &Value, indent: usize) {
    let pad = "  ".repeat(indent);
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                match child {
                    Value::Object(_) => {
                        let _ = writeln!(out, "{pad}{k}:");
                        render_value(out, child, indent + 1);
                    }
                    Value::Array(items) if items.iter().any(|i| !i.is_array() && !i.is_object()) || items.is_empty() => {
                        let _ = writeln!(out, "{pad}{k}: {}", inline_row(child).unwrap_or_default());
                    }
                    Value::Array(items) => {
                        let _ = writeln!(out, "{pad}{k}:");
                        for item in items {
                            match inline_row(item) {
                                Some(line) => {
                                    let _ = writeln!(out, "{pad}  - {line}");
                                }
                                None => {
                                    let _ = writeln!(out, "{pad}  -");
                                    render_value(out, item, indent + 2);
                                }
                            }
                        }
                    }
                    other => {
                        let _ = writeln!(out, "{pad}{k}: {}", scalar(other).unwrap_or_default());
                    }
                }
            }
        }
        other => {
            let _ = writeln!(out, "{pad}{}", inline_row(other).unwrap_or_default());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = RunConfig::new(CommandKind::Frontier, "m.json");
        assert!(c.validate().unwrap_err().contains("--rho"));
        c.rho = Some(1.1);
        assert!(c.validate().is_ok());
        let mut c = RunConfig::new(CommandKind::Capm, "m.json");
        c.rho = Some(1.1);
        c.rho0 = Some(1.0);
        c.rho1 = Some(1.0);
        assert!(c.validate().unwrap_err().contains("differ"));
        c.rho1 = None;
        assert!(c.validate().unwrap_err().contains("--rho1"));
        let mut c = RunConfig::new(CommandKind::Check, "m.json");
        c.tol = -1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn text_rendering_uses_round_trip_numbers() {
        let v = json!({"a": 0.1 + 0.2, "b": [1.0, 2.5], "c": {"d": true},
            "rows": [{"outcome": "up", "x": 1e-20}]});
        let t = render_text(&v);
        assert!(t.contains("a: 0.30000000000000004"));
        assert!(t.contains("b: [1.0, 2.5]"));
        assert!(t.contains("c:\n  d: true"));
        assert!(t.contains("- outcome=up  x=1e-20"));
    }
}
