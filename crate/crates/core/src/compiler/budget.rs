use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBudget {
    pub eps: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub eps_relu: f64,
    pub eps_k: Vec<f64>,
    #[serde(rename = "C_s")]
    pub c_s: f64,
    #[serde(rename = "C_k")]
    pub c_k: Vec<f64>,
}

fn check_eps(context: &str, eps: f64) -> Result<()> {
    if eps > 0.0 && eps < 1.0 {
        Ok(())
    } else {
        Err(Error::precondition(context, format!("eps must lie in (0, 1), got {eps}")))
    }
}

/// `ε₁ = ε/(3dnN)`, `ε₂ = ε/(3N)`, `ε_relu = ε/(6N+3)`.
pub fn budget_one_layer(eps: f64, d: usize, n: usize, units: usize) -> Result<ErrorBudget> {
    check_eps("budget_one_layer", eps)?;
    if d == 0 || n == 0 || units == 0 {
        return Err(Error::precondition("budget_one_layer", "d, n and N must be positive"));
    }
    let nn = units as f64;
    Ok(ErrorBudget {
        eps,
        eps1: eps / (3.0 * d as f64 * n as f64 * nn),
        eps2: eps / (3.0 * nn),
        eps_relu: eps / (6.0 * nn + 3.0),
        eps_k: vec![eps],
        c_s: 0.0,
        c_k: Vec::new(),
    })
}

/// `ε_k = ε/(K_f (W_f B)^{K_f})` for every layer and `C_k = (W_f B)^k C_X`.
///
/// The growth factor in `ε_k` is floored at 1 so that the recursion
/// `η_k ≤ W_f B η_{k−1} + ε_k` still closes at `ε` for contractive nets.
pub fn budget_multilayer(eps: f64, k_f: usize, w_f: usize, b: f64, c_x: f64) -> Result<ErrorBudget> {
    check_eps("budget_multilayer", eps)?;
    if k_f == 0 {
        return Err(Error::precondition("budget_multilayer", "K_f must be at least 1"));
    }
    let growth = w_f as f64 * b;
    let amp = growth.max(1.0).powi(k_f as i32);
    if !amp.is_finite() || !(amp > 0.0) {
        return Err(Error::BudgetOverflow(format!(
            "(W_f B)^K_f = ({w_f}·{b})^{k_f} is not a positive finite double"
        )));
    }
    let eps_k = eps / (k_f as f64 * amp);
    Ok(ErrorBudget {
        eps,
        eps1: f64::NAN,
        eps2: f64::NAN,
        eps_relu: f64::NAN,
        eps_k: vec![eps_k; k_f],
        c_s: f64::NAN,
        c_k: (0..=k_f).map(|k| growth.powi(k as i32) * c_x).collect(),
    })
}
