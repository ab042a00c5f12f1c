//! Source terms given as text expressions, e.g. `z^(-2) * math::cos(x1)`.
//!
//! Variables are bound by name per call; `pi` is predefined. Integer
//! literals divide as integers (`1/2 == 0`), so write `1.0/2.0`.

use crate::error::{LabError, Result};
use evalexpr::{build_operator_tree, ContextWithMutableVariables, HashMapContext, Node, Value};

#[derive(Debug, Clone)]
pub struct SourceExpr {
    text: String,
    node: Node,
    vars: Vec<String>,
}

impl SourceExpr {
    /// Parse `text` over the named variables and check it evaluates to a
    /// number at `probe`.
    pub fn parse(text: &str, vars: &[&str], probe: &[f64]) -> Result<Self> {
        if probe.len() != vars.len() {
            return Err(LabError::InvalidParameter("probe point does not match the variable list".into()));
        }
        let node = build_operator_tree(text).map_err(|e| LabError::Config(format!("expression {text:?}: {e}")))?;
        let e = SourceExpr { text: text.to_string(), node, vars: vars.iter().map(|s| s.to_string()).collect() };
        e.eval(probe)?;
        Ok(e)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn eval(&self, values: &[f64]) -> Result<f64> {
        let mut ctx = HashMapContext::new();
        let bind = |ctx: &mut HashMapContext, k: &str, v: f64| {
            ctx.set_value(k.into(), Value::Float(v)).map_err(|e| LabError::Config(e.to_string()))
        };
        bind(&mut ctx, "pi", std::f64::consts::PI)?;
        for (k, v) in self.vars.iter().zip(values) {
            bind(&mut ctx, k, *v)?;
        }
        self.node
            .eval_number_with_context(&ctx)
            .map_err(|e| LabError::Config(format!("evaluating {:?}: {e}", self.text)))
    }

    /// Evaluate, mapping failures to NaN (for inner loops that check finiteness).
    pub fn eval_or_nan(&self, values: &[f64]) -> f64 {
        self.eval(values).unwrap_or(f64::NAN)
    }
}

/// Variable names of a Poisson source on C: z, x1 .. x_{2n-2}, theta.
pub fn poisson_vars(n: u32) -> Vec<String> {
    let mut v = vec!["z".to_string()];
    v.extend((1..=2 * n as usize - 2).map(|i| format!("x{i}")));
    v.push("theta".into());
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluates_with_bound_variables() {
        let e = SourceExpr::parse("z^(-2) * math::cos(x1) + theta", &["z", "x1", "theta"], &[1.0, 0.0, 0.0]).unwrap();
        assert!((e.eval(&[2.0, 0.0, 1.0]).unwrap() - 1.25).abs() < 1e-15);
        let p = SourceExpr::parse("math::sin(pi / 2.0)", &[], &[]).unwrap();
        assert_eq!(p.eval(&[]).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(SourceExpr::parse("z +", &["z"], &[1.0]).is_err());
        assert!(SourceExpr::parse("y * 2", &["z"], &[1.0]).is_err());
        assert!(SourceExpr::parse("z", &["z"], &[]).is_err());
    }

    #[test]
    fn poisson_variable_names() {
        assert_eq!(poisson_vars(2), vec!["z", "x1", "x2", "theta"]);
        assert_eq!(poisson_vars(3).len(), 6);
    }
}
