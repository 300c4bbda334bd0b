//! Compiled scalar expressions for configuration files.
//!
//! Thin wrapper over `evalexpr`: bare function names (`sin`, `exp`, ...) are
//! rewritten to evalexpr's `math::` namespace, integer literals are promoted
//! to floats so that `1/2` means one half, and `pi` is predefined.

use evalexpr::{ContextWithMutableVariables, HashMapContext, Node, Value};

use crate::error::{Error, Result};

const MATH_FUNCTIONS: &[&str] = &[
    "sin", "cos", "tan", "asin", "acos", "atan", "atan2", "sinh", "cosh", "tanh", "exp", "exp2", "ln", "log",
    "log2", "log10", "sqrt", "cbrt", "abs", "pow", "hypot",
];

#[derive(Debug, Clone)]
pub struct Expr {
    source: String,
    node: Node,
    vars: Vec<String>,
}

impl Expr {
    /// Compiles `source` with the given free variables.
    pub fn compile(source: &str, vars: &[&str]) -> Result<Self> {
        let rewritten = rewrite(source);
        let node = evalexpr::build_operator_tree(&rewritten)
            .map_err(|e| Error::InvalidSpec(format!("cannot parse `{source}`: {e}")))?;
        for ident in node.iter_variable_identifiers() {
            if ident != "pi" && !vars.contains(&ident) {
                return Err(Error::InvalidSpec(format!(
                    "unknown variable `{ident}` in `{source}` (allowed: {})",
                    vars.join(", ")
                )));
            }
        }
        Ok(Self {
            source: source.to_string(),
            node,
            vars: vars.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Evaluates with `values[i]` bound to the i-th declared variable.
    pub fn eval(&self, values: &[f64]) -> Result<f64> {
        let mut ctx = HashMapContext::new();
        ctx.set_value("pi".into(), Value::Float(std::f64::consts::PI))
            .expect("fresh context accepts values");
        for (name, v) in self.vars.iter().zip(values) {
            ctx.set_value(name.clone(), Value::Float(*v))
                .expect("fresh context accepts values");
        }
        match self.node.eval_with_context(&ctx) {
            Ok(Value::Float(x)) => Ok(x),
            Ok(Value::Int(i)) => Ok(i as f64),
            Ok(other) => Err(Error::InvalidSpec(format!(
                "`{}` evaluated to non-number {other:?}",
                self.source
            ))),
            Err(e) => Err(Error::InvalidSpec(format!("`{}`: {e}", self.source))),
        }
    }
}

fn rewrite(src: &str) -> String {
    let chars: Vec<char> = src.chars().collect();
    let mut out = String::with_capacity(src.len() + 16);
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_' || chars[i] == ':')
            {
                i += 1;
            }
            let ident: String = chars[start..i].iter().collect();
            if MATH_FUNCTIONS.contains(&ident.as_str()) {
                out.push_str("math::");
            }
            out.push_str(&ident);
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit())) {
            let start = i;
            let mut is_float = false;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                is_float |= chars[i] == '.';
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                is_float = true;
                i += 1;
                if i < chars.len() && (chars[i] == '+' || chars[i] == '-') {
                    i += 1;
                }
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
            }
            let lit: String = chars[start..i].iter().collect();
            if lit.starts_with('.') {
                out.push('0');
            }
            out.push_str(&lit);
            if !is_float {
                out.push_str(".0");
            }
        } else {
            out.push(c);
            i += 1;
        }
    }
    out
}
