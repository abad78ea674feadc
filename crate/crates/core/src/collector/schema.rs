use crate::messages::{FlowLevel, PayloadKind, VarName};
use serde::{Deserialize, Serialize};

/// One declared transfer variable. `pattern` is `task.name.*` (any
/// iteration) or a fully spelled variable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeclaredVariable {
    pub pattern: String,
    pub flow: FlowLevel,
    pub body_type: PayloadKind,
    pub length_expr: String,
}

impl DeclaredVariable {
    pub fn new(pattern: &str, flow: FlowLevel, body_type: PayloadKind, length_expr: &str) -> Self {
        DeclaredVariable { pattern: pattern.into(), flow, body_type, length_expr: length_expr.into() }
    }

    pub fn matches(&self, variable: &str) -> bool {
        pattern_matches(&self.pattern, variable)
    }
}

/// `*` stands for exactly one dot-free segment.
pub fn pattern_matches(pattern: &str, variable: &str) -> bool {
    let mut p = pattern.split('.');
    let mut v = variable.split('.');
    loop {
        match (p.next(), v.next()) {
            (None, None) => return true,
            (Some("*"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            _ => return false,
        }
    }
}

/// `task.name.7` → `task.name.*`
pub fn generalize(variable: &str) -> String {
    match VarName::parse(variable) {
        Some(v) => format!("{}.{}.*", v.task, v.name),
        None => variable.to_string(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    pub variables: Vec<DeclaredVariable>,
}

impl Schema {
    pub fn new(variables: Vec<DeclaredVariable>) -> Self {
        Schema { variables }
    }

    pub fn lookup(&self, variable: &str) -> Option<&DeclaredVariable> {
        self.variables.iter().find(|d| d.matches(variable))
    }

    pub fn extend(&mut self, other: &Schema) {
        for v in &other.variables {
            if !self.variables.iter().any(|d| d.pattern == v.pattern) {
                self.variables.push(v.clone());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wildcard_matching() {
        assert!(pattern_matches("train.stop_flag.*", "train.stop_flag.3"));
        assert!(!pattern_matches("train.stop_flag.*", "train.stop_flag"));
        assert!(!pattern_matches("train.stop_flag.*", "train.host_forward.3"));
        assert!(pattern_matches("submit_job", "submit_job"));
        assert_eq!(generalize("train.masked_grad.12"), "train.masked_grad.*");
        assert_eq!(generalize("labels_leak"), "labels_leak");
    }
}
