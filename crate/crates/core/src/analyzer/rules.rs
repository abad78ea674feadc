//! Data rule table: type, length and value-domain checks on payloads.

use super::expr::{Expr, ExprError};
use super::fsm::VariableDecl;
use super::verdict::{Attack, Locus, Mechanism, Verdict, VerdictClass};
use crate::collector::{pattern_matches, LogicalMessage};
use crate::crypto::SecretKey;
use crate::messages::{Payload, PayloadKind, VarName};
use num_bigint::BigUint;
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Any,
    Finite,
    Flag,
    /// Elements in [0, n²) under the job's Paillier key.
    PaillierCiphertext,
    /// Elements in [0, n) under the job's RSA key.
    RsaResidue,
}

impl Domain {
    fn default_for(d: &VariableDecl) -> Domain {
        match d.body_type {
            PayloadKind::CiphertextVector if d.key.as_deref() == Some("rsa") => Domain::RsaResidue,
            PayloadKind::CiphertextVector => Domain::PaillierCiphertext,
            PayloadKind::BoolFlag => Domain::Flag,
            PayloadKind::PlainFloatVector | PayloadKind::PlainScalar => Domain::Finite,
            _ => Domain::Any,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub pattern: String,
    pub body_type: PayloadKind,
    pub length_expr: String,
    pub domain: Domain,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub custom: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleTable {
    pub rules: Vec<Rule>,
}

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("no declared variable matches {0}")]
    Undeclared(String),
    #[error("unknown predicate {0}")]
    UnknownPredicate(String),
    #[error("rule {pattern}: {source}")]
    Length { pattern: String, source: ExprError },
    #[error("rule table: {0}")]
    Json(#[from] serde_json::Error),
}

/// Named checks over plaintext values.
pub type Predicate = fn(&[f64]) -> bool;

#[derive(Clone)]
pub struct Registry {
    preds: BTreeMap<String, Predicate>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Registry { preds: BTreeMap::new() };
        r.register("finite", |v| v.iter().all(|x| x.is_finite()));
        r.register("gradient_norm_below_1e3", |v| v.iter().map(|x| x * x).sum::<f64>().sqrt() < 1e3);
        r.register("nonnegative", |v| v.iter().all(|&x| x >= 0.0));
        r
    }
}

impl Registry {
    pub fn register(&mut self, name: &str, p: Predicate) {
        self.preds.insert(name.to_string(), p);
    }

    pub fn get(&self, name: &str) -> Option<Predicate> {
        self.preds.get(name).copied()
    }

    pub fn names(&self) -> Vec<String> {
        self.preds.keys().cloned().collect()
    }
}

impl RuleTable {
    /// One row per declared variable; `custom` attaches named predicates to
    /// rows by variable pattern (or any concrete variable it matches).
    pub fn generate(decls: &[VariableDecl], custom: &[(String, String)], registry: &Registry) -> Result<RuleTable, RuleError> {
        let mut rules = Vec::with_capacity(decls.len());
        for d in decls {
            Expr::parse(&d.length_expr).map_err(|source| RuleError::Length { pattern: d.pattern.clone(), source })?;
            rules.push(Rule {
                pattern: d.pattern.clone(),
                body_type: d.body_type,
                length_expr: d.length_expr.clone(),
                domain: Domain::default_for(d),
                custom: vec![],
            });
        }
        for (pattern, pred) in custom {
            if registry.get(pred).is_none() {
                return Err(RuleError::UnknownPredicate(pred.clone()));
            }
            let row = rules
                .iter_mut()
                .find(|r| r.pattern == *pattern || pattern_matches(&r.pattern, pattern))
                .ok_or_else(|| RuleError::Undeclared(pattern.clone()))?;
            row.custom.push(pred.clone());
        }
        Ok(RuleTable { rules })
    }

    pub fn lookup(&self, variable: &str) -> Option<&Rule> {
        self.rules.iter().find(|r| pattern_matches(&r.pattern, variable))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("rule table json")
    }

    pub fn from_json(s: &str) -> Result<RuleTable, RuleError> {
        Ok(serde_json::from_str(s)?)
    }
}

/// What the checker knows about the running job.
#[derive(Clone, Default)]
pub struct RuleContext {
    pub job_id: String,
    pub stats: BTreeMap<String, i64>,
    pub paillier: Option<(String, BigUint)>,
    pub rsa: Option<(String, BigUint)>,
    /// Deep mode: decrypt ciphertext bodies for custom predicates.
    pub secret: Option<SecretKey>,
    pub registry: Registry,
}

fn locus(msg: &LogicalMessage) -> Locus {
    let v = VarName::parse(&msg.variable);
    Locus {
        task: Some(msg.task_id.clone()),
        iteration: v.as_ref().map(|v| v.iteration),
        variable: Some(msg.variable.clone()),
        ledger_index: msg.ledger_indices.first().copied(),
        event: Some(format!("{}->{} {}", msg.src, msg.dst, msg.variable)),
        ..Locus::default()
    }
}

impl RuleContext {
    fn verdict(&self, msg: &LogicalMessage, class: VerdictClass, attack: Attack, text: String) -> Verdict {
        Verdict::alarm(&self.job_id, class, Mechanism::Rules, text).attack(attack).at(locus(msg))
    }

    /// First failed check, if any. Undeclared variables are reported as A03
    /// candidates, forbidden tags as A07, shape and domain errors as A05.
    pub fn check(&self, table: &RuleTable, msg: &LogicalMessage) -> Option<Verdict> {
        let v = |class, attack, text: String| Some(self.verdict(msg, class, attack, text));
        let tag = match msg.payload.first() {
            Some(&t) => t,
            None => return v(VerdictClass::RuleViolation, Attack::A05, "empty payload".into()),
        };
        if PayloadKind::from_tag(tag) == PayloadKind::OpaqueForbidden {
            return v(VerdictClass::ForbiddenPayload, Attack::A07, format!("payload tag {tag:#04x} is not whitelisted"));
        }
        let Some(rule) = table.lookup(&msg.variable) else {
            return v(VerdictClass::UndeclaredVariable, Attack::A03, format!("undeclared variable {}", msg.variable));
        };
        let payload = match Payload::decode(&msg.payload) {
            Ok(p) => p,
            Err(e) => return v(VerdictClass::RuleViolation, Attack::A05, format!("undecodable body: {e}")),
        };
        if payload.kind() != rule.body_type {
            return v(VerdictClass::RuleViolation, Attack::A05, format!("type {} where {} is declared", payload.kind(), rule.body_type));
        }
        match Expr::parse(&rule.length_expr).and_then(|e| e.eval(&self.stats)) {
            Ok(want) if want != payload.len() as i64 => {
                return v(VerdictClass::RuleViolation, Attack::A05, format!("length {} where {} = {want}", payload.len(), rule.length_expr));
            }
            // Unbound names (e.g. n_rows before alignment) skip the check.
            _ => {}
        }
        if let Some(text) = self.domain_error(rule.domain, &payload) {
            return v(VerdictClass::RuleViolation, Attack::A05, text);
        }
        if !rule.custom.is_empty() {
            if let Some(values) = self.plain_values(&payload) {
                for name in &rule.custom {
                    let ok = self.registry.get(name).map_or(true, |p| p(&values));
                    if !ok {
                        return v(VerdictClass::RuleViolation, Attack::A05, format!("custom check {name} failed"));
                    }
                }
            }
        }
        None
    }

    fn domain_error(&self, d: Domain, p: &Payload) -> Option<String> {
        match (d, p) {
            (Domain::PaillierCiphertext, Payload::CiphertextVector { key_id, values }) => {
                let (kid, n) = self.paillier.as_ref()?;
                self.cipher_error(kid, key_id, values, &(n * n), "n^2")
            }
            (Domain::RsaResidue, Payload::CiphertextVector { key_id, values }) => {
                let (kid, n) = self.rsa.as_ref()?;
                self.cipher_error(kid, key_id, values, n, "n")
            }
            (Domain::Flag, Payload::BoolFlag(b)) if *b > 1 => Some(format!("flag value {b} outside {{0,1}}")),
            (Domain::Finite, Payload::PlainFloatVector(v)) if v.iter().any(|x| !x.is_finite()) => Some("non-finite value".into()),
            (Domain::Finite, Payload::PlainScalar(x)) if !x.is_finite() => Some("non-finite value".into()),
            _ => None,
        }
    }

    fn cipher_error(&self, want: &str, got: &str, values: &[BigUint], bound: &BigUint, what: &str) -> Option<String> {
        if want != got {
            return Some(format!("ciphertext under key {got}, expected {want}"));
        }
        values.iter().position(|c| c >= bound).map(|i| format!("element {i} is not below {what}"))
    }

    fn plain_values(&self, p: &Payload) -> Option<Vec<f64>> {
        match p {
            Payload::PlainFloatVector(v) => Some(v.clone()),
            Payload::PlainScalar(x) => Some(vec![*x]),
            Payload::BoolFlag(b) => Some(vec![*b as f64]),
            Payload::CiphertextVector { values, .. } => {
                let sk = self.secret.as_ref()?;
                values
                    .iter()
                    .map(|c| crate::parties::he::decrypt_mantissa(&crate::crypto::Evaluator::Crt(sk), c).ok().and_then(|m| m.to_f64()))
                    .collect()
            }
            _ => None,
        }
    }
}
