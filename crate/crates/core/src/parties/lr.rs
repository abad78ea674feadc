//! Two-party logistic regression with a second-order Taylor loss.
//!
//! Scales: host forward `U` at 2^-32, residual `d` at 2^-34, feature-weighted
//! sums at 2^-50, the loss cross term at 2^-67.

use super::ctx::{PartyCtx, PartyKeys};
use super::dataset::Dataset;
use super::he::{self, mantissa};
use super::PartyError;
use crate::crypto::derive_rng;
use crate::messages::{PartyId, Payload};
use num_bigint::BigInt;
use num_traits::Zero;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const MASK_BOUND: i64 = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrParams {
    pub max_iter: u32,
    pub learning_rate: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LrGuestModel {
    pub w: Vec<f64>,
    pub b: f64,
    pub losses: Vec<f64>,
}

fn labels_pm(ds: &Dataset) -> Result<Vec<f64>, PartyError> {
    let l = ds.labels.as_ref().ok_or_else(|| PartyError::Protocol("guest has no labels".into()))?;
    Ok(l.iter().map(|&y| if y == 1 { 1.0 } else { -1.0 }).collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Plaintext reference of one training run on joined data. Mirrors the
/// fixed-point rounding of the encrypted path.
pub fn reference(guest: &Dataset, host: &Dataset, p: LrParams) -> (LrGuestModel, Vec<f64>) {
    let y = labels_pm(guest).unwrap();
    let n = guest.rows() as f64;
    let mut m = LrGuestModel { w: vec![0.0; guest.dim], b: 0.0, losses: vec![] };
    let mut wh = vec![0.0; host.dim];
    let mut prev = f64::INFINITY;
    for t in 0..p.max_iter {
        let ug: Vec<f64> = guest.features.iter().map(|r| dot(r, &m.w) + m.b).collect();
        let uh: Vec<f64> = host.features.iter().map(|r| mantissa(dot(r, &wh), 32)).map(|u| f64_of(&u, 32)).collect();
        let d: Vec<f64> = (0..guest.rows()).map(|i| 0.25 * (ug[i] + uh[i]) - 0.5 * y[i]).collect();
        let loss = (0..guest.rows())
            .map(|i| {
                let u = ug[i] + uh[i];
                std::f64::consts::LN_2 - 0.5 * y[i] * u + 0.125 * u * u
            })
            .sum::<f64>()
            / n;
        m.losses.push(loss);
        let gg: Vec<f64> = (0..guest.dim).map(|j| (0..guest.rows()).map(|i| d[i] * guest.features[i][j]).sum::<f64>() / n).collect();
        let gb = d.iter().sum::<f64>() / n;
        let gh: Vec<f64> = (0..host.dim).map(|j| (0..host.rows()).map(|i| d[i] * host.features[i][j]).sum::<f64>() / n).collect();
        for j in 0..guest.dim {
            m.w[j] -= p.learning_rate * gg[j];
        }
        m.b -= p.learning_rate * gb;
        for j in 0..host.dim {
            wh[j] -= p.learning_rate * gh[j];
        }
        let converged = p.eps.is_infinite() || (loss - prev).abs() < p.eps;
        prev = loss;
        if converged || t + 1 == p.max_iter {
            break;
        }
    }
    (m, wh)
}

fn f64_of(m: &BigInt, frac: u32) -> f64 {
    crate::crypto::fixed::big_to_f64(m, frac)
}

pub fn guest_train(
    ctx: &mut PartyCtx,
    task: &str,
    ds: &Dataset,
    keys: &PartyKeys,
    seed: &[u8; 32],
    p: LrParams,
) -> Result<LrGuestModel, PartyError> {
    if keys.paillier_secret.is_none() {
        return Err(PartyError::Protocol("guest has no secret key".into()));
    }
    let pk = &keys.paillier;
    let ev = keys.evaluator();
    let n = ds.rows();
    let nf = n as f64;
    let y = labels_pm(ds)?;
    let cols = he::int_columns(&ds.features, ds.dim);
    let mut m = LrGuestModel { w: vec![0.0; ds.dim], b: 0.0, losses: vec![] };
    let mut prev = f64::INFINITY;
    for t in 0..p.max_iter {
        ctx.run_extra_sends(task, t, Some(&y))?;
        let enc_u = he::expect_cts(ctx.recv_var(task, "host_forward", t, PartyId::Host)?, pk, Some(n), "host_forward")?;
        let aux = he::expect_cts(ctx.recv_var(task, "host_loss_aux", t, PartyId::Host)?, pk, Some(1), "host_loss_aux")?;

        let ug: Vec<f64> = ds.features.iter().map(|r| dot(r, &m.w) + m.b).collect();
        let c: Vec<BigInt> = (0..n).map(|i| mantissa(0.25 * ug[i] - 0.5 * y[i], 34)).collect();
        let mut rng = derive_rng(seed, &format!("guest.enc.{t}")).unwrap();
        let enc_c = he::encrypt_all(&ev, &c, &mut rng)?;
        let enc_d: Vec<_> = enc_u.iter().zip(&enc_c).map(|(a, b)| ev.mul(a, b)).collect();
        ctx.send_var(task, "fwd_residual", t, PartyId::Host, &he::cts(pk, enc_d.clone()))?;

        // Overlaps with the host's masked gradient.
        let mut grad_w = Vec::with_capacity(ds.dim);
        for col in &cols {
            grad_w.push(he::decrypt_f64(&ev, &ev.dot(&enc_d, col), 50)? / nf);
        }
        let ones = vec![BigInt::from(1); n];
        let grad_b = he::decrypt_f64(&ev, &ev.dot(&enc_d, &ones), 34)? / nf;
        let k: Vec<BigInt> = (0..n).map(|i| mantissa(-0.5 * y[i] + 0.25 * ug[i], 35)).collect();
        let cross = ev.mul(&ev.dot(&enc_u, &k), &aux[0]);
        let l_he = he::decrypt_f64(&ev, &cross, 67)?;
        let local: f64 = (0..n).map(|i| std::f64::consts::LN_2 - 0.5 * y[i] * ug[i] + 0.125 * ug[i] * ug[i]).sum();
        let loss = (local + l_he) / nf;
        m.losses.push(loss);

        let masked = he::expect_cts(ctx.recv_var(task, "masked_grad", t, PartyId::Host)?, pk, None, "masked_grad")?;
        let plain = masked.iter().map(|c| he::decrypt_f64(&ev, c, 50)).collect::<Result<Vec<_>, _>>()?;
        ctx.send_var(task, "unmasked_grad", t, PartyId::Host, &Payload::PlainFloatVector(plain))?;

        for j in 0..ds.dim {
            m.w[j] -= p.learning_rate * grad_w[j];
        }
        m.b -= p.learning_rate * grad_b;

        let converged = p.eps.is_infinite() || (loss - prev).abs() < p.eps;
        prev = loss;
        let flag = converged || t + 1 == p.max_iter;
        ctx.progress(task, t)?;
        ctx.send_var(task, "stop_flag", t, PartyId::Coordinator, &Payload::flag(flag))?;
        ctx.send_var(task, "stop_flag", t, PartyId::Host, &Payload::flag(flag))?;
        if flag {
            break;
        }
    }
    Ok(m)
}

pub fn host_train(
    ctx: &mut PartyCtx,
    task: &str,
    ds: &Dataset,
    keys: &PartyKeys,
    seed: &[u8; 32],
    p: LrParams,
) -> Result<Vec<f64>, PartyError> {
    let pk = &keys.paillier;
    let ev = keys.evaluator();
    let n = ds.rows();
    let nf = n as f64;
    let cols = he::int_columns(&ds.features, ds.dim);
    let mut w = vec![0.0; ds.dim];
    for t in 0..p.max_iter {
        ctx.run_extra_sends(task, t, None)?;
        let u: Vec<BigInt> = ds.features.iter().map(|r| mantissa(dot(r, &w), 32)).collect();
        let mut rng = derive_rng(seed, &format!("host.enc.{t}")).unwrap();
        let enc_u = he::encrypt_all(&ev, &u, &mut rng)?;
        ctx.send_var(task, "host_forward", t, PartyId::Guest, &he::cts(pk, enc_u))?;
        let sq: BigInt = u.iter().fold(BigInt::zero(), |acc, x| acc + x * x);
        let aux = he::encrypt_all(&ev, &[sq], &mut rng)?;
        ctx.send_var(task, "host_loss_aux", t, PartyId::Guest, &he::cts(pk, aux))?;

        let enc_d = he::expect_cts(ctx.recv_var(task, "fwd_residual", t, PartyId::Guest)?, pk, Some(n), "fwd_residual")?;
        let mut mrng = derive_rng(seed, &format!("host.mask.{t}")).unwrap();
        let mask: Vec<f64> = (0..ds.dim).map(|_| mrng.gen_range(-MASK_BOUND..=MASK_BOUND) as f64).collect();
        let mut sent_mask = mask.clone();
        ctx.hooks.host_mask(t, &mut sent_mask);
        let masked: Vec<_> = cols
            .iter()
            .zip(&sent_mask)
            .map(|(col, r)| ev.add_plain(&ev.dot(&enc_d, col), &mantissa(*r, 50)))
            .collect();
        ctx.send_var(task, "masked_grad", t, PartyId::Guest, &he::cts(pk, masked))?;

        let v = he::expect_floats(ctx.recv_var(task, "unmasked_grad", t, PartyId::Guest)?, ds.dim, "unmasked_grad")?;
        let mut grad: Vec<f64> = v.iter().zip(&mask).map(|(v, r)| (v - r) / nf).collect();
        ctx.hooks.host_gradient(t, &mut grad);
        for j in 0..ds.dim {
            w[j] -= p.learning_rate * grad[j];
        }
        match ctx.recv_var(task, "stop_flag", t, PartyId::Guest)? {
            Payload::BoolFlag(0) => {}
            Payload::BoolFlag(_) => break,
            other => return Err(PartyError::Protocol(format!("stop_flag: got {}", other.kind()))),
        }
    }
    Ok(w)
}
