//! Single-tree SecureBoost with quantile bins. The guest holds labels and
//! the key; the host only sees encrypted gradients and split outcomes.

use super::ctx::{PartyCtx, PartyKeys};
use super::dataset::Dataset;
use super::he;
use super::PartyError;
use crate::crypto::derive_rng;
use crate::messages::{PartyId, Payload};
use num_bigint::{BigInt, BigUint};
use num_traits::{One, ToPrimitive};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, VecDeque};

pub const LAMBDA: f64 = 0.1;
pub const MIN_GAIN: f64 = 1e-12;
const GH_FRAC: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    /// `owner` 0 is the guest, 1 the host (feature is then an opaque id).
    Split { owner: u8, feature: u32, bin: u32 },
    Leaf { weight: f64 },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SbGuestModel {
    pub nodes: BTreeMap<u32, TreeNode>,
    pub cuts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SbHostModel {
    /// Opaque id of each host feature.
    pub feature_ids: Vec<u32>,
    pub cuts: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SbParams {
    pub tree_depth: u32,
    pub n_bins: u32,
}

pub fn depth_of(node: u32) -> u32 {
    31 - (node + 1).leading_zeros()
}

/// Cut points `sorted[floor(k·n/B)]`, k = 1..B-1.
pub fn quantile_cuts(values: &[f64], n_bins: u32) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return vec![];
    }
    (1..n_bins as usize).map(|k| s[(k * n / n_bins as usize).min(n - 1)]).collect()
}

pub fn bin_of(cuts: &[f64], x: f64) -> u32 {
    cuts.iter().filter(|&&c| c < x).count() as u32
}

fn binned(ds: &Dataset, n_bins: u32) -> (Vec<Vec<f64>>, Vec<Vec<u32>>) {
    let mut cuts = Vec::with_capacity(ds.dim);
    let mut bins = Vec::with_capacity(ds.dim);
    for j in 0..ds.dim {
        let col: Vec<f64> = ds.features.iter().map(|r| r[j]).collect();
        let c = quantile_cuts(&col, n_bins);
        bins.push(col.iter().map(|&x| bin_of(&c, x)).collect());
        cuts.push(c);
    }
    (cuts, bins)
}

/// Opaque id per host feature.
pub fn feature_ids(dim: usize, seed: &[u8; 32]) -> Vec<u32> {
    let mut ids: Vec<u32> = (0..dim as u32).collect();
    ids.shuffle(&mut derive_rng(seed, "host.feature_ids").unwrap());
    ids
}

fn gh_mantissas(labels: &[u8]) -> (Vec<i64>, i64) {
    let s = (GH_FRAC as f64).exp2();
    let g = labels.iter().map(|&y| ((0.5 - y as f64) * s).round() as i64).collect();
    (g, (0.25 * s).round() as i64)
}

fn real(m: i128) -> f64 {
    m as f64 / (GH_FRAC as f64).exp2()
}

fn score(g: i128, h: i128) -> f64 {
    let (g, h) = (real(g), real(h));
    g * g / (h + LAMBDA)
}

/// Best split over histograms `hist[f][b] = (G, H)` of one node.
/// Returns `(feature index, bin, gain)`.
fn best_in(hists: &[Vec<(i128, i128)>], total: (i128, i128), best: &mut Option<(usize, usize, u32, f64)>, owner: usize) {
    let parent = score(total.0, total.1);
    for (f, h) in hists.iter().enumerate() {
        let (mut gl, mut hl) = (0i128, 0i128);
        for (b, &(g, hh)) in h.iter().enumerate() {
            gl += g;
            hl += hh;
            let (gr, hr) = (total.0 - gl, total.1 - hl);
            if hl <= 0 || hr <= 0 {
                continue;
            }
            let gain = score(gl, hl) + score(gr, hr) - parent;
            if gain > MIN_GAIN && best.is_none_or(|(_, _, _, g)| gain > g) {
                *best = Some((owner, f, b as u32, gain));
            }
        }
    }
}

fn plain_hist(bins: &[Vec<u32>], rows: &[usize], g: &[i64], h: i64, n_bins: u32) -> Vec<Vec<(i128, i128)>> {
    bins.iter()
        .map(|col| {
            let mut out = vec![(0i128, 0i128); n_bins as usize];
            for &i in rows {
                let e = &mut out[col[i] as usize];
                e.0 += g[i] as i128;
                e.1 += h as i128;
            }
            out
        })
        .collect()
}

fn leaf(rows: &[usize], g: &[i64], h: i64) -> TreeNode {
    let gs: i128 = rows.iter().map(|&i| g[i] as i128).sum();
    let hs = h as i128 * rows.len() as i128;
    TreeNode::Leaf { weight: -real(gs) / (real(hs) + LAMBDA) }
}

fn split_rows(rows: &[usize], left: &[bool]) -> (Vec<usize>, Vec<usize>) {
    rows.iter().partition(|&&i| left[i])
}

fn partition_payload(n: usize, rows: &[usize], col: &[u32], bin: u32) -> (Payload, Vec<bool>) {
    let mut v = vec![0.0; n];
    let mut left = vec![false; n];
    for &i in rows {
        if col[i] <= bin {
            v[i] = 1.0;
            left[i] = true;
        }
    }
    (Payload::PlainFloatVector(v), left)
}

fn read_partition(p: Payload, n: usize) -> Result<Vec<bool>, PartyError> {
    let v = he::expect_floats(p, n, "split_partition")?;
    Ok(v.iter().map(|&x| x == 1.0).collect())
}

/// Plaintext tree over joined rows with the same tie-breaking, for tests.
pub fn reference(guest: &Dataset, host: &Dataset, p: SbParams, seed: &[u8; 32]) -> SbGuestModel {
    let n = guest.rows();
    let (g, h) = gh_mantissas(guest.labels.as_ref().unwrap());
    let (gcuts, gbins) = binned(guest, p.n_bins);
    let (_, hbins) = binned(host, p.n_bins);
    let ids = feature_ids(host.dim, seed);
    let mut by_id = vec![0usize; host.dim];
    for (j, &id) in ids.iter().enumerate() {
        by_id[id as usize] = j;
    }
    let hbins_by_id: Vec<Vec<u32>> = by_id.iter().map(|&j| hbins[j].clone()).collect();
    let mut model = SbGuestModel { nodes: BTreeMap::new(), cuts: gcuts };
    let mut queue = VecDeque::from([(0u32, (0..n).collect::<Vec<_>>())]);
    while let Some((k, rows)) = queue.pop_front() {
        if depth_of(k) >= p.tree_depth {
            model.nodes.insert(k, leaf(&rows, &g, h));
            continue;
        }
        let total = (rows.iter().map(|&i| g[i] as i128).sum(), h as i128 * rows.len() as i128);
        let mut best = None;
        best_in(&plain_hist(&gbins, &rows, &g, h, p.n_bins), total, &mut best, 0);
        best_in(&plain_hist(&hbins_by_id, &rows, &g, h, p.n_bins), total, &mut best, 1);
        match best {
            None => {
                model.nodes.insert(k, leaf(&rows, &g, h));
            }
            Some((owner, f, bin, _)) => {
                model.nodes.insert(k, TreeNode::Split { owner: owner as u8, feature: f as u32, bin });
                let col = if owner == 0 { &gbins[f] } else { &hbins_by_id[f] };
                let (_, left) = partition_payload(n, &rows, col, bin);
                let (l, r) = split_rows(&rows, &left);
                queue.push_back((2 * k + 1, l));
                queue.push_back((2 * k + 2, r));
            }
        }
    }
    model
}

fn decision(p: Payload) -> Result<(i64, u32, u32), PartyError> {
    let v = he::expect_floats(p, 3, "split_decision")?;
    Ok((v[0] as i64, v[1] as u32, v[2] as u32))
}

pub fn guest_train(
    ctx: &mut PartyCtx,
    task: &str,
    ds: &Dataset,
    keys: &PartyKeys,
    seed: &[u8; 32],
    p: SbParams,
) -> Result<SbGuestModel, PartyError> {
    if keys.paillier_secret.is_none() {
        return Err(PartyError::Protocol("guest has no secret key".into()));
    }
    let pk = &keys.paillier;
    let ev = keys.evaluator_untracked();
    let n = ds.rows();
    let labels = ds.labels.as_ref().ok_or_else(|| PartyError::Protocol("guest has no labels".into()))?;
    let (g, h) = gh_mantissas(labels);
    let (cuts, bins) = binned(ds, p.n_bins);

    ctx.run_extra_sends(task, 0, Some(&labels.iter().map(|&y| y as f64).collect::<Vec<_>>()))?;
    let gm: Vec<BigInt> = g.iter().map(|&x| BigInt::from(x)).collect();
    let hm = vec![BigInt::from(h); n];
    let enc_g = he::encrypt_all(&ev, &gm, &mut derive_rng(seed, "guest.enc.grad").unwrap())?;
    let enc_h = he::encrypt_all(&ev, &hm, &mut derive_rng(seed, "guest.enc.hess").unwrap())?;
    ctx.send_var(task, "enc_grad", 0, PartyId::Host, &he::cts(pk, enc_g))?;
    ctx.send_var(task, "enc_hess", 0, PartyId::Host, &he::cts(pk, enc_h))?;

    let mut model = SbGuestModel { nodes: BTreeMap::new(), cuts };
    let mut queue = VecDeque::from([(0u32, (0..n).collect::<Vec<_>>())]);
    while let Some((k, rows)) = queue.pop_front() {
        if depth_of(k) >= p.tree_depth {
            model.nodes.insert(k, leaf(&rows, &g, h));
            continue;
        }
        let hist = he::expect_cts(ctx.recv_var(task, "host_hist", k, PartyId::Host)?, pk, None, "host_hist")?;
        let per_feature = 2 * p.n_bins as usize;
        if hist.len() % per_feature != 0 {
            return Err(PartyError::Protocol(format!("host_hist.{k}: length {} not a multiple of {per_feature}", hist.len())));
        }
        let mut host_hists = Vec::with_capacity(hist.len() / per_feature);
        for f in hist.chunks(per_feature) {
            let mut bins_f = Vec::with_capacity(p.n_bins as usize);
            for pair in f.chunks(2) {
                let gs = he::decrypt_mantissa(&ev, &pair[0])?.to_i128().unwrap_or(i128::MAX);
                let hs = he::decrypt_mantissa(&ev, &pair[1])?.to_i128().unwrap_or(i128::MAX);
                bins_f.push((gs, hs));
            }
            host_hists.push(bins_f);
        }
        let total = (rows.iter().map(|&i| g[i] as i128).sum(), h as i128 * rows.len() as i128);
        let mut best = None;
        best_in(&plain_hist(&bins, &rows, &g, h, p.n_bins), total, &mut best, 0);
        best_in(&host_hists, total, &mut best, 1);
        let dec = match best {
            None => vec![-1.0, 0.0, 0.0],
            Some((owner, f, bin, _)) => vec![owner as f64, f as f64, bin as f64],
        };
        ctx.send_var(task, "split_decision", k, PartyId::Host, &Payload::PlainFloatVector(dec))?;
        match best {
            None => {
                model.nodes.insert(k, leaf(&rows, &g, h));
            }
            Some((owner, f, bin, _)) => {
                model.nodes.insert(k, TreeNode::Split { owner: owner as u8, feature: f as u32, bin });
                let left = if owner == 0 {
                    let (payload, left) = partition_payload(n, &rows, &bins[f], bin);
                    ctx.send_var(task, "split_partition", k, PartyId::Host, &payload)?;
                    left
                } else {
                    read_partition(ctx.recv_var(task, "split_partition", k, PartyId::Host)?, n)?
                };
                let (l, r) = split_rows(&rows, &left);
                queue.push_back((2 * k + 1, l));
                queue.push_back((2 * k + 2, r));
            }
        }
        ctx.progress(task, k)?;
    }
    Ok(model)
}

pub fn host_train(
    ctx: &mut PartyCtx,
    task: &str,
    ds: &Dataset,
    keys: &PartyKeys,
    seed: &[u8; 32],
    p: SbParams,
) -> Result<SbHostModel, PartyError> {
    let pk = &keys.paillier;
    let ev = keys.evaluator_untracked();
    let n = ds.rows();
    let (cuts, bins) = binned(ds, p.n_bins);
    let ids = feature_ids(ds.dim, seed);
    let mut by_id = vec![0usize; ds.dim];
    for (j, &id) in ids.iter().enumerate() {
        by_id[id as usize] = j;
    }

    ctx.run_extra_sends(task, 0, None)?;
    let enc_g = he::expect_cts(ctx.recv_var(task, "enc_grad", 0, PartyId::Guest)?, pk, Some(n), "enc_grad")?;
    let enc_h = he::expect_cts(ctx.recv_var(task, "enc_hess", 0, PartyId::Guest)?, pk, Some(n), "enc_hess")?;

    let mut queue = VecDeque::from([(0u32, (0..n).collect::<Vec<_>>())]);
    while let Some((k, rows)) = queue.pop_front() {
        if depth_of(k) >= p.tree_depth {
            continue;
        }
        let mut out = Vec::with_capacity(ds.dim * p.n_bins as usize * 2);
        for &j in &by_id {
            let mut acc = vec![(BigUint::one(), BigUint::one()); p.n_bins as usize];
            for &i in &rows {
                let e = &mut acc[bins[j][i] as usize];
                e.0 = ev.mul(&e.0, &enc_g[i]);
                e.1 = ev.mul(&e.1, &enc_h[i]);
            }
            for (gc, hc) in acc {
                out.push(gc);
                out.push(hc);
            }
        }
        ctx.send_var(task, "host_hist", k, PartyId::Guest, &he::cts(pk, out))?;
        let (owner, f, bin) = decision(ctx.recv_var(task, "split_decision", k, PartyId::Guest)?)?;
        let left = match owner {
            -1 => continue,
            0 => read_partition(ctx.recv_var(task, "split_partition", k, PartyId::Guest)?, n)?,
            1 => {
                let j = *by_id.get(f as usize).ok_or_else(|| PartyError::Protocol(format!("unknown feature id {f}")))?;
                let (payload, left) = partition_payload(n, &rows, &bins[j], bin);
                ctx.send_var(task, "split_partition", k, PartyId::Guest, &payload)?;
                left
            }
            o => return Err(PartyError::Protocol(format!("split owner {o}"))),
        };
        let (l, r) = split_rows(&rows, &left);
        queue.push_back((2 * k + 1, l));
        queue.push_back((2 * k + 2, r));
    }
    Ok(SbHostModel { feature_ids: ids, cuts })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_depths() {
        assert_eq!([0, 1, 2, 3, 6, 7].map(depth_of), [0, 1, 1, 2, 2, 3]);
    }

    #[test]
    fn quantile_bins() {
        let v: Vec<f64> = (0..10).map(|x| x as f64).collect();
        let c = quantile_cuts(&v, 4);
        // floor(k·10/4) = 2, 5, 7
        assert_eq!(c, vec![2.0, 5.0, 7.0]);
        assert_eq!([0.0, 2.0, 2.5, 7.0, 9.0].map(|x| bin_of(&c, x)), [0, 0, 1, 2, 3]);
    }

    #[test]
    fn hand_worked_split() {
        // Labels 1,1,0,0 on x = 1,2,3,4: g = -0.5,-0.5,0.5,0.5, h = 0.25.
        let guest = Dataset {
            ids: (0..4).map(|i| format!("i{i}")).collect(),
            features: vec![vec![1.0], vec![2.0], vec![3.0], vec![4.0]],
            labels: Some(vec![1, 1, 0, 0]),
            dim: 1,
        };
        let host = Dataset { ids: guest.ids.clone(), features: vec![vec![0.0]; 4], labels: None, dim: 1 };
        let m = reference(&guest, &host, SbParams { tree_depth: 1, n_bins: 4 }, &[0; 32]);
        // Cuts at 2, 3, 4; bin 0 holds x <= 2.
        assert_eq!(m.nodes[&0], TreeNode::Split { owner: 0, feature: 0, bin: 0 });
        // Left: G = -1, H = 0.5, weight = 1 / 0.6.
        let TreeNode::Leaf { weight } = m.nodes[&1] else { panic!() };
        assert!((weight - 1.0 / 0.6).abs() < 1e-12);
        let TreeNode::Leaf { weight } = m.nodes[&2] else { panic!() };
        assert!((weight + 1.0 / 0.6).abs() < 1e-12);
    }
}
