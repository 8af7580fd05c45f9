//! Heterogeneous-rank building blocks: truncation, zero-padding, tail
//! penalty, self-pruning and norm-weighted aggregation.

use super::config::PruneMode;
use super::Upload;
use crate::error::{Error, Result};
use crate::models::CommonAdapter;
use crate::numerics::Matrix;

/// First `rank` columns of `B` and rows of `A`.
pub fn hetlora_truncate(global: &CommonAdapter, rank: usize) -> Result<CommonAdapter> {
    if rank == 0 || rank > global.rank() {
        return Err(Error::invalid(format!(
            "cannot truncate a rank-{} adapter to rank {rank}",
            global.rank()
        )));
    }
    let (m, n) = global.output_shape();
    CommonAdapter::new(global.b.block(0..m, 0..rank), global.a.block(0..rank, 0..n))
}

/// Pads `B` with zero columns and `A` with zero rows up to `r_max`.
pub fn hetlora_zero_pad(local: &CommonAdapter, r_max: usize) -> Result<CommonAdapter> {
    if local.rank() > r_max {
        return Err(Error::invalid(format!(
            "cannot pad a rank-{} adapter to rank {r_max}",
            local.rank()
        )));
    }
    let (m, n) = local.output_shape();
    CommonAdapter::new(local.b.zero_padded(m, r_max), local.a.zero_padded(r_max, n))
}

/// Aggregation weights `‖ΔW_k‖ / Σ_j ‖ΔW_j‖`, or uniform weights when every
/// norm is zero.
pub fn sparsity_weights(norms: &[f64]) -> Result<Vec<f64>> {
    if norms.is_empty() {
        return Err(Error::invalid("no uploads to aggregate"));
    }
    if norms.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::numeric(format!("invalid update norms {norms:?}")));
    }
    let total: f64 = norms.iter().sum();
    if total == 0.0 {
        return Ok(vec![1.0 / norms.len() as f64; norms.len()]);
    }
    Ok(norms.iter().map(|v| v / total).collect())
}

/// Convex combination of zero-padded adapters weighted by their update norms.
pub fn hetlora_aggregate(uploads: &[Upload]) -> Result<CommonAdapter> {
    let norms: Vec<f64> = uploads.iter().map(|u| u.update_norm).collect();
    let weights = sparsity_weights(&norms)?;
    let first = &uploads[0].common;
    let (m, n) = first.output_shape();
    let mut b = Matrix::zeros(m, first.rank());
    let mut a = Matrix::zeros(first.rank(), n);
    for (u, w) in uploads.iter().zip(&weights) {
        if u.common.b.shape() != b.shape() || u.common.a.shape() != a.shape() {
            return Err(Error::invalid("uploads must share the padded shape"));
        }
        b.add_scaled(&u.common.b, *w)?;
        a.add_scaled(&u.common.a, *w)?;
    }
    CommonAdapter::new(b, a)
}

/// Number of trailing columns the penalty acts on at rank `rank`.
pub fn penalized_tail(rank: usize, gamma: f64, mode: PruneMode) -> usize {
    let tail = match mode {
        PruneMode::TrailingPenalty => (gamma * rank as f64).ceil() as usize,
        PruneMode::RankDecay => rank - decayed_rank(rank, gamma),
    };
    tail.clamp(1, rank)
}

fn decayed_rank(rank: usize, gamma: f64) -> usize {
    // Never hold the rank in place: a decay that rounds back to `rank`
    // still removes one column.
    ((gamma * rank as f64).floor() as usize).min(rank.saturating_sub(1))
}

/// `λ(‖B_tail‖_F² + ‖A_tail‖_F²)` and its gradient added into `(gb, ga)`.
pub fn add_tail_penalty(
    common: &CommonAdapter,
    tail: usize,
    lambda: f64,
    gb: &mut Matrix,
    ga: &mut Matrix,
) -> f64 {
    let r = common.rank();
    let start = r - tail.min(r);
    let mut value = 0.0;
    for i in 0..common.b.rows() {
        for j in start..r {
            let v = common.b[(i, j)];
            value += v * v;
            gb[(i, j)] += 2.0 * lambda * v;
        }
    }
    for j in start..r {
        for k in 0..common.a.cols() {
            let v = common.a[(j, k)];
            value += v * v;
            ga[(j, k)] += 2.0 * lambda * v;
        }
    }
    lambda * value
}

/// `‖B[:,j]‖·‖A[j,:]‖` for every column `j`.
pub fn column_importance(common: &CommonAdapter) -> Vec<f64> {
    (0..common.rank())
        .map(|j| {
            let b: f64 = common.b.col(j).iter().map(|v| v * v).sum();
            let a: f64 = common.a.row(j).iter().map(|v| v * v).sum();
            b.sqrt() * a.sqrt()
        })
        .collect()
}

/// Frobenius norm of the trailing `tail` columns of `B` and rows of `A`.
pub fn tail_norm(common: &CommonAdapter, tail: usize) -> f64 {
    let r = common.rank();
    let start = r - tail.min(r);
    let b: f64 = (start..r).flat_map(|j| common.b.col(j)).map(|v| v * v).sum();
    let a: f64 = (start..r).flat_map(|j| common.a.row(j).to_vec()).map(|v| v * v).sum();
    (a + b).sqrt()
}

/// Inputs of one self-pruning decision.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PruneRule {
    pub mode: PruneMode,
    pub gamma: f64,
    pub r_min: usize,
    pub prune_tol_factor: f64,
}

/// Rank after local training.
///
/// `received_tail_norm` is the tail norm of the model the client started
/// the round from (used by [`PruneMode::RankDecay`]).
pub fn hetlora_prune(common: &CommonAdapter, rule: &PruneRule, received_tail_norm: f64) -> usize {
    let r = common.rank();
    let new_rank = match rule.mode {
        PruneMode::TrailingPenalty => {
            let importance = column_importance(common);
            let mean = importance.iter().sum::<f64>() / r as f64;
            let tol = rule.prune_tol_factor * mean;
            let mut keep = r;
            while keep > rule.r_min && importance[keep - 1] < tol {
                keep -= 1;
            }
            keep
        }
        PruneMode::RankDecay => {
            let tail = penalized_tail(r, rule.gamma, rule.mode);
            if tail_norm(common, tail) < received_tail_norm {
                decayed_rank(r, rule.gamma)
            } else {
                r
            }
        }
    };
    new_rank.clamp(rule.r_min.min(r), r)
}
