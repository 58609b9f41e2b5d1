use super::SharedMlp;
use crate::error::{contract_err, shape_err, Result};
use crate::params::Ctx;
use crate::tensor::{ReduceKind, Var};

fn neighborhood_dims(ctx: &Ctx, values: Var) -> Result<(usize, usize, usize)> {
    match *ctx.tape.shape(values) {
        [m, k, d] => Ok((m, k, d)),
        ref s => shape_err(format!("expected [M, K, D] neighbourhood values, got {s:?}")),
    }
}

/// Channel-wise attention over each neighbourhood.
///
/// The scorer maps every neighbour to `D / group` raw scores, which are
/// softmax-normalised over the K axis and shared by `group` consecutive
/// channels. Returns the aggregated `[M, D]` features and the expanded
/// `[M, K, D]` scores.
pub fn vector_attention(
    ctx: &mut Ctx,
    values: Var,
    scorer: &SharedMlp,
    group: usize,
) -> Result<(Var, Var)> {
    let (_, _, d) = neighborhood_dims(ctx, values)?;
    if group == 0 || d % group != 0 {
        return shape_err(format!("group size {group} does not divide width {d}"));
    }
    if scorer.in_dim() != d || scorer.out_dim() != d / group {
        return shape_err(format!(
            "scorer maps {} -> {}, expected {d} -> {}",
            scorer.in_dim(),
            scorer.out_dim(),
            d / group
        ));
    }
    let raw = scorer.forward(ctx, values)?;
    let weights = ctx.tape.softmax(raw, 1)?;
    let scores = if group == 1 {
        weights
    } else {
        ctx.tape.repeat_channels(weights, group)?
    };
    let weighted = ctx.tape.mul(scores, values)?;
    let out = ctx.tape.reduce(weighted, 1, ReduceKind::Sum)?;
    Ok((out, scores))
}

/// Multi-head attention with one scalar score per head and neighbour,
/// computed head by head. With `n_heads == D` it coincides with
/// [`vector_attention`] at group size 1.
pub fn multi_head_attention_reference(
    ctx: &mut Ctx,
    values: Var,
    scorer: &SharedMlp,
    n_heads: usize,
) -> Result<Var> {
    let (_, _, d) = neighborhood_dims(ctx, values)?;
    if n_heads == 0 || d % n_heads != 0 {
        return contract_err(format!("{n_heads} heads do not divide width {d}"));
    }
    if scorer.in_dim() != d || scorer.out_dim() != n_heads {
        return shape_err(format!(
            "scorer maps {} -> {}, expected {d} -> {n_heads}",
            scorer.in_dim(),
            scorer.out_dim()
        ));
    }
    let head_dim = d / n_heads;
    let raw = scorer.forward(ctx, values)?;
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let score = ctx.tape.slice_last(raw, h, 1)?;
        let weight = ctx.tape.softmax(score, 1)?;
        let weight = if head_dim == 1 {
            weight
        } else {
            ctx.tape.repeat_channels(weight, head_dim)?
        };
        let v = ctx.tape.slice_last(values, h * head_dim, head_dim)?;
        let weighted = ctx.tape.mul(weight, v)?;
        heads.push(ctx.tape.reduce(weighted, 1, ReduceKind::Sum)?);
    }
    if heads.len() == 1 {
        Ok(heads[0])
    } else {
        ctx.tape.concat(&heads)
    }
}

/// Channel-wise maximum over the K axis of `[M, K, D]`.
pub fn neighborhood_maxpool(ctx: &mut Ctx, values: Var) -> Result<Var> {
    neighborhood_dims(ctx, values)?;
    ctx.tape.reduce(values, 1, ReduceKind::Max)
}
