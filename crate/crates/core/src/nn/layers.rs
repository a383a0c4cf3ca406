use std::sync::Arc;

use crate::autodiff::{Matrix, SegmentIndex, SparseMatrix, Tape, Var};
use crate::error::{Error, Result};

use super::Activation;

/// GAT logit slope.
pub const LEAKY_SLOPE: f64 = 0.2;

/// Layer input: the (sparse, constant) node features or a hidden tensor.
#[derive(Clone)]
pub enum LayerInput {
    Sparse(Arc<SparseMatrix>),
    Dense(Var),
}

impl LayerInput {
    /// `input · w`.
    pub fn project(&self, tape: &mut Tape, w: Var) -> Result<Var> {
        match self {
            LayerInput::Sparse(x) => tape.spmm(Arc::clone(x), w),
            LayerInput::Dense(h) => tape.matmul(*h, w),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    Concat,
    Average,
}

pub struct LayerOutput {
    pub hidden: Var,
    /// Per-head node scores, each n x 1 in (0, 1).
    pub head_scores: Vec<Var>,
    /// Mean of `head_scores`.
    pub mean_score: Var,
}

pub struct OodgatHead {
    pub w: Var,
    /// d' x 1 score vector.
    pub a: Var,
}

pub struct GatHead {
    pub w: Var,
    pub a_src: Var,
    pub a_dst: Var,
}

pub(crate) fn activate(tape: &mut Tape, x: Var, act: Activation) -> Var {
    match act {
        Activation::Elu => tape.elu(x, 1.0),
        Activation::Relu => tape.relu(x),
    }
}

/// Normalized OODGAT attention from node scores:
/// `e = 1 - |w(target) - w(source)|`, softmax within each target group.
pub fn oodgat_attention(tape: &mut Tape, scores: Var, index: &Arc<SegmentIndex>) -> Result<Var> {
    let st = tape.gather_rows(scores, index.targets())?;
    let ss = tape.gather_rows(scores, index.sources())?;
    let diff = tape.sub(st, ss)?;
    let dist = tape.abs(diff);
    let neg = tape.neg(dist);
    let e = tape.offset(neg, 1.0);
    tape.segment_softmax(e, index)
}

/// `out[t] = Σ α[e] · hw[source(e)]` over the group of `t`.
pub fn aggregate(tape: &mut Tape, hw: Var, alpha: Var, index: &Arc<SegmentIndex>) -> Result<Var> {
    tape.aggregate(hw, alpha, index)
}

fn combine_heads(
    tape: &mut Tape,
    outs: Vec<Var>,
    combine: Combine,
    bias: Option<Var>,
    act: Option<Activation>,
) -> Result<Var> {
    let mut h = match combine {
        Combine::Concat => tape.concat_cols(&outs)?,
        Combine::Average => {
            let k = outs.len() as f64;
            let mut acc = outs[0];
            for &o in &outs[1..] {
                acc = tape.add(acc, o)?;
            }
            tape.scale(acc, 1.0 / k)
        }
    };
    if let Some(b) = bias {
        h = tape.add_row(h, b)?;
    }
    if let Some(a) = act {
        h = activate(tape, h, a);
    }
    Ok(h)
}

/// Projects `input` through every head weight with one product.
fn project_heads(
    tape: &mut Tape,
    input: &LayerInput,
    ws: impl Iterator<Item = Var>,
) -> Result<Vec<Var>> {
    let ws: Vec<Var> = ws.collect();
    if ws.len() == 1 {
        return Ok(vec![input.project(tape, ws[0])?]);
    }
    let widths: Vec<usize> = ws.iter().map(|&w| tape.shape(w).1).collect();
    let stacked = tape.concat_cols(&ws)?;
    let all = input.project(tape, stacked)?;
    let mut at = 0;
    let mut out = Vec::with_capacity(ws.len());
    for w in widths {
        out.push(tape.slice_cols(all, at, w)?);
        at += w;
    }
    Ok(out)
}

fn check_heads(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::shape(
            "attention layer",
            "at least one head required",
        ));
    }
    Ok(())
}

pub fn oodgat_layer(
    tape: &mut Tape,
    input: &LayerInput,
    index: &Arc<SegmentIndex>,
    heads: &[OodgatHead],
    combine: Combine,
    bias: Option<Var>,
    act: Option<Activation>,
) -> Result<LayerOutput> {
    check_heads(heads.len())?;
    let projected = project_heads(tape, input, heads.iter().map(|h| h.w))?;
    let mut outs = Vec::with_capacity(heads.len());
    let mut head_scores = Vec::with_capacity(heads.len());
    for (head, hw) in heads.iter().zip(projected) {
        let logit = tape.matmul(hw, head.a)?;
        let w = tape.sigmoid(logit);
        let alpha = oodgat_attention(tape, w, index)?;
        outs.push(aggregate(tape, hw, alpha, index)?);
        head_scores.push(w);
    }
    let mut mean_score = head_scores[0];
    for &s in &head_scores[1..] {
        mean_score = tape.add(mean_score, s)?;
    }
    if head_scores.len() > 1 {
        mean_score = tape.scale(mean_score, 1.0 / head_scores.len() as f64);
    }
    let hidden = combine_heads(tape, outs, combine, bias, act)?;
    Ok(LayerOutput {
        hidden,
        head_scores,
        mean_score,
    })
}

/// GAT attention: `softmax(LeakyReLU(a_dstᵀ hw_t + a_srcᵀ hw_s))` per group.
pub fn gat_attention(
    tape: &mut Tape,
    hw: Var,
    head: &GatHead,
    index: &Arc<SegmentIndex>,
) -> Result<Var> {
    let s_src = tape.matmul(hw, head.a_src)?;
    let s_dst = tape.matmul(hw, head.a_dst)?;
    let st = tape.gather_rows(s_dst, index.targets())?;
    let ss = tape.gather_rows(s_src, index.sources())?;
    let logits = tape.add(st, ss)?;
    let logits = tape.leaky_relu(logits, LEAKY_SLOPE);
    tape.segment_softmax(logits, index)
}

pub fn gat_layer(
    tape: &mut Tape,
    input: &LayerInput,
    index: &Arc<SegmentIndex>,
    heads: &[GatHead],
    combine: Combine,
    bias: Option<Var>,
    act: Option<Activation>,
) -> Result<Var> {
    check_heads(heads.len())?;
    let projected = project_heads(tape, input, heads.iter().map(|h| h.w))?;
    let mut outs = Vec::with_capacity(heads.len());
    for (head, hw) in heads.iter().zip(projected) {
        let alpha = gat_attention(tape, hw, head, index)?;
        outs.push(aggregate(tape, hw, alpha, index)?);
    }
    combine_heads(tape, outs, combine, bias, act)
}

/// Symmetric normalization `1 / sqrt(d_t d_s)` per entry, degrees counted
/// within `index` (self entries included).
pub fn gcn_weights(index: &SegmentIndex) -> Matrix {
    let deg = index.group_sizes();
    Matrix::column(
        index
            .targets()
            .iter()
            .zip(index.sources())
            .map(|(&t, &s)| 1.0 / ((deg[t] * deg[s]) as f64).sqrt())
            .collect(),
    )
}

pub fn gcn_layer(
    tape: &mut Tape,
    input: &LayerInput,
    index: &Arc<SegmentIndex>,
    w: Var,
    bias: Option<Var>,
    act: Option<Activation>,
) -> Result<Var> {
    let hw = input.project(tape, w)?;
    let norm = tape.constant(gcn_weights(index));
    let mut h = aggregate(tape, hw, norm, index)?;
    if let Some(b) = bias {
        h = tape.add_row(h, b)?;
    }
    if let Some(a) = act {
        h = activate(tape, h, a);
    }
    Ok(h)
}

pub fn dense_layer(
    tape: &mut Tape,
    input: &LayerInput,
    w: Var,
    bias: Option<Var>,
    act: Option<Activation>,
) -> Result<Var> {
    let mut h = input.project(tape, w)?;
    if let Some(b) = bias {
        h = tape.add_row(h, b)?;
    }
    if let Some(a) = act {
        h = activate(tape, h, a);
    }
    Ok(h)
}
