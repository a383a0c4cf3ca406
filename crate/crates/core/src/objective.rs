//! Training objective: cross-entropy plus the decayed consistency,
//! entropy and discrepancy regularizers.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Matrix, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::ForwardOutput;

/// Lower clamp applied inside every logarithm of a probability.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    /// Consistency weight.
    pub beta: f64,
    /// Entropy regularizer weight.
    pub gamma: f64,
    /// Discrepancy weight.
    pub zeta: f64,
    /// Regularizer decay is `a^(b·t)`.
    pub a: f64,
    pub b: f64,
    /// Score threshold selecting nodes for the entropy regularizer.
    pub epsilon: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: 0.0,
            gamma: 0.0,
            zeta: 0.0,
            a: 0.9,
            b: 0.01,
            epsilon: 0.6,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if [self.beta, self.gamma, self.zeta]
            .iter()
            .any(|w| !(*w >= 0.0) || !w.is_finite())
        {
            return bad(format!(
                "loss weights must be finite and non-negative: {self:?}"
            ));
        }
        if !(self.a > 0.0 && self.a <= 1.0) {
            return bad(format!("decay base a must lie in (0, 1], got {}", self.a));
        }
        if !(self.b > 0.0) || !self.b.is_finite() {
            return bad(format!("decay rate b must be positive, got {}", self.b));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return bad(format!("epsilon must lie in (0, 1], got {}", self.epsilon));
        }
        Ok(())
    }

    pub fn decay(&self, t: usize) -> f64 {
        self.a.powf(self.b * t as f64)
    }

    pub fn has_regularizers(&self) -> bool {
        self.beta != 0.0 || self.gamma != 0.0 || self.zeta != 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub con: f64,
    pub ent: f64,
    pub dis: f64,
    pub decay: f64,
    pub total: f64,
}

/// Mean `-ln z[i, y_i]` over the labelled `(node, class)` pairs.
pub fn cross_entropy_loss(tape: &mut Tape, probs: Var, labelled: &[(usize, usize)]) -> Result<Var> {
    if labelled.is_empty() {
        return Err(Error::Population(
            "cross-entropy over an empty training set".into(),
        ));
    }
    let picked = tape.gather_elems(probs, labelled)?;
    let logs = tape.log_clamped(picked, LOG_FLOOR);
    let mean = tape.mean(logs)?;
    Ok(tape.neg(mean))
}

/// Raw Shannon entropy of each row, n x 1.
pub fn row_entropy(tape: &mut Tape, probs: Var) -> Result<Var> {
    let logs = tape.log_clamped(probs, LOG_FLOOR);
    let plogp = tape.mul(probs, logs)?;
    let h = tape.row_sum(plogp)?;
    Ok(tape.neg(h))
}

/// `sigmoid((H - μ) / σ)` with population statistics over all rows;
/// σ = 0 is replaced by 1.
pub fn entropy_score_vector(tape: &mut Tape, probs: Var) -> Result<Var> {
    if tape.shape(probs).0 < 2 {
        return Err(Error::shape(
            "entropy_score_vector",
            "needs at least two rows",
        ));
    }
    let h = row_entropy(tape, probs)?;
    let mu = tape.mean(h)?;
    let centered = tape.sub(h, mu)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.mean(sq)?;
    let sigma = if tape.value(var).item() > 0.0 {
        tape.sqrt(var)
    } else {
        tape.constant(Matrix::scalar(1.0))
    };
    let z = tape.div(centered, sigma)?;
    Ok(tape.sigmoid(z))
}

/// `-(cos(w1, e) + cos(w2, e)) / 2`.
pub fn consistency_loss(tape: &mut Tape, w1: Var, w2: Var, e: Var) -> Result<Var> {
    let c1 = tape.cosine_similarity(w1, e)?;
    let c2 = tape.cosine_similarity(w2, e)?;
    let s = tape.add(c1, c2)?;
    Ok(tape.scale(s, -0.5))
}

/// Mean cross-entropy between the uniform distribution and the rows whose
/// `select` score exceeds `epsilon`; 0 when no row qualifies.
pub fn entropy_reg_loss(tape: &mut Tape, probs: Var, select: &[f64], epsilon: f64) -> Result<Var> {
    let rows: Vec<usize> = select
        .iter()
        .enumerate()
        .filter(|(_, &w)| w > epsilon)
        .map(|(i, _)| i)
        .collect();
    if rows.is_empty() {
        return Ok(tape.constant(Matrix::scalar(0.0)));
    }
    let picked = tape.gather_rows(probs, &rows)?;
    let logs = tape.log_clamped(picked, LOG_FLOOR);
    let mean = tape.mean(logs)?;
    Ok(tape.neg(mean))
}

/// `-cos(w1, w2)`.
pub fn discrepancy_loss(tape: &mut Tape, w1: Var, w2: Var) -> Result<Var> {
    let c = tape.cosine_similarity(w1, w2)?;
    Ok(tape.neg(c))
}

/// Loss terms recorded on a tape; absent terms count as 0.
pub struct LossTerms {
    pub ce: Var,
    pub con: Option<Var>,
    pub ent: Option<Var>,
    pub dis: Option<Var>,
}

/// `ce + decay · (β con + γ ent + ζ dis)`. Terms with zero weight are
/// reported but kept out of the differentiated graph.
pub fn total_loss(
    tape: &mut Tape,
    terms: &LossTerms,
    w: &LossWeights,
    t: usize,
) -> Result<(Var, LossBreakdown)> {
    let decay = w.decay(t);
    let value = |tape: &Tape, v: Option<Var>| v.map_or(0.0, |v| tape.value(v).item());
    let mut reg: Option<Var> = None;
    for (term, weight) in [
        (terms.con, w.beta),
        (terms.ent, w.gamma),
        (terms.dis, w.zeta),
    ] {
        if let (Some(v), true) = (term, weight != 0.0) {
            let scaled = tape.scale(v, weight);
            reg = Some(match reg {
                Some(r) => tape.add(r, scaled)?,
                None => scaled,
            });
        }
    }
    let total = match reg {
        Some(r) => {
            let r = tape.scale(r, decay);
            tape.add(terms.ce, r)?
        }
        None => terms.ce,
    };
    let breakdown = LossBreakdown {
        ce: tape.value(terms.ce).item(),
        con: value(tape, terms.con),
        ent: value(tape, terms.ent),
        dis: value(tape, terms.dis),
        decay,
        total: tape.value(total).item(),
    };
    Ok((total, breakdown))
}

/// Full objective for a model output at step `t`. Models without node
/// scores contribute only cross-entropy.
pub fn objective(
    tape: &mut Tape,
    out: &ForwardOutput,
    labelled: &[(usize, usize)],
    weights: &LossWeights,
    t: usize,
    detach_consistency_target: bool,
) -> Result<(Var, LossBreakdown)> {
    let ce = cross_entropy_loss(tape, out.probs, labelled)?;
    let Some((w1, w2)) = out.scores else {
        return total_loss(
            tape,
            &LossTerms {
                ce,
                con: None,
                ent: None,
                dis: None,
            },
            weights,
            t,
        );
    };
    let mut e = entropy_score_vector(tape, out.probs)?;
    if detach_consistency_target {
        e = tape.detach(e);
    }
    let con = consistency_loss(tape, w1, w2, e)?;
    let select: Vec<f64> = {
        let (a, b) = (tape.value(w1).data(), tape.value(w2).data());
        a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
    };
    let ent = entropy_reg_loss(tape, out.probs, &select, weights.epsilon)?;
    let dis = discrepancy_loss(tape, w1, w2)?;
    total_loss(
        tape,
        &LossTerms {
            ce,
            con: Some(con),
            ent: Some(ent),
            dis: Some(dis),
        },
        weights,
        t,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(t: &Tape, v: Var) -> f64 {
        t.value(v).item()
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::new();
        let z = t.constant(Matrix::from_rows(&[[0.7, 0.2, 0.1], [1.0, 0.0, 0.0]]));
        let l = cross_entropy_loss(&mut t, z, &[(0, 0)]).unwrap();
        assert!((scalar(&t, l) - 0.7f64.ln().abs()).abs() < 1e-15);
        let l = cross_entropy_loss(&mut t, z, &[(1, 0)]).unwrap();
        assert_eq!(scalar(&t, l), 0.0);
        let u = t.constant(Matrix::filled(2, 4, 0.25));
        let l = cross_entropy_loss(&mut t, u, &[(0, 1), (1, 3)]).unwrap();
        assert!((scalar(&t, l) - 4f64.ln()).abs() < 1e-15);
        assert!(cross_entropy_loss(&mut t, u, &[]).is_err());
    }

    #[test]
    fn entropy_scores() {
        let mut t = Tape::new();
        let z = t.constant(Matrix::from_rows(&[[0.25; 4], [1.0, 0.0, 0.0, 0.0]]));
        let e = entropy_score_vector(&mut t, z).unwrap();
        let s = |x: f64| 1.0 / (1.0 + (-x).exp());
        assert!((t.value(e).data()[0] - s(1.0)).abs() < 1e-12);
        assert!((t.value(e).data()[1] - s(-1.0)).abs() < 1e-12);
        assert!((t.value(e).data()[0] - 0.7311).abs() < 1e-4);

        let u = t.constant(Matrix::filled(3, 4, 0.25));
        let e = entropy_score_vector(&mut t, u).unwrap();
        assert!(t.value(e).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn consistency_and_discrepancy_examples() {
        let mut t = Tape::new();
        let e = t.constant(Matrix::column(vec![0.2, 0.9, 0.5]));
        let orth = t.constant(Matrix::column(vec![0.9, 0.0, -0.36]));
        let l = consistency_loss(&mut t, e, e, e).unwrap();
        assert!((scalar(&t, l) + 1.0).abs() < 1e-11);
        let l = consistency_loss(&mut t, orth, orth, e).unwrap();
        assert!(scalar(&t, l).abs() < 1e-11);
        let l = consistency_loss(&mut t, e, orth, e).unwrap();
        assert!((scalar(&t, l) + 0.5).abs() < 1e-11);

        let a = t.constant(Matrix::column(vec![1.0, 0.0]));
        let b = t.constant(Matrix::column(vec![0.0, 1.0]));
        let c = t.constant(Matrix::column(vec![1.0, 1.0]));
        let d = discrepancy_loss(&mut t, a, a).unwrap();
        assert!((scalar(&t, d) + 1.0).abs() < 1e-11);
        let d = discrepancy_loss(&mut t, a, b).unwrap();
        assert_eq!(scalar(&t, d), 0.0);
        let d = discrepancy_loss(&mut t, a, c).unwrap();
        assert!((scalar(&t, d) + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-11);
    }

    #[test]
    fn entropy_regularizer_examples() {
        let mut t = Tape::new();
        let z = t.constant(Matrix::from_rows(&[[0.5, 0.25, 0.25], [0.9, 0.05, 0.05]]));
        let l = entropy_reg_loss(&mut t, z, &[0.8, 0.1], 0.6).unwrap();
        let expected = -(0.5f64.ln() + 2.0 * 0.25f64.ln()) / 3.0;
        assert!((scalar(&t, l) - expected).abs() < 1e-15);
        assert!((scalar(&t, l) - 1.1552).abs() < 1e-4);
        let l = entropy_reg_loss(&mut t, z, &[0.8, 0.9], 1.0).unwrap();
        assert_eq!(scalar(&t, l), 0.0);
        let u = t.constant(Matrix::filled(2, 3, 1.0 / 3.0));
        let l = entropy_reg_loss(&mut t, u, &[1.0, 1.0], 0.5).unwrap();
        assert!((scalar(&t, l) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn decay_and_total() {
        let w = LossWeights {
            beta: 2.0,
            gamma: 0.05,
            zeta: 0.005,
            ..Default::default()
        };
        assert_eq!(w.decay(0), 1.0);
        assert!((w.decay(100) - 0.9).abs() < 1e-15);
        let mut t = Tape::new();
        let ce = t.constant(Matrix::scalar(1.25));
        let con = t.constant(Matrix::scalar(-0.5));
        let ent = t.constant(Matrix::scalar(1.5));
        let dis = t.constant(Matrix::scalar(-0.9));
        let terms = LossTerms {
            ce,
            con: Some(con),
            ent: Some(ent),
            dis: Some(dis),
        };
        let (_, b) = total_loss(&mut t, &terms, &w, 100).unwrap();
        let expected = 1.25 + 0.9 * (2.0 * -0.5 + 0.05 * 1.5 + 0.005 * -0.9);
        assert!((b.total - expected).abs() < 1e-15);
        let (_, b) = total_loss(&mut t, &terms, &LossWeights::default(), 7).unwrap();
        assert_eq!(b.total, 1.25);
        assert_eq!(b.con, -0.5);
    }

    #[test]
    fn weight_validation() {
        assert!(LossWeights::default().validate().is_ok());
        assert!(LossWeights {
            beta: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossWeights {
            a: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(LossWeights {
            epsilon: 0.0,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
