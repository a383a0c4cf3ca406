use super::{Matrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference half step.
    pub step: f64,
    pub tolerance: f64,
    /// Lower bound of the relative-error denominator, so that gradients
    /// near zero are compared on an absolute scale.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub param: usize,
    pub max_rel_error: f64,
    /// Flat index of the worst entry.
    pub worst_entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub loss: f64,
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() <= self.tolerance
    }
}

fn evaluate<F>(build: &F, params: &[Matrix]) -> Result<(Tape, Vec<Var>, Var)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = build(&mut tape, &vars)?;
    if tape.shape(loss) != (1, 1) {
        return Err(Error::Tape(format!(
            "gradient check needs a scalar loss, got {:?}",
            tape.shape(loss)
        )));
    }
    Ok((tape, vars, loss))
}

fn loss_at<F>(build: &F, params: &[Matrix]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (tape, _, loss) = evaluate(build, params)?;
    Ok(tape.value(loss).item())
}

/// Compares reverse-mode gradients of `build` against central differences
/// for every entry of every parameter.
///
/// `build` must be a pure function of the parameter values; a second
/// evaluation at the same point that differs bitwise is reported as an error.
pub fn grad_check<F>(build: F, params: &[Matrix], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (mut tape, vars, loss) = evaluate(&build, params)?;
    let base = tape.value(loss).item();
    let grads = tape.backward(loss)?;
    let again = loss_at(&build, params)?;
    if base.to_bits() != again.to_bits() {
        return Err(Error::Tape(format!(
            "loss is not deterministic: {base} then {again}"
        )));
    }
    let mut checks = Vec::with_capacity(params.len());
    let mut point = params.to_vec();
    for (p, &var) in vars.iter().enumerate() {
        let analytic = grads.wrt(var);
        let mut worst = ParamCheck {
            param: p,
            max_rel_error: 0.0,
            worst_entry: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for k in 0..params[p].len() {
            let orig = params[p].data()[k];
            point[p].data_mut()[k] = orig + opts.step;
            let up = loss_at(&build, &point)?;
            point[p].data_mut()[k] = orig - opts.step;
            let down = loss_at(&build, &point)?;
            point[p].data_mut()[k] = orig;
            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic.data()[k];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if !(err <= worst.max_rel_error) {
                worst = ParamCheck {
                    param: p,
                    max_rel_error: err,
                    worst_entry: k,
                    analytic: a,
                    numeric,
                };
            }
        }
        checks.push(worst);
    }
    Ok(GradCheckReport {
        loss: base,
        params: checks,
        tolerance: opts.tolerance,
    })
}
