use super::param::ParamSet;
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Outcome of comparing tape gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheck {
    pub max_rel_error: f64,
    /// `name[index]` of the worst element.
    pub worst: String,
    pub checked: usize,
}

/// Denominator floor so that gradients of exactly zero compare by absolute error.
const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Checks every trainable scalar of `params`.
pub fn finite_diff_check<P, F>(params: &mut P, f: F, h: f64) -> Result<GradCheck>
where
    P: ParamSet,
    F: Fn(&P, &mut Tape) -> Result<Var>,
{
    finite_diff_check_sampled(params, f, h, usize::MAX)
}

/// Like [`finite_diff_check`], but probes at most `max_per_param` evenly
/// strided elements of each trainable parameter.
pub fn finite_diff_check_sampled<P, F>(params: &mut P, f: F, h: f64, max_per_param: usize) -> Result<GradCheck>
where
    P: ParamSet,
    F: Fn(&P, &mut Tape) -> Result<Var>,
{
    let eval = |p: &P| -> Result<f64> {
        let mut tape = Tape::new();
        let out = f(p, &mut tape)?;
        let v = tape.scalar(out);
        if !v.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {v}")));
        }
        Ok(v)
    };

    let mut tape = Tape::new();
    let loss = f(params, &mut tape)?;
    if !tape.scalar(loss).is_finite() {
        return Err(Error::Numeric(format!("non-finite loss {}", tape.scalar(loss))));
    }
    let grads = tape.backward(loss)?;

    let mut targets: Vec<(String, usize, Vec<usize>)> = Vec::new();
    params.visit(&mut |p| {
        if p.trainable {
            let n = p.value.len();
            let stride = n.div_ceil(max_per_param.min(n)).max(1);
            targets.push((p.name.clone(), n, (0..n).step_by(stride).collect()));
        }
    });

    let mut report = GradCheck { max_rel_error: 0.0, worst: String::new(), checked: 0 };
    for (name, n, idxs) in targets {
        let analytic = grads.param(&name).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
        for i in idxs {
            let orig = nudge(params, &name, i, None);
            nudge(params, &name, i, Some(orig + h));
            let up = eval(params);
            nudge(params, &name, i, Some(orig - h));
            let down = eval(params);
            nudge(params, &name, i, Some(orig));
            let numeric = (up? - down?) / (2.0 * h);
            let err = relative_error(analytic[i], numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_empty() {
                report.max_rel_error = err;
                report.worst = format!("{name}[{i}]");
            }
        }
    }
    Ok(report)
}

/// Reads element `i` of parameter `name`, optionally overwriting it.
fn nudge<P: ParamSet>(params: &mut P, name: &str, i: usize, set: Option<f64>) -> f64 {
    let mut old = 0.0;
    params.visit_mut(&mut |p| {
        if p.name == name {
            old = p.value.data()[i];
            if let Some(v) = set {
                p.value.data_mut()[i] = v;
            }
        }
    });
    old
}
