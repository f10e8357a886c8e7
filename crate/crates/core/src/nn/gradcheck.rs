use rand::Rng;

use super::ModelParams;

/// A loss evaluation plus what is needed to spot non-differentiable points:
/// `pattern` summarises every discrete decision (ReLU signs, argmax winners)
/// and `margin` is the smallest distance of any ReLU pre-activation from zero.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Probe {
    pub loss: f64,
    pub pattern: u64,
    pub margin: f64,
}

impl Probe {
    pub fn smooth(loss: f64) -> Self {
        Probe {
            loss,
            pattern: 0,
            margin: f64::INFINITY,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub probes: usize,
    pub rejected: usize,
}

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-7)
}

/// Central-difference check of `analytic` on `probes` random coordinates
/// drawn from `candidates`. A coordinate is re-drawn when a perturbation of
/// `h` changes the decision pattern or when a pre-activation lies within `10h`
/// of its kink.
pub fn gradient_check<F, R>(
    f: F,
    x: &[f64],
    analytic: &[f64],
    candidates: &[usize],
    probes: usize,
    h: f64,
    rng: &mut R,
) -> GradCheckReport
where
    F: Fn(&[f64]) -> Probe,
    R: Rng,
{
    assert_eq!(x.len(), analytic.len());
    let base = f(x);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        probes: 0,
        rejected: 0,
    };
    if base.margin < 10.0 * h || candidates.is_empty() {
        report.rejected = probes;
        return report;
    }
    let mut work = x.to_vec();
    let max_attempts = probes * 50;
    let mut attempts = 0;
    while report.probes < probes && attempts < max_attempts {
        attempts += 1;
        let i = candidates[rng.gen_range(0..candidates.len())];
        work[i] = x[i] + h;
        let plus = f(&work);
        work[i] = x[i] - h;
        let minus = f(&work);
        work[i] = x[i];
        if plus.pattern != base.pattern || minus.pattern != base.pattern {
            report.rejected += 1;
            continue;
        }
        let numeric = (plus.loss - minus.loss) / (2.0 * h);
        let err = relative_error(analytic[i], numeric);
        report.max_relative_error = report.max_relative_error.max(err);
        report.probes += 1;
    }
    report
}

/// [`gradient_check`] over a parameter collection, probing only the layers
/// accepted by `layers`.
pub fn gradient_check_params<F, R>(
    f: F,
    params: &ModelParams,
    analytic: &ModelParams,
    layers: impl Fn(&str) -> bool,
    probes: usize,
    h: f64,
    rng: &mut R,
) -> GradCheckReport
where
    F: Fn(&ModelParams) -> Probe,
    R: Rng,
{
    let mut candidates = Vec::new();
    let mut offset = 0;
    for (name, l) in params.layers() {
        let n = l.weight.len() + l.bias.len();
        if layers(&name) {
            candidates.extend(offset..offset + n);
        }
        offset += n;
    }
    let template = params.clone();
    let flat_f = |x: &[f64]| {
        let mut p = template.clone();
        p.unflatten(x);
        f(&p)
    };
    gradient_check(
        flat_f,
        &params.flatten(),
        &analytic.flatten(),
        &candidates,
        probes,
        h,
        rng,
    )
}
