use super::{NumError, Tape, Tensor, Var};

/// Denominator floor for the relative error, so coordinates whose true
/// gradient is (near) zero are compared on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct CoordCheck {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub coords: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn all_pass(&self) -> bool {
        self.coords.iter().all(|c| c.pass)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.coords.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CoordCheck> {
        self.coords.iter().filter(|c| !c.pass)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `step`, one coordinate of every input at a time.
pub fn grad_check<F>(
    f: F,
    point: &[Tensor],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport, NumError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, NumError>,
{
    let eval = |inputs: &[Tensor]| -> Result<f64, NumError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut coords = Vec::new();
    let mut probe = point.to_vec();
    for (input, (var, base)) in vars.iter().zip(point).enumerate() {
        let analytic = grads.get_or_zeros(*var, base);
        for index in 0..base.len() {
            let orig = base.data()[index];
            probe[input].data_mut()[index] = orig + step;
            let plus = eval(&probe)?;
            probe[input].data_mut()[index] = orig - step;
            let minus = eval(&probe)?;
            probe[input].data_mut()[index] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            let a = analytic.data()[index];
            let rel_error = relative_error(a, numeric);
            coords.push(CoordCheck {
                input,
                index,
                analytic: a,
                numeric,
                rel_error,
                pass: rel_error < tolerance,
            });
        }
    }
    Ok(GradCheckReport { tolerance, coords })
}
