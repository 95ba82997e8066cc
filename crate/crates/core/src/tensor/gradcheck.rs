//! Central finite-difference verification of tape gradients (64-bit).

use super::{Real, Tape, Tensor, TensorError, Var};

/// Outcome of [`check_gradients`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates left out because `[x - h, x + h]` straddles a kink
    /// (ReLU/PReLU/L1 switch point) rather than because the gradient is off.
    pub kinks: usize,
    /// `(input, element, analytic, numeric)` at the worst coordinate.
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Magnitude below which differences are judged absolutely rather than
/// relatively.
pub const REL_ERR_FLOOR: f64 = 1e-3;

const KINK_SUSPECT: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn sample_indices(numel: usize, max: usize) -> Vec<usize> {
    if numel <= max {
        return (0..numel).collect();
    }
    // Evenly strided with a coprime-ish offset so every tensor region is hit.
    let step = numel as f64 / max as f64;
    (0..max).map(|i| ((i as f64 * step + step * 0.37) as usize).min(numel - 1)).collect()
}

/// Compares reverse-mode gradients of `loss` with central differences of
/// step `h` on up to `max_per_input` coordinates of every input.
pub fn check_gradients<F>(inputs: &[Tensor<f64>], loss: F, h: f64, max_per_input: usize) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = loss(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| tape.grad(v)).collect();

    let eval = |values: &[Tensor<f64>]| -> Result<f64, TensorError> {
        let mut t = Tape::new();
        let vs: Vec<Var> = values.iter().map(|v| t.leaf(v.clone(), false)).collect();
        let out = loss(&mut t, &vs)?;
        Ok(ops_value(&t, out))
    };

    let mut report = GradCheck { max_rel_err: 0.0, checked: 0, kinks: 0, worst: None };
    let mut work = inputs.to_vec();
    for (i, grad) in analytic.iter().enumerate() {
        for j in sample_indices(inputs[i].numel(), max_per_input) {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = grad.data()[j].as_f64();
            let err = relative_error(a, numeric);
            if err > KINK_SUSPECT {
                // Across a kink the one-sided slopes disagree by about twice
                // the central error and a smaller step no longer crosses it.
                let mid = eval(&work)?;
                let (right, left) = ((up - mid) / h, (mid - down) / h);
                let small = h / 10.0;
                work[i].data_mut()[j] = orig + small;
                let up_s = eval(&work)?;
                work[i].data_mut()[j] = orig - small;
                let down_s = eval(&work)?;
                work[i].data_mut()[j] = orig;
                let err_small = relative_error(a, (up_s - down_s) / (2.0 * small));
                if (right - left).abs() >= (numeric - a).abs() && err_small <= err / 4.0 {
                    report.kinks += 1;
                    continue;
                }
            }
            report.checked += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = report.max_rel_err.max(err);
                if err >= report.max_rel_err {
                    report.worst = Some((i, j, a, numeric));
                }
            }
        }
    }
    Ok(report)
}

fn ops_value(tape: &Tape<f64>, v: Var) -> f64 {
    use super::Ops;
    tape.value(&v).item()
}
