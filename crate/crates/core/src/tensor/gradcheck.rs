//! Central finite-difference gradient verification.
//!
//! The checker only ever runs forward passes, so it stays independent of the
//! reverse-mode implementation it is used to validate.

use crate::tensor::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// max over elements of |analytic − numeric| / max(1, |analytic|, |numeric|)
    pub max_rel_err: f64,
    pub worst_input: usize,
    pub worst_elem: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Compares tape gradients of `build`'s scalar output against central finite
/// differences with step `h`, perturbing every element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], build: F, h: f64) -> GradCheckReport
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t)).collect();
        let loss = build(&mut tape, &vars);
        tape.scalar_value(loss)
    };

    // Analytic gradients.
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).expect("gradcheck loss must be scalar");
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).to_vec()).collect();

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_elem: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for j in 0..t.numel() {
            let orig = t.data()[j];
            work[ti].data_mut()[j] = orig + h;
            let up = eval(&work);
            work[ti].data_mut()[j] = orig - h;
            let down = eval(&work);
            work[ti].data_mut()[j] = orig;

            let numeric = (up - down) / (2.0 * h);
            let a = analytic[ti][j];
            let rel = (a - numeric).abs() / f64::max(1.0, f64::max(a.abs(), numeric.abs()));
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_input = ti;
                report.worst_elem = j;
            }
        }
    }
    report
}
