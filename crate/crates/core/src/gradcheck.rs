//! Central finite-difference verification of [`Tape::backward`].

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Finite-difference step used by [`grad_check`].
pub const FD_STEP: f64 = 1e-5;

/// Coordinates beyond this count are checked on a seeded random subsample.
pub const MAX_CHECKED_COORDS: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|, 1)` over checked coordinates.
    pub max_rel_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    /// Coordinates skipped because the function has a kink there.
    pub excluded: usize,
    pub tolerance: f64,
    pub passed: bool,
}

fn eval<F>(program: &F, point: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.constant(point.clone())?;
    let out = program(&mut tape, x)?;
    let v = tape.value(out);
    if v.len() != 1 {
        return Err(Error::NonScalarRoot(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares the reverse-mode gradient of a scalar `program` at `point` against
/// central differences.
///
/// A coordinate whose one-sided differences disagree (a kink such as ReLU at
/// zero) is excluded from the comparison.
pub fn grad_check<F>(program: F, point: &Tensor, tolerance: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if tolerance <= 0.0 {
        return Err(Error::InvalidArgument("grad_check tolerance must be > 0".into()));
    }
    let mut tape = Tape::new();
    let x = tape.param(point.clone())?;
    let out = program(&mut tape, x)?;
    let analytic = tape.backward(out)?.take(x).expect("point is a differentiable leaf");
    let f0 = tape.value(out).item();
    drop(tape);

    let n = point.len();
    let coords: Vec<usize> = if n > MAX_CHECKED_COORDS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx = sample(&mut rng, n, MAX_CHECKED_COORDS).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..n).collect()
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        checked: 0,
        excluded: 0,
        tolerance,
        passed: true,
    };
    let mut probe = point.clone();
    for i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let fp = eval(&program, &probe)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let fm = eval(&program, &probe)?;
        probe.data_mut()[i] = orig;

        let forward = (fp - f0) / FD_STEP;
        let backward = (f0 - fm) / FD_STEP;
        let scale = forward.abs().max(backward.abs()).max(1.0);
        if (forward - backward).abs() > 1e-3 * scale {
            report.excluded += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * FD_STEP);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
        report.checked += 1;
        if report.worst_index.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_index = Some(i);
        }
    }
    report.passed = report.max_rel_error <= tolerance;
    Ok(report)
}
