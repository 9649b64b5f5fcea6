use crate::error::{arg_err, shape_err, Result};
use crate::matcher::correspondence_loss;
use crate::scalar::Scalar;
use crate::tensor::{Tape, Var};

/// Nodes of the combined objective.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub total: Var,
    pub mse: Var,
    pub ce: Option<Var>,
}

/// `α·L_MSE + β·L_CE`.
///
/// `L_MSE` averages `(dx² + dy²) / 2` over the valid points. `c` is the
/// correspondence over the valid points; it may be omitted only when
/// `β = 0`, in which case the result is exactly `α·L_MSE`.
pub fn total_loss<T: Scalar>(
    tape: &mut Tape<T>,
    pred: Var,
    gaze: &[[f64; 2]],
    valid: &[bool],
    c: Option<Var>,
    alpha: f64,
    beta: f64,
) -> Result<LossParts> {
    if !valid.iter().any(|&v| v) {
        return Err(arg_err!("loss over zero valid gaze points"));
    }
    if gaze.len() != valid.len() {
        return Err(shape_err!("{} gaze points but {} validity flags", gaze.len(), valid.len()));
    }
    let target: Vec<T> = gaze.iter().flatten().map(|&v| T::lit(v)).collect();
    let mse = tape.masked_mse(pred, &target, valid)?;
    let weighted = if alpha == 1.0 { mse } else { tape.scale(mse, T::lit(alpha)) };
    let ce = match c {
        Some(c) => Some(correspondence_loss(tape, c)?),
        None if beta == 0.0 => None,
        None => return Err(arg_err!("β = {beta} needs a correspondence matrix")),
    };
    let total = match ce {
        Some(ce) if beta != 0.0 => {
            let b = tape.scale(ce, T::lit(beta));
            tape.add(weighted, b)?
        }
        _ => weighted,
    };
    Ok(LossParts { total, mse, ce })
}
