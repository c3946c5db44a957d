use crate::diff::{NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// Normalized-temperature cross-entropy over a batch of paired views,
/// recorded on the tape.
///
/// Rows of `z1`/`z2` are L2-normalized; similarity is the dot product over
/// temperature `t`. Each of the 2B views treats its counterpart as the
/// positive and the remaining 2B-1 views as the denominator; the loss is the
/// mean of the per-view -log softmax terms.
pub fn nt_xent_tape(tape: &mut Tape, z1: NodeId, z2: NodeId, t: f64) -> Result<NodeId> {
    if t <= 0.0 {
        return Err(Error::invalid("nt_xent: temperature must be positive"));
    }
    let b = tape.value(z1).rows();
    if b < 2 {
        return Err(Error::invalid("nt_xent: batch size must be >= 2"));
    }
    if tape.value(z2).rows() != b || tape.value(z2).cols() != tape.value(z1).cols() {
        return Err(Error::ShapeMismatch {
            op: "nt_xent",
            detail: format!(
                "{:?} vs {:?}",
                tape.value(z1).shape(),
                tape.value(z2).shape()
            ),
        });
    }
    let m = 2 * b;
    let z = tape.stack_rows(vec![z1, z2])?;
    let zn = tape.row_normalize(z)?;
    let znt = tape.transpose(zn)?;
    let sims_raw = tape.matmul(zn, znt)?;
    let sims = tape.scale(sims_raw, 1.0 / t)?;

    // denominator: every other view
    let mut off_diag = Tensor::zeros(vec![m, m]);
    for i in 0..m {
        for j in 0..m {
            if i != j {
                off_diag.set2(i, j, 1.0);
            }
        }
    }
    let off = tape.constant(off_diag);
    let e = tape.exp(sims)?;
    let masked = tape.mul(e, off)?;
    let denom = tape.row_sum(masked)?;
    let log_denom = tape.log(denom)?;
    let mean_log_denom = tape.mean(log_denom)?;

    // numerator: similarity with the paired view
    let mut pos = Tensor::zeros(vec![m, m]);
    for i in 0..m {
        pos.set2(i, (i + b) % m, 1.0);
    }
    let pos = tape.constant(pos);
    let pos_sims = tape.mul(sims, pos)?;
    let pos_sum = tape.sum(pos_sims)?;
    let mean_pos = tape.scale(pos_sum, 1.0 / m as f64)?;

    tape.sub(mean_log_denom, mean_pos)
}

/// Plain evaluation of [`nt_xent_tape`] on owned tensors.
pub fn nt_xent(z1: &Tensor, z2: &Tensor, t: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let a = tape.constant(z1.clone());
    let b = tape.constant(z2.clone());
    let loss = nt_xent_tape(&mut tape, a, b, t)?;
    Ok(tape.value(loss).value())
}
