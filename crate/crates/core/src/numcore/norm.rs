//! Normalization layers composed from tape primitives.
//!
//! All three operate on a `[nodes, features]` matrix. Batch statistics are
//! taken over the node axis of the whole graph, which is the only batch this
//! crate ever forms, so train and eval behave identically.

use super::{NumError, Tape, Var};

pub const NORM_EPS: f64 = 1e-5;

/// GraphNorm: `gamma * (x - alpha * mean) / std + beta`, with the variance
/// taken after the learnable mean shift.
pub fn graph_norm(
    tape: &mut Tape,
    x: Var,
    alpha: Var,
    gamma: Var,
    beta: Var,
) -> Result<Var, NumError> {
    let mean = tape.mean_rows(x)?;
    let shift = tape.mul(alpha, mean)?;
    let centered = tape.sub(x, shift)?;
    scale_by_feature_std(tape, centered, gamma, beta)
}

/// BatchNorm over the node axis with affine parameters.
pub fn batch_norm(tape: &mut Tape, x: Var, gamma: Var, beta: Var) -> Result<Var, NumError> {
    let mean = tape.mean_rows(x)?;
    let centered = tape.sub(x, mean)?;
    scale_by_feature_std(tape, centered, gamma, beta)
}

/// LayerNorm over the feature axis of each node.
pub fn layer_norm(tape: &mut Tape, x: Var, gamma: Var, beta: Var) -> Result<Var, NumError> {
    let mean = tape.mean_cols(x)?;
    let centered = tape.sub(x, mean)?;
    let sq = tape.square(centered);
    let var = tape.mean_cols(sq)?;
    let var = tape.add_scalar(var, NORM_EPS);
    let std = tape.sqrt(var);
    let normed = tape.div(centered, std)?;
    let scaled = tape.mul(normed, gamma)?;
    tape.add(scaled, beta)
}

fn scale_by_feature_std(
    tape: &mut Tape,
    centered: Var,
    gamma: Var,
    beta: Var,
) -> Result<Var, NumError> {
    let sq = tape.square(centered);
    let var = tape.mean_rows(sq)?;
    let var = tape.add_scalar(var, NORM_EPS);
    let std = tape.sqrt(var);
    let normed = tape.div(centered, std)?;
    let scaled = tape.mul(normed, gamma)?;
    tape.add(scaled, beta)
}
