use crate::error::{Error, Result};
use crate::tensor::{Tape, Var};

/// Interleaves each of the `K` top-level channels with the full set of side
/// features: `[F5(1), F1, F2, F3, F5(2), F1, F2, F3, ..., F5(K), F1, F2, F3]`.
///
/// `top` is `[B, K, H, W]`; each side feature is `[B, 1, H, W]`.
pub fn shared_concat(tape: &mut Tape, top: Var, sides: &[Var; 3]) -> Result<Var> {
    let ts = tape.shape(top).to_vec();
    if ts.len() != 4 {
        return Err(Error::shape(
            "shared_concat",
            format!("top features must be [B, K, H, W], got {ts:?}"),
        ));
    }
    for (i, &s) in sides.iter().enumerate() {
        let ss = tape.shape(s);
        if ss.len() != 4 || ss[1] != 1 || ss[0] != ts[0] || ss[2..] != ts[2..] {
            return Err(Error::shape(
                "shared_concat",
                format!(
                    "side feature F{} has shape {ss:?}, expected [{}, 1, {}, {}]",
                    i + 1,
                    ts[0],
                    ts[2],
                    ts[3]
                ),
            ));
        }
    }
    let mut parts = Vec::with_capacity(4 * ts[1]);
    for k in 0..ts[1] {
        parts.push(tape.slice(top, 1, k, 1)?);
        parts.extend_from_slice(sides);
    }
    tape.concat(&parts, 1)
}
