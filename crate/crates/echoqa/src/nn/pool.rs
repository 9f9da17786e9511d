//! 2x2 max pooling with stride 2.

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Pools each non-overlapping 2x2 window to its maximum. Odd trailing rows
/// and columns are dropped (floor division). Returns the pooled tensor plus
/// the flat within-plane index of each window's argmax for the backward
/// scatter. Ties resolve to the first element in row-major window order.
pub fn maxpool2x2_forward<S: Scalar>(input: &Tensor<S>) -> Result<(Tensor<S>, Vec<u32>)> {
    if input.rank() != 4 {
        return Err(Error::Shape(format!(
            "maxpool expects [batch, c, h, w], got {:?}",
            input.shape()
        )));
    }
    let (batch, c, h, w) = (
        input.shape()[0],
        input.shape()[1],
        input.shape()[2],
        input.shape()[3],
    );
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!(
            "maxpool needs spatial dims >= 2, got {h}x{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let plane = h * w;
    let data = input.data();
    let mut out = Vec::with_capacity(batch * c * oh * ow);
    let mut argmax = Vec::with_capacity(batch * c * oh * ow);
    for p in 0..batch * c {
        let chan = &data[p * plane..(p + 1) * plane];
        for y in 0..oh {
            let r0 = 2 * y * w;
            let r1 = r0 + w;
            for x in 0..ow {
                let c0 = 2 * x;
                let candidates = [r0 + c0, r0 + c0 + 1, r1 + c0, r1 + c0 + 1];
                let mut best = candidates[0];
                for &idx in &candidates[1..] {
                    if chan[idx] > chan[best] {
                        best = idx;
                    }
                }
                out.push(chan[best]);
                argmax.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_vec(&[batch, c, oh, ow], out)?, argmax))
}

/// Routes each upstream gradient to its window's argmax position.
pub fn maxpool2x2_backward<S: Scalar>(
    upstream: &Tensor<S>,
    argmax: &[u32],
    input_shape: &[usize],
) -> Result<Tensor<S>> {
    if upstream.len() != argmax.len() {
        return Err(Error::Shape(
            "maxpool backward: upstream and argmax lengths differ".into(),
        ));
    }
    let mut dinput = Tensor::<S>::zeros(input_shape)?;
    let plane = input_shape[2] * input_shape[3];
    let out_plane = upstream.shape()[2] * upstream.shape()[3];
    let ddata = dinput.data_mut();
    for (p, (ups, idxs)) in upstream
        .data()
        .chunks_exact(out_plane)
        .zip(argmax.chunks_exact(out_plane))
        .enumerate()
    {
        let dchan = &mut ddata[p * plane..(p + 1) * plane];
        for (&g, &idx) in ups.iter().zip(idxs) {
            dchan[idx as usize] += g;
        }
    }
    Ok(dinput)
}
