//! Dense networks recorded on a [`Tape`].

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};

use super::params::{Activation, ParameterBlock};
use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Fourier feature encoding of one point.
///
/// Layout: `x_1..x_D`, then for each frequency `j = 0..num_freqs`, the block
/// `sin(2^j pi x_1..D)` followed by `cos(2^j pi x_1..D)`.
pub fn fourier_encode(x: &[f64], num_freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() * (2 * num_freqs + 1));
    out.extend_from_slice(x);
    for j in 0..num_freqs {
        let w = (1u64 << j) as f64 * PI;
        out.extend(x.iter().map(|&v| (w * v).sin()));
        out.extend(x.iter().map(|&v| (w * v).cos()));
    }
    out
}

/// Tape version of [`fourier_encode`] over a `B x D` batch, including the
/// pushforward of each tangent (`B x D`) through the encoding.
pub fn fourier_encode_on_tape(
    tape: &mut Tape<'_>,
    x: Var,
    tangents: &[Var],
    num_freqs: usize,
) -> (Var, Vec<Var>) {
    if num_freqs == 0 {
        return (x, tangents.to_vec());
    }
    let mut parts = vec![x];
    let mut tparts: Vec<Vec<Var>> = tangents.iter().map(|&t| vec![t]).collect();
    for j in 0..num_freqs {
        let w = (1u64 << j) as f64 * PI;
        let arg = tape.scale(x, w);
        let s = tape.sin(arg);
        let c = tape.cos(arg);
        parts.push(s);
        parts.push(c);
        for (tp, &t) in tparts.iter_mut().zip(tangents) {
            let ds = tape.mul(c, t);
            let ds = tape.scale(ds, w);
            let dc = tape.mul(s, t);
            let dc = tape.scale(dc, -w);
            tp.push(ds);
            tp.push(dc);
        }
    }
    let enc = tape.concat(&parts);
    let tenc = tparts.iter().map(|tp| tape.concat(tp)).collect();
    (enc, tenc)
}

/// Forward pass of network `net` of `block` on a `B x input_dim` batch.
pub fn forward<'p>(tape: &mut Tape<'p>, block: &'p ParameterBlock, net: usize, x: Var) -> Var {
    forward_with_tangents(tape, block, net, x, &[]).0
}

/// Forward pass that also pushes input tangents through the network
/// (forward mode). Each returned tangent is `B x output_dim`; all of them are
/// differentiable with respect to the parameters by a later backward pass.
pub fn forward_with_tangents<'p>(
    tape: &mut Tape<'p>,
    block: &'p ParameterBlock,
    net: usize,
    x: Var,
    tangents: &[Var],
) -> (Var, Vec<Var>) {
    let spec = block.spec(net).clone();
    assert_eq!(
        tape.value(x).ncols(),
        spec.input_dim,
        "network {net} expects {} inputs",
        spec.input_dim
    );
    let (enc, enc_t) = fourier_encode_on_tape(tape, x, tangents, spec.num_freqs);
    let mut h = enc;
    let mut ht = enc_t.clone();
    for k in 0..spec.depth {
        if spec.skip_layer == Some(k) {
            h = tape.concat(&[h, enc]);
            for (t, &e) in ht.iter_mut().zip(&enc_t) {
                *t = tape.concat(&[*t, e]);
            }
        }
        let layer = block.layer_index(net, k);
        let z = tape.linear(h, block, layer, true);
        let zt: Vec<Var> = ht.iter().map(|&t| tape.linear(t, block, layer, false)).collect();
        let hidden = k + 1 < spec.depth;
        match (hidden, spec.activation) {
            (true, Activation::Softplus { beta }) => {
                let (a, slope) = tape.softplus(z, beta);
                h = a;
                ht = zt.iter().map(|&t| tape.mul(t, slope)).collect();
            }
            _ => {
                h = z;
                ht = zt;
            }
        }
    }
    (h, ht)
}

/// Evaluate network `net` on the rows of `input` (`B x input_dim`).
pub fn mlp_forward(block: &ParameterBlock, net: usize, input: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let spec = block.spec(net);
    if input.ncols() != spec.input_dim {
        return Err(Error::Shape(format!(
            "network expects {} inputs, got {}",
            spec.input_dim,
            input.ncols()
        )));
    }
    let mut tape = Tape::new();
    let x = tape.constant(input.to_owned());
    let y = forward(&mut tape, block, net, x);
    Ok(tape.value(y).clone())
}
