//! Batched forward pass and backpropagation through time.
//!
//! Work is done on chunks of samples laid out time-major (`[t][sample][unit]`)
//! so each step is a small matrix product. Minibatches are split into chunks
//! of a fixed size that does not depend on the worker count, and chunk
//! gradients are summed in chunk order; results are therefore identical for
//! any number of threads.

use super::gemm::gemm;
use super::lstm::{sigmoid, LayerRef};
use super::{DecoderMode, LayerSlots, ModelParams};
use crate::error::{Error, Result};
use crate::par;

/// Samples per gradient chunk.
const GRAD_CHUNK: usize = 8;
/// Samples per inference chunk.
const INFER_CHUNK: usize = 32;

/// Parameter gradients in the model's flat layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Gradients { values: vec![0.0; n] }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Mean squared difference.
pub fn loss_mse(recon: &[f64], target: &[f64]) -> Result<f64> {
    if recon.len() != target.len() {
        return Err(Error::Dimension(format!(
            "loss_mse: {} vs {} values",
            recon.len(),
            target.len()
        )));
    }
    if recon.is_empty() {
        return Ok(0.0);
    }
    Ok(recon.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / recon.len() as f64)
}

#[derive(Clone, Copy)]
enum LayerInput<'a> {
    /// One input row per (step, sample).
    Seq(&'a [f64]),
    /// The same input row per sample at every step.
    Repeat(&'a [f64]),
}

/// Initial `(h, c)` per sample, `[b][unit]`.
#[derive(Clone)]
struct State {
    h: Vec<f64>,
    c: Vec<f64>,
}

struct LayerTape {
    /// Post-activation gates, `[t][b][i|f|g|o]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    init: Option<State>,
}

impl LayerTape {
    /// Final `(h, c)` per sample.
    fn last_state(&self, steps: usize, batch: usize, hidden: usize) -> State {
        let from = (steps - 1) * batch * hidden;
        State {
            h: self.h[from..].to_vec(),
            c: self.c[from..].to_vec(),
        }
    }
}

fn forward_layer(
    layer: LayerRef<'_>,
    input: LayerInput<'_>,
    steps: usize,
    batch: usize,
    init: Option<State>,
) -> LayerTape {
    let (n_in, h) = (layer.input_dim, layer.hidden_dim);
    let g4 = 4 * h;
    let rows = steps * batch;
    let mut gates = vec![0.0; rows * g4];
    match input {
        LayerInput::Seq(x) => gemm(false, true, rows, g4, n_in, 1.0, x, layer.w, 0.0, &mut gates),
        LayerInput::Repeat(z) => {
            let mut once = vec![0.0; batch * g4];
            gemm(false, true, batch, g4, n_in, 1.0, z, layer.w, 0.0, &mut once);
            for step in gates.chunks_exact_mut(batch * g4) {
                step.copy_from_slice(&once);
            }
        }
    }
    for row in gates.chunks_exact_mut(g4) {
        for (v, b) in row.iter_mut().zip(layer.b) {
            *v += b;
        }
    }

    let mut c = vec![0.0; rows * h];
    let mut tanh_c = vec![0.0; rows * h];
    let mut hs = vec![0.0; rows * h];
    let step_h = batch * h;
    for t in 0..steps {
        let step_gates = &mut gates[t * batch * g4..(t + 1) * batch * g4];
        if t > 0 {
            let prev = &hs[(t - 1) * step_h..t * step_h];
            gemm(false, true, batch, g4, h, 1.0, prev, layer.u, 1.0, step_gates);
        } else if let Some(s) = &init {
            gemm(false, true, batch, g4, h, 1.0, &s.h, layer.u, 1.0, step_gates);
        }
        for b in 0..batch {
            let row = &mut step_gates[b * g4..(b + 1) * g4];
            let base = t * step_h + b * h;
            for j in 0..h {
                let i = sigmoid(row[j]);
                let f = sigmoid(row[h + j]);
                let g = row[2 * h + j].tanh();
                let o = sigmoid(row[3 * h + j]);
                row[j] = i;
                row[h + j] = f;
                row[2 * h + j] = g;
                row[3 * h + j] = o;
                let c_prev = if t > 0 {
                    c[base - step_h + j]
                } else {
                    init.as_ref().map_or(0.0, |s| s.c[b * h + j])
                };
                let cc = f * c_prev + i * g;
                let tc = cc.tanh();
                c[base + j] = cc;
                tanh_c[base + j] = tc;
                hs[base + j] = o * tc;
            }
        }
    }
    LayerTape {
        gates,
        c,
        tanh_c,
        h: hs,
        init,
    }
}

fn split_layer_grads<'g>(grads: &'g mut [f64], s: &LayerSlots) -> (&'g mut [f64], &'g mut [f64], &'g mut [f64]) {
    let h = s.hidden_dim;
    let block = &mut grads[s.w..s.b + 4 * h];
    let (w, rest) = block.split_at_mut(s.u - s.w);
    let (u, b) = rest.split_at_mut(s.b - s.u);
    (w, u, b)
}

struct LayerBackward {
    /// Per row for sequence input, per sample for repeated input.
    input: Option<Vec<f64>>,
    /// Gradient on the initial state, for seeded layers.
    init: Option<State>,
}

/// Backpropagates `dh_ext` (gradient on this layer's outputs) and `dc_last`
/// (gradient on the final cell state) through the layer, accumulating
/// parameter gradients.
#[allow(clippy::too_many_arguments)]
fn backward_layer(
    layer: LayerRef<'_>,
    input: LayerInput<'_>,
    tape: &LayerTape,
    dh_ext: &[f64],
    dc_last: Option<&[f64]>,
    steps: usize,
    batch: usize,
    grads: &mut [f64],
    slots: &LayerSlots,
    want_input_grad: bool,
) -> LayerBackward {
    let (n_in, h) = (layer.input_dim, layer.hidden_dim);
    let g4 = 4 * h;
    let rows = steps * batch;
    let step_h = batch * h;
    let mut dz = vec![0.0; rows * g4];
    let mut dh_next = vec![0.0; step_h];
    let mut dc_next = match dc_last {
        Some(d) => d.to_vec(),
        None => vec![0.0; step_h],
    };

    for t in (0..steps).rev() {
        for b in 0..batch {
            let base = t * step_h + b * h;
            let grow = (t * batch + b) * g4;
            for j in 0..h {
                let k = b * h + j;
                let i = tape.gates[grow + j];
                let f = tape.gates[grow + h + j];
                let g = tape.gates[grow + 2 * h + j];
                let o = tape.gates[grow + 3 * h + j];
                let tc = tape.tanh_c[base + j];
                let dh = dh_ext[base + j] + dh_next[k];
                let d_o = dh * tc;
                let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                let c_prev = if t > 0 {
                    tape.c[base - step_h + j]
                } else {
                    tape.init.as_ref().map_or(0.0, |s| s.c[k])
                };
                dc_next[k] = dc * f;
                dz[grow + j] = dc * g * i * (1.0 - i);
                dz[grow + h + j] = dc * c_prev * f * (1.0 - f);
                dz[grow + 2 * h + j] = dc * i * (1.0 - g * g);
                dz[grow + 3 * h + j] = d_o * o * (1.0 - o);
            }
        }
        if t > 0 || tape.init.is_some() {
            let dz_t = &dz[t * batch * g4..(t + 1) * batch * g4];
            gemm(false, false, batch, h, g4, 1.0, dz_t, layer.u, 0.0, &mut dh_next);
        }
    }

    let (gw, gu, gb) = split_layer_grads(grads, slots);
    if steps > 1 {
        let later = &dz[batch * g4..];
        let earlier_h = &tape.h[..(steps - 1) * step_h];
        gemm(true, false, g4, h, (steps - 1) * batch, 1.0, later, earlier_h, 1.0, gu);
    }
    let init = tape.init.as_ref().map(|s| {
        gemm(true, false, g4, h, batch, 1.0, &dz[..batch * g4], &s.h, 1.0, gu);
        State { h: dh_next, c: dc_next }
    });
    for row in dz.chunks_exact(g4) {
        for (acc, v) in gb.iter_mut().zip(row) {
            *acc += v;
        }
    }
    let input = match input {
        LayerInput::Seq(x) => {
            gemm(true, false, g4, n_in, rows, 1.0, &dz, x, 1.0, gw);
            want_input_grad.then(|| {
                let mut dx = vec![0.0; rows * n_in];
                gemm(false, false, rows, n_in, g4, 1.0, &dz, layer.w, 0.0, &mut dx);
                dx
            })
        }
        LayerInput::Repeat(z) => {
            let mut summed = vec![0.0; batch * g4];
            for step in dz.chunks_exact(batch * g4) {
                for (acc, v) in summed.iter_mut().zip(step) {
                    *acc += v;
                }
            }
            gemm(true, false, g4, n_in, batch, 1.0, &summed, z, 1.0, gw);
            want_input_grad.then(|| {
                let mut dzin = vec![0.0; batch * n_in];
                gemm(false, false, batch, n_in, g4, 1.0, &summed, layer.w, 0.0, &mut dzin);
                dzin
            })
        }
    };
    LayerBackward { input, init }
}

struct ChunkTape {
    inputs: Vec<f64>,
    encoder: Vec<LayerTape>,
    latent: Vec<f64>,
    decoder: Vec<LayerTape>,
    /// Time-major, in input time order.
    output: Vec<f64>,
}

/// Reverses the step order of a time-major buffer with `width` values per step.
fn reverse_steps(v: &[f64], width: usize) -> Vec<f64> {
    v.chunks_exact(width).rev().flatten().copied().collect()
}

pub(super) fn check_lengths(model: &ModelParams, seqs: &[&[f64]]) -> Result<()> {
    let t = model.arch.seq_len;
    for (i, s) in seqs.iter().enumerate() {
        if s.is_empty() || s.len() % t != 0 {
            return Err(Error::Dimension(format!(
                "sequence {i} has {} samples, model expects a positive multiple of {t}",
                s.len()
            )));
        }
    }
    Ok(())
}

/// All chunks of all sequences, in order.
pub(super) fn chunks_of<'a>(model: &ModelParams, seqs: &[&'a [f64]]) -> Vec<&'a [f64]> {
    seqs.iter().flat_map(|s| s.chunks_exact(model.arch.seq_len)).collect()
}

fn time_major(seqs: &[&[f64]], steps: usize) -> Vec<f64> {
    let batch = seqs.len();
    let mut out = vec![0.0; steps * batch];
    for (b, s) in seqs.iter().enumerate() {
        for (t, v) in s.iter().enumerate() {
            out[t * batch + b] = *v;
        }
    }
    out
}

fn forward_chunk(model: &ModelParams, seqs: &[&[f64]]) -> ChunkTape {
    let steps = model.arch.seq_len;
    let batch = seqs.len();
    let layout = model.layout();
    let inputs = time_major(seqs, steps);

    let mut encoder: Vec<LayerTape> = Vec::with_capacity(layout.n_encoder);
    for l in 0..layout.n_encoder {
        let input = match encoder.last() {
            None => LayerInput::Seq(&inputs),
            Some(prev) => LayerInput::Seq(&prev.h),
        };
        let tape = forward_layer(model.layer(l), input, steps, batch, None);
        encoder.push(tape);
    }
    let top = encoder.last().expect("at least one encoder layer");
    let latent_dim = layout.layers[layout.n_encoder - 1].hidden_dim;
    let seeded = model.arch.decoder == DecoderMode::SeededReverse;
    let seed_state = seeded.then(|| top.last_state(steps, batch, latent_dim));
    let latent = top.h[(steps - 1) * batch * latent_dim..].to_vec();

    let n_dec = layout.layers.len() - layout.n_encoder;
    let mut decoder: Vec<LayerTape> = Vec::with_capacity(n_dec);
    for d in 0..n_dec {
        let (input, init) = match decoder.last() {
            None => (LayerInput::Repeat(&latent), seed_state.clone()),
            Some(prev) => (LayerInput::Seq(&prev.h), None),
        };
        let tape = forward_layer(model.layer(layout.n_encoder + d), input, steps, batch, init);
        decoder.push(tape);
    }
    let top = decoder.last().expect("at least one decoder layer");
    let d = layout.out_dim_in;
    let mut output = vec![model.output_bias(); steps * batch];
    gemm(
        false,
        true,
        steps * batch,
        1,
        d,
        1.0,
        &top.h,
        model.output_weights(),
        1.0,
        &mut output,
    );
    if seeded {
        output = reverse_steps(&output, batch);
    }
    ChunkTape {
        inputs,
        encoder,
        latent,
        decoder,
        output,
    }
}

fn unpack(output: &[f64], batch: usize, steps: usize) -> Vec<Vec<f64>> {
    (0..batch)
        .map(|b| (0..steps).map(|t| output[t * batch + b]).collect())
        .collect()
}

/// Per-sample losses and summed gradients for one chunk.
fn backward_chunk(model: &ModelParams, inputs: &[&[f64]], targets: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let steps = model.arch.seq_len;
    let batch = inputs.len();
    let layout = model.layout();
    let tape = forward_chunk(model, inputs);
    let tgt = time_major(targets, steps);

    let mut losses = vec![0.0; batch];
    let mut dy = vec![0.0; steps * batch];
    for (r, (y, x)) in tape.output.iter().zip(&tgt).enumerate() {
        let e = y - x;
        losses[r % batch] += e * e / steps as f64;
        dy[r] = 2.0 * e / steps as f64;
    }

    // From here on `dy` follows decoder step order.
    let seeded = model.arch.decoder == DecoderMode::SeededReverse;
    if seeded {
        dy = reverse_steps(&dy, batch);
    }

    let mut grads = vec![0.0; layout.total];
    let d = layout.out_dim_in;
    let top = tape.decoder.last().expect("decoder layer");
    {
        let gw = &mut grads[layout.out_w..layout.out_w + d];
        gemm(true, false, 1, d, steps * batch, 1.0, &dy, &top.h, 1.0, gw);
    }
    grads[layout.out_b] += dy.iter().sum::<f64>();
    let mut dh = vec![0.0; steps * batch * d];
    for (row, g) in dh.chunks_exact_mut(d).zip(&dy) {
        for (v, w) in row.iter_mut().zip(model.output_weights()) {
            *v = g * w;
        }
    }

    let n_dec = tape.decoder.len();
    let mut seed_grad = None;
    for dl in (0..n_dec).rev() {
        let idx = layout.n_encoder + dl;
        let input = if dl == 0 {
            LayerInput::Repeat(&tape.latent)
        } else {
            LayerInput::Seq(&tape.decoder[dl - 1].h)
        };
        let back = backward_layer(
            model.layer(idx),
            input,
            &tape.decoder[dl],
            &dh,
            None,
            steps,
            batch,
            &mut grads,
            &layout.layers[idx],
            true,
        );
        dh = back.input.expect("input gradient requested");
        seed_grad = back.init;
    }

    // `dh` now holds the latent gradient per sample; it enters the top
    // encoder layer at the final step only, together with the gradient on
    // the decoder's seeded state.
    let latent_dim = layout.layers[layout.n_encoder - 1].hidden_dim;
    let mut dh_top = vec![0.0; steps * batch * latent_dim];
    let last = &mut dh_top[(steps - 1) * batch * latent_dim..];
    last.copy_from_slice(&dh);
    if let Some(s) = &seed_grad {
        for (a, b) in last.iter_mut().zip(&s.h) {
            *a += b;
        }
    }
    let mut dc_top = seed_grad.map(|s| s.c);
    let mut dh = dh_top;
    for el in (0..layout.n_encoder).rev() {
        let input = if el == 0 {
            LayerInput::Seq(&tape.inputs)
        } else {
            LayerInput::Seq(&tape.encoder[el - 1].h)
        };
        let back = backward_layer(
            model.layer(el),
            input,
            &tape.encoder[el],
            &dh,
            dc_top.take().as_deref(),
            steps,
            batch,
            &mut grads,
            &layout.layers[el],
            el > 0,
        );
        match back.input {
            Some(next) => dh = next,
            None => break,
        }
    }
    (losses, grads)
}

/// Reconstruction of one normalized sequence, in input time order. The
/// length must be a multiple of the model's `seq_len`.
pub fn reconstruct(model: &ModelParams, seg: &[f64]) -> Result<Vec<f64>> {
    Ok(reconstruct_batch(model, &[seg])?.pop().expect("one output per input"))
}

/// Reconstructions of many sequences; order matches the input.
pub fn reconstruct_batch(model: &ModelParams, segs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    check_lengths(model, segs)?;
    let steps = model.arch.seq_len;
    let all = chunks_of(model, segs);
    let groups: Vec<&[&[f64]]> = all.chunks(INFER_CHUNK).collect();
    let outs = par::map(&groups, |group| {
        unpack(&forward_chunk(model, group).output, group.len(), steps)
    });
    let mut flat = outs.into_iter().flatten();
    Ok(segs
        .iter()
        .map(|s| {
            (0..s.len() / steps)
                .flat_map(|_| flat.next().expect("chunk count"))
                .collect()
        })
        .collect())
}

/// Loss and exact gradient for one sequence reconstructing itself.
pub fn backward(model: &ModelParams, seg: &[f64]) -> Result<(f64, Gradients)> {
    backward_to_target(model, seg, seg)
}

/// Loss and gradient of `loss_mse(reconstruct(input), target)`.
pub fn backward_to_target(model: &ModelParams, input: &[f64], target: &[f64]) -> Result<(f64, Gradients)> {
    check_lengths(model, &[input, target])?;
    if input.len() != target.len() {
        return Err(Error::Dimension("input and target lengths differ".into()));
    }
    let inputs = chunks_of(model, &[input]);
    let targets = chunks_of(model, &[target]);
    let (losses, mut grads) = backward_chunk(model, &inputs, &targets);
    let scale = 1.0 / inputs.len() as f64;
    for v in &mut grads {
        *v *= scale;
    }
    Ok((losses.iter().sum::<f64>() * scale, Gradients { values: grads }))
}

/// Per-chunk losses and the gradient of their mean over every chunk of `segs`.
pub fn backward_batch(model: &ModelParams, segs: &[&[f64]]) -> Result<(Vec<f64>, Gradients)> {
    check_lengths(model, segs)?;
    let all = chunks_of(model, segs);
    if all.is_empty() {
        return Ok((Vec::new(), Gradients::zeros(model.n_params())));
    }
    let groups: Vec<&[&[f64]]> = all.chunks(GRAD_CHUNK).collect();
    let parts = par::map(&groups, |group| backward_chunk(model, group, group));
    let mut losses = Vec::with_capacity(all.len());
    let mut total = vec![0.0; model.n_params()];
    for (l, g) in parts {
        losses.extend(l);
        for (acc, v) in total.iter_mut().zip(&g) {
            *acc += v;
        }
    }
    let scale = 1.0 / all.len() as f64;
    for v in &mut total {
        *v *= scale;
    }
    Ok((losses, Gradients { values: total }))
}
