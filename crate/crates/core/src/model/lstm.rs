//! Forward pass and backpropagation through time.

use alloc::vec;
use alloc::vec::Vec;

use super::{Gradient, Layout, ModelParameters};
use crate::pipeline::{Batch, SequenceSet};
use crate::{Error, Result};

/// Logistic function, evaluated without overflow for any finite input.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(logit)` against `target`, in
/// log-sum-exp form.
fn bce_with_logit(logit: f64, target: f64) -> f64 {
    logit.max(0.0) - logit * target + libm::log1p(libm::exp(-logit.abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// Hidden and cell states per layer per step, plus the head's logit.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    /// `layers[l][t]`.
    pub layers: Vec<Vec<HiddenState>>,
    pub logit: f64,
}

/// Activations kept for the backward pass of one window.
struct Tape {
    steps: usize,
    hidden: usize,
    /// Per layer, `steps × 4H` activated gates (i, f, g, o).
    gates: Vec<Vec<f64>>,
    /// Per layer, `(steps + 1) × H` cell states; row 0 is the zero state.
    cells: Vec<Vec<f64>>,
    /// Per layer, `steps × H` values of `tanh(c_t)`.
    tanh_cells: Vec<Vec<f64>>,
    /// Per layer, `(steps + 1) × H` hidden states; row 0 is the zero state.
    hiddens: Vec<Vec<f64>>,
    logit: f64,
}

impl Tape {
    fn new(layers: usize, steps: usize, hidden: usize) -> Self {
        Tape {
            steps,
            hidden,
            gates: vec![vec![0.0; steps * 4 * hidden]; layers],
            cells: vec![vec![0.0; (steps + 1) * hidden]; layers],
            tanh_cells: vec![vec![0.0; steps * hidden]; layers],
            hiddens: vec![vec![0.0; (steps + 1) * hidden]; layers],
            logit: 0.0,
        }
    }

    fn hidden_at(&self, layer: usize, t: usize) -> &[f64] {
        // Row t + 1 holds h_t.
        &self.hiddens[layer][(t + 1) * self.hidden..(t + 2) * self.hidden]
    }

    fn top_hidden(&self) -> &[f64] {
        self.hidden_at(self.gates.len() - 1, self.steps - 1)
    }
}

fn window_steps(layout: &Layout, window: &[f64]) -> Result<usize> {
    let width = layout.dims.input_size;
    if window.is_empty() || !window.len().is_multiple_of(width) {
        return Err(Error::Shape {
            expected: width,
            found: window.len(),
            what: "window width",
        });
    }
    Ok(window.len() / width)
}

fn forward_tape(p: &ModelParameters, window: &[f64], tape: &mut Tape) {
    let layout = p.layout();
    let values = p.values();
    let h = tape.hidden;
    let mut z = vec![0.0; 4 * h];
    for layer in 0..layout.dims.num_layers {
        let n_in = layout.layer_input(layer);
        let w = &values[layout.input_weights(layer)];
        let u = &values[layout.recurrent_weights(layer)];
        let b = &values[layout.biases(layer)];
        for t in 0..tape.steps {
            let x: &[f64] = if layer == 0 {
                &window[t * n_in..(t + 1) * n_in]
            } else {
                &tape.hiddens[layer - 1][(t + 1) * h..(t + 2) * h]
            };
            let h_prev = &tape.hiddens[layer][t * h..(t + 1) * h];
            for (r, zr) in z.iter_mut().enumerate() {
                let w_row = &w[r * n_in..(r + 1) * n_in];
                let u_row = &u[r * h..(r + 1) * h];
                *zr = b[r]
                    + w_row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                    + u_row.iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
            }
            let gates = &mut tape.gates[layer][t * 4 * h..(t + 1) * 4 * h];
            for r in 0..4 * h {
                gates[r] = if (2 * h..3 * h).contains(&r) {
                    libm::tanh(z[r])
                } else {
                    sigmoid(z[r])
                };
            }
            for j in 0..h {
                let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let c = f * tape.cells[layer][t * h + j] + i * g;
                let tc = libm::tanh(c);
                tape.cells[layer][(t + 1) * h + j] = c;
                tape.tanh_cells[layer][t * h + j] = tc;
                tape.hiddens[layer][(t + 1) * h + j] = o * tc;
            }
        }
    }
    let head = &values[layout.head_weights()];
    tape.logit = values[layout.head_bias()]
        + head.iter().zip(tape.top_hidden()).map(|(a, b)| a * b).sum::<f64>();
}

/// Accumulates into `grad` the gradient of `dlogit * logit` for one window
/// whose forward activations are on `tape`.
fn backward_tape(p: &ModelParameters, window: &[f64], tape: &Tape, dlogit: f64, grad: &mut [f64]) {
    let layout = p.layout();
    let values = p.values();
    let h = tape.hidden;
    let steps = tape.steps;
    let layers = layout.dims.num_layers;

    let head = layout.head_weights();
    for (g, hv) in grad[head.clone()].iter_mut().zip(tape.top_hidden()) {
        *g += dlogit * hv;
    }
    grad[layout.head_bias()] += dlogit;

    // Gradient flowing into each layer's h_t from above.
    let mut from_above = vec![0.0; steps * h];
    for (d, w) in from_above[(steps - 1) * h..].iter_mut().zip(&values[head]) {
        *d = dlogit * w;
    }
    let mut below = vec![0.0; steps * h];
    let mut dz = vec![0.0; 4 * h];
    let mut dh_next = vec![0.0; h];
    let mut dc_next = vec![0.0; h];

    for layer in (0..layers).rev() {
        let n_in = layout.layer_input(layer);
        let w_range = layout.input_weights(layer);
        let u_range = layout.recurrent_weights(layer);
        let b_range = layout.biases(layer);
        let w = &values[w_range.clone()];
        let u = &values[u_range.clone()];
        dh_next.fill(0.0);
        dc_next.fill(0.0);
        below.fill(0.0);
        for t in (0..steps).rev() {
            let gates = &tape.gates[layer][t * 4 * h..(t + 1) * 4 * h];
            let c_prev = &tape.cells[layer][t * h..(t + 1) * h];
            let tanh_c = &tape.tanh_cells[layer][t * h..(t + 1) * h];
            for j in 0..h {
                let (i, f, g, o) = (gates[j], gates[h + j], gates[2 * h + j], gates[3 * h + j]);
                let dh = from_above[t * h + j] + dh_next[j];
                let tc = tanh_c[j];
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[j];
                dz[j] = dc * g * i * (1.0 - i);
                dz[h + j] = dc * c_prev[j] * f * (1.0 - f);
                dz[2 * h + j] = dc * i * (1.0 - g * g);
                dz[3 * h + j] = d_o * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            let x: &[f64] = if layer == 0 {
                &window[t * n_in..(t + 1) * n_in]
            } else {
                &tape.hiddens[layer - 1][(t + 1) * h..(t + 2) * h]
            };
            let h_prev = &tape.hiddens[layer][t * h..(t + 1) * h];
            dh_next.fill(0.0);
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let gw = &mut grad[w_range.start + r * n_in..w_range.start + (r + 1) * n_in];
                for (g, xv) in gw.iter_mut().zip(x) {
                    *g += d * xv;
                }
                let gu = &mut grad[u_range.start + r * h..u_range.start + (r + 1) * h];
                for (g, hv) in gu.iter_mut().zip(h_prev) {
                    *g += d * hv;
                }
                grad[b_range.start + r] += d;
                for (acc, uv) in dh_next.iter_mut().zip(&u[r * h..(r + 1) * h]) {
                    *acc += d * uv;
                }
                if layer > 0 {
                    for (acc, wv) in below[t * h..(t + 1) * h].iter_mut().zip(&w[r * n_in..(r + 1) * n_in]) {
                        *acc += d * wv;
                    }
                }
            }
        }
        core::mem::swap(&mut from_above, &mut below);
    }
}

/// Runs the stacked LSTM over a `T × input_size` window (row-major) from
/// zero initial states and returns the trace and `σ(W·h_2nd(T) + b)`.
pub fn lstm_forward(p: &ModelParameters, window: &[f64]) -> Result<(ForwardTrace, f64)> {
    let layout = p.layout();
    let steps = window_steps(&layout, window)?;
    let h = layout.dims.hidden_size;
    let mut tape = Tape::new(layout.dims.num_layers, steps, h);
    forward_tape(p, window, &mut tape);
    let layers = (0..layout.dims.num_layers)
        .map(|l| {
            (0..steps)
                .map(|t| HiddenState {
                    h: tape.hidden_at(l, t).to_vec(),
                    c: tape.cells[l][(t + 1) * h..(t + 2) * h].to_vec(),
                })
                .collect()
        })
        .collect();
    let prob = sigmoid(tape.logit);
    Ok((
        ForwardTrace {
            layers,
            logit: tape.logit,
        },
        prob,
    ))
}

pub(crate) fn logit(p: &ModelParameters, window: &[f64]) -> Result<f64> {
    let layout = p.layout();
    let steps = window_steps(&layout, window)?;
    let mut tape = Tape::new(layout.dims.num_layers, steps, layout.dims.hidden_size);
    forward_tape(p, window, &mut tape);
    Ok(tape.logit)
}

fn check_set(p: &ModelParameters, set: &SequenceSet, batch: &Batch) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if set.width() != p.dims().input_size {
        return Err(Error::Shape {
            expected: p.dims().input_size,
            found: set.width(),
            what: "window width",
        });
    }
    if let Some(&bad) = batch.iter().find(|&&i| i >= set.len()) {
        return Err(Error::Range {
            start: bad,
            end: bad + 1,
            len: set.len(),
        });
    }
    Ok(())
}

/// Mean binary cross-entropy over the batch (forward only).
pub fn batch_loss(p: &ModelParameters, set: &SequenceSet, batch: &Batch) -> Result<f64> {
    check_set(p, set, batch)?;
    let mut total = 0.0;
    for &i in batch {
        total += bce_with_logit(logit(p, set.window(i))?, f64::from(set.target(i)));
    }
    Ok(total / batch.len() as f64)
}

/// Exact gradient of the mean batch BCE, and the loss itself.
pub fn backward(p: &ModelParameters, set: &SequenceSet, batch: &Batch) -> Result<(Gradient, f64)> {
    backward_scaled(p, set, batch, 1.0)
}

/// Gradient of `scale × mean BCE`, and that scaled loss.
pub fn backward_scaled(p: &ModelParameters, set: &SequenceSet, batch: &Batch, scale: f64) -> Result<(Gradient, f64)> {
    check_set(p, set, batch)?;
    let layout = p.layout();
    let mut grad = Gradient::zeros(p.dims());
    let mut tape = Tape::new(layout.dims.num_layers, set.window_len(), layout.dims.hidden_size);
    let weight = scale / batch.len() as f64;
    let mut loss = 0.0;
    for &i in batch {
        let window = set.window(i);
        let target = f64::from(set.target(i));
        forward_tape(p, window, &mut tape);
        loss += bce_with_logit(tape.logit, target);
        let dlogit = (sigmoid(tape.logit) - target) * weight;
        backward_tape(p, window, &tape, dlogit, grad.values_mut());
    }
    Ok((grad, loss * weight))
}
