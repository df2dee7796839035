//! Three-layer LSTM followed by two small MLPs, over a flat parameter vector.
//!
//! Parameter order (each matrix row-major, rows are outputs):
//!
//! ```text
//! for layer in 0..3:
//!     w_ih  [4H x in]   in = 4 for layer 0, H otherwise
//!     w_hh  [4H x H]
//!     b     [4H]
//!     gate row blocks: input, forget, candidate, output
//! mlp1:  a1 [H x H], a1_bias [H], a2 [H x H], a2_bias [H]
//! mlp2:  b1 [H x (H + 4)], b1_bias [H], b2 [1 x H], b2_bias [1]
//! ```

use num_traits::Float;

pub const FEATURES: usize = 4;
pub const LAYERS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub hidden: usize,
}

#[derive(Debug, Clone, Copy)]
struct LayerOffsets {
    w_ih: usize,
    w_hh: usize,
    bias: usize,
    input: usize,
}

#[derive(Debug, Clone, Copy)]
struct Offsets {
    layers: [LayerOffsets; LAYERS],
    a1: usize,
    a1_bias: usize,
    a2: usize,
    a2_bias: usize,
    b1: usize,
    b1_bias: usize,
    b2: usize,
    b2_bias: usize,
    total: usize,
}

impl Shape {
    pub fn new(hidden: usize) -> Self {
        Self { hidden }
    }

    fn offsets(&self) -> Offsets {
        let h = self.hidden;
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let mut layers = [LayerOffsets { w_ih: 0, w_hh: 0, bias: 0, input: 0 }; LAYERS];
        for (l, layer) in layers.iter_mut().enumerate() {
            let input = if l == 0 { FEATURES } else { h };
            *layer = LayerOffsets { w_ih: take(4 * h * input), w_hh: take(4 * h * h), bias: take(4 * h), input };
        }
        let a1 = take(h * h);
        let a1_bias = take(h);
        let a2 = take(h * h);
        let a2_bias = take(h);
        let b1 = take(h * (h + FEATURES));
        let b1_bias = take(h);
        let b2 = take(h);
        let b2_bias = take(1);
        Offsets { layers, a1, a1_bias, a2, a2_bias, b1, b1_bias, b2, b2_bias, total: at }
    }

    /// Number of scalar parameters:
    /// `4H(4 + H + 1) + 2 * 4H(2H + 1) + 2H(H + 1) + H(H + 4) + 2H + 1`.
    pub fn param_count(&self) -> usize {
        self.offsets().total
    }

    /// Index of the output-layer bias.
    pub fn output_bias_index(&self) -> usize {
        self.offsets().b2_bias
    }

    /// `(offset, fan_in, len, is_bias)` for every parameter block, in order.
    pub(crate) fn blocks(&self) -> Vec<(usize, usize, usize, bool)> {
        let o = self.offsets();
        let h = self.hidden;
        let mut out = Vec::new();
        for l in &o.layers {
            out.push((l.w_ih, h, 4 * h * l.input, false));
            out.push((l.w_hh, h, 4 * h * h, false));
            out.push((l.bias, h, 4 * h, true));
        }
        out.push((o.a1, h, h * h, false));
        out.push((o.a1_bias, h, h, true));
        out.push((o.a2, h, h * h, false));
        out.push((o.a2_bias, h, h, true));
        out.push((o.b1, h + FEATURES, h * (h + FEATURES), false));
        out.push((o.b1_bias, h + FEATURES, h, true));
        out.push((o.b2, h, h, false));
        out.push((o.b2_bias, h, 1, true));
        out
    }
}

/// Activations kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Workspace<F> {
    steps: usize,
    /// Per layer: `[steps x 4H]` post-activation gates (i, f, g, o).
    gates: Vec<Vec<F>>,
    /// Per layer: `[(steps + 1) x H]` cell states, index 0 is the zero state.
    cells: Vec<Vec<F>>,
    /// Per layer: `[(steps + 1) x H]` hidden states, index 0 is the zero state.
    hiddens: Vec<Vec<F>>,
    inputs: Vec<F>,
    current: [F; FEATURES],
    m1: Vec<F>,
    mlp2_in: Vec<F>,
    m2: Vec<F>,
}

impl<F: Float> Workspace<F> {
    pub fn new(shape: Shape, steps: usize) -> Self {
        let h = shape.hidden;
        Self {
            steps,
            gates: vec![vec![F::zero(); steps * 4 * h]; LAYERS],
            cells: vec![vec![F::zero(); (steps + 1) * h]; LAYERS],
            hiddens: vec![vec![F::zero(); (steps + 1) * h]; LAYERS],
            inputs: vec![F::zero(); steps * FEATURES],
            current: [F::zero(); FEATURES],
            m1: vec![F::zero(); h],
            mlp2_in: vec![F::zero(); h + FEATURES],
            m2: vec![F::zero(); h],
        }
    }
}

fn sigmoid<F: Float>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// `out[r] = bias[r] + sum_c m[r, c] * v[c]`, summed left to right.
fn affine<F: Float>(m: &[F], bias: &[F], v: &[F], out: &mut [F]) {
    let cols = v.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        let mut acc = bias[r];
        for (w, x) in row.iter().zip(v) {
            acc = acc + *w * *x;
        }
        *o = acc;
    }
}

/// `out[r] += sum_c m[r, c] * v[c]`.
fn gemv_add<F: Float>(m: &[F], v: &[F], out: &mut [F]) {
    let cols = v.len();
    for (r, o) in out.iter_mut().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        let mut acc = F::zero();
        for (w, x) in row.iter().zip(v) {
            acc = acc + *w * *x;
        }
        *o = *o + acc;
    }
}

/// `out[c] += sum_r m[r, c] * v[r]`.
fn gemv_t_add<F: Float>(m: &[F], v: &[F], out: &mut [F]) {
    let cols = out.len();
    for (r, vr) in v.iter().enumerate() {
        let row = &m[r * cols..(r + 1) * cols];
        for (o, w) in out.iter_mut().zip(row) {
            *o = *o + *w * *vr;
        }
    }
}

/// `g[r, c] += a[r] * b[c]`.
fn outer_add<F: Float>(g: &mut [F], a: &[F], b: &[F]) {
    let cols = b.len();
    for (r, ar) in a.iter().enumerate() {
        let row = &mut g[r * cols..(r + 1) * cols];
        for (gv, bv) in row.iter_mut().zip(b) {
            *gv = *gv + *ar * *bv;
        }
    }
}

fn add_into<F: Float>(g: &mut [F], a: &[F]) {
    for (x, y) in g.iter_mut().zip(a) {
        *x = *x + *y;
    }
}

/// Runs the network on `inputs` (`steps x 4`, oldest first) and the current
/// features, returning the scalar head output.
pub fn forward<F: Float>(shape: Shape, params: &[F], inputs: &[F], current: [F; FEATURES], ws: &mut Workspace<F>) -> F {
    let o = shape.offsets();
    let h = shape.hidden;
    let steps = ws.steps;
    debug_assert_eq!(params.len(), o.total);
    debug_assert_eq!(inputs.len(), steps * FEATURES);
    ws.inputs.copy_from_slice(inputs);
    ws.current = current;

    let mut z = vec![F::zero(); 4 * h];
    for (l, lo) in o.layers.iter().enumerate() {
        let (below, rest) = ws.hiddens.split_at_mut(l);
        let hid = &mut rest[0];
        let cell = &mut ws.cells[l];
        let gates = &mut ws.gates[l];
        for t in 0..steps {
            let x: &[F] = if l == 0 {
                &ws.inputs[t * FEATURES..(t + 1) * FEATURES]
            } else {
                &below[l - 1][(t + 1) * h..(t + 2) * h]
            };
            affine(&params[lo.w_ih..lo.w_hh], &params[lo.bias..lo.bias + 4 * h], x, &mut z);
            gemv_add(&params[lo.w_hh..lo.bias], &hid[t * h..(t + 1) * h], &mut z);
            let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
            for k in 0..h {
                let i = sigmoid(z[k]);
                let f = sigmoid(z[h + k]);
                let c_hat = z[2 * h + k].tanh();
                let og = sigmoid(z[3 * h + k]);
                g[k] = i;
                g[h + k] = f;
                g[2 * h + k] = c_hat;
                g[3 * h + k] = og;
                let c = f * cell[t * h + k] + i * c_hat;
                cell[(t + 1) * h + k] = c;
                hid[(t + 1) * h + k] = og * c.tanh();
            }
        }
    }

    let top = &ws.hiddens[LAYERS - 1][steps * h..(steps + 1) * h];
    affine(&params[o.a1..o.a1_bias], &params[o.a1_bias..o.a2], top, &mut ws.m1);
    ws.m1.iter_mut().for_each(|v| *v = v.tanh());
    let (embed, feats) = ws.mlp2_in.split_at_mut(h);
    affine(&params[o.a2..o.a2_bias], &params[o.a2_bias..o.b1], &ws.m1, embed);
    feats.copy_from_slice(&current);
    affine(&params[o.b1..o.b1_bias], &params[o.b1_bias..o.b2], &ws.mlp2_in, &mut ws.m2);
    ws.m2.iter_mut().for_each(|v| *v = v.tanh());
    let mut out = [F::zero()];
    affine(&params[o.b2..o.b2_bias], &params[o.b2_bias..o.total], &ws.m2, &mut out);
    out[0]
}

/// Accumulates `d_out * d(out)/d(params)` into `grads` for the activations in `ws`.
pub fn backward<F: Float>(shape: Shape, params: &[F], ws: &Workspace<F>, d_out: F, grads: &mut [F]) {
    let o = shape.offsets();
    let h = shape.hidden;
    let steps = ws.steps;

    // MLP-2
    grads[o.b2_bias] = grads[o.b2_bias] + d_out;
    let d_out_v = [d_out];
    outer_add(&mut grads[o.b2..o.b2_bias], &d_out_v, &ws.m2);
    let mut dz2 = vec![F::zero(); h];
    gemv_t_add(&params[o.b2..o.b2_bias], &d_out_v, &mut dz2);
    for (d, m) in dz2.iter_mut().zip(&ws.m2) {
        *d = *d * (F::one() - *m * *m);
    }
    outer_add(&mut grads[o.b1..o.b1_bias], &dz2, &ws.mlp2_in);
    add_into(&mut grads[o.b1_bias..o.b2], &dz2);
    let mut d_in2 = vec![F::zero(); h + FEATURES];
    gemv_t_add(&params[o.b1..o.b1_bias], &dz2, &mut d_in2);

    // MLP-1
    let d_embed = &d_in2[..h];
    outer_add(&mut grads[o.a2..o.a2_bias], d_embed, &ws.m1);
    add_into(&mut grads[o.a2_bias..o.b1], d_embed);
    let mut dz1 = vec![F::zero(); h];
    gemv_t_add(&params[o.a2..o.a2_bias], d_embed, &mut dz1);
    for (d, m) in dz1.iter_mut().zip(&ws.m1) {
        *d = *d * (F::one() - *m * *m);
    }
    let top = &ws.hiddens[LAYERS - 1][steps * h..(steps + 1) * h];
    outer_add(&mut grads[o.a1..o.a1_bias], &dz1, top);
    add_into(&mut grads[o.a1_bias..o.a2], &dz1);

    // Gradient w.r.t. each layer's output sequence, filled from above.
    let mut d_hseq = vec![F::zero(); steps * h];
    gemv_t_add(&params[o.a1..o.a1_bias], &dz1, &mut d_hseq[(steps - 1) * h..]);

    let mut dz = vec![F::zero(); 4 * h];
    for l in (0..LAYERS).rev() {
        let lo = o.layers[l];
        let gates = &ws.gates[l];
        let cell = &ws.cells[l];
        let hid = &ws.hiddens[l];
        let mut d_below = vec![F::zero(); steps * lo.input];
        let mut dh_next = vec![F::zero(); h];
        let mut dc_next = vec![F::zero(); h];
        for t in (0..steps).rev() {
            let g = &gates[t * 4 * h..(t + 1) * 4 * h];
            for k in 0..h {
                let (i, f, c_hat, og) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let c = cell[(t + 1) * h + k];
                let c_prev = cell[t * h + k];
                let tc = c.tanh();
                let dh = d_hseq[t * h + k] + dh_next[k];
                let dc = dh * og * (F::one() - tc * tc) + dc_next[k];
                dz[k] = dc * c_hat * i * (F::one() - i);
                dz[h + k] = dc * c_prev * f * (F::one() - f);
                dz[2 * h + k] = dc * i * (F::one() - c_hat * c_hat);
                dz[3 * h + k] = dh * tc * og * (F::one() - og);
                dc_next[k] = dc * f;
            }
            let x: &[F] = if l == 0 {
                &ws.inputs[t * FEATURES..(t + 1) * FEATURES]
            } else {
                &ws.hiddens[l - 1][(t + 1) * h..(t + 2) * h]
            };
            outer_add(&mut grads[lo.w_ih..lo.w_hh], &dz, x);
            outer_add(&mut grads[lo.w_hh..lo.bias], &dz, &hid[t * h..(t + 1) * h]);
            add_into(&mut grads[lo.bias..lo.bias + 4 * h], &dz);
            gemv_t_add(&params[lo.w_ih..lo.w_hh], &dz, &mut d_below[t * lo.input..(t + 1) * lo.input]);
            dh_next.iter_mut().for_each(|v| *v = F::zero());
            gemv_t_add(&params[lo.w_hh..lo.bias], &dz, &mut dh_next);
        }
        if l > 0 {
            d_hseq = d_below;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parameter_count_formula() {
        for h in [1usize, 4, 16, 64] {
            let expected = 4 * h * (FEATURES + h + 1)
                + 2 * 4 * h * (2 * h + 1)
                + 2 * h * (h + 1)
                + h * (h + FEATURES)
                + 2 * h
                + 1;
            assert_eq!(Shape::new(h).param_count(), expected);
        }
        let total: usize = Shape::new(8).blocks().iter().map(|b| b.2).sum();
        assert_eq!(total, Shape::new(8).param_count());
    }

    #[test]
    fn zero_parameters_emit_output_bias() {
        let shape = Shape::new(5);
        let mut params = vec![0.0f64; shape.param_count()];
        params[shape.output_bias_index()] = 0.375;
        let mut ws = Workspace::new(shape, 3);
        let out = forward(shape, &params, &[0.3; 12], [0.1, 0.2, 0.3, 0.4], &mut ws);
        assert_eq!(out, 0.375);
    }

    /// One hidden unit, identity-ish wiring, checked against a hand-rolled cell.
    #[test]
    fn single_unit_matches_manual_recurrence() {
        let shape = Shape::new(1);
        let o = shape.offsets();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params: Vec<f64> = (0..shape.param_count()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let inputs: Vec<f64> = (0..3 * FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect();
        let current = [0.5, -0.25, 0.125, 1.0];
        let mut ws = Workspace::new(shape, 3);
        let out = forward(shape, &params, &inputs, current, &mut ws);

        let sig = |x: f64| 1.0 / (1.0 + (-x).exp());
        let mut seq: Vec<Vec<f64>> = inputs.chunks(FEATURES).map(<[f64]>::to_vec).collect();
        for lo in o.layers {
            let p = &params;
            let (mut hprev, mut cprev) = (0.0, 0.0);
            let mut next = Vec::new();
            for x in &seq {
                let gate = |k: usize| {
                    let w: f64 = (0..lo.input).map(|c| p[lo.w_ih + k * lo.input + c] * x[c]).sum();
                    w + p[lo.w_hh + k] * hprev + p[lo.bias + k]
                };
                let (i, f, g, og) = (sig(gate(0)), sig(gate(1)), gate(2).tanh(), sig(gate(3)));
                cprev = f * cprev + i * g;
                hprev = og * cprev.tanh();
                next.push(vec![hprev]);
            }
            seq = next;
        }
        let top = seq.last().unwrap()[0];
        let m1 = (params[o.a1] * top + params[o.a1_bias]).tanh();
        let e = params[o.a2] * m1 + params[o.a2_bias];
        let u = [e, current[0], current[1], current[2], current[3]];
        let m2 = ((0..5).map(|c| params[o.b1 + c] * u[c]).sum::<f64>() + params[o.b1_bias]).tanh();
        let expected = params[o.b2] * m2 + params[o.b2_bias];
        assert!((out - expected).abs() < 1e-12, "{out} vs {expected}");
    }

    #[test]
    fn gradients_match_central_differences() {
        let shape = Shape::new(4);
        let steps = 5;
        for seed in 0..3 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params: Vec<f64> = (0..shape.param_count()).map(|_| rng.random_range(-0.8..0.8)).collect();
            let inputs: Vec<f64> = (0..steps * FEATURES).map(|_| rng.random_range(-1.0..1.0)).collect();
            let current = [0.3, -0.7, 0.2, 0.9];
            let mut ws = Workspace::new(shape, steps);
            forward(shape, &params, &inputs, current, &mut ws);
            let mut grads = vec![0.0; params.len()];
            backward(shape, &params, &ws, 1.0, &mut grads);

            let eps = 1e-5;
            let mut worst = 0.0f64;
            for k in 0..params.len() {
                let keep = params[k];
                params[k] = keep + eps;
                let up = forward(shape, &params, &inputs, current, &mut ws);
                params[k] = keep - eps;
                let down = forward(shape, &params, &inputs, current, &mut ws);
                params[k] = keep;
                let numeric = (up - down) / (2.0 * eps);
                let rel = (grads[k] - numeric).abs() / grads[k].abs().max(numeric.abs()).max(1e-8);
                worst = worst.max(rel);
            }
            assert!(worst < 1e-4, "seed {seed}: {worst}");
        }
    }
}
