//! Neural building blocks over [`Value`]: affine layers, small MLPs, an LSTM
//! cell, layer normalization, and the sinusoidal timestep embedding.

use super::ops::concat;
use super::params::ParamSet;
use super::value::Value;
use rand::Rng;

/// Fully connected layer `y = W x + b` with `W: [out, in]`, `b: [out]`.
#[derive(Clone)]
pub struct Affine {
    pub weight: Value,
    pub bias: Value,
}

impl Affine {
    /// Weights drawn from `uniform(-1/sqrt(in), 1/sqrt(in))`, biases zero.
    pub fn init(params: &mut ParamSet, name: &str, out: usize, inp: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inp as f64).sqrt();
        let w: Vec<f64> = (0..out * inp).map(|_| rng.random_range(-bound..bound)).collect();
        Affine {
            weight: params.register(&format!("{name}.weight"), w, vec![out, inp]),
            bias: params.register(&format!("{name}.bias"), vec![0.0; out], vec![out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Apply to a rank-1 input. Fused op: one graph node.
    pub fn apply(&self, x: &Value) -> Value {
        let (out, inp) = (self.out_dim(), self.in_dim());
        assert_eq!(
            x.shape(),
            &[inp],
            "affine: input shape {:?} does not match weight {:?}",
            x.shape(),
            self.weight.shape()
        );
        let mut y = Vec::with_capacity(out);
        {
            let w = self.weight.data();
            let xv = x.data();
            let b = self.bias.data();
            for o in 0..out {
                let row = &w[o * inp..(o + 1) * inp];
                let s: f64 = row.iter().zip(xv.iter()).map(|(wi, xi)| wi * xi).sum();
                y.push(s + b[o]);
            }
        }
        Value::from_op(
            y,
            vec![out],
            vec![self.weight.clone(), self.bias.clone(), x.clone()],
            Box::new(move |parents, g| {
                let w = parents[0].data();
                let xv = parents[2].data();
                let mut dw = Vec::with_capacity(out * inp);
                let mut dx = vec![0.0; inp];
                for o in 0..out {
                    let go = g[o];
                    let row = &w[o * inp..(o + 1) * inp];
                    for i in 0..inp {
                        dw.push(go * xv[i]);
                        dx[i] += go * row[i];
                    }
                }
                vec![Some(dw), Some(g.to_vec()), Some(dx)]
            }),
        )
    }
}

/// Activation used between MLP layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

/// Small multilayer perceptron: affine layers with an activation after every
/// layer except the last.
#[derive(Clone)]
pub struct Mlp {
    pub layers: Vec<Affine>,
    pub activation: Activation,
}

impl Mlp {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        dims: &[usize],
        activation: Activation,
        rng: &mut impl Rng,
    ) -> Self {
        assert!(dims.len() >= 2, "mlp needs at least input and output dims");
        let layers = (0..dims.len() - 1)
            .map(|i| Affine::init(params, &format!("{name}.{i}"), dims[i + 1], dims[i], rng))
            .collect();
        Mlp { layers, activation }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn apply(&self, x: &Value) -> Value {
        let mut h = self.layers[0].apply(x);
        for layer in &self.layers[1..] {
            h = match self.activation {
                Activation::Tanh => h.tanh(),
                Activation::Relu => h.relu(),
            };
            h = layer.apply(&h);
        }
        h
    }
}

/// LSTM cell parameters. All four gate blocks share the `[hidden, in+hidden]`
/// weight shape; biases are `[hidden]`.
#[derive(Clone)]
pub struct LstmCell {
    pub w_input: Affine,
    pub w_forget: Affine,
    pub w_cell: Affine,
    pub w_output: Affine,
}

impl LstmCell {
    pub fn init(params: &mut ParamSet, name: &str, input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mk = |params: &mut ParamSet, gate: &str, rng: &mut _| {
            Affine::init(params, &format!("{name}.{gate}"), hidden, input + hidden, rng)
        };
        LstmCell {
            w_input: mk(params, "input", rng),
            w_forget: mk(params, "forget", rng),
            w_cell: mk(params, "cell", rng),
            w_output: mk(params, "output", rng),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_input.out_dim()
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.in_dim() - self.hidden_dim()
    }
}

/// One LSTM step with the standard gate equations:
/// `i = sigma(W_i z)`, `f = sigma(W_f z)`, `g = tanh(W_g z)`, `o = sigma(W_o z)`
/// over `z = [x ; h]`, then `c' = f*c + i*g` and `h' = o * tanh(c')`.
///
/// Runs as one fused graph node producing `[h' ; c']` (the step sits on the
/// hot path of history encoding); the returned values are slices of it.
pub fn lstm_step(cell: &LstmCell, x: &Value, h: &Value, c: &Value) -> (Value, Value) {
    let hidden = cell.hidden_dim();
    let input = cell.input_dim();
    assert_eq!(
        x.shape(),
        &[input],
        "lstm_step: input shape {:?} does not match cell input dim {input}",
        x.shape()
    );
    assert_eq!(h.shape(), &[hidden], "lstm_step: hidden shape {:?} vs dim {hidden}", h.shape());
    assert_eq!(c.shape(), &[hidden], "lstm_step: cell shape {:?} vs dim {hidden}", c.shape());

    let zdim = input + hidden;
    let mut z = Vec::with_capacity(zdim);
    z.extend_from_slice(&x.data());
    z.extend_from_slice(&h.data());

    fn sigmoid(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }
    let gate = |layer: &Affine, act: fn(f64) -> f64| -> Vec<f64> {
        let wv = layer.weight.data();
        let bv = layer.bias.data();
        (0..hidden)
            .map(|o| {
                act(bv[o]
                    + wv[o * zdim..(o + 1) * zdim]
                        .iter()
                        .zip(&z)
                        .map(|(wi, zi)| wi * zi)
                        .sum::<f64>())
            })
            .collect()
    };
    let i_gate = gate(&cell.w_input, sigmoid);
    let f_gate = gate(&cell.w_forget, sigmoid);
    let g_gate = gate(&cell.w_cell, f64::tanh);
    let o_gate = gate(&cell.w_output, sigmoid);

    let c_prev = c.data().clone();
    let c_next: Vec<f64> = (0..hidden)
        .map(|j| f_gate[j] * c_prev[j] + i_gate[j] * g_gate[j])
        .collect();
    let tanh_c: Vec<f64> = c_next.iter().map(|v| v.tanh()).collect();
    let h_next: Vec<f64> = (0..hidden).map(|j| o_gate[j] * tanh_c[j]).collect();

    let mut packed = h_next;
    packed.extend_from_slice(&c_next);

    let parents = vec![
        cell.w_input.weight.clone(),
        cell.w_input.bias.clone(),
        cell.w_forget.weight.clone(),
        cell.w_forget.bias.clone(),
        cell.w_cell.weight.clone(),
        cell.w_cell.bias.clone(),
        cell.w_output.weight.clone(),
        cell.w_output.bias.clone(),
        x.clone(),
        h.clone(),
        c.clone(),
    ];

    let pair = Value::from_op(
        packed,
        vec![2 * hidden],
        parents,
        Box::new(move |parents, grad| {
            let gh = &grad[..hidden];
            let gc_up = &grad[hidden..];
            // dc' folds the hidden-path contribution through tanh(c').
            let dc_next: Vec<f64> = (0..hidden)
                .map(|j| gc_up[j] + gh[j] * o_gate[j] * (1.0 - tanh_c[j] * tanh_c[j]))
                .collect();
            let da_o: Vec<f64> = (0..hidden)
                .map(|j| gh[j] * tanh_c[j] * o_gate[j] * (1.0 - o_gate[j]))
                .collect();
            let da_i: Vec<f64> = (0..hidden)
                .map(|j| dc_next[j] * g_gate[j] * i_gate[j] * (1.0 - i_gate[j]))
                .collect();
            let da_f: Vec<f64> = (0..hidden)
                .map(|j| dc_next[j] * c_prev[j] * f_gate[j] * (1.0 - f_gate[j]))
                .collect();
            let da_g: Vec<f64> = (0..hidden)
                .map(|j| dc_next[j] * i_gate[j] * (1.0 - g_gate[j] * g_gate[j]))
                .collect();
            let dc: Vec<f64> = (0..hidden).map(|j| dc_next[j] * f_gate[j]).collect();

            let mut dz = vec![0.0; zdim];
            let mut out: Vec<Option<Vec<f64>>> = Vec::with_capacity(11);
            for (weight_idx, da) in [(0usize, &da_i), (2, &da_f), (4, &da_g), (6, &da_o)] {
                let w = parents[weight_idx].data();
                let mut dw = Vec::with_capacity(hidden * zdim);
                for o in 0..hidden {
                    let d = da[o];
                    let row = &w[o * zdim..(o + 1) * zdim];
                    for j in 0..zdim {
                        dw.push(d * z[j]);
                        dz[j] += d * row[j];
                    }
                }
                out.push(Some(dw));
                out.push(Some(da.clone()));
            }
            out.push(Some(dz[..input].to_vec()));
            out.push(Some(dz[input..].to_vec()));
            out.push(Some(dc));
            out
        }),
    );
    (pair.slice(0, hidden), pair.slice(hidden, hidden))
}

/// Layer normalization with learnable gain and shift.
#[derive(Clone)]
pub struct LayerNorm {
    pub gamma: Value,
    pub beta: Value,
    pub eps: f64,
}

impl LayerNorm {
    pub fn init(params: &mut ParamSet, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: params.register(&format!("{name}.gamma"), vec![1.0; dim], vec![dim]),
            beta: params.register(&format!("{name}.beta"), vec![0.0; dim], vec![dim]),
            eps: 1e-5,
        }
    }

    pub fn apply(&self, x: &Value) -> Value {
        let dim = self.gamma.numel();
        assert_eq!(
            x.shape(),
            &[dim],
            "layer_norm: input shape {:?} vs normalized dim {dim}",
            x.shape()
        );
        let n = dim as f64;
        let (std, xhat) = {
            let xv = x.data();
            let mean = xv.iter().sum::<f64>() / n;
            let var = xv.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = (var + self.eps).sqrt();
            let xhat: Vec<f64> = xv.iter().map(|v| (v - mean) / std).collect();
            (std, xhat)
        };
        let y: Vec<f64> = xhat
            .iter()
            .zip(self.gamma.data().iter())
            .zip(self.beta.data().iter())
            .map(|((xh, g), b)| xh * g + b)
            .collect();
        Value::from_op(
            y,
            vec![dim],
            vec![x.clone(), self.gamma.clone(), self.beta.clone()],
            Box::new(move |parents, g| {
                let gv = parents[1].data();
                let dxhat: Vec<f64> = g.iter().zip(gv.iter()).map(|(gi, gam)| gi * gam).collect();
                let m1 = dxhat.iter().sum::<f64>() / n;
                let m2 = dxhat.iter().zip(&xhat).map(|(d, xh)| d * xh).sum::<f64>() / n;
                let dx: Vec<f64> = dxhat
                    .iter()
                    .zip(&xhat)
                    .map(|(d, xh)| (d - m1 - xh * m2) / std)
                    .collect();
                let dgamma: Vec<f64> = g.iter().zip(&xhat).map(|(gi, xh)| gi * xh).collect();
                vec![Some(dx), Some(dgamma), Some(g.to_vec())]
            }),
        )
    }
}

/// Sinusoidal embedding of an integer step index: interleaved
/// `sin(k * w_j), cos(k * w_j)` with geometric frequencies. Constant with
/// respect to the graph.
pub fn sinusoidal_embedding(step: usize, dim: usize) -> Value {
    assert!(dim >= 2 && dim % 2 == 0, "embedding dim must be even and >= 2");
    let half = dim / 2;
    let mut out = Vec::with_capacity(dim);
    for j in 0..half {
        let freq = (10_000f64).powf(-(j as f64) / half as f64);
        let angle = step as f64 * freq;
        out.push(angle.sin());
        out.push(angle.cos());
    }
    Value::vector(out)
}
