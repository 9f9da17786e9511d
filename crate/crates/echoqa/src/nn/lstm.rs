//! Single-layer LSTM over a fixed-length sequence.
//!
//! Gate order is (input, forget, cell, output). Per step, for input `x_t`
//! and previous state `(h, c)`:
//!
//! ```text
//! i = sigmoid(x.Wi^T + h.Ui^T + bi)      f = sigmoid(x.Wf^T + h.Uf^T + bf)
//! g = tanh   (x.Wg^T + h.Ug^T + bg)      o = sigmoid(x.Wo^T + h.Uo^T + bo)
//! c' = f * c + i * g                     h' = o * tanh(c')
//! ```
//!
//! The initial state is zero and the forward pass returns the final hidden
//! state. Weights are drawn from `N(0, 1/fan_in)`; the forget-gate bias is
//! initialized to 1, all other biases to 0.

use crate::error::{Error, Result};
use crate::nn::activation::sigmoid_forward;
use crate::nn::linalg::{acc_outer_t, addmm_nn, addmm_nt};
use crate::rng::SeededRng;
use crate::tensor::{Scalar, Tensor};

pub const GATES: usize = 4;
const GATE_INPUT: usize = 0;
const GATE_FORGET: usize = 1;
const GATE_CELL: usize = 2;
const GATE_OUTPUT: usize = 3;

#[derive(Debug, Clone)]
pub struct Lstm<S: Scalar = f32> {
    /// Input weights per gate, each `[hidden, input]`.
    pub w: [Tensor<S>; GATES],
    /// Recurrent weights per gate, each `[hidden, hidden]`.
    pub u: [Tensor<S>; GATES],
    /// Biases per gate, each `[hidden]`.
    pub b: [Tensor<S>; GATES],
}

#[derive(Debug)]
pub struct LstmGrads<S: Scalar = f32> {
    pub w: [Tensor<S>; GATES],
    pub u: [Tensor<S>; GATES],
    pub b: [Tensor<S>; GATES],
}

/// Per-step activations kept for backpropagation through time.
#[derive(Debug)]
pub struct LstmCache<S: Scalar = f32> {
    inputs: Vec<Tensor<S>>,
    /// h_0 .. h_T (h_0 is the zero state)
    hidden: Vec<Tensor<S>>,
    /// c_0 .. c_T
    cell: Vec<Tensor<S>>,
    /// per step: gate activations [i, f, g, o]
    gates: Vec<[Tensor<S>; GATES]>,
    /// per step: tanh(c_t)
    cell_tanh: Vec<Tensor<S>>,
}

impl<S: Scalar> Lstm<S> {
    pub fn new(input: usize, hidden: usize, rng: &mut SeededRng) -> Self {
        let w_scale = 1.0 / (input as f64).sqrt();
        let u_scale = 1.0 / (hidden as f64).sqrt();
        let mut make = |rows: usize, cols: usize, scale: f64| {
            Tensor::randn(&[rows, cols], rng, 0.0, scale).expect("valid shape")
        };
        let w = [
            make(hidden, input, w_scale),
            make(hidden, input, w_scale),
            make(hidden, input, w_scale),
            make(hidden, input, w_scale),
        ];
        let u = [
            make(hidden, hidden, u_scale),
            make(hidden, hidden, u_scale),
            make(hidden, hidden, u_scale),
            make(hidden, hidden, u_scale),
        ];
        let mut b: [Tensor<S>; GATES] = std::array::from_fn(|_| {
            Tensor::zeros(&[hidden]).expect("valid shape")
        });
        b[GATE_FORGET].fill(S::ONE);
        Self { w, u, b }
    }

    pub fn input_size(&self) -> usize {
        self.w[0].shape()[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.w[0].shape()[0]
    }

    fn gate_preact(
        &self,
        gate: usize,
        x: &Tensor<S>,
        h: &Tensor<S>,
        parallel: bool,
    ) -> Tensor<S> {
        let batch = x.shape()[0];
        let hidden = self.hidden_size();
        let mut z = vec![S::ZERO; batch * hidden];
        for row in z.chunks_exact_mut(hidden) {
            row.copy_from_slice(self.b[gate].data());
        }
        addmm_nt(
            &mut z,
            x.data(),
            self.w[gate].data(),
            batch,
            self.input_size(),
            hidden,
            parallel,
        );
        addmm_nt(
            &mut z,
            h.data(),
            self.u[gate].data(),
            batch,
            hidden,
            hidden,
            parallel,
        );
        Tensor::from_vec(&[batch, hidden], z).expect("valid shape")
    }

    /// Runs the recurrence over `sequence` (T tensors of `[batch, input]`)
    /// from zero initial state and returns `(h_T, cache)`.
    pub fn forward(
        &self,
        sequence: Vec<Tensor<S>>,
        parallel: bool,
    ) -> Result<(Tensor<S>, LstmCache<S>)> {
        if sequence.is_empty() {
            return Err(Error::Shape("lstm requires a non-empty sequence".into()));
        }
        let batch = sequence[0].shape()[0];
        let hidden = self.hidden_size();
        for x in &sequence {
            if x.rank() != 2 || x.shape()[0] != batch || x.shape()[1] != self.input_size() {
                return Err(Error::Shape(format!(
                    "lstm step input must be [{batch}, {}], got {:?}",
                    self.input_size(),
                    x.shape()
                )));
            }
        }
        let zero = Tensor::<S>::zeros(&[batch, hidden])?;
        let mut hidden_states = vec![zero.clone()];
        let mut cell_states = vec![zero];
        let mut gates = Vec::with_capacity(sequence.len());
        let mut cell_tanh = Vec::with_capacity(sequence.len());
        for x in &sequence {
            let h_prev = hidden_states.last().expect("non-empty");
            let c_prev = cell_states.last().expect("non-empty");
            let i = sigmoid_forward(&self.gate_preact(GATE_INPUT, x, h_prev, parallel));
            let f = sigmoid_forward(&self.gate_preact(GATE_FORGET, x, h_prev, parallel));
            let g = self.gate_preact(GATE_CELL, x, h_prev, parallel).map(S::tanh);
            let o = sigmoid_forward(&self.gate_preact(GATE_OUTPUT, x, h_prev, parallel));
            let c = f.mul(c_prev)?.add(&i.mul(&g)?)?;
            let ct = c.map(S::tanh);
            let h = o.mul(&ct)?;
            gates.push([i, f, g, o]);
            cell_tanh.push(ct);
            hidden_states.push(h);
            cell_states.push(c);
        }
        let h_final = hidden_states.last().expect("non-empty").clone();
        Ok((
            h_final,
            LstmCache {
                inputs: sequence,
                hidden: hidden_states,
                cell: cell_states,
                gates,
                cell_tanh,
            },
        ))
    }

    /// Backpropagation through time given the gradient at the final hidden
    /// state. Returns per-step input gradients and parameter gradients.
    pub fn backward(
        &self,
        cache: &LstmCache<S>,
        dh_final: &Tensor<S>,
        parallel: bool,
    ) -> Result<(Vec<Tensor<S>>, LstmGrads<S>)> {
        let steps = cache.inputs.len();
        let batch = cache.inputs[0].shape()[0];
        let (hidden, input) = (self.hidden_size(), self.input_size());
        if dh_final.shape() != [batch, hidden] {
            return Err(Error::Shape(format!(
                "lstm upstream must be [{batch}, {hidden}], got {:?}",
                dh_final.shape()
            )));
        }
        let mut grads = LstmGrads {
            w: std::array::from_fn(|g| Tensor::zeros(self.w[g].shape()).expect("shape")),
            u: std::array::from_fn(|g| Tensor::zeros(self.u[g].shape()).expect("shape")),
            b: std::array::from_fn(|g| Tensor::zeros(self.b[g].shape()).expect("shape")),
        };
        let mut dinputs = vec![Tensor::<S>::zeros(&[batch, input])?; steps];
        let mut dh = dh_final.clone();
        let mut dc = Tensor::<S>::zeros(&[batch, hidden])?;
        let one = S::ONE;
        for t in (0..steps).rev() {
            let [i, f, g, o] = &cache.gates[t];
            let ct = &cache.cell_tanh[t];
            let c_prev = &cache.cell[t];
            let h_prev = &cache.hidden[t];
            let x = &cache.inputs[t];

            // dc accumulates the path through h' = o * tanh(c').
            let dct = dh.mul(o)?;
            for (slot, (&tc, &dv)) in dc.data_mut().iter_mut().zip(ct.data().iter().zip(dct.data()))
            {
                *slot += dv * (one - tc * tc);
            }
            let di = dc.mul(g)?;
            let dg = dc.mul(i)?;
            let df = dc.mul(c_prev)?;
            let do_ = dh.mul(ct)?;
            let dc_prev = dc.mul(f)?;

            // Pre-activation gradients.
            let dzi = sigmoid_gate_back(&di, i);
            let dzf = sigmoid_gate_back(&df, f);
            let dzo = sigmoid_gate_back(&do_, o);
            let mut dzg = dg;
            for (slot, &gv) in dzg.data_mut().iter_mut().zip(g.data()) {
                *slot *= one - gv * gv;
            }
            let dz = [&dzi, &dzf, &dzg, &dzo];

            let mut dh_prev = Tensor::<S>::zeros(&[batch, hidden])?;
            for gate in 0..GATES {
                acc_outer_t(
                    grads.w[gate].data_mut(),
                    dz[gate].data(),
                    x.data(),
                    batch,
                    hidden,
                    input,
                    parallel,
                );
                acc_outer_t(
                    grads.u[gate].data_mut(),
                    dz[gate].data(),
                    h_prev.data(),
                    batch,
                    hidden,
                    hidden,
                    parallel,
                );
                let db = grads.b[gate].data_mut();
                for row in dz[gate].data().chunks_exact(hidden) {
                    for (slot, &v) in db.iter_mut().zip(row) {
                        *slot += v;
                    }
                }
                addmm_nn(
                    dinputs[t].data_mut(),
                    dz[gate].data(),
                    self.w[gate].data(),
                    batch,
                    hidden,
                    input,
                    parallel,
                );
                addmm_nn(
                    dh_prev.data_mut(),
                    dz[gate].data(),
                    self.u[gate].data(),
                    batch,
                    hidden,
                    hidden,
                    parallel,
                );
            }
            dh = dh_prev;
            dc = dc_prev;
        }
        Ok((dinputs, grads))
    }
}

fn sigmoid_gate_back<S: Scalar>(upstream: &Tensor<S>, activated: &Tensor<S>) -> Tensor<S> {
    let data = upstream
        .data()
        .iter()
        .zip(activated.data())
        .map(|(&u, &a)| u * a * (S::ONE - a))
        .collect();
    Tensor::from_vec(upstream.shape(), data).expect("matching shapes")
}
