use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::params::{Grads, Params};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub const NET_FORMAT: &str = "numkit-v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = pre.tanh();
                1.0 - t * t
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Dot product with four independent accumulators so the loop vectorises.
/// The summation order is fixed, so results stay deterministic.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[2]) + (acc[1] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// One affine layer followed by an elementwise activation.
/// Weights are row-major `n_out x n_in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn init(n_in: usize, n_out: usize, activation: Activation, rng: &mut Rng) -> Self {
        let fan = match activation {
            Activation::Relu => (6.0 / n_in as f64).sqrt(),
            _ => (6.0 / (n_in + n_out) as f64).sqrt(),
        };
        let weight = (0..n_in * n_out)
            .map(|_| rng.random_range(-fan..fan))
            .collect();
        Dense {
            n_in,
            n_out,
            weight,
            bias: vec![0.0; n_out],
            activation,
        }
    }

    pub fn zeros(n_in: usize, n_out: usize, activation: Activation) -> Self {
        Dense {
            n_in,
            n_out,
            weight: vec![0.0; n_in * n_out],
            bias: vec![0.0; n_out],
            activation,
        }
    }

    #[inline]
    pub fn row(&self, o: usize) -> &[f64] {
        &self.weight[o * self.n_in..(o + 1) * self.n_in]
    }

    /// `out = W x + b`.
    pub fn affine(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_in, "dense input dimension mismatch");
        (0..self.n_out).map(|o| self.bias[o] + dot(self.row(o), x)).collect()
    }

    /// [`Dense::affine`] over a batch, accumulated column by column from a
    /// transposed weight copy so the inner loop vectorises. Zero inputs
    /// (inactive ReLU units) are skipped.
    pub fn affine_batch(&self, xs: &[&[f64]]) -> Vec<Vec<f64>> {
        let (ni, no) = (self.n_in, self.n_out);
        let mut wt = vec![0.0; ni * no];
        for o in 0..no {
            for (i, &w) in self.row(o).iter().enumerate() {
                wt[i * no + o] = w;
            }
        }
        xs.iter()
            .map(|x| {
                assert_eq!(x.len(), ni, "dense input dimension mismatch");
                let mut y = self.bias.clone();
                for (&xi, col) in x.iter().zip(wt.chunks_exact(no)) {
                    if xi == 0.0 {
                        continue;
                    }
                    for (yo, &w) in y.iter_mut().zip(col) {
                        *yo += xi * w;
                    }
                }
                y
            })
            .collect()
    }

    pub fn activate(&self, pre: &[f64]) -> Vec<f64> {
        pre.iter().map(|&p| self.activation.apply(p)).collect()
    }

    /// Backpropagate through the activation, given the adjoint of the
    /// activated output. Returns the adjoint of the pre-activation.
    pub fn activation_adjoint(&self, pre: &[f64], adj_out: &[f64]) -> Vec<f64> {
        pre.iter()
            .zip(adj_out)
            .map(|(&p, &a)| a * self.activation.derivative(p))
            .collect()
    }

    /// Accumulate weight/bias gradients for a pre-activation adjoint and
    /// return the input adjoint.
    pub fn affine_backward(
        &self,
        input: &[f64],
        adj_pre: &[f64],
        dw: &mut [f64],
        db: &mut [f64],
    ) -> Vec<f64> {
        let mut dx = vec![0.0; self.n_in];
        for o in 0..self.n_out {
            let a = adj_pre[o];
            if a == 0.0 {
                continue;
            }
            db[o] += a;
            let base = o * self.n_in;
            let r = &self.weight[base..base + self.n_in];
            let g = &mut dw[base..base + self.n_in];
            for ((g, d), (&xi, &wi)) in g.iter_mut().zip(dx.iter_mut()).zip(input.iter().zip(r)) {
                *g += a * xi;
                *d += a * wi;
            }
        }
        dx
    }
}

impl Dense {
    /// Batched [`Dense::affine_backward`]: gradients accumulate over the
    /// batch in order. Input adjoints are only computed when `want_dx`.
    pub fn affine_backward_batch(
        &self,
        inputs: &[Vec<f64>],
        adj_pre: &[Vec<f64>],
        dw: &mut [f64],
        db: &mut [f64],
        want_dx: bool,
    ) -> Vec<Vec<f64>> {
        let mut dx = if want_dx { vec![vec![0.0; self.n_in]; inputs.len()] } else { Vec::new() };
        for o in 0..self.n_out {
            let base = o * self.n_in;
            let r = &self.weight[base..base + self.n_in];
            let g = &mut dw[base..base + self.n_in];
            for (b, (x, adj)) in inputs.iter().zip(adj_pre).enumerate() {
                let a = adj[o];
                if a == 0.0 {
                    continue;
                }
                db[o] += a;
                for (gi, &xi) in g.iter_mut().zip(x) {
                    *gi += a * xi;
                }
                if want_dx {
                    for (d, &wi) in dx[b].iter_mut().zip(r) {
                        *d += a * wi;
                    }
                }
            }
        }
        dx
    }
}

/// Per-hidden-layer dropout masks (already scaled by `1/(1-p)`).
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMasks(pub Vec<Vec<f64>>);

impl DropoutMasks {
    pub fn sample(net: &DenseNet, rate: f64, rng: &mut Rng) -> Self {
        let keep = 1.0 - rate;
        let hidden = net.layers.len().saturating_sub(1);
        DropoutMasks(
            net.layers[..hidden]
                .iter()
                .map(|l| {
                    (0..l.n_out)
                        .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                        .collect()
                })
                .collect(),
        )
    }
}

/// Intermediate values of one forward pass, consumed by
/// [`DenseNet::backward`].
#[derive(Clone, Debug)]
pub struct Tape {
    start: usize,
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Option<Vec<f64>>>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Smallest |pre-activation| over ReLU units; finite-difference checks
    /// are unreliable when this is below the step size.
    pub fn min_relu_margin(&self, net: &DenseNet) -> f64 {
        let mut m = f64::INFINITY;
        for (k, pre) in self.pre.iter().enumerate() {
            if net.layers[self.start + k].activation == Activation::Relu {
                for p in pre {
                    m = m.min(p.abs());
                }
            }
        }
        m
    }
}

/// Intermediate values of a batched forward pass, consumed by
/// [`DenseNet::backward_batch`].
#[derive(Clone, Debug)]
pub struct BatchTape {
    inputs: Vec<Vec<Vec<f64>>>,
    pre: Vec<Vec<Vec<f64>>>,
    masks: Vec<Option<Vec<Vec<f64>>>>,
    outputs: Vec<Vec<f64>>,
}

impl BatchTape {
    pub fn outputs(&self) -> &[Vec<f64>] {
        &self.outputs
    }
}

/// A feed-forward stack of [`Dense`] layers.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseNet {
    pub layers: Vec<Dense>,
}

impl DenseNet {
    /// `sizes = [in, h1, ..., out]`; hidden layers use `hidden`, the last
    /// layer uses `output`.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        assert!(sizes.len() >= 2, "a net needs at least an input and an output size");
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n { output } else { hidden };
                Dense::init(sizes[k], sizes[k + 1], act, rng)
            })
            .collect();
        DenseNet { layers }
    }

    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Format("net has no layers".into()));
        }
        for w in layers.windows(2) {
            if w[0].n_out != w[1].n_in {
                return Err(Error::Format(format!(
                    "layer dimensions do not chain: {} -> {}",
                    w[0].n_out, w[1].n_in
                )));
            }
        }
        for l in &layers {
            if l.weight.len() != l.n_in * l.n_out || l.bias.len() != l.n_out {
                return Err(Error::Format("layer tensor shape mismatch".into()));
            }
        }
        Ok(DenseNet { layers })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].n_in
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(|l| l.n_out).unwrap_or(0)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_from(0, x)
    }

    /// Run layers `start..` on `h`.
    pub fn forward_from(&self, start: usize, h: &[f64]) -> Vec<f64> {
        let mut cur = h.to_vec();
        for l in &self.layers[start..] {
            cur = l.activate(&l.affine(&cur));
        }
        cur
    }

    /// Outputs for a batch of inputs.
    pub fn forward_batch(&self, xs: &[&[f64]]) -> Vec<Vec<f64>> {
        let mut cur: Vec<Vec<f64>> = Vec::new();
        for (k, l) in self.layers.iter().enumerate() {
            let pre = if k == 0 {
                l.affine_batch(xs)
            } else {
                let refs: Vec<&[f64]> = cur.iter().map(|v| v.as_slice()).collect();
                l.affine_batch(&refs)
            };
            cur = pre.iter().map(|p| l.activate(p)).collect();
        }
        cur
    }

    /// Batched [`DenseNet::forward_tape_masked`]; `masks[b]` belongs to
    /// input `b`.
    pub fn forward_batch_tape(&self, xs: &[&[f64]], masks: Option<&[DropoutMasks]>) -> BatchTape {
        let n = self.layers.len();
        let mut tape = BatchTape {
            inputs: Vec::with_capacity(n),
            pre: Vec::with_capacity(n),
            masks: Vec::with_capacity(n),
            outputs: Vec::new(),
        };
        let mut cur: Vec<Vec<f64>> = xs.iter().map(|x| x.to_vec()).collect();
        for (k, l) in self.layers.iter().enumerate() {
            let refs: Vec<&[f64]> = cur.iter().map(|v| v.as_slice()).collect();
            let p = l.affine_batch(&refs);
            let mut a: Vec<Vec<f64>> = p.iter().map(|q| l.activate(q)).collect();
            let mask: Option<Vec<Vec<f64>>> = match masks {
                Some(ms) if k + 1 < n => Some(ms.iter().map(|m| m.0[k].clone()).collect()),
                _ => None,
            };
            if let Some(m) = &mask {
                for (row, mk) in a.iter_mut().zip(m) {
                    for (v, s) in row.iter_mut().zip(mk) {
                        *v *= s;
                    }
                }
            }
            tape.inputs.push(cur);
            tape.pre.push(p);
            tape.masks.push(mask);
            cur = a;
        }
        tape.outputs = cur;
        tape
    }

    /// Reverse pass of a batched tape; accumulates parameter gradients only.
    pub fn backward_batch(&self, tape: &BatchTape, adj_out: &[Vec<f64>], grads: &mut Grads) {
        assert_eq!(tape.inputs.len(), self.layers.len(), "tape does not belong to this net");
        let mut adj: Vec<Vec<f64>> = adj_out.to_vec();
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            if let Some(m) = &tape.masks[k] {
                for (row, mk) in adj.iter_mut().zip(m) {
                    for (a, s) in row.iter_mut().zip(mk) {
                        *a *= s;
                    }
                }
            }
            let adj_pre: Vec<Vec<f64>> = tape.pre[k].iter().zip(&adj).map(|(p, a)| l.activation_adjoint(p, a)).collect();
            let (dw, rest) = grads.0[2 * k..].split_at_mut(1);
            adj = l.affine_backward_batch(&tape.inputs[k], &adj_pre, &mut dw[0], &mut rest[0], k > 0);
        }
    }

    pub fn forward_tape(&self, x: &[f64]) -> Tape {
        self.forward_tape_from(0, x, None)
    }

    pub fn forward_tape_masked(&self, x: &[f64], masks: Option<&DropoutMasks>) -> Tape {
        self.forward_tape_from(0, x, masks)
    }

    /// Forward with caching, starting at layer `start`. Dropout masks, when
    /// given, are indexed by absolute hidden-layer position.
    pub fn forward_tape_from(&self, start: usize, x: &[f64], masks: Option<&DropoutMasks>) -> Tape {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n - start);
        let mut pre = Vec::with_capacity(n - start);
        let mut tape_masks = Vec::with_capacity(n - start);
        let mut cur = x.to_vec();
        for (k, l) in self.layers.iter().enumerate().skip(start) {
            let p = l.affine(&cur);
            let mut a = l.activate(&p);
            let mask = masks.and_then(|m| m.0.get(k)).filter(|_| k + 1 < n).cloned();
            if let Some(m) = &mask {
                for (v, s) in a.iter_mut().zip(m) {
                    *v *= s;
                }
            }
            inputs.push(cur);
            pre.push(p);
            tape_masks.push(mask);
            cur = a;
        }
        Tape {
            start,
            inputs,
            pre,
            masks: tape_masks,
            output: cur,
        }
    }

    /// Reverse pass. Accumulates parameter gradients into `grads` (which
    /// must have this net's shapes) and returns the adjoint of the tape's
    /// input.
    pub fn backward(&self, tape: &Tape, adj_out: &[f64], grads: &mut Grads) -> Vec<f64> {
        assert_eq!(
            tape.inputs.len(),
            self.layers.len() - tape.start,
            "tape does not belong to this net"
        );
        assert_eq!(adj_out.len(), self.out_dim(), "output adjoint dimension mismatch");
        let mut adj = adj_out.to_vec();
        for k in (tape.start..self.layers.len()).rev() {
            let t = k - tape.start;
            let l = &self.layers[k];
            if let Some(m) = &tape.masks[t] {
                for (a, s) in adj.iter_mut().zip(m) {
                    *a *= s;
                }
            }
            let adj_pre = l.activation_adjoint(&tape.pre[t], &adj);
            let (dw, rest) = grads.0[2 * k..].split_at_mut(1);
            adj = l.affine_backward(&tape.inputs[t], &adj_pre, &mut dw[0], &mut rest[0]);
        }
        adj
    }

    pub fn to_record(&self) -> NetRecord {
        NetRecord {
            format: NET_FORMAT.to_string(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerRecord {
                    n_in: l.n_in,
                    n_out: l.n_out,
                    activation: l.activation,
                    weight: l.weight.clone(),
                    bias: l.bias.clone(),
                })
                .collect(),
        }
    }

    pub fn from_record(rec: &NetRecord) -> Result<Self> {
        if rec.format != NET_FORMAT {
            return Err(Error::Format(format!(
                "expected net format {NET_FORMAT}, found {}",
                rec.format
            )));
        }
        let layers = rec
            .layers
            .iter()
            .map(|l| Dense {
                n_in: l.n_in,
                n_out: l.n_out,
                weight: l.weight.clone(),
                bias: l.bias.clone(),
                activation: l.activation,
            })
            .collect();
        let net = DenseNet::from_layers(layers)?;
        if !net.all_finite() {
            return Err(Error::Format("net record contains non-finite parameters".into()));
        }
        Ok(net)
    }
}

impl Params for DenseNet {
    fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.as_slice(), l.bias.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }
}

/// Serialized form of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub n_in: usize,
    pub n_out: usize,
    pub activation: Activation,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Serialized net, tagged with [`NET_FORMAT`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub format: String,
    pub layers: Vec<LayerRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn identity_net() -> DenseNet {
        let mut l = Dense::zeros(2, 2, Activation::Identity);
        l.weight = vec![1.0, 0.0, 0.0, 1.0];
        DenseNet { layers: vec![l] }
    }

    #[test]
    fn identity_layer_passes_input_through() {
        assert_eq!(identity_net().forward(&[1.0, 2.0]), vec![1.0, 2.0]);
    }

    #[test]
    fn zero_weights_return_bias() {
        let mut l = Dense::zeros(3, 1, Activation::Identity);
        l.bias = vec![0.5];
        let net = DenseNet { layers: vec![l] };
        assert_eq!(net.forward(&[3.0, -1.0, 7.0]), vec![0.5]);
    }

    /// Straight-line re-evaluation with explicit loops over the raw records.
    fn reference_eval(rec: &NetRecord, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in &rec.layers {
            let mut next = Vec::new();
            for o in 0..l.n_out {
                let mut s = l.bias[o];
                for i in 0..l.n_in {
                    s += l.weight[o * l.n_in + i] * h[i];
                }
                next.push(match l.activation {
                    Activation::Relu => {
                        if s > 0.0 {
                            s
                        } else {
                            0.0
                        }
                    }
                    Activation::Tanh => s.tanh(),
                    Activation::Identity => s,
                });
            }
            h = next;
        }
        h
    }

    #[test]
    fn random_two_layer_net_matches_reference_evaluator() {
        let mut rng = stream(3, &[]);
        let net = DenseNet::new(&[2, 5, 3], Activation::Tanh, Activation::Identity, &mut rng);
        let x = [0.1, 0.2];
        let a = net.forward(&x);
        let b = reference_eval(&net.to_record(), &x);
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-15);
        }
    }

    #[test]
    fn linear_net_at_optimum_has_zero_gradient() {
        let net = identity_net();
        let tape = net.forward_tape(&[1.0, 2.0]);
        // squared loss with target == output -> adjoint 0
        let adj: Vec<f64> = tape.output().iter().map(|o| 2.0 * (o - o)).collect();
        let mut g = net.zero_grads();
        net.backward(&tape, &adj, &mut g);
        assert!(g.is_zero());
    }

    #[test]
    fn scalar_weight_gradient_is_input() {
        let mut l = Dense::zeros(1, 1, Activation::Identity);
        l.weight = vec![0.7];
        let net = DenseNet { layers: vec![l] };
        let tape = net.forward_tape(&[2.0]);
        let mut g = net.zero_grads();
        let dx = net.backward(&tape, &[1.0], &mut g);
        assert_eq!(g.0[0], vec![2.0]);
        assert_eq!(g.0[1], vec![1.0]);
        assert_eq!(dx, vec![0.7]);
    }

    #[test]
    fn backward_matches_central_differences() {
        for seed in 0..20 {
            let mut rng = stream(seed, &[11]);
            let net = DenseNet::new(&[4, 6, 5, 3], Activation::Tanh, Activation::Identity, &mut rng);
            let x: Vec<f64> = (0..4).map(|i| (i as f64 * 0.37 + seed as f64 * 0.11).sin()).collect();
            let w: Vec<f64> = vec![0.3, -1.2, 0.8];
            let loss = |n: &DenseNet, x: &[f64]| -> f64 {
                n.forward(x).iter().zip(&w).map(|(o, c)| c * o * o).sum()
            };
            let tape = net.forward_tape(&x);
            let adj: Vec<f64> = tape.output().iter().zip(&w).map(|(o, c)| 2.0 * c * o).collect();
            let mut g = net.zero_grads();
            let dx = net.backward(&tape, &adj, &mut g);
            let h = 1e-5;
            let flat = net.flat();
            let analytic = g.flat();
            for i in 0..flat.len() {
                let mut p = net.clone();
                let mut v = flat.clone();
                v[i] += h;
                p.set_flat(&v);
                let up = loss(&p, &x);
                v[i] -= 2.0 * h;
                p.set_flat(&v);
                let dn = loss(&p, &x);
                let num = (up - dn) / (2.0 * h);
                let rel = (num - analytic[i]).abs() / num.abs().max(analytic[i].abs()).max(1e-6);
                assert!(rel < 1e-4, "param {i}: {num} vs {}", analytic[i]);
            }
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += h;
                let up = loss(&net, &xp);
                xp[i] -= 2.0 * h;
                let dn = loss(&net, &xp);
                let num = (up - dn) / (2.0 * h);
                assert!((num - dx[i]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn record_round_trip() {
        let mut rng = stream(5, &[]);
        let net = DenseNet::new(&[3, 4, 2], Activation::Relu, Activation::Identity, &mut rng);
        let json = serde_json::to_string(&net.to_record()).unwrap();
        let back = DenseNet::from_record(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn record_rejects_wrong_format_tag() {
        let mut rec = identity_net().to_record();
        rec.format = "numkit-v0".into();
        assert!(DenseNet::from_record(&rec).is_err());
    }
}
