//! Value-network approximator.
//!
//! A fixed-shape fully connected network (3 hidden layers of 64 units)
//! with a selectable activation, an input normalizer to `[-1, 1]`, exact
//! input gradients by reverse accumulation, and exact parameter gradients
//! of losses that themselves contain input gradients.
//!
//! The second-order primitive is [`Mlp::vjp_accumulate`]: given adjoints
//! `d_value` and `d_gradient` of a scalar loss with respect to the
//! network output and its input gradient, it accumulates the parameter
//! gradient of `d_value * net(x) + d_gradient . grad_x net(x)`. The
//! directional derivative is propagated forward alongside the
//! activations, and one reverse pass over the augmented computation
//! yields the parameter gradient, with activation second derivatives
//! entering on the tangent path.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::{JointState, Player, TypeConfig};

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sin,
}

impl Activation {
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Sin => z.sin(),
        }
    }

    /// First derivative. For relu the kink takes the zero subgradient.
    pub fn d1(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sin => z.cos(),
        }
    }

    /// Second derivative. For relu this is zero everywhere by convention,
    /// which keeps residual training formally executable.
    pub fn d2(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            Activation::Relu => 0.0,
            Activation::Sin => -z.sin(),
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Sin => "sin",
        }
    }

    pub fn parse(s: &str) -> Option<Activation> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            "sin" => Some(Activation::Sin),
            _ => None,
        }
    }
}

/// Per-coordinate affine map from physical units to `[-1, 1]`.
///
/// The ranges are declared up front (from the sampling domain and the
/// horizon), never fitted to data batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Normalizer {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() {
            return Err(Error::InvalidInput("normalizer ranges must be nonempty and aligned".into()));
        }
        for (l, h) in lo.iter().zip(&hi) {
            if !(l < h) {
                return Err(Error::InvalidInput(format!("normalizer range [{l}, {h}] is empty")));
            }
        }
        Ok(Self { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// d(normalized)/d(physical) for one coordinate.
    pub fn scale(&self, j: usize) -> f64 {
        2.0 / (self.hi[j] - self.lo[j])
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..self.dim() {
            let mid = 0.5 * (self.lo[j] + self.hi[j]);
            out[j] = (x[j] - mid) * self.scale(j);
        }
    }
}

/// One dense layer, row-major `(out_dim, in_dim)` weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Layer {
    fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let mut acc = 0.0;
            for (wi, xi) in row.iter().zip(x.iter()) {
                acc = wi.mul_add(*xi, acc);
            }
            out[o] = acc;
        }
    }

    fn matvec_bias(&self, x: &[f64], out: &mut [f64]) {
        self.matvec(x, out);
        for (o, b) in out.iter_mut().zip(&self.b) {
            *o += b;
        }
    }

    /// `out = W^T p`.
    fn matvec_transpose(&self, p: &[f64], out: &mut [f64]) {
        debug_assert_eq!(p.len(), self.out_dim);
        debug_assert_eq!(out.len(), self.in_dim);
        out.fill(0.0);
        for o in 0..self.out_dim {
            let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
            let po = p[o];
            if po == 0.0 {
                continue;
            }
            for (acc, wi) in out.iter_mut().zip(row.iter()) {
                *acc = po.mul_add(*wi, *acc);
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Value and exact input gradient (chain rule through the normalizer
/// applied, so the gradient is in physical units).
#[derive(Debug, Clone, PartialEq)]
pub struct NetOutput {
    pub value: f64,
    pub gradient: Vec<f64>,
}

/// Parameter gradients, shaped like the network layers.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            w: mlp.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: mlp.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        for w in &mut self.w {
            w.fill(0.0);
        }
        for b in &mut self.b {
            b.fill(0.0);
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        for w in &mut self.w {
            for x in w.iter_mut() {
                *x *= c;
            }
        }
        for b in &mut self.b {
            for x in b.iter_mut() {
                *x *= c;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for w in &self.w {
            for x in w {
                m = m.max(x.abs());
            }
        }
        for b in &self.b {
            for x in b {
                m = m.max(x.abs());
            }
        }
        m
    }
}

/// Reusable evaluation buffers. One per thread; never shared.
#[derive(Debug, Clone)]
pub struct Workspace {
    a: Vec<Vec<f64>>,
    z: Vec<Vec<f64>>,
    at: Vec<Vec<f64>>,
    zt: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    ut: Vec<Vec<f64>>,
}

/// Fully connected network with normalizer. Hidden layers share one
/// activation; the output layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
    pub normalizer: Normalizer,
}

/// Frequency scale of the sinusoidal first layer.
pub const SIN_OMEGA0: f64 = 30.0;

impl Mlp {
    /// Fresh network with the standard shape: `input_dim` inputs, three
    /// hidden layers of `hidden` units, scalar output.
    ///
    /// tanh/relu layers draw from the fan-in uniform range
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`. sin networks use
    /// sinusoidal-representation initialization: first layer uniform in
    /// `[-1/fan_in, 1/fan_in]` scaled by omega0, later layers uniform in
    /// `[-sqrt(6/fan_in)/omega0, sqrt(6/fan_in)/omega0]`.
    pub fn new<R: Rng>(
        input_dim: usize,
        hidden: usize,
        hidden_layers: usize,
        activation: Activation,
        normalizer: Normalizer,
        rng: &mut R,
    ) -> Result<Self> {
        if normalizer.dim() != input_dim {
            return Err(Error::InvalidInput(format!(
                "normalizer dim {} does not match input dim {input_dim}",
                normalizer.dim()
            )));
        }
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat(hidden).take(hidden_layers));
        dims.push(1);

        let mut layers = Vec::with_capacity(dims.len() - 1);
        for k in 0..dims.len() - 1 {
            let (in_dim, out_dim) = (dims[k], dims[k + 1]);
            let fan_in = in_dim as f64;
            let (bound, scale) = match activation {
                Activation::Sin if k == 0 => (1.0 / fan_in, SIN_OMEGA0),
                Activation::Sin => ((6.0 / fan_in).sqrt() / SIN_OMEGA0, 1.0),
                _ => (1.0 / fan_in.sqrt(), 1.0),
            };
            let mut draw = || rng.gen_range(-bound..bound) * scale;
            let w = (0..in_dim * out_dim).map(|_| draw()).collect();
            let b = (0..out_dim).map(|_| draw()).collect();
            layers.push(Layer { w, b, in_dim, out_dim });
        }
        Ok(Self { layers, activation, normalizer })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn workspace(&self) -> Workspace {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        let per_node: Vec<Vec<f64>> = dims.iter().map(|&d| vec![0.0; d]).collect();
        let per_layer: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.out_dim]).collect();
        Workspace {
            a: per_node.clone(),
            z: per_layer.clone(),
            at: per_node.clone(),
            zt: per_layer,
            u: per_node.clone(),
            ut: per_node,
        }
    }

    fn forward_inner(&self, x: &[f64], ws: &mut Workspace) {
        let n = self.layers.len();
        self.normalizer.normalize_into(x, &mut ws.a[0]);
        for k in 0..n {
            let (head, tail) = ws.a.split_at_mut(k + 1);
            self.layers[k].matvec_bias(&head[k], &mut ws.z[k]);
            let out = &mut tail[0];
            if k < n - 1 {
                for (o, z) in out.iter_mut().zip(&ws.z[k]) {
                    *o = self.activation.apply(*z);
                }
            } else {
                out.copy_from_slice(&ws.z[k]);
            }
        }
    }

    /// Network value at a physical-unit input.
    pub fn forward(&self, x: &[f64], ws: &mut Workspace) -> f64 {
        self.forward_inner(x, ws);
        ws.a[self.layers.len()][0]
    }

    /// Value and exact input gradient by reverse accumulation.
    pub fn forward_grad(&self, x: &[f64], ws: &mut Workspace) -> NetOutput {
        self.forward_inner(x, ws);
        let n = self.layers.len();
        ws.u[n][0] = 1.0;
        for k in (0..n).rev() {
            if k < n - 1 {
                // Overwrite the adjoint in place with d/dz.
                for (uo, z) in ws.u[k + 1].iter_mut().zip(&ws.z[k]) {
                    *uo *= self.activation.d1(*z);
                }
            }
            let (head, tail) = ws.u.split_at_mut(k + 1);
            self.layers[k].matvec_transpose(&tail[0], &mut head[k]);
        }
        let gradient = (0..self.input_dim())
            .map(|j| ws.u[0][j] * self.normalizer.scale(j))
            .collect();
        NetOutput { value: ws.a[n][0], gradient }
    }

    /// Accumulates into `grads` the parameter gradient of
    /// `d_value * net(x) + d_gradient . grad_x net(x)`, the adjoint form
    /// every loss in this crate reduces to. `d_gradient` is in physical
    /// units.
    pub fn vjp_accumulate(
        &self,
        x: &[f64],
        d_value: f64,
        d_gradient: &[f64],
        ws: &mut Workspace,
        grads: &mut MlpGrads,
    ) {
        debug_assert_eq!(d_gradient.len(), self.input_dim());
        let n = self.layers.len();

        // Forward pass with the directional tangent alongside.
        self.normalizer.normalize_into(x, &mut ws.a[0]);
        for j in 0..self.input_dim() {
            ws.at[0][j] = d_gradient[j] * self.normalizer.scale(j);
        }
        for k in 0..n {
            {
                let (head, _) = ws.a.split_at_mut(k + 1);
                self.layers[k].matvec_bias(&head[k], &mut ws.z[k]);
            }
            {
                let (head, _) = ws.at.split_at_mut(k + 1);
                self.layers[k].matvec(&head[k], &mut ws.zt[k]);
            }
            let hidden = k < n - 1;
            let (_, a_tail) = ws.a.split_at_mut(k + 1);
            let (_, at_tail) = ws.at.split_at_mut(k + 1);
            for o in 0..self.layers[k].out_dim {
                let z = ws.z[k][o];
                if hidden {
                    a_tail[0][o] = self.activation.apply(z);
                    at_tail[0][o] = self.activation.d1(z) * ws.zt[k][o];
                } else {
                    a_tail[0][o] = z;
                    at_tail[0][o] = ws.zt[k][o];
                }
            }
        }

        // Reverse pass over the augmented computation. p = dS/dz,
        // q = dS/d(zt); both overwrite the adjoint slots in place.
        ws.u[n][0] = d_value;
        ws.ut[n][0] = 1.0;
        for k in (0..n).rev() {
            let hidden = k < n - 1;
            if hidden {
                for o in 0..self.layers[k].out_dim {
                    let z = ws.z[k][o];
                    let d1 = self.activation.d1(z);
                    let d2 = self.activation.d2(z);
                    let p = ws.u[k + 1][o] * d1 + ws.ut[k + 1][o] * d2 * ws.zt[k][o];
                    let q = ws.ut[k + 1][o] * d1;
                    ws.u[k + 1][o] = p;
                    ws.ut[k + 1][o] = q;
                }
            }
            let layer = &self.layers[k];
            let p = &ws.u[k + 1];
            let q = &ws.ut[k + 1];
            let gw = &mut grads.w[k];
            for o in 0..layer.out_dim {
                let row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                let (po, qo) = (p[o], q[o]);
                for (g, (ai, ati)) in row.iter_mut().zip(ws.a[k].iter().zip(&ws.at[k])) {
                    *g += po * ai + qo * ati;
                }
                grads.b[k][o] += po;
            }
            {
                let (head, tail) = ws.u.split_at_mut(k + 1);
                layer.matvec_transpose(&tail[0], &mut head[k]);
            }
            {
                let (head, tail) = ws.ut.split_at_mut(k + 1);
                layer.matvec_transpose(&tail[0], &mut head[k]);
            }
        }
    }

    /// Flat views over all parameters, layer by layer (weights then
    /// biases), for optimizers and finite-difference checks.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for layer in &mut self.layers {
            out.push(layer.w.as_mut_slice());
            out.push(layer.b.as_mut_slice());
        }
        out
    }
}

/// Normalizer over the five intersection coordinates
/// `(d1, v1, d2, v2, t)` built from a per-player `(d, v)` domain and the
/// horizon.
pub fn intersection_normalizer(d: (f64, f64), v: (f64, f64), horizon: f64) -> Normalizer {
    Normalizer::new(
        vec![d.0, v.0, d.0, v.0, 0.0],
        vec![d.1, v.1, d.1, v.1, horizon],
    )
    .expect("valid intersection ranges")
}

/// One player's value network for one type configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueNet {
    pub mlp: Mlp,
    pub player: Player,
    pub config: TypeConfig,
}

impl ValueNet {
    pub fn eval(&self, s: &JointState, ws: &mut Workspace) -> NetOutput {
        self.mlp.forward_grad(&s.as_array(), ws)
    }
}

/// Serialized network plus free-form training metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub net: ValueNet,
    pub meta: std::collections::BTreeMap<String, String>,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let body = serde_json::to_string(self)
            .map_err(|e| Error::InvalidInput(format!("checkpoint serialization: {e}")))?;
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)?;
        serde_json::from_str(&body)
            .map_err(|e| Error::Config(format!("checkpoint {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use approx::assert_relative_eq;

    fn unit_normalizer(dim: usize) -> Normalizer {
        Normalizer::new(vec![-1.0; dim], vec![1.0; dim]).unwrap()
    }

    fn test_net(activation: Activation, seed: u64) -> Mlp {
        let mut rng = stream(seed, "net-test");
        Mlp::new(5, 16, 3, activation, unit_normalizer(5), &mut rng).unwrap()
    }

    #[test]
    fn zero_weight_net_outputs_bias_with_zero_gradient() {
        let mut net = test_net(Activation::Tanh, 0);
        for layer in &mut net.layers {
            layer.w.fill(0.0);
            layer.b.fill(0.0);
        }
        let last = net.layers.last_mut().unwrap();
        last.b[0] = 0.37;
        let mut ws = net.workspace();
        let out = net.forward_grad(&[0.1, -0.2, 0.3, 0.4, -0.5], &mut ws);
        assert_eq!(out.value, 0.37);
        assert!(out.gradient.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn domain_midpoint_normalizes_to_zero() {
        let norm = Normalizer::new(vec![15.0, 18.0], vec![105.0, 25.0]).unwrap();
        let mut out = vec![0.0; 2];
        norm.normalize_into(&[60.0, 21.5], &mut out);
        assert_relative_eq!(out[0], 0.0, epsilon = 1e-15);
        assert_relative_eq!(out[1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn input_gradient_matches_finite_differences_tanh() {
        let net = test_net(Activation::Tanh, 3);
        let mut ws = net.workspace();
        let x = [0.31, -0.44, 0.12, 0.77, -0.05];
        let out = net.forward_grad(&x, &mut ws);
        let h = 1e-4;
        for j in 0..5 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fd = (net.forward(&xp, &mut ws) - net.forward(&xm, &mut ws)) / (2.0 * h);
            assert_relative_eq!(out.gradient[j], fd, max_relative = 1e-4, epsilon = 1e-10);
        }
    }

    /// Finite-difference check of the vjp against the loss
    /// `d_value * net + d_gradient . grad net` it claims to
    /// differentiate.
    fn check_vjp(activation: Activation, d_value: f64, d_gradient: [f64; 5], tol: f64) {
        let mut net = test_net(activation, 11);
        let x = [0.21, -0.33, 0.49, -0.08, 0.6];
        let mut ws = net.workspace();
        let mut grads = MlpGrads::zeros_like(&net);
        net.vjp_accumulate(&x, d_value, &d_gradient, &mut ws, &mut grads);

        let loss = |net: &Mlp, ws: &mut Workspace| {
            let out = net.forward_grad(&x, ws);
            d_value * out.value
                + d_gradient.iter().zip(&out.gradient).map(|(a, g)| a * g).sum::<f64>()
        };
        let h = 1e-5;
        let check = |analytic: f64, li: usize, wi: Option<usize>, bi: Option<usize>, net: &mut Mlp, ws: &mut Workspace| {
            let read = |net: &Mlp| match (wi, bi) {
                (Some(i), _) => net.layers[li].w[i],
                (_, Some(i)) => net.layers[li].b[i],
                _ => unreachable!(),
            };
            let write = |net: &mut Mlp, v: f64| match (wi, bi) {
                (Some(i), _) => net.layers[li].w[i] = v,
                (_, Some(i)) => net.layers[li].b[i] = v,
                _ => unreachable!(),
            };
            let orig = read(net);
            write(net, orig + h);
            let lp = loss(net, ws);
            write(net, orig - h);
            let lm = loss(net, ws);
            write(net, orig);
            let fd = (lp - lm) / (2.0 * h);
            let denom = analytic.abs().max(fd.abs()).max(1e-6);
            assert!(
                (analytic - fd).abs() / denom < tol,
                "layer {li} w={wi:?} b={bi:?}: analytic {analytic} fd {fd}"
            );
        };
        // Spot-check a spread of parameters in every layer.
        for li in 0..net.layers.len() {
            let wlen = net.layers[li].w.len();
            for wi in [0, wlen / 3, wlen - 1] {
                let analytic = grads.w[li][wi];
                check(analytic, li, Some(wi), None, &mut net, &mut ws);
            }
            let blen = net.layers[li].b.len();
            for bi in [0, blen - 1] {
                let analytic = grads.b[li][bi];
                check(analytic, li, None, Some(bi), &mut net, &mut ws);
            }
        }
    }

    #[test]
    fn vjp_value_path_matches_finite_differences() {
        check_vjp(Activation::Tanh, 1.0, [0.0; 5], 1e-6);
        check_vjp(Activation::Sin, -0.7, [0.0; 5], 1e-6);
    }

    #[test]
    fn vjp_gradient_path_matches_finite_differences() {
        check_vjp(Activation::Tanh, 0.0, [0.4, -0.2, 0.9, 0.1, -0.6], 1e-5);
        check_vjp(Activation::Sin, 0.0, [1.0, 0.0, -0.5, 0.2, 0.3], 1e-5);
        check_vjp(Activation::Tanh, 0.8, [0.4, -0.2, 0.9, 0.1, -0.6], 1e-5);
    }

    #[test]
    fn vjp_of_zero_adjoints_is_zero() {
        let net = test_net(Activation::Tanh, 5);
        let mut ws = net.workspace();
        let mut grads = MlpGrads::zeros_like(&net);
        net.vjp_accumulate(&[0.1, 0.2, 0.3, 0.4, 0.5], 0.0, &[0.0; 5], &mut ws, &mut grads);
        assert_eq!(grads.max_abs(), 0.0);
    }

    #[test]
    fn normalization_invariant_to_joint_unit_rescale() {
        let mut rng = stream(2, "rescale");
        let norm_m = Normalizer::new(vec![15.0, 18.0, 15.0, 18.0, 0.0], vec![105.0, 32.0, 105.0, 32.0, 3.0]).unwrap();
        let net_m = Mlp::new(5, 16, 3, Activation::Tanh, norm_m, &mut rng).unwrap();
        // Same parameters, coordinates declared in kilometers.
        let mut net_km = net_m.clone();
        net_km.normalizer = Normalizer::new(
            net_m.normalizer.lo.iter().map(|v| v / 1000.0).collect(),
            net_m.normalizer.hi.iter().map(|v| v / 1000.0).collect(),
        )
        .unwrap();
        let x_m = [40.0, 20.0, 60.0, 25.0, 1.5];
        let x_km: Vec<f64> = x_m.iter().map(|v| v / 1000.0).collect();
        let mut ws = net_m.workspace();
        let vm = net_m.forward(&x_m, &mut ws);
        let vkm = net_km.forward(&x_km, &mut ws);
        assert_relative_eq!(vm, vkm, epsilon = 1e-12);
    }

    #[test]
    fn sin_net_with_zero_final_layer_outputs_bias() {
        let mut rng = stream(9, "sin-smoke");
        let mut net = Mlp::new(5, 64, 3, Activation::Sin, unit_normalizer(5), &mut rng).unwrap();
        let last = net.layers.last_mut().unwrap();
        last.w.fill(0.0);
        last.b[0] = -1.25;
        let mut ws = net.workspace();
        assert_eq!(net.forward(&[0.3, 0.1, -0.2, 0.6, 0.9], &mut ws), -1.25);
        // First-layer weights carry the omega0 scale.
        let w0_max = net.layers[0].w.iter().fold(0.0f64, |m, w| m.max(w.abs()));
        assert!(w0_max > 1.0, "expected omega0-scaled first layer, max |w| = {w0_max}");
    }

    #[test]
    fn checkpoint_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        let net = ValueNet {
            mlp: test_net(Activation::Sin, 21),
            player: Player::Two,
            config: TypeConfig::ALL[1],
        };
        let mut meta = std::collections::BTreeMap::new();
        meta.insert("regime".to_string(), "hybrid".to_string());
        let ck = Checkpoint { net: net.clone(), meta };
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.net, net);
        assert_eq!(back.meta.get("regime").unwrap(), "hybrid");
    }
}

