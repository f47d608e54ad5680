//! The embedding function: stacked recurrent encoder, fully connected
//! layers, and a log-softmax (classifier) or linear (Siamese) head.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, AweError, Result};
use crate::numeric::{
    check_dropout, fill_dropout_mask, log_softmax_in_place, matvec_acc, matvec_t_acc, Mat2, Real,
    Vec1,
};
use crate::random::RandomSource;
use crate::rnn::{stacked_backward, stacked_forward, CellKind, Mode, StackedCache, StackedRnnParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    LogSoftmax,
    Linear,
}

impl Head {
    pub fn name(self) -> &'static str {
        match self {
            Head::LogSoftmax => "log_softmax",
            Head::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Head {
    type Err = AweError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "log_softmax" => Ok(Head::LogSoftmax),
            "linear" => Ok(Head::Linear),
            other => Err(AweError::InvalidConfig(format!("unknown head '{other}'"))),
        }
    }
}

/// Which vector a log-softmax network reports as its embedding.
///
/// `HeadOutput` is the log-softmax output itself; `Logits` is the final
/// fully connected activation before normalization. Linear-head networks
/// ignore the distinction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingOutput {
    #[default]
    HeadOutput,
    Logits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub cell_kind: CellKind,
    pub stacked_layers: usize,
    pub fc_layers: usize,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub fc_dim: usize,
    pub output_dim: usize,
    pub head: Head,
    pub dropout_recurrent: f64,
    pub dropout_fc: f64,
}

impl NetworkConfig {
    /// Configuration with the default layer widths (512 recurrent, 1024
    /// fully connected) and dropout rates (0.3 recurrent, 0.5 fully
    /// connected).
    pub fn new(
        cell_kind: CellKind,
        stacked_layers: usize,
        fc_layers: usize,
        input_dim: usize,
        output_dim: usize,
        head: Head,
    ) -> Self {
        NetworkConfig {
            cell_kind,
            stacked_layers,
            fc_layers,
            input_dim,
            hidden_dim: 512,
            fc_dim: 1024,
            output_dim,
            head,
            dropout_recurrent: 0.3,
            dropout_fc: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("stacked_layers", self.stacked_layers),
            ("fc_layers", self.fc_layers),
            ("input_dim", self.input_dim),
            ("hidden_dim", self.hidden_dim),
            ("fc_dim", self.fc_dim),
            ("output_dim", self.output_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(AweError::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if self.head == Head::LogSoftmax && self.output_dim < 2 {
            return Err(AweError::InvalidConfig(
                "log-softmax head needs at least two classes".into(),
            ));
        }
        check_dropout(self.dropout_recurrent)?;
        check_dropout(self.dropout_fc)?;
        Ok(())
    }

    /// `(input, output)` width of each fully connected layer.
    pub fn fc_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.fc_layers)
            .map(|l| {
                let input = if l == 0 { self.hidden_dim } else { self.fc_dim };
                let output = if l + 1 == self.fc_layers { self.output_dim } else { self.fc_dim };
                (input, output)
            })
            .collect()
    }

    /// Closed-form number of trainable scalars.
    pub fn parameter_count(&self) -> usize {
        let gates = self.cell_kind.gate_count();
        let h = self.hidden_dim;
        let rnn: usize = (0..self.stacked_layers)
            .map(|l| {
                let input = if l == 0 { self.input_dim } else { h };
                gates * (h * (input + h) + h)
            })
            .sum();
        let fc: usize = self.fc_shapes().iter().map(|(i, o)| i * o + o).sum();
        rnn + fc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer<F> {
    pub w: Mat2<F>,
    pub b: Vec1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<F> {
    pub rnn: StackedRnnParams<F>,
    pub fc: Vec<FcLayer<F>>,
}

impl<F: Real> NetworkParams<F> {
    pub fn zeros(config: &NetworkConfig) -> Self {
        NetworkParams {
            rnn: StackedRnnParams::zeros(
                config.cell_kind,
                config.input_dim,
                config.hidden_dim,
                config.stacked_layers,
                config.dropout_recurrent,
            ),
            fc: config
                .fc_shapes()
                .into_iter()
                .map(|(i, o)| FcLayer {
                    w: Mat2::zeros(o, i),
                    b: Vec1::zeros(o),
                })
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        NetworkParams {
            rnn: self.rnn.zeros_like(),
            fc: self
                .fc
                .iter()
                .map(|l| FcLayer {
                    w: Mat2::zeros(l.w.rows(), l.w.cols()),
                    b: Vec1::zeros(l.b.dim()),
                })
                .collect(),
        }
    }

    /// Every parameter tensor: recurrent layers first, then each fully
    /// connected layer's weight and bias.
    pub fn tensors(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = self.rnn.layers.iter().flat_map(|l| l.tensors()).collect();
        for l in &self.fc {
            out.push(l.w.as_slice());
            out.push(l.b.as_slice());
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        let mut out: Vec<&mut [F]> =
            self.rnn.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        for l in &mut self.fc {
            let FcLayer { w, b } = l;
            out.push(w.as_mut_slice());
            out.push(b.as_mut_slice());
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<F> {
        self.tensors().into_iter().flatten().copied().collect()
    }

    pub fn assign_flat(&mut self, values: &[F]) -> Result<()> {
        check_dim("flat parameter vector", self.parameter_count(), values.len())?;
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&values[off..off + t.len()]);
            off += t.len();
        }
        Ok(())
    }

    pub fn fill_zero(&mut self) {
        for t in self.tensors_mut() {
            t.fill(F::zero());
        }
    }

    /// `self += alpha * other`
    pub fn add_scaled(&mut self, alpha: F, other: &Self) {
        for (d, s) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, &b) in d.iter_mut().zip(s) {
                *a += alpha * b;
            }
        }
    }

    pub fn cast<G: Real>(&self) -> NetworkParams<G> {
        let mut out = NetworkParams::<G>::zeros(&self.shape_config());
        for (d, s) in out.tensors_mut().into_iter().zip(self.tensors()) {
            for (a, &b) in d.iter_mut().zip(s) {
                *a = G::lit(b.as_f64());
            }
        }
        out
    }

    fn shape_config(&self) -> NetworkConfig {
        NetworkConfig {
            cell_kind: self.rnn.kind(),
            stacked_layers: self.rnn.layers.len(),
            fc_layers: self.fc.len(),
            input_dim: self.rnn.input_dim(),
            hidden_dim: self.rnn.hidden_dim(),
            fc_dim: if self.fc.len() > 1 { self.fc[0].w.rows() } else { 1 },
            output_dim: self.fc.last().map_or(0, |l| l.w.rows()),
            head: Head::Linear,
            dropout_recurrent: self.rnn.inter_layer_dropout,
            dropout_fc: 0.0,
        }
    }

    /// Checks that the tensors have exactly the shapes `config` implies.
    pub fn check_against(&self, config: &NetworkConfig) -> Result<()> {
        self.rnn.validate()?;
        if self.rnn.kind() != config.cell_kind {
            return Err(AweError::InvalidConfig("cell kind differs from configuration".into()));
        }
        check_dim("stacked layer count", config.stacked_layers, self.rnn.layers.len())?;
        check_dim("input dimension", config.input_dim, self.rnn.input_dim())?;
        check_dim("hidden dimension", config.hidden_dim, self.rnn.hidden_dim())?;
        let shapes = config.fc_shapes();
        check_dim("fully connected layer count", shapes.len(), self.fc.len())?;
        for ((input, output), l) in shapes.into_iter().zip(&self.fc) {
            check_dim("fully connected input", input, l.w.cols())?;
            check_dim("fully connected output", output, l.w.rows())?;
            check_dim("fully connected bias", output, l.b.dim())?;
        }
        Ok(())
    }
}

fn uniform_fill<F: Real>(values: &mut [F], fan_in: usize, rng: &mut RandomSource) {
    use rand::Rng;
    let bound = 1.0 / (fan_in as f64).sqrt();
    for v in values {
        *v = F::lit(rng.random_range(-bound..=bound));
    }
}

/// Fresh parameters: weights uniform in `±1/sqrt(fan_in)` of their matrix,
/// biases zero.
pub fn init_params<F: Real>(config: &NetworkConfig, rng: &mut RandomSource) -> Result<NetworkParams<F>> {
    config.validate()?;
    let rnn = StackedRnnParams::random(
        config.cell_kind,
        config.input_dim,
        config.hidden_dim,
        config.stacked_layers,
        config.dropout_recurrent,
        rng,
    );
    let fc = config
        .fc_shapes()
        .into_iter()
        .map(|(i, o)| fresh_fc_layer(i, o, rng))
        .collect();
    Ok(NetworkParams { rnn, fc })
}

pub(crate) fn fresh_fc_layer<F: Real>(input: usize, output: usize, rng: &mut RandomSource) -> FcLayer<F> {
    let mut w = Mat2::zeros(output, input);
    uniform_fill(w.as_mut_slice(), input, rng);
    FcLayer {
        w,
        b: Vec1::zeros(output),
    }
}

/// Activations of one forward pass, kept for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass<F> {
    rnn: StackedCache<F>,
    /// Input to each fully connected layer (after ReLU and dropout for all
    /// but the first).
    fc_inputs: Vec<Vec<F>>,
    /// Pre-activation of each non-final fully connected layer.
    fc_pre: Vec<Vec<F>>,
    fc_masks: Vec<Option<Vec<F>>>,
    /// Final fully connected output, before the head.
    pub logits: Vec<F>,
    /// Head output: log-softmax of the logits, or the logits themselves.
    pub output: Vec<F>,
}

impl<F: Real> ForwardPass<F> {
    pub fn embedding(&self, which: EmbeddingOutput) -> &[F] {
        match which {
            EmbeddingOutput::HeadOutput => &self.output,
            EmbeddingOutput::Logits => &self.logits,
        }
    }
}

/// Runs the whole network over one segment.
///
/// The recurrent output feeds the first fully connected layer directly;
/// ReLU and (in `Train` mode) dropout sit between fully connected layers
/// only, never after the last one.
pub fn forward<F: Real>(
    params: &NetworkParams<F>,
    config: &NetworkConfig,
    frames: &Mat2<F>,
    mode: Mode,
    rng: &mut RandomSource,
) -> Result<ForwardPass<F>> {
    check_dim("segment frame dimension", config.input_dim, frames.cols())?;
    let (h_final, rnn) = stacked_forward(&params.rnn, frames, mode, rng)?;
    let n = params.fc.len();
    let mut fc_inputs = Vec::with_capacity(n);
    let mut fc_pre = Vec::with_capacity(n.saturating_sub(1));
    let mut fc_masks = Vec::with_capacity(n.saturating_sub(1));
    let mut a = h_final.into_vec();
    for (l, layer) in params.fc.iter().enumerate() {
        let mut z = layer.b.as_slice().to_vec();
        matvec_acc(layer.w.as_slice(), layer.w.cols(), &a, &mut z);
        fc_inputs.push(a);
        if l + 1 == n {
            a = z;
            break;
        }
        let mut next: Vec<F> = z.iter().map(|&v| v.max(F::zero())).collect();
        let mask = if mode == Mode::Train && config.dropout_fc > 0.0 {
            let mut m = vec![F::zero(); next.len()];
            fill_dropout_mask(rng, &mut m, config.dropout_fc)?;
            for (v, &k) in next.iter_mut().zip(&m) {
                *v *= k;
            }
            Some(m)
        } else {
            None
        };
        fc_pre.push(z);
        fc_masks.push(mask);
        a = next;
    }
    let logits = a;
    let mut output = logits.clone();
    if config.head == Head::LogSoftmax {
        log_softmax_in_place(&mut output);
    }
    Ok(ForwardPass {
        rnn,
        fc_inputs,
        fc_pre,
        fc_masks,
        logits,
        output,
    })
}

/// The embedding `g(X)` of one segment.
pub fn embed<F: Real>(
    params: &NetworkParams<F>,
    config: &NetworkConfig,
    frames: &Mat2<F>,
    mode: Mode,
    rng: &mut RandomSource,
) -> Result<Vec1<F>> {
    let pass = forward(params, config, frames, mode, rng)?;
    Ok(Vec1::from_vec_unchecked(pass.output))
}

/// Converts a gradient with respect to the head output into one with
/// respect to the logits.
pub fn head_backward<F: Real>(config: &NetworkConfig, pass: &ForwardPass<F>, d_output: &[F]) -> Vec<F> {
    match config.head {
        Head::Linear => d_output.to_vec(),
        Head::LogSoftmax => {
            // y = z - lse(z)  =>  dz = dy - softmax(z) * sum(dy)
            let total: F = d_output.iter().copied().sum();
            d_output
                .iter()
                .zip(&pass.output)
                .map(|(&d, &y)| d - y.exp() * total)
                .collect()
        }
    }
}

/// Accumulates into `grads` the parameter gradient for a loss whose
/// derivative with respect to the logits is `d_logits`.
pub fn backward<F: Real>(
    params: &NetworkParams<F>,
    pass: &ForwardPass<F>,
    d_logits: &[F],
    grads: &mut NetworkParams<F>,
) -> Result<()> {
    let n = params.fc.len();
    check_dim("logit gradient", params.fc[n - 1].w.rows(), d_logits.len())?;
    let mut dz = d_logits.to_vec();
    for l in (0..n).rev() {
        let layer = &params.fc[l];
        let input = &pass.fc_inputs[l];
        let g = &mut grads.fc[l];
        let cols = layer.w.cols();
        for (r, &d) in dz.iter().enumerate() {
            if d != F::zero() {
                let row = &mut g.w.as_mut_slice()[r * cols..(r + 1) * cols];
                for (gw, &x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
        }
        for (gb, &d) in g.b.as_mut_slice().iter_mut().zip(&dz) {
            *gb += d;
        }
        let mut da = vec![F::zero(); cols];
        matvec_t_acc(layer.w.as_slice(), cols, &dz, &mut da);
        if l == 0 {
            dz = da;
            break;
        }
        // through dropout and ReLU of the previous layer
        let pre = &pass.fc_pre[l - 1];
        let mask = &pass.fc_masks[l - 1];
        for (k, v) in da.iter_mut().enumerate() {
            if pre[k] <= F::zero() {
                *v = F::zero();
            } else if let Some(m) = mask {
                *v *= m[k];
            }
        }
        dz = da;
    }
    stacked_backward(&params.rnn, &pass.rnn, &dz, &mut grads.rnn)
}

/// Shifts each hidden fully connected bias by the smallest amount that keeps
/// every ReLU pre-activation over `segments` at least `margin` away from
/// zero, so finite differences of size below `margin` never straddle a kink.
pub fn clear_relu_kinks<F: Real>(
    params: &mut NetworkParams<F>,
    config: &NetworkConfig,
    segments: &[Mat2<F>],
    margin: f64,
) -> Result<()> {
    let linear = NetworkConfig { head: Head::Linear, ..config.clone() };
    let margin = F::lit(margin);
    for layer in 0..params.fc.len().saturating_sub(1) {
        let truncated = NetworkParams { rnn: params.rnn.clone(), fc: params.fc[..=layer].to_vec() };
        let mut pre = Vec::with_capacity(segments.len());
        for x in segments {
            pre.push(forward(&truncated, &linear, x, Mode::Eval, &mut RandomSource::new(0))?.logits);
        }
        for (unit, bias) in params.fc[layer].b.as_mut_slice().iter_mut().enumerate() {
            let clear = |d: F| pre.iter().all(|z| (z[unit] + d).abs() >= margin);
            let mut best = F::zero();
            if !clear(best) {
                let candidates = pre.iter().flat_map(|z| [-z[unit] - margin, -z[unit] + margin]);
                best = candidates
                    .filter(|&d| clear(d))
                    .min_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap())
                    .unwrap_or(best);
            }
            *bias += best;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_config(kind: CellKind, head: Head, fc_layers: usize) -> NetworkConfig {
        NetworkConfig {
            hidden_dim: 6,
            fc_dim: 5,
            dropout_recurrent: 0.3,
            dropout_fc: 0.5,
            ..NetworkConfig::new(kind, 2, fc_layers, 3, 4, head)
        }
    }

    fn frames(t: usize, d: usize, seed: u64) -> Mat2<f64> {
        let mut rng = RandomSource::new(seed);
        Mat2::new(t, d, (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let cfg = NetworkConfig::new(CellKind::Lstm, 1, 2, 36, 10, Head::LogSoftmax);
        let a: NetworkParams<f32> = init_params(&cfg, &mut RandomSource::new(4)).unwrap();
        let b: NetworkParams<f32> = init_params(&cfg, &mut RandomSource::new(4)).unwrap();
        assert_eq!(a, b);
        // hidden 512 + input 36 = 548 fan-in for gate matrices
        let bound = 1.0 / 548f32.sqrt();
        for t in a.rnn.layers[0].tensors().into_iter().take(4) {
            assert!(t.iter().all(|v| v.abs() <= bound));
        }
        for t in a.rnn.layers[0].tensors().into_iter().skip(4) {
            assert!(t.iter().all(|&v| v == 0.0));
        }
        // fc 2 has fan-in 1024... and fc 1 fan-in 512
        assert!(a.fc[1].w.as_slice().iter().all(|v| v.abs() <= 1.0 / 32.0));
    }

    #[test]
    fn fan_in_100_range_and_mean() {
        let cfg = NetworkConfig {
            hidden_dim: 100,
            fc_dim: 100,
            ..NetworkConfig::new(CellKind::Gru, 1, 2, 4, 100, Head::Linear)
        };
        let p: NetworkParams<f64> = init_params(&cfg, &mut RandomSource::new(8)).unwrap();
        let w = p.fc[1].w.as_slice();
        assert_eq!(w.len(), 10_000);
        assert!(w.iter().all(|v| v.abs() <= 0.1));
        // U(-a, a) has sd a / sqrt(3); the mean of n draws has sd a / sqrt(3n).
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let sd = 0.1 / (3.0 * w.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sd, "mean {mean}");
    }

    #[test]
    fn census_matches_tensors() {
        for kind in [CellKind::Lstm, CellKind::Gru] {
            for s in 1..=3 {
                for f in 1..=3 {
                    let cfg = NetworkConfig {
                        hidden_dim: 7,
                        fc_dim: 9,
                        ..NetworkConfig::new(kind, s, f, 5, 11, Head::LogSoftmax)
                    };
                    let p = NetworkParams::<f32>::zeros(&cfg);
                    assert_eq!(p.parameter_count(), cfg.parameter_count());
                    p.check_against(&cfg).unwrap();
                }
            }
        }
        // hand count: LSTM D=2 H=3 one layer, one fc 3 -> 4
        let cfg = NetworkConfig {
            hidden_dim: 3,
            ..NetworkConfig::new(CellKind::Lstm, 1, 1, 2, 4, Head::Linear)
        };
        assert_eq!(cfg.parameter_count(), 4 * (3 * 5 + 3) + (3 * 4 + 4));
    }

    #[test]
    fn log_softmax_head_is_normalized() {
        let cfg = small_config(CellKind::Lstm, Head::LogSoftmax, 2);
        let p: NetworkParams<f64> = init_params(&cfg, &mut RandomSource::new(2)).unwrap();
        for seed in 0..5 {
            let e = embed(&p, &cfg, &frames(8, 3, seed), Mode::Train, &mut RandomSource::new(seed)).unwrap();
            let total: f64 = e.as_slice().iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn eval_embedding_ignores_rng() {
        let cfg = small_config(CellKind::Gru, Head::Linear, 3);
        let p: NetworkParams<f32> = init_params(&cfg, &mut RandomSource::new(2)).unwrap();
        let x = frames(10, 3, 1);
        let x: Mat2<f32> = Mat2::new(10, 3, x.as_slice().iter().map(|&v| v as f32).collect()).unwrap();
        let a = embed(&p, &cfg, &x, Mode::Eval, &mut RandomSource::new(1)).unwrap();
        let b = embed(&p, &cfg, &x, Mode::Eval, &mut RandomSource::new(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_identity_fc_passes_hidden_state_through() {
        let cfg = NetworkConfig {
            hidden_dim: 3,
            ..NetworkConfig::new(CellKind::Lstm, 1, 1, 2, 5, Head::Linear)
        };
        let mut p: NetworkParams<f64> = init_params(&cfg, &mut RandomSource::new(6)).unwrap();
        // 5x3 weight: identity on the first three outputs, zero rows below
        let mut w = Mat2::zeros(5, 3);
        for i in 0..3 {
            w.set(i, i, 1.0);
        }
        p.fc[0].w = w;
        let x = frames(6, 2, 3);
        let (h, _) = stacked_forward(&p.rnn, &x, Mode::Eval, &mut RandomSource::new(0)).unwrap();
        let e = embed(&p, &cfg, &x, Mode::Eval, &mut RandomSource::new(0)).unwrap();
        assert_eq!(&e.as_slice()[..3], h.as_slice());
        assert_eq!(&e.as_slice()[3..], &[0.0, 0.0]);
    }

    #[test]
    fn wrong_frame_dim_rejected() {
        let cfg = small_config(CellKind::Lstm, Head::Linear, 1);
        let p: NetworkParams<f64> = init_params(&cfg, &mut RandomSource::new(0)).unwrap();
        assert!(matches!(
            embed(&p, &cfg, &frames(4, 2, 0), Mode::Eval, &mut RandomSource::new(0)),
            Err(AweError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        use crate::gradcheck::grad_check_with_floor;
        for kind in [CellKind::Lstm, CellKind::Gru] {
            for head in [Head::LogSoftmax, Head::Linear] {
                let mut cfg = small_config(kind, head, 3);
                cfg.dropout_fc = 0.0;
                cfg.dropout_recurrent = 0.0;
                let p: NetworkParams<f64> = init_params(&cfg, &mut RandomSource::new(31)).unwrap();
                let x = frames(5, 3, 7);
                let w = [0.3, -1.1, 0.7, 0.2];
                let score = |out: &[f64]| out.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                let pass = forward(&p, &cfg, &x, Mode::Eval, &mut RandomSource::new(0)).unwrap();
                let d_logits = head_backward(&cfg, &pass, &w);
                let mut g = p.zeros_like();
                backward(&p, &pass, &d_logits, &mut g).unwrap();
                let mut scratch = p.clone();
                let loss = |t: &[f64]| {
                    scratch.assign_flat(t).unwrap();
                    score(&forward(&scratch, &cfg, &x, Mode::Eval, &mut RandomSource::new(0)).unwrap().output)
                };
                let r = grad_check_with_floor(loss, &p.flatten(), &g.flatten(), 1e-5, 1e-6).unwrap();
                assert!(r.max_rel_error <= 1e-4, "{kind:?} {head:?}: {r:?}");
            }
        }
    }

    #[test]
    fn cleared_network_keeps_preactivations_off_zero() {
        let cfg = small_config(CellKind::Lstm, Head::LogSoftmax, 3);
        let mut rng = RandomSource::new(12);
        let mut p: NetworkParams<f64> = init_params(&cfg, &mut rng).unwrap();
        let segs: Vec<Mat2<f64>> = (0..4)
            .map(|t| Mat2::new(t + 2, cfg.input_dim, (0..(t + 2) * cfg.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        clear_relu_kinks(&mut p, &cfg, &segs, 0.05).unwrap();
        let linear = NetworkConfig { head: Head::Linear, ..cfg.clone() };
        for layer in 0..2 {
            let cut = NetworkParams { rnn: p.rnn.clone(), fc: p.fc[..=layer].to_vec() };
            for x in &segs {
                let z = forward(&cut, &linear, x, Mode::Eval, &mut rng).unwrap().logits;
                assert!(z.iter().all(|v| v.abs() >= 0.05 - 1e-12), "layer {layer}: {z:?}");
            }
        }
    }
}
