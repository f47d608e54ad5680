//! LSTM and GRU cells, the stacked recurrent encoder, and exact
//! backpropagation through time.
//!
//! Every gate matrix acts on the concatenation `[x_t, h_{t-1}]`, so a gate
//! matrix of a layer with input size `D` and hidden size `H` is `H x (D+H)`
//! with the input block in the first `D` columns. The sequence-level passes
//! exploit that split: input projections and weight gradients are computed
//! for all frames at once with GEMM, and only the recurrent block is applied
//! step by step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, AweError, Result};
use crate::numeric::{
    affine, fill_dropout_mask, gemm, matvec_acc, matvec_t_acc, sigmoid, Mat2, Real, Vec1, View,
    ViewMut,
};
use crate::random::RandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Lstm,
    Gru,
}

impl CellKind {
    pub fn gate_count(self) -> usize {
        match self {
            CellKind::Lstm => 4,
            CellKind::Gru => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
        }
    }
}

impl std::str::FromStr for CellKind {
    type Err = AweError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(CellKind::Lstm),
            "gru" => Ok(CellKind::Gru),
            other => Err(AweError::InvalidConfig(format!("unknown cell kind '{other}'"))),
        }
    }
}

/// Forward-pass mode. Dropout is only active in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<F> {
    pub w_i: Mat2<F>,
    pub w_f: Mat2<F>,
    pub w_c: Mat2<F>,
    pub w_o: Mat2<F>,
    pub b_i: Vec1<F>,
    pub b_f: Vec1<F>,
    pub b_c: Vec1<F>,
    pub b_o: Vec1<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GruParams<F> {
    pub w_r: Mat2<F>,
    pub w_u: Mat2<F>,
    pub w_h: Mat2<F>,
    pub b_r: Vec1<F>,
    pub b_u: Vec1<F>,
    pub b_h: Vec1<F>,
}

/// Hidden state, plus the cell memory for LSTM layers.
#[derive(Debug, Clone, PartialEq)]
pub struct CellState<F> {
    pub h: Vec1<F>,
    pub c: Option<Vec1<F>>,
}

impl<F: Real> CellState<F> {
    pub fn zeros(kind: CellKind, hidden: usize) -> Self {
        CellState {
            h: Vec1::zeros(hidden),
            c: (kind == CellKind::Lstm).then(|| Vec1::zeros(hidden)),
        }
    }
}

fn uniform_matrix<F: Real>(rows: usize, cols: usize, rng: &mut RandomSource) -> Mat2<F> {
    let bound = 1.0 / (cols as f64).sqrt();
    let mut m = Mat2::zeros(rows, cols);
    for v in m.as_mut_slice() {
        *v = F::lit(rng.random_range(-bound..=bound));
    }
    m
}

impl<F: Real> LstmParams<F> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Mat2::zeros(hidden, input + hidden);
        let b = || Vec1::zeros(hidden);
        LstmParams {
            w_i: w(),
            w_f: w(),
            w_c: w(),
            w_o: w(),
            b_i: b(),
            b_f: b(),
            b_c: b(),
            b_o: b(),
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn random(input: usize, hidden: usize, rng: &mut RandomSource) -> Self {
        let mut p = Self::zeros(input, hidden);
        for w in [&mut p.w_i, &mut p.w_f, &mut p.w_c, &mut p.w_o] {
            *w = uniform_matrix(hidden, input + hidden, rng);
        }
        p
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_i.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_i.cols() - self.w_i.rows()
    }
}

impl<F: Real> GruParams<F> {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        let w = || Mat2::zeros(hidden, input + hidden);
        let b = || Vec1::zeros(hidden);
        GruParams {
            w_r: w(),
            w_u: w(),
            w_h: w(),
            b_r: b(),
            b_u: b(),
            b_h: b(),
        }
    }

    /// Weights uniform in `±1/sqrt(fan_in)`, biases zero.
    pub fn random(input: usize, hidden: usize, rng: &mut RandomSource) -> Self {
        let mut p = Self::zeros(input, hidden);
        for w in [&mut p.w_r, &mut p.w_u, &mut p.w_h] {
            *w = uniform_matrix(hidden, input + hidden, rng);
        }
        p
    }

    pub fn hidden_dim(&self) -> usize {
        self.w_r.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.w_r.cols() - self.w_r.rows()
    }
}

fn concat<F: Real>(a: &[F], b: &[F]) -> Vec1<F> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    Vec1::from_vec_unchecked(v)
}

fn map2<F: Real>(a: &Vec1<F>, b: &Vec1<F>, f: impl Fn(F, F) -> F) -> Vec1<F> {
    Vec1::from_vec_unchecked(
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(&x, &y)| f(x, y))
            .collect(),
    )
}

fn map1<F: Real>(a: &Vec1<F>, f: impl Fn(F) -> F) -> Vec1<F> {
    Vec1::from_vec_unchecked(a.as_slice().iter().map(|&x| f(x)).collect())
}

/// One LSTM time step.
pub fn lstm_step<F: Real>(p: &LstmParams<F>, x_t: &Vec1<F>, prev: &CellState<F>) -> Result<CellState<F>> {
    let hidden = p.hidden_dim();
    check_dim("lstm input", p.input_dim(), x_t.dim())?;
    check_dim("lstm hidden state", hidden, prev.h.dim())?;
    let c_prev = prev
        .c
        .as_ref()
        .ok_or_else(|| AweError::InvalidInput("lstm step needs a cell vector".into()))?;
    check_dim("lstm cell state", hidden, c_prev.dim())?;

    let xh = concat(x_t.as_slice(), prev.h.as_slice());
    let i = map1(&affine(&p.w_i, &xh, &p.b_i)?, sigmoid);
    let f = map1(&affine(&p.w_f, &xh, &p.b_f)?, sigmoid);
    let cand = map1(&affine(&p.w_c, &xh, &p.b_c)?, F::tanh);
    let o = map1(&affine(&p.w_o, &xh, &p.b_o)?, sigmoid);
    let c = map2(&map2(&i, &cand, |a, b| a * b), &map2(&f, c_prev, |a, b| a * b), |a, b| a + b);
    let h = map2(&o, &c, |a, b| a * b.tanh());
    Ok(CellState { h, c: Some(c) })
}

/// One GRU time step.
pub fn gru_step<F: Real>(p: &GruParams<F>, x_t: &Vec1<F>, prev: &CellState<F>) -> Result<CellState<F>> {
    check_dim("gru input", p.input_dim(), x_t.dim())?;
    check_dim("gru hidden state", p.hidden_dim(), prev.h.dim())?;

    let xh = concat(x_t.as_slice(), prev.h.as_slice());
    let r = map1(&affine(&p.w_r, &xh, &p.b_r)?, sigmoid);
    let u = map1(&affine(&p.w_u, &xh, &p.b_u)?, sigmoid);
    let rh = map2(&r, &prev.h, |a, b| a * b);
    let xrh = concat(x_t.as_slice(), rh.as_slice());
    let cand = map1(&affine(&p.w_h, &xrh, &p.b_h)?, F::tanh);
    let h = Vec1::from_vec_unchecked(
        (0..p.hidden_dim())
            .map(|k| {
                let uk = u.as_slice()[k];
                uk * prev.h.as_slice()[k] + (F::one() - uk) * cand.as_slice()[k]
            })
            .collect(),
    );
    Ok(CellState { h, c: None })
}

/// Parameters of one recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub enum RecurrentLayer<F> {
    Lstm(LstmParams<F>),
    Gru(GruParams<F>),
}

impl<F: Real> RecurrentLayer<F> {
    pub fn zeros(kind: CellKind, input: usize, hidden: usize) -> Self {
        match kind {
            CellKind::Lstm => RecurrentLayer::Lstm(LstmParams::zeros(input, hidden)),
            CellKind::Gru => RecurrentLayer::Gru(GruParams::zeros(input, hidden)),
        }
    }

    pub fn random(kind: CellKind, input: usize, hidden: usize, rng: &mut RandomSource) -> Self {
        match kind {
            CellKind::Lstm => RecurrentLayer::Lstm(LstmParams::random(input, hidden, rng)),
            CellKind::Gru => RecurrentLayer::Gru(GruParams::random(input, hidden, rng)),
        }
    }

    pub fn kind(&self) -> CellKind {
        match self {
            RecurrentLayer::Lstm(_) => CellKind::Lstm,
            RecurrentLayer::Gru(_) => CellKind::Gru,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            RecurrentLayer::Lstm(p) => p.input_dim(),
            RecurrentLayer::Gru(p) => p.input_dim(),
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            RecurrentLayer::Lstm(p) => p.hidden_dim(),
            RecurrentLayer::Gru(p) => p.hidden_dim(),
        }
    }

    /// Gate weights followed by gate biases, in gate order
    /// (i, f, c, o for LSTM; r, u, h for GRU).
    pub fn tensors(&self) -> Vec<&[F]> {
        match self {
            RecurrentLayer::Lstm(p) => vec![
                p.w_i.as_slice(),
                p.w_f.as_slice(),
                p.w_c.as_slice(),
                p.w_o.as_slice(),
                p.b_i.as_slice(),
                p.b_f.as_slice(),
                p.b_c.as_slice(),
                p.b_o.as_slice(),
            ],
            RecurrentLayer::Gru(p) => vec![
                p.w_r.as_slice(),
                p.w_u.as_slice(),
                p.w_h.as_slice(),
                p.b_r.as_slice(),
                p.b_u.as_slice(),
                p.b_h.as_slice(),
            ],
        }
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [F]> {
        match self {
            RecurrentLayer::Lstm(p) => vec![
                p.w_i.as_mut_slice(),
                p.w_f.as_mut_slice(),
                p.w_c.as_mut_slice(),
                p.w_o.as_mut_slice(),
                p.b_i.as_mut_slice(),
                p.b_f.as_mut_slice(),
                p.b_c.as_mut_slice(),
                p.b_o.as_mut_slice(),
            ],
            RecurrentLayer::Gru(p) => vec![
                p.w_r.as_mut_slice(),
                p.w_u.as_mut_slice(),
                p.w_h.as_mut_slice(),
                p.b_r.as_mut_slice(),
                p.b_u.as_mut_slice(),
                p.b_h.as_mut_slice(),
            ],
        }
    }
}

/// A stack of homogeneous recurrent layers.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedRnnParams<F> {
    pub layers: Vec<RecurrentLayer<F>>,
    pub inter_layer_dropout: f64,
}

impl<F: Real> StackedRnnParams<F> {
    pub fn zeros(kind: CellKind, input: usize, hidden: usize, layers: usize, dropout: f64) -> Self {
        let layers = (0..layers)
            .map(|l| RecurrentLayer::zeros(kind, if l == 0 { input } else { hidden }, hidden))
            .collect();
        StackedRnnParams {
            layers,
            inter_layer_dropout: dropout,
        }
    }

    pub fn random(
        kind: CellKind,
        input: usize,
        hidden: usize,
        layers: usize,
        dropout: f64,
        rng: &mut RandomSource,
    ) -> Self {
        let layers = (0..layers)
            .map(|l| RecurrentLayer::random(kind, if l == 0 { input } else { hidden }, hidden, rng))
            .collect();
        StackedRnnParams {
            layers,
            inter_layer_dropout: dropout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        StackedRnnParams {
            layers: self
                .layers
                .iter()
                .map(|l| RecurrentLayer::zeros(l.kind(), l.input_dim(), l.hidden_dim()))
                .collect(),
            inter_layer_dropout: self.inter_layer_dropout,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden_dim()
    }

    pub fn kind(&self) -> CellKind {
        self.layers[0].kind()
    }

    /// Checks the shape invariants of the stack.
    pub fn validate(&self) -> Result<()> {
        let first = self
            .layers
            .first()
            .ok_or_else(|| AweError::InvalidConfig("recurrent stack needs at least one layer".into()))?;
        let hidden = first.hidden_dim();
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.kind() != first.kind() {
                return Err(AweError::InvalidConfig("recurrent stack mixes cell kinds".into()));
            }
            check_dim("stacked layer hidden size", hidden, layer.hidden_dim())?;
            if l > 0 {
                check_dim("stacked layer input size", hidden, layer.input_dim())?;
            }
        }
        Ok(())
    }
}

/// Activations of one layer retained for the backward pass.
#[derive(Debug, Clone)]
struct LayerCache<F> {
    frames: usize,
    /// Layer input, `T x D_in`.
    input: Vec<F>,
    /// `h_0 .. h_T`, `(T+1) x H`; row 0 is the zero initial state.
    hs: Vec<F>,
    /// LSTM: `c_0 .. c_T`. Empty for GRU.
    cs: Vec<F>,
    /// Post-activation gates, one `T x H` block per gate:
    /// LSTM (i, f, c~, o), GRU (r, u, h~).
    gates: Vec<Vec<F>>,
    /// GRU only: `r_t * h_{t-1}`, `T x H`.
    rh: Vec<F>,
}

/// Everything [`stacked_backward`] needs from the forward pass.
#[derive(Debug, Clone)]
pub struct StackedCache<F> {
    layers: Vec<LayerCache<F>>,
    /// Dropout mask applied to the output of layer `l` before layer `l+1`.
    masks: Vec<Option<Vec<F>>>,
}

impl<F: Real> StackedCache<F> {
    pub fn frames(&self) -> usize {
        self.layers[0].frames
    }

    /// Hidden state sequence `h_1 .. h_T` of layer `l`, row-major `T x H`.
    pub fn hidden_sequence(&self, l: usize) -> &[F] {
        let c = &self.layers[l];
        let h = c.hs.len() / (c.frames + 1);
        &c.hs[h..]
    }
}

/// Runs the stack over `frames` (`T x D`) from zero initial state and
/// returns the top layer's final hidden state with the cached activations.
///
/// In `Train` mode the hidden sequence passed from each layer to the next is
/// multiplied by an inverted-dropout mask; the top layer's output is not.
pub fn stacked_forward<F: Real>(
    p: &StackedRnnParams<F>,
    frames: &Mat2<F>,
    mode: Mode,
    rng: &mut RandomSource,
) -> Result<(Vec1<F>, StackedCache<F>)> {
    p.validate()?;
    check_dim("frame dimension", p.input_dim(), frames.cols())?;
    let t_len = frames.rows();
    if t_len == 0 {
        return Err(AweError::InvalidInput("empty frame sequence".into()));
    }
    let hidden = p.hidden_dim();
    let mut caches = Vec::with_capacity(p.layers.len());
    let mut masks = Vec::with_capacity(p.layers.len());
    let mut input = frames.as_slice().to_vec();
    for (l, layer) in p.layers.iter().enumerate() {
        let cache = match layer {
            RecurrentLayer::Lstm(lp) => lstm_layer_forward(lp, input, t_len),
            RecurrentLayer::Gru(gp) => gru_layer_forward(gp, input, t_len),
        };
        let is_top = l + 1 == p.layers.len();
        let mut next = cache.hs[hidden..].to_vec();
        let mask = if !is_top && mode == Mode::Train && p.inter_layer_dropout > 0.0 {
            let mut m = vec![F::zero(); next.len()];
            fill_dropout_mask(rng, &mut m, p.inter_layer_dropout)?;
            for (v, &k) in next.iter_mut().zip(&m) {
                *v *= k;
            }
            Some(m)
        } else {
            None
        };
        masks.push(mask);
        caches.push(cache);
        input = next;
    }
    let top = caches.last().expect("at least one layer");
    let h_final = top.hs[t_len * hidden..].to_vec();
    Ok((
        Vec1::from_vec_unchecked(h_final),
        StackedCache {
            layers: caches,
            masks,
        },
    ))
}

/// Accumulates into `grads` the gradient of a loss whose derivative with
/// respect to the top layer's final hidden state is `d_final`.
pub fn stacked_backward<F: Real>(
    p: &StackedRnnParams<F>,
    cache: &StackedCache<F>,
    d_final: &[F],
    grads: &mut StackedRnnParams<F>,
) -> Result<()> {
    let hidden = p.hidden_dim();
    check_dim("final hidden gradient", hidden, d_final.len())?;
    let t_len = cache.frames();
    let mut d_out = vec![F::zero(); t_len * hidden];
    d_out[(t_len - 1) * hidden..].copy_from_slice(d_final);
    for l in (0..p.layers.len()).rev() {
        let need_dx = l > 0;
        let c = &cache.layers[l];
        let dx = match (&p.layers[l], &mut grads.layers[l]) {
            (RecurrentLayer::Lstm(lp), RecurrentLayer::Lstm(lg)) => {
                lstm_layer_backward(lp, c, &d_out, lg, need_dx)
            }
            (RecurrentLayer::Gru(gp), RecurrentLayer::Gru(gg)) => {
                gru_layer_backward(gp, c, &d_out, gg, need_dx)
            }
            _ => {
                return Err(AweError::InvalidInput(
                    "gradient buffer does not match parameter cell kinds".into(),
                ))
            }
        };
        if let Some(mut dx) = dx {
            if let Some(mask) = &cache.masks[l - 1] {
                for (v, &k) in dx.iter_mut().zip(mask) {
                    *v *= k;
                }
            }
            d_out = dx;
        }
    }
    Ok(())
}

/// `Z_g = X W_g,in^T + b_g` for every gate, each `T x H`.
fn input_projections<F: Real>(weights: &[&[F]], biases: &[&[F]], input: &[F], t_len: usize, d_in: usize, hidden: usize) -> Vec<Vec<F>> {
    let stride = d_in + hidden;
    let x = View::new(input, t_len, d_in, d_in, 1);
    weights
        .iter()
        .zip(biases)
        .map(|(w, b)| {
            let mut z = Vec::with_capacity(t_len * hidden);
            for _ in 0..t_len {
                z.extend_from_slice(b);
            }
            let w_in_t = View::new(w, hidden, d_in, stride, 1).t();
            gemm(F::one(), x, w_in_t, F::one(), ViewMut::new(&mut z, t_len, hidden, hidden, 1));
            z
        })
        .collect()
}

fn lstm_layer_forward<F: Real>(p: &LstmParams<F>, input: Vec<F>, t_len: usize) -> LayerCache<F> {
    let hidden = p.hidden_dim();
    let d_in = p.input_dim();
    let stride = d_in + hidden;
    let ws = [p.w_i.as_slice(), p.w_f.as_slice(), p.w_c.as_slice(), p.w_o.as_slice()];
    let bs = [p.b_i.as_slice(), p.b_f.as_slice(), p.b_c.as_slice(), p.b_o.as_slice()];
    let mut gates = input_projections(&ws, &bs, &input, t_len, d_in, hidden);
    let mut hs = vec![F::zero(); (t_len + 1) * hidden];
    let mut cs = vec![F::zero(); (t_len + 1) * hidden];
    for t in 0..t_len {
        let (h_done, h_rest) = hs.split_at_mut((t + 1) * hidden);
        let h_prev = &h_done[t * hidden..];
        let h_new = &mut h_rest[..hidden];
        for (g, w) in gates.iter_mut().zip(&ws) {
            matvec_acc(&w[d_in..], stride, h_prev, &mut g[t * hidden..(t + 1) * hidden]);
        }
        let (c_done, c_rest) = cs.split_at_mut((t + 1) * hidden);
        let c_prev = &c_done[t * hidden..];
        let c_new = &mut c_rest[..hidden];
        let [gi, gf, gc, go] = &mut gates[..] else { unreachable!() };
        let range = t * hidden..(t + 1) * hidden;
        let (zi, zf, zc, zo) = (&mut gi[range.clone()], &mut gf[range.clone()], &mut gc[range.clone()], &mut go[range]);
        for k in 0..hidden {
            let i = sigmoid(zi[k]);
            let f = sigmoid(zf[k]);
            let cand = zc[k].tanh();
            let o = sigmoid(zo[k]);
            let c = i * cand + f * c_prev[k];
            zi[k] = i;
            zf[k] = f;
            zc[k] = cand;
            zo[k] = o;
            c_new[k] = c;
            h_new[k] = o * c.tanh();
        }
    }
    LayerCache {
        frames: t_len,
        input,
        hs,
        cs,
        gates,
        rh: Vec::new(),
    }
}

fn gru_layer_forward<F: Real>(p: &GruParams<F>, input: Vec<F>, t_len: usize) -> LayerCache<F> {
    let hidden = p.hidden_dim();
    let d_in = p.input_dim();
    let stride = d_in + hidden;
    let ws = [p.w_r.as_slice(), p.w_u.as_slice(), p.w_h.as_slice()];
    let bs = [p.b_r.as_slice(), p.b_u.as_slice(), p.b_h.as_slice()];
    let mut gates = input_projections(&ws, &bs, &input, t_len, d_in, hidden);
    let mut hs = vec![F::zero(); (t_len + 1) * hidden];
    let mut rh = vec![F::zero(); t_len * hidden];
    for t in 0..t_len {
        let range = t * hidden..(t + 1) * hidden;
        let (h_done, h_rest) = hs.split_at_mut((t + 1) * hidden);
        let h_prev = &h_done[t * hidden..];
        let h_new = &mut h_rest[..hidden];
        let [gr, gu, gh] = &mut gates[..] else { unreachable!() };
        let (zr, zu, zh) = (&mut gr[range.clone()], &mut gu[range.clone()], &mut gh[range.clone()]);
        matvec_acc(&ws[0][d_in..], stride, h_prev, zr);
        matvec_acc(&ws[1][d_in..], stride, h_prev, zu);
        let rh_t = &mut rh[range];
        for k in 0..hidden {
            zr[k] = sigmoid(zr[k]);
            zu[k] = sigmoid(zu[k]);
            rh_t[k] = zr[k] * h_prev[k];
        }
        matvec_acc(&ws[2][d_in..], stride, rh_t, zh);
        for k in 0..hidden {
            let cand = zh[k].tanh();
            zh[k] = cand;
            h_new[k] = zu[k] * h_prev[k] + (F::one() - zu[k]) * cand;
        }
    }
    LayerCache {
        frames: t_len,
        input,
        hs,
        cs: Vec::new(),
        gates,
        rh,
    }
}

/// Weight, bias and input gradients from per-gate pre-activation
/// gradients. `recurrent_inputs[g]` is the `T x H` matrix the recurrent
/// block of gate `g` multiplied.
#[allow(clippy::too_many_arguments)]
fn accumulate_gate_grads<F: Real>(
    weights: &[&[F]],
    grad_w: &mut [&mut [F]],
    grad_b: &mut [&mut [F]],
    dz: &[Vec<F>],
    input: &[F],
    recurrent_inputs: &[&[F]],
    t_len: usize,
    d_in: usize,
    hidden: usize,
    need_dx: bool,
) -> Option<Vec<F>> {
    let stride = d_in + hidden;
    let x = View::new(input, t_len, d_in, d_in, 1);
    for g in 0..dz.len() {
        let dz_t = View::new(&dz[g], t_len, hidden, hidden, 1).t();
        gemm(F::one(), dz_t, x, F::one(), ViewMut::new(grad_w[g], hidden, d_in, stride, 1));
        let rec = View::new(recurrent_inputs[g], t_len, hidden, hidden, 1);
        gemm(F::one(), dz_t, rec, F::one(), ViewMut::new(&mut grad_w[g][d_in..], hidden, hidden, stride, 1));
        for row in dz[g].chunks_exact(hidden) {
            for (b, &d) in grad_b[g].iter_mut().zip(row) {
                *b += d;
            }
        }
    }
    need_dx.then(|| {
        let mut dx = vec![F::zero(); t_len * d_in];
        for g in 0..dz.len() {
            let dz_v = View::new(&dz[g], t_len, hidden, hidden, 1);
            let w_in = View::new(weights[g], hidden, d_in, stride, 1);
            gemm(F::one(), dz_v, w_in, F::one(), ViewMut::new(&mut dx, t_len, d_in, d_in, 1));
        }
        dx
    })
}

fn lstm_layer_backward<F: Real>(
    p: &LstmParams<F>,
    c: &LayerCache<F>,
    d_out: &[F],
    g: &mut LstmParams<F>,
    need_dx: bool,
) -> Option<Vec<F>> {
    let hidden = p.hidden_dim();
    let d_in = p.input_dim();
    let stride = d_in + hidden;
    let t_len = c.frames;
    let ws = [p.w_i.as_slice(), p.w_f.as_slice(), p.w_c.as_slice(), p.w_o.as_slice()];
    let mut dz = vec![vec![F::zero(); t_len * hidden]; 4];
    let mut dh_next = vec![F::zero(); hidden];
    let mut dc_next = vec![F::zero(); hidden];
    let one = F::one();
    for t in (0..t_len).rev() {
        let range = t * hidden..(t + 1) * hidden;
        let (i, f, cand, o) = (&c.gates[0][range.clone()], &c.gates[1][range.clone()], &c.gates[2][range.clone()], &c.gates[3][range.clone()]);
        let c_prev = &c.cs[t * hidden..(t + 1) * hidden];
        let c_cur = &c.cs[(t + 1) * hidden..(t + 2) * hidden];
        let d_out_t = &d_out[range.clone()];
        for k in 0..hidden {
            let dh = d_out_t[k] + dh_next[k];
            let tc = c_cur[k].tanh();
            let dc = dc_next[k] + dh * o[k] * (one - tc * tc);
            dz[0][t * hidden + k] = dc * cand[k] * i[k] * (one - i[k]);
            dz[1][t * hidden + k] = dc * c_prev[k] * f[k] * (one - f[k]);
            dz[2][t * hidden + k] = dc * i[k] * (one - cand[k] * cand[k]);
            dz[3][t * hidden + k] = dh * tc * o[k] * (one - o[k]);
            dc_next[k] = dc * f[k];
        }
        dh_next.fill(F::zero());
        for (gate, w) in ws.iter().enumerate() {
            matvec_t_acc(&w[d_in..], stride, &dz[gate][range.clone()], &mut dh_next);
        }
    }
    let h_prev = &c.hs[..t_len * hidden];
    let LstmParams { w_i, w_f, w_c, w_o, b_i, b_f, b_c, b_o } = g;
    accumulate_gate_grads(
        &ws,
        &mut [w_i.as_mut_slice(), w_f.as_mut_slice(), w_c.as_mut_slice(), w_o.as_mut_slice()],
        &mut [b_i.as_mut_slice(), b_f.as_mut_slice(), b_c.as_mut_slice(), b_o.as_mut_slice()],
        &dz,
        &c.input,
        &[h_prev; 4],
        t_len,
        d_in,
        hidden,
        need_dx,
    )
}

fn gru_layer_backward<F: Real>(
    p: &GruParams<F>,
    c: &LayerCache<F>,
    d_out: &[F],
    g: &mut GruParams<F>,
    need_dx: bool,
) -> Option<Vec<F>> {
    let hidden = p.hidden_dim();
    let d_in = p.input_dim();
    let stride = d_in + hidden;
    let t_len = c.frames;
    let ws = [p.w_r.as_slice(), p.w_u.as_slice(), p.w_h.as_slice()];
    let mut dz = vec![vec![F::zero(); t_len * hidden]; 3];
    let mut dh_next = vec![F::zero(); hidden];
    let mut d_rh = vec![F::zero(); hidden];
    let one = F::one();
    for t in (0..t_len).rev() {
        let range = t * hidden..(t + 1) * hidden;
        let (r, u, cand) = (&c.gates[0][range.clone()], &c.gates[1][range.clone()], &c.gates[2][range.clone()]);
        let h_prev = &c.hs[t * hidden..(t + 1) * hidden];
        let d_out_t = &d_out[range.clone()];
        // dh_next becomes dh_t here and is rebuilt as dh_{t-1} below.
        for k in 0..hidden {
            let dh = d_out_t[k] + dh_next[k];
            dz[1][t * hidden + k] = dh * (h_prev[k] - cand[k]) * u[k] * (one - u[k]);
            dz[2][t * hidden + k] = dh * (one - u[k]) * (one - cand[k] * cand[k]);
            dh_next[k] = dh * u[k];
        }
        d_rh.fill(F::zero());
        matvec_t_acc(&ws[2][d_in..], stride, &dz[2][range.clone()], &mut d_rh);
        for k in 0..hidden {
            dz[0][t * hidden + k] = d_rh[k] * h_prev[k] * r[k] * (one - r[k]);
            dh_next[k] += d_rh[k] * r[k];
        }
        matvec_t_acc(&ws[0][d_in..], stride, &dz[0][range.clone()], &mut dh_next);
        matvec_t_acc(&ws[1][d_in..], stride, &dz[1][range], &mut dh_next);
    }
    let h_prev = &c.hs[..t_len * hidden];
    let GruParams { w_r, w_u, w_h, b_r, b_u, b_h } = g;
    accumulate_gate_grads(
        &ws,
        &mut [w_r.as_mut_slice(), w_u.as_mut_slice(), w_h.as_mut_slice()],
        &mut [b_r.as_mut_slice(), b_u.as_mut_slice(), b_h.as_mut_slice()],
        &dz,
        &c.input,
        &[h_prev, h_prev, &c.rh],
        t_len,
        d_in,
        hidden,
        need_dx,
    )
}

/// Flattens every tensor of the stack into one vector, in
/// [`RecurrentLayer::tensors`] order layer by layer.
pub fn flatten<F: Real>(p: &StackedRnnParams<F>) -> Vec<F> {
    p.layers.iter().flat_map(|l| l.tensors().into_iter().flatten().copied().collect::<Vec<_>>()).collect()
}
