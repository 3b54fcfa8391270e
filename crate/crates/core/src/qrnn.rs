//! Quasi-recurrent layers and the encoder-decoder built from them.
//!
//! Sequences are batched time-major: a `[T·B, C]` tensor whose row
//! `t·B + b` holds timestep `t` of sequence `b`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::layers::ModelRng;
use crate::numerics::{Axis, Dense, Graph, NodeId, NumericsError, ParamStore, Tensor};

#[derive(Debug, Error)]
pub enum QrnnError {
    #[error("expected {expected} input channels, got {got}")]
    Channels { expected: usize, got: usize },
    #[error("expected a sequence of length {expected}, got {got}")]
    Length { expected: usize, got: usize },
    #[error("teacher sequence has {got} steps, decoder needs {expected}")]
    TeacherLength { expected: usize, got: usize },
    #[error("sequence must have at least one step")]
    Empty,
    #[error("model layout: {0}")]
    Layout(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Recurrent pooling rule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// `c = f⊙c' + (1−f)⊙z`, `h = o⊙c`.
    #[default]
    Fo,
    /// `c = f⊙c' + (1−f)⊙z`, `h = c`.
    F,
}

impl Pooling {
    fn gates(self) -> usize {
        match self {
            Pooling::Fo => 3,
            Pooling::F => 2,
        }
    }
}

/// How the encoder context reaches the decoder.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContextMode {
    /// Final encoder cell state of layer `l` initializes decoder layer `l`.
    #[default]
    InitState,
    /// The concatenated context is appended to every decoder input; decoder
    /// cells start at zero.
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QrnnConfig {
    pub hidden: usize,
    pub kernel: usize,
    pub pooling: Pooling,
    pub context: ContextMode,
}

impl Default for QrnnConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            kernel: 2,
            pooling: Pooling::Fo,
            context: ContextMode::InitState,
        }
    }
}

/// One causal-convolution + pooling layer. The convolution weight is
/// `[k·C_in, g·H]`; input block `j` of a window holds `x_{t−k+1+j}` and the
/// output columns are the `z`, `f` (and `o`) pre-activations in that order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QrnnLayer {
    pub conv: Dense,
    pub kernel: usize,
    pub input: usize,
    pub hidden: usize,
    pub pooling: Pooling,
}

/// Gate activations of a layer over a whole sequence (or one step).
struct Gates {
    f: NodeId,
    // (1 − f) ⊙ z
    a: NodeId,
    o: Option<NodeId>,
}

impl QrnnLayer {
    pub fn new(ps: &mut ParamStore, name: &str, input: usize, cfg: &QrnnConfig, rng: &mut ModelRng) -> Self {
        let conv = Dense::new(ps, name, cfg.kernel * input, cfg.pooling.gates() * cfg.hidden, rng);
        Self {
            conv,
            kernel: cfg.kernel,
            input,
            hidden: cfg.hidden,
            pooling: cfg.pooling,
        }
    }

    pub fn lookup(ps: &ParamStore, name: &str, input: usize, cfg: &QrnnConfig) -> Result<Self, QrnnError> {
        let conv = Dense::lookup(ps, name).ok_or_else(|| QrnnError::Layout(format!("missing layer {name}")))?;
        if conv.fan_in != cfg.kernel * input || conv.fan_out != cfg.pooling.gates() * cfg.hidden {
            return Err(QrnnError::Layout(format!(
                "layer {name} is {}x{}, expected {}x{}",
                conv.fan_in,
                conv.fan_out,
                cfg.kernel * input,
                cfg.pooling.gates() * cfg.hidden
            )));
        }
        Ok(Self {
            conv,
            kernel: cfg.kernel,
            input,
            hidden: cfg.hidden,
            pooling: cfg.pooling,
        })
    }

    fn check_channels(&self, g: &Graph<'_>, x: NodeId) -> Result<(), QrnnError> {
        let got = g.value(x).cols();
        if got != self.input {
            return Err(QrnnError::Channels {
                expected: self.input,
                got,
            });
        }
        Ok(())
    }

    fn gates(&self, g: &mut Graph<'_>, window: NodeId) -> Result<Gates, NumericsError> {
        let h = self.hidden;
        let pre = self.conv.forward(g, window)?;
        let zp = g.slice_cols(pre, 0..h)?;
        let fp = g.slice_cols(pre, h..2 * h)?;
        let z = g.tanh(zp)?;
        let f = g.sigmoid(fp)?;
        let keep = g.one_minus(f)?;
        let a = g.hadamard(keep, z)?;
        let o = match self.pooling {
            Pooling::Fo => {
                let op = g.slice_cols(pre, 2 * h..3 * h)?;
                Some(g.sigmoid(op)?)
            }
            Pooling::F => None,
        };
        Ok(Gates { f, a, o })
    }

    /// Causal windows `[x_{t−k+1} | … | x_t]` for the whole sequence, with
    /// zeros before the start.
    fn windows(&self, g: &mut Graph<'_>, x: NodeId, steps: usize, batch: usize) -> Result<NodeId, NumericsError> {
        let mut blocks = Vec::with_capacity(self.kernel);
        for j in 0..self.kernel {
            let lag = self.kernel - 1 - j;
            if lag == 0 {
                blocks.push(x);
            } else if lag >= steps {
                blocks.push(g.constant(Tensor::zeros(steps * batch, self.input)));
            } else {
                let pad = g.constant(Tensor::zeros(lag * batch, self.input));
                let body = g.slice_rows(x, 0..(steps - lag) * batch)?;
                blocks.push(g.concat(&[pad, body], Axis::Rows)?);
            }
        }
        if blocks.len() == 1 {
            Ok(blocks[0])
        } else {
            g.concat(&blocks, Axis::Cols)
        }
    }

    /// Runs the layer over a `[T·B, C_in]` sequence from cell state `c0`
    /// (`[B, H]`). Returns the `[T·B, H]` outputs and the final cell state.
    pub fn forward_seq(
        &self,
        g: &mut Graph<'_>,
        x: NodeId,
        batch: usize,
        c0: NodeId,
    ) -> Result<(NodeId, NodeId), QrnnError> {
        self.check_channels(g, x)?;
        let rows = g.value(x).rows();
        if rows == 0 || rows % batch != 0 {
            return Err(QrnnError::Empty);
        }
        let steps = rows / batch;
        let win = self.windows(g, x, steps, batch)?;
        let gates = self.gates(g, win)?;
        let mut c = c0;
        let mut cells = Vec::with_capacity(steps);
        for t in 0..steps {
            let r = t * batch..(t + 1) * batch;
            let f = g.slice_rows(gates.f, r.clone())?;
            let a = g.slice_rows(gates.a, r)?;
            let kept = g.hadamard(f, c)?;
            c = g.add(kept, a)?;
            cells.push(c);
        }
        let all = if cells.len() == 1 { cells[0] } else { g.concat(&cells, Axis::Rows)? };
        let h = match gates.o {
            Some(o) => g.hadamard(o, all)?,
            None => all,
        };
        Ok((h, c))
    }

    /// One step from `x_t` (`[B, C_in]`), the previous `k − 1` inputs (oldest
    /// first; missing ones are zeros) and `c_prev`. Returns `(h_t, c_t)`.
    pub fn step(&self, g: &mut Graph<'_>, x: NodeId, past: &[NodeId], c_prev: NodeId) -> Result<(NodeId, NodeId), QrnnError> {
        self.check_channels(g, x)?;
        let batch = g.value(x).rows();
        let need = self.kernel - 1;
        let mut blocks = Vec::with_capacity(self.kernel);
        for j in 0..need {
            // block j holds x_{t−need+j}
            let back = need - j;
            if back <= past.len() {
                blocks.push(past[past.len() - back]);
            } else {
                blocks.push(g.constant(Tensor::zeros(batch, self.input)));
            }
        }
        blocks.push(x);
        let win = if blocks.len() == 1 { x } else { g.concat(&blocks, Axis::Cols)? };
        let gates = self.gates(g, win)?;
        let kept = g.hadamard(gates.f, c_prev)?;
        let c = g.add(kept, gates.a)?;
        let h = match gates.o {
            Some(o) => g.hadamard(o, c)?,
            None => c,
        };
        Ok((h, c))
    }
}

/// Stacked QRNN encoder and decoder with a linear output projection.
#[derive(Clone, Debug, PartialEq)]
pub struct QrnnEncoderDecoder {
    pub encoder: Vec<QrnnLayer>,
    pub decoder: Vec<QrnnLayer>,
    pub proj: Dense,
    pub config: QrnnConfig,
    pub input_dim: usize,
    pub output_dim: usize,
    /// Adds the decoder input to the projection (`ŷ_t = y_{t−1} + Δ`).
    pub skip: bool,
}

/// Decoder state carried between autoregressive steps.
pub struct DecoderState {
    cells: Vec<NodeId>,
    past: Vec<Vec<NodeId>>,
    concat_ctx: Option<NodeId>,
}

impl QrnnEncoderDecoder {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        layers: usize,
        config: &QrnnConfig,
        skip: bool,
        rng: &mut ModelRng,
    ) -> Self {
        let h = config.hidden;
        let ctx = layers * h;
        let dec_in = output_dim + if config.context == ContextMode::Concat { ctx } else { 0 };
        let encoder = (0..layers)
            .map(|l| QrnnLayer::new(ps, &format!("{prefix}.enc.{l}"), if l == 0 { input_dim } else { h }, config, rng))
            .collect();
        let decoder = (0..layers)
            .map(|l| QrnnLayer::new(ps, &format!("{prefix}.dec.{l}"), if l == 0 { dec_in } else { h }, config, rng))
            .collect();
        let proj = Dense::new(ps, &format!("{prefix}.proj"), h, output_dim, rng);
        if skip {
            // Start as the identity step: the first forecast repeats the input.
            ps.get_mut(proj.weight).data_mut().fill(0.0);
        }
        Self {
            encoder,
            decoder,
            proj,
            config: config.clone(),
            input_dim,
            output_dim,
            skip,
        }
    }

    pub fn lookup(
        ps: &ParamStore,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        layers: usize,
        config: &QrnnConfig,
        skip: bool,
    ) -> Result<Self, QrnnError> {
        let h = config.hidden;
        let dec_in = output_dim + if config.context == ContextMode::Concat { layers * h } else { 0 };
        let encoder = (0..layers)
            .map(|l| QrnnLayer::lookup(ps, &format!("{prefix}.enc.{l}"), if l == 0 { input_dim } else { h }, config))
            .collect::<Result<_, _>>()?;
        let decoder = (0..layers)
            .map(|l| QrnnLayer::lookup(ps, &format!("{prefix}.dec.{l}"), if l == 0 { dec_in } else { h }, config))
            .collect::<Result<_, _>>()?;
        let proj = Dense::lookup(ps, &format!("{prefix}.proj"))
            .filter(|d| d.fan_in == h && d.fan_out == output_dim)
            .ok_or_else(|| QrnnError::Layout(format!("missing or misshapen {prefix}.proj")))?;
        Ok(Self {
            encoder,
            decoder,
            proj,
            config: config.clone(),
            input_dim,
            output_dim,
            skip,
        })
    }

    pub fn layers(&self) -> usize {
        self.encoder.len()
    }

    pub fn context_dim(&self) -> usize {
        self.layers() * self.config.hidden
    }

    /// Encodes a `[T·B, input_dim]` sequence; returns each layer's final
    /// cell state (`[B, H]`).
    pub fn encode_states(&self, g: &mut Graph<'_>, x: NodeId, batch: usize) -> Result<Vec<NodeId>, QrnnError> {
        let c0 = g.constant(Tensor::zeros(batch, self.config.hidden));
        let mut h = x;
        let mut finals = Vec::with_capacity(self.layers());
        for layer in &self.encoder {
            let (hs, c) = layer.forward_seq(g, h, batch, c0)?;
            finals.push(c);
            h = hs;
        }
        Ok(finals)
    }

    /// The context vector: final encoder cell states concatenated, `[B, N·H]`.
    pub fn encode(&self, g: &mut Graph<'_>, x: NodeId, batch: usize) -> Result<NodeId, QrnnError> {
        let states = self.encode_states(g, x, batch)?;
        Ok(if states.len() == 1 { states[0] } else { g.concat(&states, Axis::Cols)? })
    }

    fn initial_cells(&self, g: &mut Graph<'_>, states: &[NodeId], batch: usize) -> Vec<NodeId> {
        match self.config.context {
            ContextMode::InitState => states.to_vec(),
            ContextMode::Concat => {
                let z = g.constant(Tensor::zeros(batch, self.config.hidden));
                vec![z; self.layers()]
            }
        }
    }

    fn output(&self, g: &mut Graph<'_>, h: NodeId, input: NodeId) -> Result<NodeId, NumericsError> {
        let y = self.proj.forward(g, h)?;
        if self.skip {
            let prev = if g.value(input).cols() == self.output_dim {
                input
            } else {
                g.slice_cols(input, 0..self.output_dim)?
            };
            g.add(y, prev)
        } else {
            Ok(y)
        }
    }

    fn tile_rows(g: &mut Graph<'_>, x: NodeId, times: usize) -> Result<NodeId, NumericsError> {
        if times == 1 {
            Ok(x)
        } else {
            g.concat(&vec![x; times], Axis::Rows)
        }
    }

    /// Teacher-forced decoding of `t_f` steps. Decoder inputs are `seed`
    /// (`[B, out]`) followed by the first `t_f − 1` rows-blocks of `teacher`
    /// (`[t_f·B, out]`). Returns `None` when `t_f == 0`.
    pub fn decode_teacher(
        &self,
        g: &mut Graph<'_>,
        states: &[NodeId],
        seed: NodeId,
        teacher: Option<NodeId>,
        t_f: usize,
    ) -> Result<Option<NodeId>, QrnnError> {
        if t_f == 0 {
            return Ok(None);
        }
        let batch = g.value(seed).rows();
        let mut parts = vec![seed];
        if t_f > 1 {
            let teacher = teacher.ok_or(QrnnError::TeacherLength { expected: t_f, got: 0 })?;
            let rows = g.value(teacher).rows();
            if rows != t_f * batch {
                return Err(QrnnError::TeacherLength {
                    expected: t_f,
                    got: rows / batch.max(1),
                });
            }
            parts.push(g.slice_rows(teacher, 0..(t_f - 1) * batch)?);
        }
        let mut input = if parts.len() == 1 { seed } else { g.concat(&parts, Axis::Rows)? };
        if self.config.context == ContextMode::Concat {
            let ctx = g.concat(states, Axis::Cols)?;
            let tiled = Self::tile_rows(g, ctx, t_f)?;
            input = g.concat(&[input, tiled], Axis::Cols)?;
        }
        let cells = self.initial_cells(g, states, batch);
        let mut h = input;
        for (layer, &c0) in self.decoder.iter().zip(&cells) {
            h = layer.forward_seq(g, h, batch, c0)?.0;
        }
        Ok(Some(self.output(g, h, input)?))
    }

    pub fn start_decoder(&self, g: &mut Graph<'_>, states: &[NodeId], batch: usize) -> Result<DecoderState, QrnnError> {
        let concat_ctx = match self.config.context {
            ContextMode::Concat => Some(g.concat(states, Axis::Cols)?),
            ContextMode::InitState => None,
        };
        Ok(DecoderState {
            cells: self.initial_cells(g, states, batch),
            past: vec![Vec::new(); self.layers()],
            concat_ctx,
        })
    }

    /// One autoregressive step from the previous output (or the seed).
    pub fn decode_step(&self, g: &mut Graph<'_>, state: &mut DecoderState, prev: NodeId) -> Result<NodeId, QrnnError> {
        let input = match state.concat_ctx {
            Some(ctx) => g.concat(&[prev, ctx], Axis::Cols)?,
            None => prev,
        };
        let mut h = input;
        let keep = self.config.kernel.saturating_sub(1);
        for (l, layer) in self.decoder.iter().enumerate() {
            let (out, c) = layer.step(g, h, &state.past[l], state.cells[l])?;
            state.cells[l] = c;
            if keep > 0 {
                state.past[l].push(h);
                if state.past[l].len() > keep {
                    state.past[l].remove(0);
                }
            }
            h = out;
        }
        Ok(self.output(g, h, input)?)
    }

    /// Autoregressive decoding: each output becomes the next input.
    pub fn decode_autoregressive(
        &self,
        g: &mut Graph<'_>,
        states: &[NodeId],
        seed: NodeId,
        t_f: usize,
    ) -> Result<Vec<NodeId>, QrnnError> {
        let batch = g.value(seed).rows();
        let mut state = self.start_decoder(g, states, batch)?;
        let mut prev = seed;
        let mut out = Vec::with_capacity(t_f);
        for _ in 0..t_f {
            prev = self.decode_step(g, &mut state, prev)?;
            out.push(prev);
        }
        Ok(out)
    }
}

/// Packs `B` sequences of equal length `T` (each a list of `C`-vectors)
/// time-major into `[T·B, C]`.
pub fn pack_time_major(seqs: &[Vec<Vec<f64>>]) -> Tensor {
    let b = seqs.len();
    let t = seqs[0].len();
    let c = seqs[0][0].len();
    let mut data = Vec::with_capacity(t * b * c);
    for step in 0..t {
        for s in seqs {
            debug_assert_eq!(s.len(), t);
            data.extend_from_slice(&s[step]);
        }
    }
    Tensor::matrix(t * b, c, data)
}

/// Inverse of [`pack_time_major`].
pub fn unpack_time_major(x: &Tensor, batch: usize) -> Vec<Vec<Vec<f64>>> {
    let t = x.rows() / batch;
    (0..batch)
        .map(|b| (0..t).map(|s| x.row_slice(s * batch + b).to_vec()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::layers::init_rng;
    use crate::numerics::{finite_diff_check, sigmoid};
    use rand::Rng;

    fn layer(input: usize, hidden: usize, kernel: usize, seed: u64) -> (ParamStore, QrnnLayer) {
        let mut ps = ParamStore::new();
        let cfg = QrnnConfig {
            hidden,
            kernel,
            ..QrnnConfig::default()
        };
        let l = QrnnLayer::new(&mut ps, "q", input, &cfg, &mut init_rng(seed));
        (ps, l)
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = init_rng(seed);
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    fn run(ps: &ParamStore, l: &QrnnLayer, x: &Tensor, c0: &Tensor, batch: usize) -> (Tensor, Tensor) {
        let mut g = Graph::new(ps);
        let xi = g.input("x", x.clone()).unwrap();
        let ci = g.input("c0", c0.clone()).unwrap();
        let (h, c) = l.forward_seq(&mut g, xi, batch, ci).unwrap();
        (g.value(h).clone(), g.value(c).clone())
    }

    fn set_forget_bias(ps: &mut ParamStore, l: &QrnnLayer, bias: f64) {
        let h = l.hidden;
        let w = ps.get_mut(l.conv.weight);
        for r in 0..w.rows() {
            for c in h..2 * h {
                w.set(r, c, 0.0);
            }
        }
        let b = ps.get_mut(l.conv.bias);
        for c in h..2 * h {
            b.set(0, c, bias);
        }
    }

    /// Scalar unroll of fo-pooling for a single sequence.
    fn reference(ps: &ParamStore, l: &QrnnLayer, xs: &[Vec<f64>], c0: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let w = ps.get(l.conv.weight);
        let b = ps.get(l.conv.bias);
        let (k, cin, h) = (l.kernel, l.input, l.hidden);
        let mut c = c0.to_vec();
        let mut hs = Vec::new();
        for t in 0..xs.len() {
            let mut pre = vec![0.0; 3 * h];
            for (g, p) in pre.iter_mut().enumerate() {
                *p = b.get(0, g);
                for j in 0..k {
                    let src = t as isize - (k - 1 - j) as isize;
                    if src < 0 {
                        continue;
                    }
                    for i in 0..cin {
                        *p += xs[src as usize][i] * w.get(j * cin + i, g);
                    }
                }
            }
            let mut ht = vec![0.0; h];
            for n in 0..h {
                let z = pre[n].tanh();
                let f = sigmoid(pre[h + n]);
                let o = sigmoid(pre[2 * h + n]);
                c[n] = f * c[n] + (1.0 - f) * z;
                ht[n] = o * c[n];
            }
            hs.push(ht);
        }
        (hs, c)
    }

    #[test]
    fn matches_scalar_unroll() {
        let (ps, l) = layer(2, 2, 2, 1);
        let x = random(3, 2, 2);
        let c0 = random(1, 2, 3);
        let (h, c) = run(&ps, &l, &x, &c0, 1);
        let xs: Vec<Vec<f64>> = (0..3).map(|t| x.row_slice(t).to_vec()).collect();
        let (rh, rc) = reference(&ps, &l, &xs, c0.data());
        for t in 0..3 {
            for n in 0..2 {
                assert!((h.get(t, n) - rh[t][n]).abs() < 1e-14);
            }
        }
        assert!((c.data()[0] - rc[0]).abs() < 1e-14 && (c.data()[1] - rc[1]).abs() < 1e-14);
    }

    #[test]
    fn saturated_forget_gate_keeps_cell() {
        let (mut ps, l) = layer(3, 4, 2, 4);
        set_forget_bias(&mut ps, &l, 20.0);
        let x = random(3, 3, 5);
        let c0 = random(1, 4, 6);
        let mut g = Graph::new(&ps);
        let xi = g.input("x", x).unwrap();
        let ci = g.input("c0", c0.clone()).unwrap();
        let mut c = ci;
        let mut prev = Vec::new();
        for t in 0..3 {
            let xt = g.slice_rows(xi, t..t + 1).unwrap();
            c = l.step(&mut g, xt, &prev, c).unwrap().1;
            prev = vec![xt];
            assert!(g.value(c).max_abs_diff(&c0) < 1e-8);
        }
    }

    #[test]
    fn zero_forget_gate_is_memoryless() {
        let (mut ps, l) = layer(3, 4, 2, 7);
        set_forget_bias(&mut ps, &l, -20.0);
        let x = random(5, 3, 8);
        let mut g = Graph::new(&ps);
        let xi = g.input("x", x).unwrap();
        let c0 = g.input("c0", random(1, 4, 9)).unwrap();
        let win = l.windows(&mut g, xi, 5, 1).unwrap();
        let pre = l.conv.forward(&mut g, win).unwrap();
        let zp = g.slice_cols(pre, 0..4).unwrap();
        let z = g.tanh(zp).unwrap();
        let (_, _) = l.forward_seq(&mut g, xi, 1, c0).unwrap();
        let mut c = c0;
        for t in 0..5 {
            let ft = g.slice_rows(xi, t..t + 1).unwrap();
            let past: Vec<NodeId> = if t > 0 { vec![g.slice_rows(xi, t - 1..t).unwrap()] } else { vec![] };
            c = l.step(&mut g, ft, &past, c).unwrap().1;
            let zt = g.value(z).row_slice(t).to_vec();
            for (a, b) in g.value(c).data().iter().zip(&zt) {
                assert!((a - b).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn parallel_equals_stepwise() {
        let (ps, l) = layer(3, 5, 3, 10);
        let batch = 2;
        let x = random(4 * batch, 3, 11);
        let c0 = random(batch, 5, 12);
        let (h, c) = run(&ps, &l, &x, &c0, batch);
        let mut g = Graph::new(&ps);
        let xi = g.input("x", x).unwrap();
        let mut ci = g.input("c0", c0).unwrap();
        let mut past = Vec::new();
        for t in 0..4 {
            let xt = g.slice_rows(xi, t * batch..(t + 1) * batch).unwrap();
            let (ht, ct) = l.step(&mut g, xt, &past, ci).unwrap();
            ci = ct;
            past.push(xt);
            for b in 0..batch {
                assert_eq!(g.value(ht).row_slice(b), h.row_slice(t * batch + b));
            }
        }
        assert_eq!(g.value(ci), &c);
    }

    #[test]
    fn causal_under_perturbation() {
        let (ps, l) = layer(2, 3, 2, 13);
        let x = random(6, 2, 14);
        let c0 = Tensor::zeros(1, 3);
        let (h, _) = run(&ps, &l, &x, &c0, 1);
        for t in 0..6 {
            let mut xp = x.clone();
            xp.set(t, 0, xp.get(t, 0) + 0.5);
            let (hp, _) = run(&ps, &l, &xp, &c0, 1);
            for s in 0..6 {
                let same = hp.row_slice(s) == h.row_slice(s);
                assert_eq!(same, s < t, "t={t} s={s}");
            }
        }
    }

    #[test]
    fn rejects_channel_mismatch() {
        let (ps, l) = layer(2, 3, 2, 0);
        let mut g = Graph::new(&ps);
        let x = g.input("x", Tensor::zeros(3, 4)).unwrap();
        let c0 = g.constant(Tensor::zeros(1, 3));
        assert!(matches!(l.forward_seq(&mut g, x, 1, c0), Err(QrnnError::Channels { expected: 2, got: 4 })));
    }

    #[test]
    fn layer_gradient_check() {
        let (ps, l) = layer(4, 4, 2, 15);
        let x = random(3, 4, 16);
        let target = random(3, 4, 17);
        let rep = finite_diff_check(&ps, 1e-4, |g| -> Result<NodeId, QrnnError> {
            let xi = g.constant(x.clone());
            let c0 = g.constant(Tensor::zeros(1, 4));
            let (h, _) = l.forward_seq(g, xi, 1, c0)?;
            let t = g.constant(target.clone());
            let d = g.sub(h, t)?;
            let a = g.abs(d)?;
            Ok(g.mean(a)?)
        })
        .unwrap();
        assert!(rep.max_rel_error <= 1e-4, "{rep:?}");
    }

    fn encdec(ctx: ContextMode, skip: bool, layers: usize, seed: u64) -> (ParamStore, QrnnEncoderDecoder) {
        let mut ps = ParamStore::new();
        let cfg = QrnnConfig {
            hidden: 6,
            context: ctx,
            ..QrnnConfig::default()
        };
        let m = QrnnEncoderDecoder::new(&mut ps, "m", 3, 2, layers, &cfg, skip, &mut init_rng(seed));
        (ps, m)
    }

    #[test]
    fn first_step_teacher_equals_autoregressive() {
        for ctx in [ContextMode::InitState, ContextMode::Concat] {
            let (ps, m) = encdec(ctx, true, 2, 18);
            let mut g = Graph::new(&ps);
            let x = g.input("x", random(5 * 2, 3, 19)).unwrap();
            let seed = g.input("seed", random(2, 2, 20)).unwrap();
            let states = m.encode_states(&mut g, x, 2).unwrap();
            let tf = m.decode_teacher(&mut g, &states, seed, None, 1).unwrap().unwrap();
            let ar = m.decode_autoregressive(&mut g, &states, seed, 1).unwrap();
            assert_eq!(g.value(tf), g.value(ar[0]));
            assert!(m.decode_teacher(&mut g, &states, seed, None, 0).unwrap().is_none());
            assert!(m.decode_autoregressive(&mut g, &states, seed, 0).unwrap().is_empty());
        }
    }

    #[test]
    fn teacher_forcing_with_own_outputs_matches_autoregressive() {
        let (ps, m) = encdec(ContextMode::InitState, false, 2, 21);
        let mut g = Graph::new(&ps);
        let x = g.input("x", random(4, 3, 22)).unwrap();
        let seed = g.input("seed", random(1, 2, 23)).unwrap();
        let states = m.encode_states(&mut g, x, 1).unwrap();
        let ar = m.decode_autoregressive(&mut g, &states, seed, 5).unwrap();
        let own = g.concat(&ar, Axis::Rows).unwrap();
        let tf = m.decode_teacher(&mut g, &states, seed, Some(own), 5).unwrap().unwrap();
        let tv = g.value(tf).clone();
        for (t, &n) in ar.iter().enumerate() {
            let a = g.value(n).row_slice(0);
            for (p, q) in a.iter().zip(tv.row_slice(t)) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn teacher_length_is_checked() {
        let (ps, m) = encdec(ContextMode::InitState, false, 1, 24);
        let mut g = Graph::new(&ps);
        let x = g.input("x", random(4, 3, 25)).unwrap();
        let seed = g.input("seed", random(1, 2, 26)).unwrap();
        let teacher = g.input("t", random(3, 2, 27)).unwrap();
        let states = m.encode_states(&mut g, x, 1).unwrap();
        assert!(matches!(
            m.decode_teacher(&mut g, &states, seed, Some(teacher), 4),
            Err(QrnnError::TeacherLength { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn memoryless_encoder_forgets_first_step() {
        let mut ps = ParamStore::new();
        let cfg = QrnnConfig {
            hidden: 4,
            kernel: 1,
            ..QrnnConfig::default()
        };
        let m = QrnnEncoderDecoder::new(&mut ps, "m", 3, 2, 2, &cfg, false, &mut init_rng(28));
        for l in &m.encoder {
            set_forget_bias(&mut ps, l, -800.0);
        }
        let a = random(4, 3, 29);
        let mut b = a.clone();
        b.set(0, 1, 5.0);
        let ctx = |x: Tensor| {
            let mut g = Graph::new(&ps);
            let xi = g.input("x", x).unwrap();
            let c = m.encode(&mut g, xi, 1).unwrap();
            g.value(c).clone()
        };
        assert_eq!(ctx(a.clone()), ctx(b));
        assert_eq!(ctx(a.clone()), ctx(a));
    }

    #[test]
    fn two_layer_stack_gradient_check() {
        for ctx in [ContextMode::InitState, ContextMode::Concat] {
            let (ps, m) = encdec(ctx, true, 2, 30);
            let x = random(3 * 2, 3, 31);
            let seed = random(2, 2, 32);
            let teacher = random(3 * 2, 2, 33);
            let rep = finite_diff_check(&ps, 1e-4, |g| -> Result<NodeId, QrnnError> {
                let xi = g.constant(x.clone());
                let si = g.constant(seed.clone());
                let ti = g.constant(teacher.clone());
                let states = m.encode_states(g, xi, 2)?;
                let y = m.decode_teacher(g, &states, si, Some(ti), 3)?.expect("t_f > 0");
                let d = g.sub(y, ti)?;
                let a = g.abs(d)?;
                Ok(g.mean(a)?)
            })
            .unwrap();
            assert!(rep.max_rel_error <= 1e-4, "{ctx:?}: {rep:?}");
        }
    }

    #[test]
    fn pack_round_trip() {
        let seqs = vec![vec![vec![1.0, 2.0], vec![3.0, 4.0]], vec![vec![5.0, 6.0], vec![7.0, 8.0]]];
        let t = pack_time_major(&seqs);
        assert_eq!(t.data(), &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0]);
        assert_eq!(unpack_time_major(&t, 2), seqs);
    }
}
