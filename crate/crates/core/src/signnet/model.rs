use serde::{Deserialize, Serialize};

use super::labels::{FurRule, ATTRIBUTE_COUNT};
use super::SignNetError;
use crate::tensorad::{ffn, linear, scaled_dot_attention, Bound, ParamId, ParamStore, Rng, Tape, Tensor, Var};
use crate::Scalar;

const LN_EPS: f64 = 1e-5;

/// Shape of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignNetConfig {
    /// Square input side; each stage halves it.
    pub input_side: usize,
    /// Channel width of each backbone stage.
    pub widths: Vec<usize>,
    /// Residual blocks after the entry convolution of each stage.
    pub blocks: usize,
    pub d_model: usize,
    /// Hidden width of the fusion feed-forward block, as a multiple of `d_model`.
    pub ffn_mult: usize,
    #[serde(default)]
    pub fur: FurRule,
}

impl Default for SignNetConfig {
    fn default() -> Self {
        Self {
            input_side: 256,
            widths: vec![16, 32, 64, 128],
            blocks: 1,
            d_model: 64,
            ffn_mult: 4,
            fur: FurRule::default(),
        }
    }
}

impl SignNetConfig {
    /// Small network used for the synthetic overfit runs.
    pub fn toy() -> Self {
        Self {
            input_side: 32,
            widths: vec![8, 16],
            blocks: 0,
            d_model: 16,
            ffn_mult: 4,
            fur: FurRule::default(),
        }
    }

    pub fn validate(&self) -> Result<(), SignNetError> {
        let bad = |m: String| Err(SignNetError::Config(m));
        if self.d_model < 8 {
            return bad(format!("d_model must be at least 8, got {}", self.d_model));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return bad(format!("stage widths must be non-empty and positive, got {:?}", self.widths));
        }
        if self.ffn_mult == 0 {
            return bad("ffn_mult must be positive".into());
        }
        if self.input_side >> self.widths.len() == 0 {
            return bad(format!(
                "input side {} too small for {} pooling stages",
                self.input_side,
                self.widths.len()
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Affine {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Stage {
    entry: Affine,
    blocks: Vec<(Affine, Affine)>,
}

#[derive(Debug, Clone)]
struct Branch {
    stages: Vec<Stage>,
    proj: Affine,
}

#[derive(Debug, Clone)]
struct Fusion {
    wq: ParamId,
    wk: ParamId,
    wv: ParamId,
    norm1: Affine,
    ffn_in: Affine,
    ffn_out: Affine,
    norm2: Affine,
}

#[derive(Debug, Clone)]
struct Layout {
    whole: Branch,
    body: Branch,
    edge: Branch,
    color_hidden: Affine,
    color_out: Affine,
    fur_hidden: Affine,
    fur_out: Affine,
    crack: Affine,
    toothmark: Affine,
    body_fusion: Fusion,
    edge_fusion: Fusion,
    body_heads: Affine,
    edge_heads: Affine,
}

struct Builder<'a, T> {
    store: ParamStore<T>,
    rng: &'a mut Rng,
}

impl<T: Scalar> Builder<'_, T> {
    fn he(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let std = (2.0 / fan_in as f64).sqrt();
        let t = Tensor::randn(shape, std, self.rng);
        self.store.add(name, t).expect("unique parameter names")
    }

    fn normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let t = Tensor::randn(shape, std, self.rng);
        self.store.add(name, t).expect("unique parameter names")
    }

    fn fill(&mut self, name: String, shape: &[usize], v: f64) -> ParamId {
        self.store.add(name, Tensor::full(shape, T::of(v))).expect("unique parameter names")
    }

    fn conv(&mut self, name: &str, c_in: usize, c_out: usize) -> Affine {
        Affine {
            w: self.he(format!("{name}.w"), &[c_out, c_in, 3, 3], c_in * 9),
            b: self.fill(format!("{name}.b"), &[c_out], 0.0),
        }
    }

    fn dense(&mut self, name: &str, d_in: usize, d_out: usize) -> Affine {
        Affine {
            w: self.he(format!("{name}.w"), &[d_in, d_out], d_in),
            b: self.fill(format!("{name}.b"), &[d_out], 0.0),
        }
    }

    fn norm(&mut self, name: &str, d: usize) -> Affine {
        Affine {
            w: self.fill(format!("{name}.gamma"), &[d], 1.0),
            b: self.fill(format!("{name}.beta"), &[d], 0.0),
        }
    }

    fn branch(&mut self, name: &str, cfg: &SignNetConfig) -> Branch {
        let mut c_in = 3;
        let mut stages = Vec::new();
        for (s, &width) in cfg.widths.iter().enumerate() {
            let entry = self.conv(&format!("{name}.s{s}.conv"), c_in, width);
            let blocks = (0..cfg.blocks)
                .map(|k| {
                    (
                        self.conv(&format!("{name}.s{s}.res{k}.a"), width, width),
                        self.conv(&format!("{name}.s{s}.res{k}.b"), width, width),
                    )
                })
                .collect();
            stages.push(Stage { entry, blocks });
            c_in = width;
        }
        let proj = self.dense(&format!("{name}.proj"), c_in, cfg.d_model);
        Branch { stages, proj }
    }

    fn fusion(&mut self, name: &str, d: usize, hidden: usize) -> Fusion {
        Fusion {
            // tokens are unnormalised; keep initial attention close to uniform
            wq: self.normal(format!("{name}.wq"), &[d, d], 1.0 / d as f64),
            wk: self.normal(format!("{name}.wk"), &[d, d], 1.0 / d as f64),
            wv: self.normal(format!("{name}.wv"), &[d, d], 1.0 / (d as f64).sqrt()),
            norm1: self.norm(&format!("{name}.norm1"), d),
            ffn_in: self.dense(&format!("{name}.ffn1"), d, hidden),
            ffn_out: self.dense(&format!("{name}.ffn2"), hidden, d),
            norm2: self.norm(&format!("{name}.norm2"), d),
        }
    }
}

/// Tape handles for one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct Outputs {
    /// `[N, 8]` attribute logits, in label order.
    pub attr: Var,
    /// `[N, 4]` colour logits.
    pub color: Var,
    /// `[N, 1]` fur-presence logit.
    pub fur: Var,
}

/// Per-sample logits.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Predictions<T> {
    pub attr_logits: [T; ATTRIBUTE_COUNT],
    pub color_logits: [T; 4],
    pub fur_logit: T,
}

impl<T: Scalar> Predictions<T> {
    /// Predicted bits; `sigmoid(z) > 0.5` exactly when `z > 0`.
    pub fn attr_bits(&self) -> [bool; ATTRIBUTE_COUNT] {
        self.attr_logits.map(|z| z > T::zero())
    }

    pub fn attr_probs(&self) -> [T; ATTRIBUTE_COUNT] {
        self.attr_logits.map(|z| T::one() / (T::one() + (-z).exp()))
    }
}

/// Three-branch attribute network: a whole-tongue branch with colour and fur
/// heads, and body and edge branches that attend over the colour and fur
/// features before their attribute heads.
#[derive(Debug, Clone)]
pub struct SignNet<T> {
    config: SignNetConfig,
    params: ParamStore<T>,
    layout: Layout,
}

impl<T: Scalar> SignNet<T> {
    /// Fan-in scaled normal initialisation from `seed`.
    pub fn new(config: SignNetConfig, seed: u64) -> Result<Self, SignNetError> {
        config.validate()?;
        let mut rng = Rng::new(seed);
        let mut b = Builder {
            store: ParamStore::new(),
            rng: &mut rng,
        };
        let d = config.d_model;
        let whole = b.branch("whole", &config);
        let body = b.branch("body", &config);
        let edge = b.branch("edge", &config);
        let color_hidden = b.dense("color.hidden", d, d);
        let color_out = b.dense("color.out", d, 4);
        let fur_hidden = b.dense("fur.hidden", d, d);
        let fur_out = b.dense("fur.out", d, 1);
        let crack = b.dense("crack.out", d, 1);
        let toothmark = b.dense("toothmark.out", d, 1);
        let hidden = d * config.ffn_mult;
        let body_fusion = b.fusion("body.fusion", d, hidden);
        let edge_fusion = b.fusion("edge.fusion", d, hidden);
        let body_heads = b.dense("body.heads", d, 3);
        let edge_heads = b.dense("edge.heads", d, 3);
        let layout = Layout {
            whole,
            body,
            edge,
            color_hidden,
            color_out,
            fur_hidden,
            fur_out,
            crack,
            toothmark,
            body_fusion,
            edge_fusion,
            body_heads,
            edge_heads,
        };
        Ok(Self {
            config,
            params: b.store,
            layout,
        })
    }

    /// Rebuilds a network around stored parameters, which must match the
    /// layout `config` produces.
    pub fn from_params(config: SignNetConfig, params: ParamStore<T>) -> Result<Self, SignNetError> {
        let mut net = Self::new(config, 0)?;
        if !net.params.same_layout(&params) {
            return Err(SignNetError::Layout);
        }
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &SignNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamStore<T>) -> Result<(), SignNetError> {
        if !self.params.same_layout(&params) {
            return Err(SignNetError::Layout);
        }
        self.params = params;
        Ok(())
    }

    /// Zeros the weights and biases of every output layer.
    pub fn zero_output_heads(&mut self) {
        let l = &self.layout;
        for a in [l.color_out, l.fur_out, l.crack, l.toothmark, l.body_heads, l.edge_heads] {
            for id in [a.w, a.b] {
                self.params.get_mut(id).data_mut().fill(T::zero());
            }
        }
    }

    /// Zeros the attention value projections, so each fused feature no
    /// longer depends on the colour and fur tokens.
    pub fn zero_value_projections(&mut self) {
        for id in [self.layout.body_fusion.wv, self.layout.edge_fusion.wv] {
            self.params.get_mut(id).data_mut().fill(T::zero());
        }
    }

    fn dense(&self, tape: &mut Tape<T>, p: &Bound, a: Affine, x: Var) -> Result<Var, SignNetError> {
        Ok(linear(tape, x, p.var(a.w), Some(p.var(a.b)))?)
    }

    fn conv(&self, tape: &mut Tape<T>, p: &Bound, a: Affine, x: Var) -> Result<Var, SignNetError> {
        Ok(tape.conv2d(x, p.var(a.w), p.var(a.b), 1, 1)?)
    }

    fn branch(&self, tape: &mut Tape<T>, p: &Bound, br: &Branch, x: Var) -> Result<Var, SignNetError> {
        let mut x = x;
        for stage in &br.stages {
            let y = self.conv(tape, p, stage.entry, x)?;
            x = tape.relu(y)?;
            for &(a, b) in &stage.blocks {
                let y = self.conv(tape, p, a, x)?;
                let y = tape.relu(y)?;
                let y = self.conv(tape, p, b, y)?;
                let y = tape.add(x, y)?;
                x = tape.relu(y)?;
            }
            x = tape.maxpool2d(x, 2)?;
        }
        let pooled = tape.global_avg_pool(x)?;
        self.dense(tape, p, br.proj, pooled)
    }

    fn fuse(&self, tape: &mut Tape<T>, p: &Bound, f: &Fusion, fur: Var, color: Var, own: Var) -> Result<Var, SignNetError> {
        let n = tape.shape(own)[0];
        let d = self.config.d_model;
        let mut tokens = Vec::with_capacity(3);
        for v in [fur, color, own] {
            tokens.push(tape.reshape(v, &[n, 1, d])?);
        }
        let seq = tape.concat(&tokens, 1)?;
        let att = scaled_dot_attention(tape, seq, p.var(f.wq), p.var(f.wk), p.var(f.wv))?;
        let att = tape.narrow(att, 1, 2, 1)?;
        let att = tape.reshape(att, &[n, d])?;
        let eps = T::of(LN_EPS);
        let res = tape.add(own, att)?;
        let f1 = tape.layer_norm(res, p.var(f.norm1.w), p.var(f.norm1.b), eps)?;
        let h = ffn(
            tape,
            f1,
            p.var(f.ffn_in.w),
            p.var(f.ffn_in.b),
            p.var(f.ffn_out.w),
            p.var(f.ffn_out.b),
        )?;
        let res = tape.add(f1, h)?;
        Ok(tape.layer_norm(res, p.var(f.norm2.w), p.var(f.norm2.b), eps)?)
    }

    fn check_input(&self, tape: &Tape<T>, x: Var, what: &str) -> Result<usize, SignNetError> {
        let s = tape.shape(x);
        let side = self.config.input_side;
        if s.len() != 4 || s[1] != 3 || s[2] != side || s[3] != side {
            return Err(SignNetError::Input(format!(
                "{what} input has shape {s:?}, expected [N, 3, {side}, {side}]"
            )));
        }
        Ok(s[0])
    }

    /// Forward pass over `[N, 3, side, side]` whole, body and edge batches.
    pub fn forward(&self, tape: &mut Tape<T>, p: &Bound, whole: Var, body: Var, edge: Var) -> Result<Outputs, SignNetError> {
        let n = self.check_input(tape, whole, "whole")?;
        for (x, what) in [(body, "body"), (edge, "edge")] {
            if self.check_input(tape, x, what)? != n {
                return Err(SignNetError::Input(format!("{what} batch size differs from whole")));
            }
        }
        let l = &self.layout;
        let f_whole = self.branch(tape, p, &l.whole, whole)?;
        let f_body = self.branch(tape, p, &l.body, body)?;
        let f_edge = self.branch(tape, p, &l.edge, edge)?;

        let h = self.dense(tape, p, l.color_hidden, f_whole)?;
        let f_color = tape.relu(h)?;
        let color = self.dense(tape, p, l.color_out, f_color)?;
        let h = self.dense(tape, p, l.fur_hidden, f_whole)?;
        let f_fur = tape.relu(h)?;
        let fur = self.dense(tape, p, l.fur_out, f_fur)?;

        let crack = self.dense(tape, p, l.crack, f_body)?;
        let toothmark = self.dense(tape, p, l.toothmark, f_edge)?;

        let body_fused = self.fuse(tape, p, &l.body_fusion, f_fur, f_color, f_body)?;
        let edge_fused = self.fuse(tape, p, &l.edge_fusion, f_fur, f_color, f_edge)?;
        // (redspot, furthick, furyellow) and (pale, ecchymosis, tipsidered)
        let body_out = self.dense(tape, p, l.body_heads, body_fused)?;
        let edge_out = self.dense(tape, p, l.edge_heads, edge_fused)?;

        let mut col = |src: Var, j: usize| tape.narrow(src, 1, j, 1);
        let parts = [
            col(edge_out, 0)?,
            col(edge_out, 2)?,
            col(body_out, 0)?,
            col(edge_out, 1)?,
            crack,
            toothmark,
            col(body_out, 1)?,
            col(body_out, 2)?,
        ];
        let attr = tape.concat(&parts, 1)?;
        Ok(Outputs { attr, color, fur })
    }

    /// Value-only forward pass.
    pub fn predict(&self, whole: &Tensor<T>, body: &Tensor<T>, edge: &Tensor<T>) -> Result<Vec<Predictions<T>>, SignNetError> {
        let mut tape = Tape::new();
        let p = self.params.bind_frozen(&mut tape);
        let (w, b, e) = (
            tape.constant(whole.clone()),
            tape.constant(body.clone()),
            tape.constant(edge.clone()),
        );
        let out = self.forward(&mut tape, &p, w, b, e)?;
        let (attr, color, fur) = (tape.value(out.attr), tape.value(out.color), tape.value(out.fur));
        Ok((0..attr.shape()[0])
            .map(|i| Predictions {
                attr_logits: std::array::from_fn(|j| attr.data()[i * ATTRIBUTE_COUNT + j]),
                color_logits: std::array::from_fn(|j| color.data()[i * 4 + j]),
                fur_logit: fur.data()[i],
            })
            .collect())
    }
}
