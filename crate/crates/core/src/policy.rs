//! Compact autoregressive token policy.
//!
//! Architecture: token embedding -> one GRU layer -> output projection. The
//! policy is evaluated two ways that share the same kernels and produce
//! bit-identical values: a tape-free forward pass used by decoding and rollouts,
//! and a [`BoundPolicy`] that records the same computation on a [`Tape`].

use std::path::Path;
use std::sync::Arc;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::item_space::Token;
use crate::kernels;
use crate::rng;
use crate::tape::{Gradients, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl PolicyDims {
    pub fn new(vocab: usize, embed: usize, hidden: usize) -> Self {
        Self {
            vocab,
            embed,
            hidden,
        }
    }
}

/// Named parameter tensors, in slot order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Embedding,
    InputWeights,
    HiddenWeights,
    InputBias,
    HiddenBias,
    OutputWeights,
    OutputBias,
}

impl ParamKind {
    pub const ALL: [ParamKind; 7] = [
        ParamKind::Embedding,
        ParamKind::InputWeights,
        ParamKind::HiddenWeights,
        ParamKind::InputBias,
        ParamKind::HiddenBias,
        ParamKind::OutputWeights,
        ParamKind::OutputBias,
    ];

    pub fn slot(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamKind::Embedding => "embedding",
            ParamKind::InputWeights => "gru.weight_ih",
            ParamKind::HiddenWeights => "gru.weight_hh",
            ParamKind::InputBias => "gru.bias_ih",
            ParamKind::HiddenBias => "gru.bias_hh",
            ParamKind::OutputWeights => "output.weight",
            ParamKind::OutputBias => "output.bias",
        }
    }

    pub fn len(self, d: PolicyDims) -> usize {
        let h3 = 3 * d.hidden;
        match self {
            ParamKind::Embedding => d.vocab * d.embed,
            ParamKind::InputWeights => h3 * d.embed,
            ParamKind::HiddenWeights => h3 * d.hidden,
            ParamKind::InputBias | ParamKind::HiddenBias => h3,
            ParamKind::OutputWeights => d.vocab * d.hidden,
            ParamKind::OutputBias => d.vocab,
        }
    }
}

/// Live policy parameters plus an update counter.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyState {
    dims: PolicyDims,
    params: Vec<Vec<f64>>,
    version: u64,
}

/// Immutable view of a policy taken at one point of training (old or reference policy).
#[derive(Clone, Debug)]
pub struct Snapshot(Arc<PolicyState>);

impl std::ops::Deref for Snapshot {
    type Target = PolicyState;

    fn deref(&self) -> &PolicyState {
        &self.0
    }
}

pub const INIT_SCALE: f64 = 0.08;

impl PolicyState {
    /// Seeded uniform initialization in `[-0.08, 0.08]`.
    pub fn init(dims: PolicyDims, seed: u64) -> Self {
        let mut r = rng::stream(seed, &[0x5eed_0001]);
        let params = ParamKind::ALL
            .iter()
            .map(|k| {
                (0..k.len(dims))
                    .map(|_| r.random_range(-INIT_SCALE..=INIT_SCALE))
                    .collect()
            })
            .collect();
        Self {
            dims,
            params,
            version: 0,
        }
    }

    pub fn dims(&self) -> PolicyDims {
        self.dims
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn param(&self, kind: ParamKind) -> &[f64] {
        &self.params[kind.slot()]
    }

    pub fn param_mut(&mut self, kind: ParamKind) -> &mut [f64] {
        &mut self.params[kind.slot()]
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    /// Mutable access to all tensors for an optimizer update; bumps the version.
    pub fn update(&mut self) -> &mut [Vec<f64>] {
        self.version += 1;
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Vec::len).sum()
    }

    pub fn shapes(&self) -> Vec<usize> {
        self.params.iter().map(Vec::len).collect()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients::zeros_like(&self.shapes())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().flatten().all(|p| p.is_finite())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot(Arc::new(self.clone()))
    }

    fn check_token(&self, t: Token) -> Result<()> {
        if t.id() >= self.dims.vocab {
            return Err(Error::TokenOutOfRange {
                token: t.0,
                vocab: self.dims.vocab,
            });
        }
        Ok(())
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.dims.hidden]
    }

    /// One GRU step from hidden state `h` after consuming `token`.
    pub fn step(&self, h: &[f64], token: Token) -> Vec<f64> {
        let d = self.dims;
        let hs = d.hidden;
        let x = &self.param(ParamKind::Embedding)[token.id() * d.embed..(token.id() + 1) * d.embed];
        let mut gi = vec![0.0; 3 * hs];
        let mut gh = vec![0.0; 3 * hs];
        kernels::matvec(self.param(ParamKind::InputWeights), x, &mut gi);
        kernels::matvec(self.param(ParamKind::HiddenWeights), h, &mut gh);
        for (g, b) in gi.iter_mut().zip(self.param(ParamKind::InputBias)) {
            *g += b;
        }
        for (g, b) in gh.iter_mut().zip(self.param(ParamKind::HiddenBias)) {
            *g += b;
        }
        let rz: Vec<f64> = (0..2 * hs).map(|k| kernels::sigmoid(gi[k] + gh[k])).collect();
        (0..hs)
            .map(|k| {
                let n = (gi[2 * hs + k] + rz[k] * gh[2 * hs + k]).tanh();
                n + rz[hs + k] * (h[k] - n)
            })
            .collect()
    }

    /// Hidden state after reading the whole prompt.
    pub fn encode(&self, prompt: &[Token]) -> Result<Vec<f64>> {
        let mut h = self.initial_hidden();
        for &t in prompt {
            self.check_token(t)?;
            h = self.step(&h, t);
        }
        Ok(h)
    }

    pub fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dims.vocab];
        kernels::matvec(self.param(ParamKind::OutputWeights), h, &mut out);
        for (o, b) in out.iter_mut().zip(self.param(ParamKind::OutputBias)) {
            *o += b;
        }
        out
    }

    /// `log pi(t_j | prompt, t_<j)` for each completion token.
    pub fn token_log_probs(&self, prompt: &[Token], completion: &[Token]) -> Result<Vec<f64>> {
        let h = self.encode(prompt)?;
        self.token_log_probs_from(&h, completion)
    }

    /// Like [`PolicyState::token_log_probs`] but starting from an encoded prompt.
    pub fn token_log_probs_from(&self, h: &[f64], completion: &[Token]) -> Result<Vec<f64>> {
        if completion.is_empty() {
            return Err(Error::ContractViolation("empty completion".into()));
        }
        let mut h = h.to_vec();
        let mut out = Vec::with_capacity(completion.len());
        for (j, &t) in completion.iter().enumerate() {
            self.check_token(t)?;
            out.push(kernels::log_softmax_at(&self.logits(&h), t.id()));
            if j + 1 < completion.len() {
                h = self.step(&h, t);
            }
        }
        Ok(out)
    }

    /// Records the parameters on `tape` (slots follow [`ParamKind::slot`]).
    pub fn bind(&self, tape: &mut Tape) -> BoundPolicy {
        let vars = ParamKind::ALL.map(|k| tape.param(k.slot(), self.param(k)));
        BoundPolicy {
            dims: self.dims,
            vars,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            dims: [
                self.dims.vocab as u32,
                self.dims.embed as u32,
                self.dims.hidden as u32,
            ],
            counter: self.version,
            arrays: ParamKind::ALL
                .iter()
                .map(|k| (k.name().to_string(), self.param(*k).to_vec()))
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, expected: Option<PolicyDims>) -> Result<Self> {
        let dims = PolicyDims::new(
            ckpt.dims[0] as usize,
            ckpt.dims[1] as usize,
            ckpt.dims[2] as usize,
        );
        if let Some(exp) = expected {
            if exp != dims {
                return Err(Error::ShapeMismatch(format!(
                    "checkpoint dims {dims:?} differ from configured {exp:?}"
                )));
            }
        }
        let mut params = Vec::with_capacity(ParamKind::ALL.len());
        for k in ParamKind::ALL {
            let values = ckpt
                .array(k.name())
                .ok_or_else(|| Error::ShapeMismatch(format!("missing array {}", k.name())))?;
            if values.len() != k.len(dims) {
                return Err(Error::ShapeMismatch(format!(
                    "array {} has {} values, expected {}",
                    k.name(),
                    values.len(),
                    k.len(dims)
                )));
            }
            params.push(values.to_vec());
        }
        let state = Self {
            dims,
            params,
            version: ckpt.counter,
        };
        if !state.is_finite() {
            return Err(Error::NumericAbort("checkpoint holds non-finite values".into()));
        }
        Ok(state)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path, expected: Option<PolicyDims>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, expected)
    }
}

/// Policy parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundPolicy {
    dims: PolicyDims,
    vars: [Var; 7],
}

impl BoundPolicy {
    fn var(&self, k: ParamKind) -> Var {
        self.vars[k.slot()]
    }

    pub fn initial_hidden(&self, tape: &mut Tape) -> Var {
        tape.constant(&vec![0.0; self.dims.hidden])
    }

    pub fn step(&self, tape: &mut Tape, h: Var, token: Token) -> Var {
        let d = self.dims;
        let hs = d.hidden;
        let x = tape.slice(self.var(ParamKind::Embedding), token.id() * d.embed, d.embed);
        let wx = tape.matvec(self.var(ParamKind::InputWeights), x);
        let gi = tape.add(wx, self.var(ParamKind::InputBias));
        let uh = tape.matvec(self.var(ParamKind::HiddenWeights), h);
        let gh = tape.add(uh, self.var(ParamKind::HiddenBias));
        let gi_rz = tape.slice(gi, 0, 2 * hs);
        let gh_rz = tape.slice(gh, 0, 2 * hs);
        let pre = tape.add(gi_rz, gh_rz);
        let rz = tape.sigmoid(pre);
        let r = tape.slice(rz, 0, hs);
        let z = tape.slice(rz, hs, hs);
        let gi_n = tape.slice(gi, 2 * hs, hs);
        let gh_n = tape.slice(gh, 2 * hs, hs);
        let gated = tape.mul(r, gh_n);
        let n_pre = tape.add(gi_n, gated);
        let n = tape.tanh(n_pre);
        let diff = tape.sub(h, n);
        let carry = tape.mul(z, diff);
        tape.add(n, carry)
    }

    pub fn encode(&self, tape: &mut Tape, prompt: &[Token]) -> Result<Var> {
        let mut h = self.initial_hidden(tape);
        for &t in prompt {
            self.check_token(t)?;
            h = self.step(tape, h, t);
        }
        Ok(h)
    }

    fn check_token(&self, t: Token) -> Result<()> {
        if t.id() >= self.dims.vocab {
            return Err(Error::TokenOutOfRange {
                token: t.0,
                vocab: self.dims.vocab,
            });
        }
        Ok(())
    }

    pub fn log_prob(&self, tape: &mut Tape, h: Var, token: Token) -> Var {
        let wh = tape.matvec(self.var(ParamKind::OutputWeights), h);
        let logits = tape.add(wh, self.var(ParamKind::OutputBias));
        tape.log_softmax_at(logits, token.id())
    }

    /// Per-token log-probability nodes of `completion` continuing from hidden state `h`.
    pub fn token_log_probs(
        &self,
        tape: &mut Tape,
        h: Var,
        completion: &[Token],
    ) -> Result<Vec<Var>> {
        if completion.is_empty() {
            return Err(Error::ContractViolation("empty completion".into()));
        }
        let mut h = h;
        let mut out = Vec::with_capacity(completion.len());
        for (j, &t) in completion.iter().enumerate() {
            self.check_token(t)?;
            out.push(self.log_prob(tape, h, t));
            if j + 1 < completion.len() {
                h = self.step(tape, h, t);
            }
        }
        Ok(out)
    }
}
