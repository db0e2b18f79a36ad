use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CedError, Result};
use crate::nn::{softmax_rows, ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    /// Width of the agreement-matrix rows.
    pub dim: usize,
    pub hidden: usize,
}

impl HeadConfig {
    /// Hidden size equal to the input size.
    pub fn square(dim: usize) -> Self {
        Self { dim, hidden: dim }
    }
}

#[derive(Debug, Clone)]
struct Gate {
    w_in: ParamId,
    w_hidden: ParamId,
    b_in: ParamId,
    b_hidden: ParamId,
}

/// Single-layer GRU over agreement rows followed by a two-logit linear layer.
#[derive(Debug, Clone)]
pub struct VerifierHead {
    config: HeadConfig,
    reset: Gate,
    update: Gate,
    candidate: Gate,
    out_w: ParamId,
    out_b: ParamId,
}

impl VerifierHead {
    fn layout(config: HeadConfig, store: &mut ParamStore, rng: &mut impl Rng) -> Self {
        let (d, h) = (config.dim, config.hidden);
        let mut gate = |name: &str, store: &mut ParamStore| Gate {
            w_in: store.glorot(format!("gru.{name}.w_in"), d, h, rng),
            w_hidden: store.glorot(format!("gru.{name}.w_hidden"), h, h, rng),
            b_in: store.zeros(format!("gru.{name}.b_in"), 1, h),
            b_hidden: store.zeros(format!("gru.{name}.b_hidden"), 1, h),
        };
        let reset = gate("reset", store);
        let update = gate("update", store);
        let candidate = gate("candidate", store);
        Self {
            config,
            reset,
            update,
            candidate,
            out_w: store.glorot("out.w", h, 2, rng),
            out_b: store.zeros("out.b", 1, 2),
        }
    }

    pub fn init(config: HeadConfig, rng: &mut impl Rng) -> Result<(Self, ParamStore)> {
        if config.dim == 0 || config.hidden == 0 {
            return Err(CedError::InvalidInput(
                "head dimensions must be positive".into(),
            ));
        }
        let mut store = ParamStore::new();
        let head = Self::layout(config, &mut store, rng);
        Ok((head, store))
    }

    /// Rebuilds the layout and checks `store` against it.
    pub fn from_store(config: HeadConfig, store: &ParamStore) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let (head, reference) = Self::init(config, &mut rng)?;
        reference.check_layout(store)?;
        Ok(head)
    }

    pub fn config(&self) -> HeadConfig {
        self.config
    }

    /// Two logits (`1 × 2`) for an `m × d` agreement matrix consumed in row order.
    pub fn forward(&self, tape: &mut Tape, agreement: Var) -> Result<Var> {
        let (m, d) = tape.value(agreement).dim();
        if d != self.config.dim {
            return Err(CedError::IncompatibleCheckpoint(format!(
                "verifier head expects {}-dim rows, got {d}",
                self.config.dim
            )));
        }
        if m == 0 {
            return Err(CedError::InvalidInput("empty agreement matrix".into()));
        }
        let project = |tape: &mut Tape, g: &Gate| {
            let w = tape.param(g.w_in);
            let b = tape.param(g.b_in);
            let x = tape.matmul(agreement, w);
            tape.add_row(x, b)
        };
        let xr = project(tape, &self.reset);
        let xz = project(tape, &self.update);
        let xn = project(tape, &self.candidate);
        let recur = |tape: &mut Tape, g: &Gate, h: Var| {
            let w = tape.param(g.w_hidden);
            let b = tape.param(g.b_hidden);
            let y = tape.matmul(h, w);
            tape.add_row(y, b)
        };
        let mut h = tape.input(Array2::zeros((1, self.config.hidden)));
        for t in 0..m {
            let xr_t = tape.slice_rows(xr, t, 1);
            let xz_t = tape.slice_rows(xz, t, 1);
            let xn_t = tape.slice_rows(xn, t, 1);
            let hr = recur(tape, &self.reset, h);
            let hz = recur(tape, &self.update, h);
            let hn = recur(tape, &self.candidate, h);
            let r = tape.add(xr_t, hr);
            let r = tape.sigmoid(r);
            let z = tape.add(xz_t, hz);
            let z = tape.sigmoid(z);
            let gated = tape.mul(r, hn);
            let n = tape.add(xn_t, gated);
            let n = tape.tanh(n);
            // h' = n + z * (h - n)
            let diff = tape.sub(h, n);
            let keep = tape.mul(z, diff);
            h = tape.add(n, keep);
        }
        let w = tape.param(self.out_w);
        let b = tape.param(self.out_b);
        let logits = tape.matmul(h, w);
        Ok(tape.add_row(logits, b))
    }

    /// Match-class probability.
    pub fn score(&self, store: &ParamStore, agreement: &Array2<f64>) -> Result<f64> {
        let mut tape = Tape::new(store);
        let a = tape.input(agreement.clone());
        let logits = self.forward(&mut tape, a)?;
        Ok(softmax_rows(tape.value(logits))[[0, 1]])
    }

    /// Cross-entropy against `label` and its parameter gradients.
    pub fn loss_and_gradients(
        &self,
        store: &ParamStore,
        agreement: &Array2<f64>,
        label: bool,
    ) -> Result<(f64, crate::nn::Gradients)> {
        let mut tape = Tape::new(store);
        let a = tape.input(agreement.clone());
        let logits = self.forward(&mut tape, a)?;
        let loss = tape.cross_entropy(logits, label as usize);
        Ok((tape.scalar(loss), tape.backward(loss)))
    }
}
