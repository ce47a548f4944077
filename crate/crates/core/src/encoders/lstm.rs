use rand::Rng;

use super::{uniform_vector, xavier_uniform, SequenceMasks};
use crate::error::Result;
use crate::numerics::{Graph, NodeId, ParamId, Params, Real, Tensor};

/// LSTM cell with coupled input/forget gates and peephole connections.
///
/// The gate pre-activations are stacked as `[input; candidate; output]` in
/// a single `3H x In` input matrix and `3H x H` recurrent matrix. There are
/// no forget-gate parameters: the forget activation is `1 - i`.
///
/// ```text
/// i = sigmoid(W_i x + U_i h + p_i * c_prev + b_i)
/// g = tanh(W_g x + U_g h + b_g)
/// c = (1 - i) * c_prev + i * g
/// o = sigmoid(W_o x + U_o h + p_o * c + b_o)
/// h = o * tanh(c)
/// ```
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub input: usize,
    pub hidden: usize,
    w: ParamId,
    u: ParamId,
    b: ParamId,
    peep_i: ParamId,
    peep_o: ParamId,
    h0: ParamId,
    c0: ParamId,
}

impl LstmCell {
    pub fn new<F: Real, R: Rng + ?Sized>(
        params: &mut Params<F>,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let w = params.add(format!("{prefix}.w"), xavier_uniform(rng, 3 * hidden, input))?;
        let u = params.add(format!("{prefix}.u"), xavier_uniform(rng, 3 * hidden, hidden))?;
        let b = params.add(format!("{prefix}.b"), Tensor::zeros(&[3 * hidden]))?;
        let peep_i = params.add(format!("{prefix}.peep_i"), Tensor::zeros(&[hidden]))?;
        let peep_o = params.add(format!("{prefix}.peep_o"), Tensor::zeros(&[hidden]))?;
        let h0 = params.add(format!("{prefix}.h0"), uniform_vector(rng, hidden, 0.1))?;
        let c0 = params.add(format!("{prefix}.c0"), uniform_vector(rng, hidden, 0.1))?;
        Ok(Self {
            input,
            hidden,
            w,
            u,
            b,
            peep_i,
            peep_o,
            h0,
            c0,
        })
    }

    pub fn param_ids(&self) -> [ParamId; 7] {
        [self.w, self.u, self.b, self.peep_i, self.peep_o, self.h0, self.c0]
    }

    /// Learned initial `(h, c)`.
    pub fn initial_state<F: Real>(&self, g: &mut Graph<'_, F>) -> (NodeId, NodeId) {
        (g.param(self.h0), g.param(self.c0))
    }

    /// One recurrence step. `masks` carries the variational dropout masks
    /// for the input and recurrent connections (training only).
    pub fn step<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        x: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
        masks: Option<&SequenceMasks<F>>,
    ) -> Result<(NodeId, NodeId)> {
        let (x, h_prev) = match masks {
            Some(m) => (g.dropout(x, &m.input)?, g.dropout(h_prev, &m.recurrent)?),
            None => (x, h_prev),
        };
        let n = self.hidden;
        let w = g.param(self.w);
        let u = g.param(self.u);
        let b = g.param(self.b);
        let wx = g.matvec(w, x)?;
        let uh = g.matvec(u, h_prev)?;
        let z = g.add(wx, uh)?;
        let z = g.add(z, b)?;

        let zi = g.slice(z, 0, n)?;
        let zg = g.slice(z, n, n)?;
        let zo = g.slice(z, 2 * n, n)?;

        let pi = g.param(self.peep_i);
        let pc = g.mul(pi, c_prev)?;
        let zi = g.add(zi, pc)?;
        let i = g.sigmoid(zi);
        let cand = g.tanh(zg);

        let f = g.one_minus(i);
        let keep = g.mul(f, c_prev)?;
        let write = g.mul(i, cand)?;
        let c = g.add(keep, write)?;

        let po = g.param(self.peep_o);
        let poc = g.mul(po, c)?;
        let zo = g.add(zo, poc)?;
        let o = g.sigmoid(zo);
        let tc = g.tanh(c);
        let h = g.mul(o, tc)?;
        Ok((h, c))
    }

    /// Run over `inputs` (right to left when `reverse`) from the learned
    /// initial state and return the final hidden state.
    pub fn run<F: Real>(
        &self,
        g: &mut Graph<'_, F>,
        inputs: &[NodeId],
        reverse: bool,
        masks: Option<&SequenceMasks<F>>,
    ) -> Result<NodeId> {
        let (mut h, mut c) = self.initial_state(g);
        let mut step = |x: NodeId, g: &mut Graph<'_, F>| -> Result<()> {
            let (nh, nc) = self.step(g, x, h, c, masks)?;
            h = nh;
            c = nc;
            Ok(())
        };
        if reverse {
            for &x in inputs.iter().rev() {
                step(x, g)?;
            }
        } else {
            for &x in inputs {
                step(x, g)?;
            }
        }
        Ok(h)
    }
}
