//! LSTM cell and (bi)directional sequence runner on the tape.
//!
//! Gate order inside the packed `4H` projections is input, forget,
//! candidate, output.

use rand::Rng;

use super::{glorot_uniform, Matrix, ParamId, ParamStore, Segments, Tape, Var};
use crate::error::{Error, Result};

/// Parameter slots of one LSTM direction.
#[derive(Clone, Copy, Debug)]
pub struct LstmSlots {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub bias: ParamId,
    pub hidden: usize,
}

impl LstmSlots {
    /// Registers `{prefix}.wx`, `{prefix}.wh` and `{prefix}.b`. The
    /// forget-gate bias starts at +1, everything else Glorot/zero.
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let w_x = store.add(format!("{prefix}.wx"), glorot_uniform(input, 4 * hidden, rng))?;
        let w_h = store.add(format!("{prefix}.wh"), glorot_uniform(hidden, 4 * hidden, rng))?;
        let mut b = Matrix::zeros(1, 4 * hidden);
        b.data_mut()[hidden..2 * hidden].fill(1.0);
        let bias = store.add(format!("{prefix}.b"), b)?;
        Ok(LstmSlots {
            w_x,
            w_h,
            bias,
            hidden,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let w_h = store.require(&format!("{prefix}.wh"))?;
        Ok(LstmSlots {
            w_x: store.require(&format!("{prefix}.wx"))?,
            w_h,
            bias: store.require(&format!("{prefix}.b"))?,
            hidden: store.value(w_h).rows(),
        })
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore) -> LstmVars {
        LstmVars {
            w_x: tape.param(store, self.w_x),
            w_h: tape.param(store, self.w_h),
            bias: tape.param(store, self.bias),
            hidden: self.hidden,
        }
    }
}

/// LSTM parameters bound onto a tape.
#[derive(Clone, Copy, Debug)]
pub struct LstmVars {
    pub w_x: Var,
    pub w_h: Var,
    pub bias: Var,
    pub hidden: usize,
}

/// One LSTM step for a `B×in` input. Returns `(h_t, c_t)`.
pub fn lstm_cell(
    tape: &mut Tape,
    x_t: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmVars,
) -> Result<(Var, Var)> {
    let xw = tape.matmul(x_t, p.w_x)?;
    let projected = tape.add_bias(xw, p.bias)?;
    cell_from_projection(tape, projected, h_prev, c_prev, p)
}

fn cell_from_projection(
    tape: &mut Tape,
    projected: Var,
    h_prev: Var,
    c_prev: Var,
    p: &LstmVars,
) -> Result<(Var, Var)> {
    let h = p.hidden;
    if tape.value(c_prev).shape() != tape.value(h_prev).shape()
        || tape.value(h_prev).cols() != h
    {
        return Err(Error::Dimension {
            op: "lstm_cell",
            left: tape.value(h_prev).shape(),
            right: tape.value(c_prev).shape(),
        });
    }
    let hw = tape.matmul(h_prev, p.w_h)?;
    let gates = tape.add(projected, hw)?;
    let i = tape.slice_cols(gates, 0, h)?;
    let f = tape.slice_cols(gates, h, 2 * h)?;
    let g = tape.slice_cols(gates, 2 * h, 3 * h)?;
    let o = tape.slice_cols(gates, 3 * h, 4 * h)?;
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let g = tape.tanh(g);
    let o = tape.sigmoid(o);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let c_act = tape.tanh(c);
    let h_t = tape.mul(o, c_act)?;
    Ok((h_t, c))
}

/// Runs one direction over a padded batch `(B·T)×in`, returning hidden
/// states `(B·T)×H` in the same layout.
///
/// Each utterance starts from a zero state at its own first valid frame;
/// on padded steps the state is carried unchanged, so the reverse
/// direction begins exactly at frame `len − 1`.
pub fn lstm_sequence(
    tape: &mut Tape,
    x: Var,
    segs: &Segments,
    p: &LstmVars,
    reverse: bool,
) -> Result<Var> {
    let batch = segs.batch();
    let t_max = segs.max_len();
    if tape.value(x).rows() != segs.rows() {
        return Err(Error::Dimension {
            op: "lstm_sequence",
            left: tape.value(x).shape(),
            right: (segs.rows(), tape.value(x).cols()),
        });
    }
    let xw = tape.matmul(x, p.w_x)?;
    let projected = tape.add_bias(xw, p.bias)?;
    let mut h = tape.input(Matrix::zeros(batch, p.hidden));
    let mut c = tape.input(Matrix::zeros(batch, p.hidden));
    let mut outputs = vec![h; t_max];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..t_max).rev())
    } else {
        Box::new(0..t_max)
    };
    for t in order {
        let rows = (0..batch).map(|b| segs.row(b, t)).collect();
        let x_t = tape.gather_rows(projected, rows)?;
        let (h_new, c_new) = cell_from_projection(tape, x_t, h, c, p)?;
        let mask = segs.mask_at(t);
        if mask.iter().all(|&m| m) {
            h = h_new;
            c = c_new;
        } else {
            h = tape.select_rows(h_new, h, mask.clone())?;
            c = tape.select_rows(c_new, c, mask)?;
        }
        outputs[t] = h;
    }
    tape.stack_steps(outputs)
}

/// Forward and reverse passes concatenated: `(B·T)×2H`.
pub fn bilstm(
    tape: &mut Tape,
    x: Var,
    segs: &Segments,
    forward: &LstmVars,
    backward: &LstmVars,
) -> Result<Var> {
    let f = lstm_sequence(tape, x, segs, forward, false)?;
    let b = lstm_sequence(tape, x, segs, backward, true)?;
    tape.concat_cols(f, b)
}
