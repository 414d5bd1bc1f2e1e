//! The same computation as the plain forward pass, recorded on a [`Tape`].

use crate::error::{Error, Result};
use crate::model::{AtomIds, QGenParams, Specials};
use crate::numerics::{Tape, Tensor, Var};

/// Records `−Σ_n log p(w_n | w_<n, F)` and returns the scalar loss node.
/// The frozen input rows enter as constants, so they receive no gradient.
pub fn sequence_nll(
    tape: &mut Tape,
    model: &QGenParams,
    atoms: AtomIds,
    tokens: &[usize],
    specials: Specials,
) -> Result<Var> {
    if tokens.is_empty() {
        return Err(Error::contract("question must contain at least one token"));
    }
    let ids = &model.ids;
    let rows = model.input_embeddings.rows();
    let encode = |row: usize, role: &'static str, tape: &mut Tape| -> Result<Var> {
        if row >= rows {
            return Err(Error::Lookup {
                role,
                id: format!("row {row}"),
            });
        }
        let e = tape.input(Tensor::vector(model.input_embeddings.row(row).to_vec()));
        tape.matvec_param(ids.w_enc, e)
    };
    let enc_s = encode(atoms.subject, "subject", tape)?;
    let enc_r = encode(atoms.relationship, "relationship", tape)?;
    let enc_o = encode(atoms.object, "object", tape)?;
    let enc_all = tape.concat(&[enc_s, enc_r, enc_o]);

    let pre_h0 = tape.matvec_param(ids.w_init, enc_all)?;
    let mut h = tape.tanh(pre_h0);
    let mut prev = specials.bos;
    let mut terms = Vec::with_capacity(tokens.len());

    for &target in tokens {
        // attention
        let att_in = tape.concat(&[enc_all, h]);
        let att_pre = tape.matvec_param(ids.att_hidden, att_in)?;
        let att_hidden = tape.tanh(att_pre);
        let scores = tape.matvec_param(ids.att_out, att_hidden)?;
        let alpha = tape.sigmoid(scores);
        let cs = tape.scale_by(alpha, 0, enc_s)?;
        let cr = tape.scale_by(alpha, 1, enc_r)?;
        let co = tape.scale_by(alpha, 2, enc_o)?;
        let c = tape.sum(&[cs, cr, co])?;

        // GRU
        let x = tape.row(ids.e_out, prev)?;
        let gate = |tape: &mut Tape, w, cm, u, h_in: Var| -> Result<Var> {
            let a = tape.matvec_param(w, x)?;
            let b = tape.matvec_param(cm, c)?;
            let d = tape.matvec_param(u, h_in)?;
            tape.sum(&[a, b, d])
        };
        let reset_pre = gate(tape, ids.w_r, ids.c_r, ids.u_r, h)?;
        let reset = tape.sigmoid(reset_pre);
        let update_pre = gate(tape, ids.w_u, ids.c_u, ids.u_u, h)?;
        let update = tape.sigmoid(update_pre);
        let gated = tape.mul(reset, h)?;
        let cand_pre = gate(tape, ids.w, ids.c, ids.u, gated)?;
        let candidate = tape.tanh(cand_pre);
        let keep = tape.mul(update, h)?;
        let not_update = tape.one_minus(update);
        let fresh = tape.mul(not_update, candidate)?;
        let h_new = tape.add(keep, fresh)?;

        // output layer
        let oh = tape.matvec_param(ids.v_h, h_new)?;
        let ow = tape.matvec_param(ids.v_w, x)?;
        let oc = tape.matvec_param(ids.v_c, c)?;
        let pre = tape.sum(&[oh, ow, oc])?;
        let act = tape.tanh(pre);
        let logits = tape.matvec_param(ids.v_o, act)?;
        terms.push(tape.log_softmax_at(logits, target)?);

        h = h_new;
        prev = target;
    }
    let log_likelihood = tape.sum(&terms)?;
    let minus_one = tape.input(Tensor::scalar(-1.0));
    tape.mul(log_likelihood, minus_one)
}
