//! The conditional question model `P(Q | F)`.
//!
//! Each fact atom is looked up in a frozen input table (TransE rows) and
//! projected to the decoder width; a GRU decoder then emits the question one
//! token at a time, re-weighting the three atom encodings at every step with
//! independent sigmoid attention scalars.

mod checkpoint;
mod graph;

use crate::error::{Error, Result};
use crate::kb::{Fact, Vocabulary, BOS, EOS};
use crate::numerics::{
    gradcheck, log_sum_exp, matvec_into, seeded_rng, sigmoid_scalar, softmax_slice, tanh_scalar,
    GradCheck, ParamId, ParamSet, Tensor,
};
use crate::transe::TransEModel;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use graph::sequence_nll;

/// Half-width of the uniform initializer for every trainable matrix.
pub const INIT_RANGE: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    /// Width of the frozen input embeddings (TransE dim).
    pub enc_dim: usize,
    /// Width of the output word embeddings.
    pub word_dim: usize,
    /// Decoder hidden size.
    pub hidden: usize,
    /// Output vocabulary size.
    pub vocab: usize,
}

/// Indices of the special output tokens the decoder relies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Specials {
    pub bos: usize,
    pub eos: usize,
}

impl Specials {
    pub fn from_vocab(vocab: &Vocabulary) -> Result<Self> {
        let get = |t: &str| {
            vocab.get(t).ok_or_else(|| Error::Lookup {
                role: "reserved token",
                id: t.to_string(),
            })
        };
        Ok(Specials {
            bos: get(BOS)?,
            eos: get(EOS)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamIds {
    pub w_enc: ParamId,
    pub e_out: ParamId,
    pub w_r: ParamId,
    pub w_u: ParamId,
    pub w: ParamId,
    pub u_r: ParamId,
    pub u_u: ParamId,
    pub u: ParamId,
    pub c_r: ParamId,
    pub c_u: ParamId,
    pub c: ParamId,
    pub v_o: ParamId,
    pub v_h: ParamId,
    pub v_c: ParamId,
    pub v_w: ParamId,
    pub w_init: ParamId,
    pub att_hidden: ParamId,
    pub att_out: ParamId,
}

/// `(name, rows, cols)` for every trainable tensor.
fn layout(d: &ModelDims) -> [(&'static str, usize, usize); 18] {
    let (h, e, w, v) = (d.hidden, d.enc_dim, d.word_dim, d.vocab);
    [
        ("W_enc", h, e),
        ("E_out", v, w),
        ("W_r", h, w),
        ("W_u", h, w),
        ("W", h, w),
        ("U_r", h, h),
        ("U_u", h, h),
        ("U", h, h),
        ("C_r", h, h),
        ("C_u", h, h),
        ("C", h, h),
        ("V_o", v, h),
        ("V_h", h, h),
        ("V_c", h, h),
        ("V_w", h, w),
        ("W_init", h, 3 * h),
        ("A_att", h, 4 * h),
        ("u_att", 3, h),
    ]
}

impl ParamIds {
    fn resolve(set: &ParamSet) -> Result<Self> {
        let id = |n: &str| {
            set.id(n)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{n}`")))
        };
        Ok(ParamIds {
            w_enc: id("W_enc")?,
            e_out: id("E_out")?,
            w_r: id("W_r")?,
            w_u: id("W_u")?,
            w: id("W")?,
            u_r: id("U_r")?,
            u_u: id("U_u")?,
            u: id("U")?,
            c_r: id("C_r")?,
            c_u: id("C_u")?,
            c: id("C")?,
            v_o: id("V_o")?,
            v_h: id("V_h")?,
            v_c: id("V_c")?,
            v_w: id("V_w")?,
            w_init: id("W_init")?,
            att_hidden: id("A_att")?,
            att_out: id("u_att")?,
        })
    }
}

/// Row indices of a fact's atoms in the input embedding table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AtomIds {
    pub subject: usize,
    pub relationship: usize,
    pub object: usize,
}

impl AtomIds {
    pub fn resolve(fact: &Fact, input_vocab: &Vocabulary) -> Result<Self> {
        let get = |id: &str, role| {
            input_vocab.get(id).ok_or_else(|| Error::Lookup {
                role,
                id: id.to_string(),
            })
        };
        Ok(AtomIds {
            subject: get(&fact.subject, "subject")?,
            relationship: get(&fact.relationship, "relationship")?,
            object: get(&fact.object, "object")?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactEncoding {
    pub subject: Tensor,
    pub relationship: Tensor,
    pub object: Tensor,
}

impl FactEncoding {
    /// `[enc_s; enc_r; enc_o]`
    pub fn concatenated(&self) -> Tensor {
        let mut all = Vec::with_capacity(3 * self.subject.len());
        for part in [&self.subject, &self.relationship, &self.object] {
            all.extend_from_slice(part.data());
        }
        Tensor::vector(all)
    }

    fn parts(&self) -> [&[f64]; 3] {
        [self.subject.data(), self.relationship.data(), self.object.data()]
    }
}

/// Independent per-atom attention scalars, each in (0, 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionWeights {
    pub subject: f64,
    pub relationship: f64,
    pub object: f64,
}

impl AttentionWeights {
    pub fn as_array(&self) -> [f64; 3] {
        [self.subject, self.relationship, self.object]
    }
}

/// All weights of the encoder/decoder. The input table is frozen and kept
/// outside the trainable [`ParamSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct QGenParams {
    pub dims: ModelDims,
    /// `K × enc_dim`, one row per input-vocabulary entry.
    pub input_embeddings: Tensor,
    pub params: ParamSet,
    pub ids: ParamIds,
}

impl QGenParams {
    fn build(dims: ModelDims, input_embeddings: Tensor, mut fill: impl FnMut(usize, usize) -> Tensor) -> Result<Self> {
        if dims.enc_dim == 0 || dims.word_dim == 0 || dims.hidden == 0 || dims.vocab == 0 {
            return Err(Error::contract(format!("model dimensions must be positive: {dims:?}")));
        }
        if input_embeddings.shape().len() != 2 || input_embeddings.cols() != dims.enc_dim {
            return Err(Error::Shape {
                op: "input embeddings",
                left: input_embeddings.shape().to_vec(),
                right: vec![dims.enc_dim],
            });
        }
        let mut params = ParamSet::new();
        for (name, rows, cols) in layout(&dims) {
            params.register(name, fill(rows, cols));
        }
        let ids = ParamIds::resolve(&params)?;
        Ok(QGenParams {
            dims,
            input_embeddings,
            params,
            ids,
        })
    }

    /// Uniform(−0.08, 0.08) initialization of every trainable matrix.
    pub fn init(dims: ModelDims, input_embeddings: Tensor, seed: u64) -> Result<Self> {
        let mut rng = seeded_rng(seed);
        Self::build(dims, input_embeddings, |r, c| {
            Tensor::uniform(&[r, c], INIT_RANGE, &mut rng)
        })
    }

    pub fn zeros(dims: ModelDims, input_embeddings: Tensor) -> Result<Self> {
        Self::build(dims, input_embeddings, |r, c| Tensor::zeros(&[r, c]))
    }

    /// Reassembles a model from named tensors (checkpoint loading).
    pub fn from_parts(input_embeddings: Tensor, params: ParamSet) -> Result<Self> {
        let ids = ParamIds::resolve(&params)?;
        let dims = ModelDims {
            enc_dim: input_embeddings.cols(),
            word_dim: params.get(ids.e_out).cols(),
            hidden: params.get(ids.w_enc).rows(),
            vocab: params.get(ids.e_out).rows(),
        };
        if params.len() != 18 {
            return Err(Error::Checkpoint(format!("expected 18 trainable tensors, found {}", params.len())));
        }
        for (name, rows, cols) in layout(&dims) {
            let t = params.get(params.id(name).unwrap());
            if t.shape() != [rows, cols] {
                return Err(Error::Shape {
                    op: "checkpoint tensor",
                    left: t.shape().to_vec(),
                    right: vec![rows, cols],
                });
            }
        }
        Ok(QGenParams {
            dims,
            input_embeddings,
            params,
            ids,
        })
    }

    /// Builds the frozen input table from TransE rows in input-vocabulary
    /// order. Reserved entries (`<unk>`) get a zero row.
    pub fn input_table_from_transe(transe: &TransEModel, input_vocab: &Vocabulary) -> Result<Tensor> {
        let dim = transe.dim();
        let mut table = Tensor::zeros(&[input_vocab.len(), dim]);
        for (i, tok) in input_vocab.tokens().iter().enumerate() {
            if i == 0 && tok == crate::kb::UNK {
                continue;
            }
            let row = transe
                .entity(tok)
                .or_else(|_| transe.relationship(tok))
                .map_err(|_| Error::Lookup {
                    role: "TransE atom",
                    id: tok.clone(),
                })?;
            table.row_mut(i).copy_from_slice(row);
        }
        Ok(table)
    }

    fn mat(&self, id: ParamId) -> &Tensor {
        self.params.get(id)
    }

    fn mv(&self, id: ParamId, x: &[f64], out: &mut [f64]) {
        let w = self.mat(id);
        matvec_into(w.data(), w.cols(), x, out);
    }

    fn check_atoms(&self, atoms: AtomIds) -> Result<()> {
        for (role, i) in [
            ("subject", atoms.subject),
            ("relationship", atoms.relationship),
            ("object", atoms.object),
        ] {
            if i >= self.input_embeddings.rows() {
                return Err(Error::Lookup {
                    role,
                    id: format!("row {i}"),
                });
            }
        }
        Ok(())
    }

    fn check_token(&self, token: usize) -> Result<()> {
        if token >= self.dims.vocab {
            return Err(Error::Lookup {
                role: "output token",
                id: token.to_string(),
            });
        }
        Ok(())
    }

    fn check_len(&self, what: &'static str, v: &Tensor, n: usize) -> Result<()> {
        if v.len() != n {
            return Err(Error::Shape {
                op: what,
                left: v.shape().to_vec(),
                right: vec![n],
            });
        }
        Ok(())
    }

    /// `enc_atom = W_enc · E_in[atom]` for subject, relationship and object.
    pub fn encode_fact(&self, atoms: AtomIds) -> Result<FactEncoding> {
        self.check_atoms(atoms)?;
        let h = self.dims.hidden;
        let enc = |row: usize| {
            let mut out = vec![0.0; h];
            self.mv(self.ids.w_enc, self.input_embeddings.row(row), &mut out);
            Tensor::vector(out)
        };
        Ok(FactEncoding {
            subject: enc(atoms.subject),
            relationship: enc(atoms.relationship),
            object: enc(atoms.object),
        })
    }

    /// `α = σ(u · tanh(A · [enc_all; h_prev]))`, `c = Σ α_atom · enc_atom`.
    pub fn attend(&self, enc: &FactEncoding, h_prev: &Tensor) -> Result<(Tensor, AttentionWeights)> {
        let h = self.dims.hidden;
        self.check_len("attend", h_prev, h)?;
        let mut input = Vec::with_capacity(4 * h);
        for part in enc.parts() {
            input.extend_from_slice(part);
        }
        input.extend_from_slice(h_prev.data());
        let mut hidden = vec![0.0; h];
        self.mv(self.ids.att_hidden, &input, &mut hidden);
        hidden.iter_mut().for_each(|v| *v = tanh_scalar(*v));
        let mut scores = [0.0; 3];
        self.mv(self.ids.att_out, &hidden, &mut scores);
        let alpha = scores.map(sigmoid_scalar);

        let mut c = vec![0.0; h];
        for (a, part) in alpha.iter().zip(enc.parts()) {
            c.iter_mut().zip(part).for_each(|(ci, e)| *ci += a * e);
        }
        Ok((
            Tensor::vector(c),
            AttentionWeights {
                subject: alpha[0],
                relationship: alpha[1],
                object: alpha[2],
            },
        ))
    }

    /// `h_0 = tanh(W_init · enc_all)`.
    pub fn init_state(&self, enc: &FactEncoding) -> Tensor {
        let mut h0 = vec![0.0; self.dims.hidden];
        self.mv(self.ids.w_init, enc.concatenated().data(), &mut h0);
        h0.iter_mut().for_each(|v| *v = tanh_scalar(*v));
        Tensor::vector(h0)
    }

    /// One GRU update. The update gate multiplies the previous state:
    /// `h_n = g_u ∘ h_prev + (1 − g_u) ∘ h̃`.
    pub fn decoder_step(&self, w_prev: usize, h_prev: &Tensor, c: &Tensor) -> Result<Tensor> {
        self.check_token(w_prev)?;
        let hd = self.dims.hidden;
        self.check_len("decoder_step h_prev", h_prev, hd)?;
        self.check_len("decoder_step context", c, hd)?;
        let x = self.mat(self.ids.e_out).row(w_prev);
        let hp = h_prev.data();

        let gate = |w: ParamId, cm: ParamId, u: ParamId, h_in: &[f64]| {
            let mut acc = vec![0.0; hd];
            let mut tmp = vec![0.0; hd];
            self.mv(w, x, &mut acc);
            self.mv(cm, c.data(), &mut tmp);
            acc.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
            self.mv(u, h_in, &mut tmp);
            acc.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
            acc
        };
        let reset: Vec<f64> = gate(self.ids.w_r, self.ids.c_r, self.ids.u_r, hp)
            .into_iter()
            .map(sigmoid_scalar)
            .collect();
        let update: Vec<f64> = gate(self.ids.w_u, self.ids.c_u, self.ids.u_u, hp)
            .into_iter()
            .map(sigmoid_scalar)
            .collect();
        let gated: Vec<f64> = reset.iter().zip(hp).map(|(r, h)| r * h).collect();
        let candidate: Vec<f64> = gate(self.ids.w, self.ids.c, self.ids.u, &gated)
            .into_iter()
            .map(tanh_scalar)
            .collect();
        let h_new = update
            .iter()
            .zip(hp)
            .zip(&candidate)
            .map(|((u, h), ht)| u * h + (1.0 - u) * ht)
            .collect();
        Ok(Tensor::vector(h_new))
    }

    /// Pre-softmax scores `V_o tanh(V_h h_n + V_w E_out[w_prev] + V_c c)`.
    pub fn output_logits(&self, h_n: &Tensor, w_prev: usize, c: &Tensor) -> Result<Vec<f64>> {
        self.check_token(w_prev)?;
        let hd = self.dims.hidden;
        self.check_len("output h_n", h_n, hd)?;
        self.check_len("output context", c, hd)?;
        let x = self.mat(self.ids.e_out).row(w_prev);
        let mut pre = vec![0.0; hd];
        let mut tmp = vec![0.0; hd];
        self.mv(self.ids.v_h, h_n.data(), &mut pre);
        self.mv(self.ids.v_w, x, &mut tmp);
        pre.iter_mut().zip(&tmp).for_each(|(a, b)| *a += b);
        self.mv(self.ids.v_c, c.data(), &mut tmp);
        pre.iter_mut().zip(&tmp).for_each(|(a, b)| *a = tanh_scalar(*a + b));
        let mut logits = vec![0.0; self.dims.vocab];
        self.mv(self.ids.v_o, &pre, &mut logits);
        Ok(logits)
    }

    pub fn output_distribution(&self, h_n: &Tensor, w_prev: usize, c: &Tensor) -> Result<Tensor> {
        Ok(Tensor::vector(softmax_slice(&self.output_logits(h_n, w_prev, c)?)))
    }

    /// Attention, GRU update and output layer for one position. Returns the
    /// new state and log-probabilities over the output vocabulary.
    pub fn advance(&self, enc: &FactEncoding, w_prev: usize, h_prev: &Tensor) -> Result<(Tensor, Vec<f64>)> {
        let (c, _) = self.attend(enc, h_prev)?;
        let h = self.decoder_step(w_prev, h_prev, &c)?;
        let logits = self.output_logits(&h, w_prev, &c)?;
        let lse = log_sum_exp(&logits);
        Ok((h, logits.into_iter().map(|l| l - lse).collect()))
    }

    /// `Σ_n log p(w_n | w_<n, F)` with `<bos>` feeding the first step.
    pub fn sequence_log_likelihood(&self, atoms: AtomIds, tokens: &[usize], specials: Specials) -> Result<f64> {
        if tokens.is_empty() {
            return Err(Error::contract("question must contain at least one token"));
        }
        for &t in tokens {
            self.check_token(t)?;
        }
        self.check_token(specials.bos)?;
        let enc = self.encode_fact(atoms)?;
        let mut h = self.init_state(&enc);
        let mut prev = specials.bos;
        let mut total = 0.0;
        for &t in tokens {
            let (h_next, logp) = self.advance(&enc, prev, &h)?;
            total += logp[t];
            h = h_next;
            prev = t;
        }
        Ok(total)
    }
}

/// `α_s·enc_s + α_r·enc_r + α_o·enc_o`, computed independently of [`QGenParams::attend`].
pub fn weighted_context(enc: &FactEncoding, alpha: &AttentionWeights) -> Vec<f64> {
    let a = alpha.as_array();
    let parts = enc.parts();
    (0..parts[0].len())
        .map(|i| a[0] * parts[0][i] + a[1] * parts[1][i] + a[2] * parts[2][i])
        .collect()
}

/// Finite-difference check of the recorded NLL on a random model: three input
/// rows, parameters uniform in ±0.5, and a random `length`-token question
/// ending in token 2 (`bos` = 1).
pub fn random_gradcheck(dims: ModelDims, length: usize, seed: u64, eps: f64) -> Result<GradCheck> {
    use rand::RngExt;
    if length == 0 || dims.vocab < 3 {
        return Err(Error::contract("need length >= 1 and vocab >= 3"));
    }
    let mut rng = seeded_rng(seed);
    let table = Tensor::uniform(&[3, dims.enc_dim], 1.0, &mut rng);
    let mut model = QGenParams::init(dims, table, seed)?;
    for id in model.params.ids().collect::<Vec<_>>() {
        let shape = model.params.get(id).shape().to_vec();
        *model.params.get_mut(id) = Tensor::uniform(&shape, 0.5, &mut rng);
    }
    let specials = Specials { bos: 1, eos: 2 };
    let mut tokens: Vec<usize> = (1..length)
        .map(|_| {
            let t = rng.random_range(0..dims.vocab - 1);
            if t >= 2 { t + 1 } else { t }
        })
        .collect();
    tokens.push(specials.eos);
    let atoms = AtomIds {
        subject: 0,
        relationship: 1,
        object: 2,
    };
    gradcheck(&model.params, eps, |tape| sequence_nll(tape, &model, atoms, &tokens, specials))
}
