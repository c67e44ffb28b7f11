//! Hierarchical document encoder: word embeddings, a word-level Bi-GRU with
//! attention pooling into sentence vectors, then a sentence-level Bi-GRU with
//! attention pooling into the document representation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type TokenId = u32;

/// Half-width of the uniform distribution used for weight initialization.
pub const INIT_SCALE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorDims {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub word_hidden: usize,
    pub sent_hidden: usize,
}

impl GeneratorDims {
    /// Length of the document representation.
    pub fn repr_dim(&self) -> usize {
        2 * self.sent_hidden
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.embed_dim == 0 || self.word_hidden == 0 || self.sent_hidden == 0
        {
            return Err(Error::Config(format!("generator dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Weights of one GRU direction. `T` is [`ParamId`] for stored parameters and
/// [`Var`] once bound to a tape.
#[derive(Debug, Clone)]
pub struct GruCell<T> {
    pub input_size: usize,
    pub hidden_size: usize,
    pub w_z: T,
    pub u_z: T,
    pub b_z: T,
    pub w_r: T,
    pub u_r: T,
    pub b_r: T,
    pub w_h: T,
    pub u_h: T,
    pub b_h: T,
}

pub type GruCellParams = GruCell<ParamId>;

impl<T> GruCell<T> {
    fn parts(&self) -> [&T; 9] {
        [
            &self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h,
            &self.b_h,
        ]
    }

    fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> GruCell<U> {
        GruCell {
            input_size: self.input_size,
            hidden_size: self.hidden_size,
            w_z: f(&self.w_z),
            u_z: f(&self.u_z),
            b_z: f(&self.b_z),
            w_r: f(&self.w_r),
            u_r: f(&self.u_r),
            b_r: f(&self.b_r),
            w_h: f(&self.w_h),
            u_h: f(&self.u_h),
            b_h: f(&self.b_h),
        }
    }
}

impl GruCell<ParamId> {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_size: usize,
        hidden_size: usize,
        rng: &mut R,
    ) -> Self {
        let mut weight = |name: &str, cols: usize, rng: &mut R| {
            store.add(
                format!("{prefix}.{name}"),
                uniform_matrix(hidden_size, cols, rng),
            )
        };
        let w_z = weight("w_z", input_size, rng);
        let u_z = weight("u_z", hidden_size, rng);
        let w_r = weight("w_r", input_size, rng);
        let u_r = weight("u_r", hidden_size, rng);
        let w_h = weight("w_h", input_size, rng);
        let u_h = weight("u_h", hidden_size, rng);
        let mut bias = |name: &str| store.add(format!("{prefix}.{name}"), Tensor::zeros(&[hidden_size]));
        let b_z = bias("b_z");
        let b_r = bias("b_r");
        let b_h = bias("b_h");
        GruCell {
            input_size,
            hidden_size,
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.parts().into_iter().copied().collect()
    }

    pub fn bind(&self, tape: &mut Tape, store: &ParamStore, track: bool) -> GruCell<Var> {
        self.map(|id| tape.param(store, *id, track))
    }
}

pub(crate) fn uniform_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| rng.gen_range(-INIT_SCALE..INIT_SCALE))
        .collect();
    Tensor::matrix(rows, cols, data).expect("rows * cols values")
}

pub(crate) fn uniform_vector<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Tensor {
    Tensor::vector(
        (0..len)
            .map(|_| rng.gen_range(-INIT_SCALE..INIT_SCALE))
            .collect(),
    )
}

/// All generator parameters. `T` as for [`GruCell`].
#[derive(Debug, Clone)]
pub struct Generator<T> {
    pub dims: GeneratorDims,
    pub embedding: T,
    pub word_fwd: GruCell<T>,
    pub word_bwd: GruCell<T>,
    pub word_query: T,
    pub sent_fwd: GruCell<T>,
    pub sent_bwd: GruCell<T>,
    pub sent_query: T,
}

pub type GeneratorParams = Generator<ParamId>;
pub type BoundGenerator = Generator<Var>;

impl Generator<ParamId> {
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dims: GeneratorDims,
        rng: &mut R,
    ) -> Result<Self> {
        dims.validate()?;
        let embedding = store.add(
            "gen.embedding",
            uniform_matrix(dims.vocab_size, dims.embed_dim, rng),
        );
        let word_fwd = GruCell::init(store, "gen.word.fwd", dims.embed_dim, dims.word_hidden, rng);
        let word_bwd = GruCell::init(store, "gen.word.bwd", dims.embed_dim, dims.word_hidden, rng);
        let word_query = store.add("gen.word.query", uniform_vector(2 * dims.word_hidden, rng));
        let sent_in = 2 * dims.word_hidden;
        let sent_fwd = GruCell::init(store, "gen.sent.fwd", sent_in, dims.sent_hidden, rng);
        let sent_bwd = GruCell::init(store, "gen.sent.bwd", sent_in, dims.sent_hidden, rng);
        let sent_query = store.add("gen.sent.query", uniform_vector(2 * dims.sent_hidden, rng));
        Ok(Generator {
            dims,
            embedding,
            word_fwd,
            word_bwd,
            word_query,
            sent_fwd,
            sent_bwd,
            sent_query,
        })
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.embedding];
        ids.extend(self.word_fwd.ids());
        ids.extend(self.word_bwd.ids());
        ids.push(self.word_query);
        ids.extend(self.sent_fwd.ids());
        ids.extend(self.sent_bwd.ids());
        ids.push(self.sent_query);
        ids
    }

    /// Bind every generator parameter to `tape`; `track = false` freezes them.
    pub fn bind(&self, tape: &mut Tape, store: &ParamStore, track: bool) -> BoundGenerator {
        Generator {
            dims: self.dims,
            embedding: tape.param(store, self.embedding, track),
            word_fwd: self.word_fwd.bind(tape, store, track),
            word_bwd: self.word_bwd.bind(tape, store, track),
            word_query: tape.param(store, self.word_query, track),
            sent_fwd: self.sent_fwd.bind(tape, store, track),
            sent_bwd: self.sent_bwd.bind(tape, store, track),
            sent_query: tape.param(store, self.sent_query, track),
        }
    }
}

/// Attention weights captured while encoding one document.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRecord {
    /// Per sentence, the word weights (each row sums to 1).
    pub word: Vec<Vec<f64>>,
    /// Sentence weights (sum to 1).
    pub sentence: Vec<f64>,
}

impl AttentionRecord {
    /// Word weight times its sentence weight; sums to 1 over the document.
    pub fn combined(&self) -> Vec<Vec<f64>> {
        self.word
            .iter()
            .zip(&self.sentence)
            .map(|(words, s)| words.iter().map(|w| w * s).collect())
            .collect()
    }
}

/// Document representation plus the attention that produced it.
#[derive(Debug, Clone)]
pub struct Encoded {
    pub repr: Var,
    pub attention: AttentionRecord,
}

/// Look up the embedding row of every token. Errors carry an empty document id;
/// callers fill it with [`Error::in_document`].
pub fn embed_lookup(
    tape: &mut Tape,
    sentences: &[Vec<TokenId>],
    embedding: &Var,
) -> Result<Vec<Vec<Var>>> {
    let (vocab, _) = embedding
        .value()
        .dims2()
        .ok_or_else(|| Error::shape("embed_lookup", embedding.shape(), &[]))?;
    if sentences.is_empty() {
        return Err(Error::Data {
            doc: String::new(),
            detail: "document has no sentences".into(),
        });
    }
    sentences
        .iter()
        .enumerate()
        .map(|(i, sentence)| {
            if sentence.is_empty() {
                return Err(Error::Data {
                    doc: String::new(),
                    detail: format!("sentence {i} is empty"),
                });
            }
            sentence
                .iter()
                .map(|&tok| {
                    if tok as usize >= vocab {
                        return Err(Error::Data {
                            doc: String::new(),
                            detail: format!("token id {tok} outside vocabulary of {vocab}"),
                        });
                    }
                    tape.gather_row(embedding, tok as usize)
                })
                .collect()
        })
        .collect()
}

/// One GRU update:
/// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
/// `h̃ = tanh(W_h x + U_h (r ⊙ h) + b_h)`, `h' = (1 − z) ⊙ h + z ⊙ h̃`.
pub fn gru_step(tape: &mut Tape, x: &Var, h_prev: &Var, cell: &GruCell<Var>) -> Result<Var> {
    if x.len() != cell.input_size || h_prev.len() != cell.hidden_size {
        return Err(Error::shape(
            "gru_step",
            &[x.len(), h_prev.len()],
            &[cell.input_size, cell.hidden_size],
        ));
    }
    tape.gru(
        x,
        h_prev,
        [
            &cell.w_z, &cell.u_z, &cell.b_z, &cell.w_r, &cell.u_r, &cell.b_r, &cell.w_h,
            &cell.u_h, &cell.b_h,
        ],
    )
}

fn run_direction<'a>(
    tape: &mut Tape,
    inputs: impl Iterator<Item = &'a Var>,
    cell: &GruCell<Var>,
) -> Result<Vec<Var>> {
    let mut h = Var::constant(Tensor::zeros(&[cell.hidden_size]));
    let mut states = Vec::new();
    for x in inputs {
        h = gru_step(tape, x, &h, cell)?;
        states.push(h.clone());
    }
    Ok(states)
}

/// Bidirectional GRU from zero initial states; element `t` of the result is
/// `[forward_t, backward_t]`.
pub fn bigru_encode(
    tape: &mut Tape,
    sequence: &[Var],
    fwd: &GruCell<Var>,
    bwd: &GruCell<Var>,
) -> Result<Vec<Var>> {
    if sequence.is_empty() {
        return Err(Error::Usage("bigru_encode of an empty sequence".into()));
    }
    let forward = run_direction(tape, sequence.iter(), fwd)?;
    let mut backward = run_direction(tape, sequence.iter().rev(), bwd)?;
    backward.reverse();
    forward
        .iter()
        .zip(&backward)
        .map(|(f, b)| tape.concat(&[f, b]))
        .collect()
}

/// Softmax attention of `states` against `query`; returns the weights and the
/// weighted sum of states.
pub fn attention_pool(tape: &mut Tape, states: &[Var], query: &Var) -> Result<(Var, Var)> {
    if states.is_empty() {
        return Err(Error::Usage("attention over no states".into()));
    }
    for s in states {
        if s.len() != query.len() {
            return Err(Error::shape("attention_pool", s.shape(), query.shape()));
        }
    }
    let refs: Vec<&Var> = states.iter().collect();
    let stacked = tape.stack_rows(&refs)?;
    let scores = tape.matmul(&stacked, query)?;
    let weights = tape.softmax(&scores)?;
    let pooled = tape.matmul(&weights, &stacked)?;
    Ok((weights, pooled))
}

/// Full hierarchical encoding of one document.
pub fn encode_document(
    tape: &mut Tape,
    generator: &BoundGenerator,
    sentences: &[Vec<TokenId>],
) -> Result<Encoded> {
    let embedded = embed_lookup(tape, sentences, &generator.embedding)?;
    let mut sentence_vectors = Vec::with_capacity(embedded.len());
    let mut word_weights = Vec::with_capacity(embedded.len());
    for words in &embedded {
        let states = bigru_encode(tape, words, &generator.word_fwd, &generator.word_bwd)?;
        let (weights, pooled) = attention_pool(tape, &states, &generator.word_query)?;
        word_weights.push(weights.data().to_vec());
        sentence_vectors.push(pooled);
    }
    let states = bigru_encode(
        tape,
        &sentence_vectors,
        &generator.sent_fwd,
        &generator.sent_bwd,
    )?;
    let (weights, repr) = attention_pool(tape, &states, &generator.sent_query)?;
    Ok(Encoded {
        repr,
        attention: AttentionRecord {
            word: word_weights,
            sentence: weights.data().to_vec(),
        },
    })
}
