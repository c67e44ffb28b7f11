//! Helpers shared by the integration tests.

#![allow(dead_code)]

use hagan::autodiff::{ParamId, ParamStore, Tape, Var};
use hagan::generator::{encode_document, GeneratorDims, GeneratorParams, GruCellParams, TokenId};
use hagan::losses::{domain_confusion_loss, domain_loss, entropy_loss, sentiment_loss, Domain};
use hagan::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Straight-line encoder output: representation, word attention per
/// sentence, sentence attention.
pub struct OracleEncoding {
    pub repr: Vec<f64>,
    pub word: Vec<Vec<f64>>,
    pub sentence: Vec<f64>,
}

fn values(store: &ParamStore, id: ParamId) -> &[f64] {
    store.value(id).data()
}

fn matvec(w: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    w.chunks(cols)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn gru(store: &ParamStore, cell: &GruCellParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let v = |id| values(store, id);
    let gate = |w, u, b, hin: &[f64]| -> Vec<f64> {
        let wx = matvec(v(w), x);
        let uh = matvec(v(u), hin);
        wx.iter()
            .zip(&uh)
            .zip(v(b))
            .map(|((a, c), d)| a + c + d)
            .collect()
    };
    let z: Vec<f64> = gate(cell.w_z, cell.u_z, cell.b_z, h).into_iter().map(sigmoid).collect();
    let r: Vec<f64> = gate(cell.w_r, cell.u_r, cell.b_r, h).into_iter().map(sigmoid).collect();
    let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
    let cand: Vec<f64> = gate(cell.w_h, cell.u_h, cell.b_h, &rh).into_iter().map(f64::tanh).collect();
    (0..h.len())
        .map(|k| (1.0 - z[k]) * h[k] + z[k] * cand[k])
        .collect()
}

fn bigru(
    store: &ParamStore,
    fwd: &GruCellParams,
    bwd: &GruCellParams,
    xs: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let mut h = vec![0.0; fwd.hidden_size];
    let mut forward = Vec::new();
    for x in xs {
        h = gru(store, fwd, x, &h);
        forward.push(h.clone());
    }
    let mut h = vec![0.0; bwd.hidden_size];
    let mut backward = vec![Vec::new(); xs.len()];
    for (t, x) in xs.iter().enumerate().rev() {
        h = gru(store, bwd, x, &h);
        backward[t] = h.clone();
    }
    forward
        .into_iter()
        .zip(backward)
        .map(|(mut f, b)| {
            f.extend(b);
            f
        })
        .collect()
}

fn attend(states: &[Vec<f64>], query: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let scores: Vec<f64> = states
        .iter()
        .map(|s| s.iter().zip(query).map(|(a, b)| a * b).sum())
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    let alpha: Vec<f64> = exps.iter().map(|e| e / total).collect();
    let mut pooled = vec![0.0; query.len()];
    for (a, s) in alpha.iter().zip(states) {
        for (p, v) in pooled.iter_mut().zip(s) {
            *p += a * v;
        }
    }
    (alpha, pooled)
}

/// Hierarchical encoder evaluated with plain loops, no tape.
pub fn oracle_encode(
    store: &ParamStore,
    params: &GeneratorParams,
    sentences: &[Vec<TokenId>],
) -> OracleEncoding {
    let embed_dim = params.dims.embed_dim;
    let table = values(store, params.embedding);
    let mut sentence_vectors = Vec::new();
    let mut word = Vec::new();
    for sentence in sentences {
        let xs: Vec<Vec<f64>> = sentence
            .iter()
            .map(|&t| table[t as usize * embed_dim..(t as usize + 1) * embed_dim].to_vec())
            .collect();
        let states = bigru(store, &params.word_fwd, &params.word_bwd, &xs);
        let (alpha, pooled) = attend(&states, values(store, params.word_query));
        word.push(alpha);
        sentence_vectors.push(pooled);
    }
    let states = bigru(store, &params.sent_fwd, &params.sent_bwd, &sentence_vectors);
    let (sentence, repr) = attend(&states, values(store, params.sent_query));
    OracleEncoding {
        repr,
        word,
        sentence,
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// A random generator with wide weights and a random short document.
pub fn random_instance(seed: u64) -> (ParamStore, GeneratorParams, Vec<Vec<TokenId>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = GeneratorDims {
        vocab_size: rng.gen_range(3..10),
        embed_dim: rng.gen_range(1..5),
        word_hidden: rng.gen_range(1..5),
        sent_hidden: rng.gen_range(1..5),
    };
    let mut store = ParamStore::new();
    let params = GeneratorParams::init(&mut store, dims, &mut rng).unwrap();
    // Wider weights than the initializer so every nonlinearity leaves its
    // linear regime.
    for id in params.ids() {
        for v in store.value_mut(id).data_mut() {
            *v = rng.gen_range(-1.5..1.5);
        }
    }
    let sentences = (0..rng.gen_range(1..4))
        .map(|_| {
            (0..rng.gen_range(1..6))
                .map(|_| rng.gen_range(0..dims.vocab_size) as TokenId)
                .collect()
        })
        .collect();
    (store, params, sentences)
}

/// Largest deviation between the library encoder, on both an inference and
/// a recording tape, and [`oracle_encode`] over `instances` random cases.
pub fn encoder_oracle_error(instances: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..instances {
        let (store, params, sentences) = random_instance(seed);
        let expected = oracle_encode(&store, &params, &sentences);
        for recording in [false, true] {
            let mut tape = if recording { Tape::new() } else { Tape::inference() };
            let bound = params.bind(&mut tape, &store, recording);
            let enc = encode_document(&mut tape, &bound, &sentences).unwrap();
            worst = worst
                .max(max_abs_diff(enc.repr.data(), &expected.repr))
                .max(max_abs_diff(&enc.attention.sentence, &expected.sentence));
            for (got, want) in enc.attention.word.iter().zip(&expected.word) {
                worst = worst.max(max_abs_diff(got, want));
            }
        }
    }
    worst
}

fn v(values: &[f64]) -> Var {
    Var::constant(Tensor::vector(values.to_vec()))
}

const SEN: [[f64; 2]; 4] = [[0.9, 0.1], [0.3, 0.7], [0.55, 0.45], [0.02, 0.98]];
const SEN_LABELS: [usize; 4] = [0, 1, 1, 0];
/// Probability of the source domain per document.
const DOM: [f64; 4] = [0.8, 0.35, 0.6, 0.05];
/// 1 marks a source document.
const DOM_LABELS: [f64; 4] = [1.0, 0.0, 1.0, 0.0];

/// Absolute gaps between the sentiment, domain, confusion and entropy losses
/// and their hand-written formulas on fixed four-document batches.
pub fn loss_oracle_errors() -> [f64; 4] {
    let n = 4.0;
    let sen_want = -SEN.iter().zip(SEN_LABELS).map(|(p, k)| p[k].ln()).sum::<f64>() / n;
    let dom_want = -DOM
        .iter()
        .zip(DOM_LABELS)
        .map(|(p, y)| y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        .sum::<f64>()
        / n;
    let conf_want = -DOM.iter().map(|p| p.ln()).sum::<f64>() / n;
    let ent_want = -SEN
        .iter()
        .map(|p| p.iter().map(|x| x * x.ln()).sum::<f64>())
        .sum::<f64>()
        / n;

    let mut tape = Tape::new();
    let sen: Vec<(Var, usize)> = SEN.iter().zip(SEN_LABELS).map(|(p, k)| (v(p), k)).collect();
    let dom: Vec<(Var, Domain)> = DOM
        .iter()
        .zip(DOM_LABELS)
        .map(|(p, y)| {
            let d = if y == 1.0 { Domain::Source } else { Domain::Target };
            (v(&[*p, 1.0 - p]), d)
        })
        .collect();
    let conf: Vec<(Var, Domain)> = DOM.iter().map(|p| (v(&[*p, 1.0 - p]), Domain::Target)).collect();
    let ent: Vec<Var> = SEN.iter().map(|p| v(p)).collect();
    [
        (sentiment_loss(&mut tape, &sen).unwrap().item() - sen_want).abs(),
        (domain_loss(&mut tape, &dom).unwrap().item() - dom_want).abs(),
        (domain_confusion_loss(&mut tape, &conf).unwrap().item() - conf_want).abs(),
        (entropy_loss(&mut tape, &ent).unwrap().item() - ent_want).abs(),
    ]
}

/// Number of random two-class distributions, including exact 0/1 and
/// near-zero cases, whose entropy falls outside `[0, ln 2]`.
pub fn entropy_out_of_range(samples: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ln2 = 2f64.ln();
    (0..samples)
        .filter(|i| {
            let a: f64 = match i % 10 {
                0 => 0.0,
                1 => 1.0,
                2 => 0.5,
                3 => rng.gen_range(0.0..1e-12),
                _ => rng.gen(),
            };
            let h = entropy_loss(&mut Tape::new(), &[v(&[a, 1.0 - a])]).unwrap().item();
            !(0.0..=ln2).contains(&h)
        })
        .count()
}
