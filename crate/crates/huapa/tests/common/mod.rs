//! Shared test fixtures and a straight-line oracle for the full forward
//! pass: a from-scratch reimplementation over plain `f64` vectors with no
//! computation graph, used to cross-check the engine's forward path.

use huapa::autodiff::Value;
use huapa::data::EncodedDoc;
use huapa::model::{AttnBranch, HuapaParams, LstmParams};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct OracleOutput {
    pub p: Vec<f64>,
    pub p_u: Vec<f64>,
    pub p_p: Vec<f64>,
    pub d_u: Vec<f64>,
    pub d_p: Vec<f64>,
}

fn buf(v: &Value) -> Vec<f64> {
    v.data().clone()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// y = M x + b for a row-major [rows x cols] matrix.
fn affine(m: &[f64], bias: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut y = bias.to_vec();
    for r in 0..rows {
        for c in 0..cols {
            y[r] += m[r * cols + c] * x[c];
        }
    }
    y
}

fn softmax_stable(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

struct ScalarLstm {
    w: Vec<f64>,
    b: Vec<f64>,
    wc: Vec<f64>,
    bc: Vec<f64>,
    hidden: usize,
}

impl ScalarLstm {
    fn from(p: &LstmParams) -> ScalarLstm {
        ScalarLstm { w: buf(&p.w), b: buf(&p.b), wc: buf(&p.wc), bc: buf(&p.bc), hidden: p.hidden() }
    }

    fn step(&self, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let cat: Vec<f64> = h.iter().chain(x.iter()).copied().collect();
        let gates = affine(&self.w, &self.b, &cat, 3 * hd, cat.len());
        let cand = affine(&self.wc, &self.bc, &cat, hd, cat.len());
        let mut new_c = vec![0.0; hd];
        let mut new_h = vec![0.0; hd];
        for k in 0..hd {
            let gi = sigmoid(gates[k]);
            let gf = sigmoid(gates[hd + k]);
            let go = sigmoid(gates[2 * hd + k]);
            new_c[k] = gf * c[k] + gi * cand[k].tanh();
            new_h[k] = go * new_c[k].tanh();
        }
        (new_h, new_c)
    }

    fn run(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; self.hidden];
        let mut out = Vec::with_capacity(xs.len());
        for x in xs {
            let (nh, nc) = self.step(x, &h, &c);
            out.push(nh.clone());
            h = nh;
            c = nc;
        }
        out
    }
}

/// BiLSTM over the valid prefix: forward states then backward states,
/// concatenated per position.
fn bilstm(fwd: &ScalarLstm, bwd: &ScalarLstm, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let f_states = fwd.run(xs);
    let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
    let mut b_states = bwd.run(&rev);
    b_states.reverse();
    f_states
        .into_iter()
        .zip(b_states)
        .map(|(f, b)| f.into_iter().chain(b).collect())
        .collect()
}

struct ScalarAttention {
    v: Vec<f64>,
    wh: Vec<f64>,
    wu: Vec<f64>,
    bw: Vec<f64>,
    attn: usize,
    state: usize,
    ctx: usize,
}

impl ScalarAttention {
    fn from(p: &huapa::model::AttentionParams) -> ScalarAttention {
        let attn = p.v.len();
        let state = p.wh.shape()[1];
        let ctx = p.wu.shape()[1];
        ScalarAttention { v: buf(&p.v), wh: buf(&p.wh), wu: buf(&p.wu), bw: buf(&p.bw), attn, state, ctx }
    }

    fn pool(&self, states: &[Vec<f64>], ctx: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ctx_term = affine(&self.wu, &vec![0.0; self.attn], ctx, self.attn, self.ctx);
        let scores: Vec<f64> = states
            .iter()
            .map(|h| {
                let mut e = 0.0;
                for a in 0..self.attn {
                    let mut z = self.bw[a] + ctx_term[a];
                    for k in 0..self.state {
                        z += self.wh[a * self.state + k] * h[k];
                    }
                    e += self.v[a] * z.tanh();
                }
                e
            })
            .collect();
        let weights = softmax_stable(&scores);
        let mut pooled = vec![0.0; self.state];
        for (w, h) in weights.iter().zip(states) {
            for (p, x) in pooled.iter_mut().zip(h) {
                *p += w * x;
            }
        }
        (pooled, weights)
    }
}

fn encode_view(branch: &AttnBranch, word_emb: &[f64], word_dim: usize, doc: &EncodedDoc, ctx: &[f64]) -> Vec<f64> {
    let word_fwd = ScalarLstm::from(&branch.enc.word_fwd);
    let word_bwd = ScalarLstm::from(&branch.enc.word_bwd);
    let sent_fwd = ScalarLstm::from(&branch.enc.sent_fwd);
    let sent_bwd = ScalarLstm::from(&branch.enc.sent_bwd);
    let word_attn = ScalarAttention::from(&branch.word_attn);
    let sent_attn = ScalarAttention::from(&branch.sent_attn);

    let mut sent_vecs = Vec::with_capacity(doc.n_sents());
    for i in 0..doc.n_sents() {
        let len = doc.sentence_len(i);
        let xs: Vec<Vec<f64>> = doc.words[i][..len]
            .iter()
            .map(|&w| word_emb[w as usize * word_dim..(w as usize + 1) * word_dim].to_vec())
            .collect();
        let states = bilstm(&word_fwd, &word_bwd, &xs);
        let (pooled, _) = word_attn.pool(&states, ctx);
        sent_vecs.push(pooled);
    }
    let sent_states = bilstm(&sent_fwd, &sent_bwd, &sent_vecs);
    let (doc_vec, _) = sent_attn.pool(&sent_states, ctx);
    doc_vec
}

/// Straight-line forward pass for the full two-view architecture.
pub fn oracle_forward(params: &HuapaParams, doc: &EncodedDoc) -> OracleOutput {
    let dims = &params.dims;
    let word_emb = buf(&params.word_emb);
    let user_emb = buf(params.user_emb.as_ref().expect("oracle needs the full model"));
    let product_emb = buf(params.product_emb.as_ref().unwrap());
    let user_ctx = user_emb[doc.user as usize * dims.user_dim..(doc.user as usize + 1) * dims.user_dim].to_vec();
    let product_ctx = product_emb
        [doc.product as usize * dims.product_dim..(doc.product as usize + 1) * dims.product_dim]
        .to_vec();

    let d_u = encode_view(params.user_branch.as_ref().unwrap(), &word_emb, dims.word_dim, doc, &user_ctx);
    let d_p = encode_view(params.product_branch.as_ref().unwrap(), &word_emb, dims.word_dim, doc, &product_ctx);
    let d: Vec<f64> = d_u.iter().chain(d_p.iter()).copied().collect();

    let head = |w: &Value, b: &Value, x: &[f64]| -> Vec<f64> {
        let rows = w.shape()[0];
        let cols = w.shape()[1];
        softmax_stable(&affine(&buf(w), &buf(b), x, rows, cols))
    };
    let p = head(&params.head.w, &params.head.b, &d);
    let p_u = head(&params.head_user.as_ref().unwrap().w, &params.head_user.as_ref().unwrap().b, &d_u);
    let p_p = head(
        &params.head_product.as_ref().unwrap().w,
        &params.head_product.as_ref().unwrap().b,
        &d_p,
    );
    OracleOutput { p, p_u, p_p, d_u, d_p }
}

/// Random document over a toy vocabulary, with genuine word-level padding
/// whenever sentence lengths differ.
pub fn random_doc(rng: &mut ChaCha8Rng, n_words: usize, n_users: usize, n_products: usize, classes: usize) -> EncodedDoc {
    let n_sents = rng.gen_range(1..=4);
    let lens: Vec<usize> = (0..n_sents).map(|_| rng.gen_range(1..=6)).collect();
    let width = *lens.iter().max().unwrap();
    let words: Vec<Vec<u32>> = lens
        .iter()
        .map(|&l| {
            (0..width)
                .map(|j| if j < l { rng.gen_range(2..n_words as u32) } else { 0 })
                .collect()
        })
        .collect();
    let word_mask: Vec<Vec<bool>> = lens.iter().map(|&l| (0..width).map(|j| j < l).collect()).collect();
    EncodedDoc {
        words,
        word_mask,
        sent_mask: vec![true; n_sents],
        user: rng.gen_range(0..n_users as u32),
        product: rng.gen_range(0..n_products as u32),
        label: rng.gen_range(0..classes as u32),
    }
}
