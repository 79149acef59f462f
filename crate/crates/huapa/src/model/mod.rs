//! The dual-view attention architecture.
//!
//! A document is encoded hierarchically twice. In each view, a word-level
//! BiLSTM runs per sentence and an attention layer conditioned on a context
//! embedding (the review's author in one view, the product in the other)
//! pools the hidden states into a sentence vector; a sentence-level BiLSTM
//! plus a second attention layer with the same context pools those into a
//! document vector. The two document vectors `d_u` and `d_p` are
//! concatenated into `d`, and three softmax heads produce `p` (on `d`),
//! `p_u` (on `d_u`) and `p_p` (on `d_p`). Training minimizes
//! `lambda1 * CE(p) + lambda2 * CE(p_u) + lambda3 * CE(p_p)`; prediction
//! reads `p` only.
//!
//! The LSTM cell is the standard three-gate formulation: gate
//! pre-activations are one stacked affine map of `[h_prev; x_t]`, the cell
//! state is `f ⊙ c_prev + i ⊙ tanh(Wc [h_prev; x_t] + bc)`, and the hidden
//! state is `o ⊙ tanh(c)`.
//!
//! Besides the full two-view model there are three reduced variants: a
//! user-only view, a product-only view, and a no-attention control that
//! replaces both attention layers with mean pooling over unpadded positions.

use std::fmt;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{
    concat_cols, cross_entropy, elem_add, elem_mul, gather_rows, masked_softmax, matvec,
    stack_rows, weighted_sum, AdError, Value,
};
use crate::data::EncodedDoc;

pub mod checkpoint;


#[derive(Debug, Clone, PartialEq)]
pub enum ModelError {
    /// A sequence encoder received zero valid positions.
    EmptySequence,
    Ad(AdError),
}

impl fmt::Display for ModelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelError::EmptySequence => write!(f, "empty sequence"),
            ModelError::Ad(e) => e.fmt(f),
        }
    }
}

impl std::error::Error for ModelError {}

impl From<AdError> for ModelError {
    fn from(e: AdError) -> Self {
        ModelError::Ad(e)
    }
}

/// Which architecture a parameter set realizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Both views, concatenated representation, three heads.
    Huapa,
    /// User view only: `d = d_u`, heads on `d` and `d_u`.
    Hua,
    /// Product view only.
    Hpa,
    /// Single encoder stack, mean pooling at both levels, one head.
    MeanPool,
}

impl Variant {
    pub fn parse(s: &str) -> Option<Variant> {
        match s {
            "huapa" => Some(Variant::Huapa),
            "hua" => Some(Variant::Hua),
            "hpa" => Some(Variant::Hpa),
            "no-attention-baseline" => Some(Variant::MeanPool),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Variant::Huapa => "huapa",
            Variant::Hua => "hua",
            Variant::Hpa => "hpa",
            Variant::MeanPool => "no-attention-baseline",
        }
    }
}

/// Layer sizes. `hidden` is per direction, so BiLSTM states have width
/// `2 * hidden`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub word_dim: usize,
    pub user_dim: usize,
    pub product_dim: usize,
    pub hidden: usize,
    pub attention: usize,
    pub classes: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        ModelDims {
            word_dim: 200,
            user_dim: 200,
            product_dim: 200,
            hidden: 100,
            attention: 100,
            classes: 5,
        }
    }
}

const INIT_RANGE: f64 = 0.01;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-INIT_RANGE..INIT_RANGE)).collect()
}

/// One LSTM direction. `w`/`b` hold the stacked input, forget and output
/// gate maps `[3H x (H+D)]`; `wc`/`bc` the candidate map `[H x (H+D)]`.
#[derive(Debug)]
pub struct LstmParams {
    pub w: Value,
    pub b: Value,
    pub wc: Value,
    pub bc: Value,
    hidden: usize,
}

impl LstmParams {
    pub fn new(input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> LstmParams {
        let cat = hidden + input_dim;
        LstmParams {
            w: Value::param(uniform(rng, 3 * hidden * cat), &[3 * hidden, cat]),
            b: Value::param(vec![0.0; 3 * hidden], &[3 * hidden]),
            wc: Value::param(uniform(rng, hidden * cat), &[hidden, cat]),
            bc: Value::param(vec![0.0; hidden], &[hidden]),
            hidden,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }
}

/// One LSTM update: gates from the stacked affine map of `[h_prev; x_t]`,
/// then `c_t = f ⊙ c_prev + i ⊙ candidate` and `h_t = o ⊙ tanh(c_t)`.
pub fn lstm_step(
    params: &LstmParams,
    x: &Value,
    h_prev: &Value,
    c_prev: &Value,
) -> Result<(Value, Value), ModelError> {
    let hd = params.hidden;
    let xh = concat_cols(h_prev, x)?;
    let gates = elem_add(&matvec(&params.w, &xh)?, &params.b)?;
    let gate_i = gates.slice(0, hd)?.sigmoid();
    let gate_f = gates.slice(hd, hd)?.sigmoid();
    let gate_o = gates.slice(2 * hd, hd)?.sigmoid();
    let cand = elem_add(&matvec(&params.wc, &xh)?, &params.bc)?.tanh();
    let c = elem_add(&elem_mul(&gate_f, c_prev)?, &elem_mul(&gate_i, &cand)?)?;
    let h = elem_mul(&gate_o, &c.tanh())?;
    Ok((h, c))
}

/// Run forward and backward LSTMs over `xs[..valid_len]` from zero initial
/// states and concatenate the per-position hidden states.
///
/// Positions at and beyond `valid_len` are padding: they never enter either
/// recurrence and come back as zero vectors.
pub fn bilstm_encode(
    fwd: &LstmParams,
    bwd: &LstmParams,
    xs: &[Value],
    valid_len: usize,
) -> Result<Vec<Value>, ModelError> {
    if valid_len == 0 {
        return Err(ModelError::EmptySequence);
    }
    debug_assert!(valid_len <= xs.len());
    let hd = fwd.hidden;
    let mut h = Value::zeros(&[hd]);
    let mut c = Value::zeros(&[hd]);
    let mut forward_states = Vec::with_capacity(valid_len);
    for x in &xs[..valid_len] {
        let (nh, nc) = lstm_step(fwd, x, &h, &c)?;
        forward_states.push(nh.clone());
        h = nh;
        c = nc;
    }
    let mut h = Value::zeros(&[hd]);
    let mut c = Value::zeros(&[hd]);
    let mut backward_states = vec![Value::zeros(&[hd]); valid_len];
    for t in (0..valid_len).rev() {
        let (nh, nc) = lstm_step(bwd, &xs[t], &h, &c)?;
        backward_states[t] = nh.clone();
        h = nh;
        c = nc;
    }
    let mut out = Vec::with_capacity(xs.len());
    for t in 0..valid_len {
        out.push(concat_cols(&forward_states[t], &backward_states[t])?);
    }
    if xs.len() > valid_len {
        let pad = Value::zeros(&[2 * hd]);
        out.resize(xs.len(), pad);
    }
    Ok(out)
}

/// One attention site: score vector `v[A]`, hidden-state map `wh[A x 2H]`,
/// context map `wu[A x E]`, bias `bw[A]`. The four sites (word/sentence x
/// user/product) hold separate instances.
#[derive(Debug)]
pub struct AttentionParams {
    pub v: Value,
    pub wh: Value,
    pub wu: Value,
    pub bw: Value,
}

impl AttentionParams {
    pub fn new(attn: usize, state: usize, ctx: usize, rng: &mut ChaCha8Rng) -> AttentionParams {
        AttentionParams {
            v: Value::param(uniform(rng, attn), &[attn]),
            wh: Value::param(uniform(rng, attn * state), &[attn, state]),
            wu: Value::param(uniform(rng, attn * ctx), &[attn, ctx]),
            bw: Value::param(vec![0.0; attn], &[attn]),
        }
    }
}

/// Context-conditioned attention pooling.
///
/// Scores each unmasked state as `v . tanh(wh h_j + wu ctx + bw)`, normalizes
/// with a masked softmax, and returns the weighted sum of states along with
/// the weight vector.
pub fn attention_pool(
    ap: &AttentionParams,
    states: &[Value],
    ctx: &Value,
    mask: &[bool],
) -> Result<(Value, Value), ModelError> {
    if states.len() != mask.len() {
        return Err(ModelError::Ad(AdError::ShapeMismatch {
            op: "attention_pool",
            lhs: vec![states.len()],
            rhs: vec![mask.len()],
        }));
    }
    let attn = ap.v.len();
    let ctx_proj = matvec(&ap.wu, ctx)?;
    let mut activations = Vec::with_capacity(states.len());
    for (h, &m) in states.iter().zip(mask) {
        if m {
            let z = elem_add(&elem_add(&matvec(&ap.wh, h)?, &ctx_proj)?, &ap.bw)?;
            activations.push(z.tanh());
        } else {
            activations.push(Value::zeros(&[attn]));
        }
    }
    let scores = matvec(&stack_rows(&activations)?, &ap.v)?;
    let weights = masked_softmax(&scores, mask)?;
    let pooled = weighted_sum(&stack_rows(states)?, &weights)?;
    Ok((pooled, weights))
}

/// Mean pooling over unmasked positions, the no-attention control.
fn mean_pool(states: &[Value], mask: &[bool]) -> Result<Value, ModelError> {
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(ModelError::Ad(AdError::EmptyAttentionSupport));
    }
    let w: Vec<f64> = mask.iter().map(|&m| if m { 1.0 / n as f64 } else { 0.0 }).collect();
    let weights = Value::constant(w, &[mask.len()]);
    Ok(weighted_sum(&stack_rows(states)?, &weights)?)
}

/// The four LSTM directions of one hierarchical encoder.
#[derive(Debug)]
pub struct EncoderStack {
    pub word_fwd: LstmParams,
    pub word_bwd: LstmParams,
    pub sent_fwd: LstmParams,
    pub sent_bwd: LstmParams,
}

impl EncoderStack {
    fn new(word_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> EncoderStack {
        EncoderStack {
            word_fwd: LstmParams::new(word_dim, hidden, rng),
            word_bwd: LstmParams::new(word_dim, hidden, rng),
            sent_fwd: LstmParams::new(2 * hidden, hidden, rng),
            sent_bwd: LstmParams::new(2 * hidden, hidden, rng),
        }
    }
}

/// Encoder stack plus its two attention sites.
#[derive(Debug)]
pub struct AttnBranch {
    pub enc: EncoderStack,
    pub word_attn: AttentionParams,
    pub sent_attn: AttentionParams,
}

impl AttnBranch {
    fn new(word_dim: usize, hidden: usize, attn: usize, ctx_dim: usize, rng: &mut ChaCha8Rng) -> AttnBranch {
        AttnBranch {
            enc: EncoderStack::new(word_dim, hidden, rng),
            word_attn: AttentionParams::new(attn, 2 * hidden, ctx_dim, rng),
            sent_attn: AttentionParams::new(attn, 2 * hidden, ctx_dim, rng),
        }
    }
}

/// A linear classifier head.
#[derive(Debug)]
pub struct Head {
    pub w: Value,
    pub b: Value,
}

impl Head {
    fn new(classes: usize, input: usize, rng: &mut ChaCha8Rng) -> Head {
        Head {
            w: Value::param(uniform(rng, classes * input), &[classes, input]),
            b: Value::param(vec![0.0; classes], &[classes]),
        }
    }

    fn apply(&self, x: &Value) -> Result<Value, ModelError> {
        let logits = elem_add(&matvec(&self.w, x)?, &self.b)?;
        Ok(crate::autodiff::softmax(&logits)?)
    }
}

/// All parameters of one model instance.
///
/// The word embedding table is a frozen constant shared by both views; it is
/// excluded from the trainable set and never receives gradient. The two
/// views share nothing else.
#[derive(Debug)]
pub struct HuapaParams {
    pub variant: Variant,
    pub dims: ModelDims,
    pub word_emb: Value,
    pub user_emb: Option<Value>,
    pub product_emb: Option<Value>,
    pub user_branch: Option<AttnBranch>,
    pub product_branch: Option<AttnBranch>,
    pub mean_branch: Option<EncoderStack>,
    pub head: Head,
    pub head_user: Option<Head>,
    pub head_product: Option<Head>,
}

impl HuapaParams {
    /// Initialize for a vocabulary of `(n_words, n_users, n_products)`.
    ///
    /// `word_table` is the pretrained (or random) embedding table, row-major
    /// `[n_words x word_dim]`. All weight matrices start uniform in
    /// (-0.01, 0.01), biases at zero.
    pub fn init(
        variant: Variant,
        dims: ModelDims,
        vocab_sizes: (usize, usize, usize),
        word_table: Vec<f64>,
        seed: u64,
    ) -> HuapaParams {
        let (n_words, n_users, n_products) = vocab_sizes;
        assert_eq!(word_table.len(), n_words * dims.word_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let word_emb = Value::constant(word_table, &[n_words, dims.word_dim]);

        let wants_user = matches!(variant, Variant::Huapa | Variant::Hua);
        let wants_product = matches!(variant, Variant::Huapa | Variant::Hpa);

        let user_emb = wants_user.then(|| {
            Value::param(uniform(&mut rng, n_users * dims.user_dim), &[n_users, dims.user_dim])
        });
        let product_emb = wants_product.then(|| {
            Value::param(
                uniform(&mut rng, n_products * dims.product_dim),
                &[n_products, dims.product_dim],
            )
        });
        let user_branch = wants_user
            .then(|| AttnBranch::new(dims.word_dim, dims.hidden, dims.attention, dims.user_dim, &mut rng));
        let product_branch = wants_product.then(|| {
            AttnBranch::new(dims.word_dim, dims.hidden, dims.attention, dims.product_dim, &mut rng)
        });
        let mean_branch = matches!(variant, Variant::MeanPool)
            .then(|| EncoderStack::new(dims.word_dim, dims.hidden, &mut rng));

        let doc_width = match variant {
            Variant::Huapa => 4 * dims.hidden,
            _ => 2 * dims.hidden,
        };
        let head = Head::new(dims.classes, doc_width, &mut rng);
        let head_user = wants_user.then(|| Head::new(dims.classes, 2 * dims.hidden, &mut rng));
        let head_product = wants_product.then(|| Head::new(dims.classes, 2 * dims.hidden, &mut rng));

        HuapaParams {
            variant,
            dims,
            word_emb,
            user_emb,
            product_emb,
            user_branch,
            product_branch,
            mean_branch,
            head,
            head_user,
            head_product,
        }
    }

    /// Every tensor including the frozen word table, in a fixed order.
    pub fn all_tensors(&self) -> Vec<(String, Value)> {
        let mut out = vec![("word_emb".to_string(), self.word_emb.clone())];
        out.extend(self.trainable());
        out
    }

    /// Trainable leaves in a fixed, deterministic order. The word embedding
    /// table is excluded.
    pub fn trainable(&self) -> Vec<(String, Value)> {
        let mut out: Vec<(String, Value)> = Vec::new();
        let mut push = |name: String, v: &Value| out.push((name, v.clone()));
        if let Some(e) = &self.user_emb {
            push("user_emb".into(), e);
        }
        if let Some(e) = &self.product_emb {
            push("product_emb".into(), e);
        }
        let push_lstm = |prefix: &str, l: &LstmParams, out: &mut Vec<(String, Value)>| {
            out.push((format!("{prefix}.w"), l.w.clone()));
            out.push((format!("{prefix}.b"), l.b.clone()));
            out.push((format!("{prefix}.wc"), l.wc.clone()));
            out.push((format!("{prefix}.bc"), l.bc.clone()));
        };
        let push_attn = |prefix: &str, a: &AttentionParams, out: &mut Vec<(String, Value)>| {
            out.push((format!("{prefix}.v"), a.v.clone()));
            out.push((format!("{prefix}.wh"), a.wh.clone()));
            out.push((format!("{prefix}.wu"), a.wu.clone()));
            out.push((format!("{prefix}.bw"), a.bw.clone()));
        };
        for (tag, branch) in [("user", &self.user_branch), ("product", &self.product_branch)] {
            if let Some(b) = branch {
                push_lstm(&format!("{tag}.word_fwd"), &b.enc.word_fwd, &mut out);
                push_lstm(&format!("{tag}.word_bwd"), &b.enc.word_bwd, &mut out);
                push_lstm(&format!("{tag}.sent_fwd"), &b.enc.sent_fwd, &mut out);
                push_lstm(&format!("{tag}.sent_bwd"), &b.enc.sent_bwd, &mut out);
                push_attn(&format!("{tag}.word_attn"), &b.word_attn, &mut out);
                push_attn(&format!("{tag}.sent_attn"), &b.sent_attn, &mut out);
            }
        }
        if let Some(m) = &self.mean_branch {
            push_lstm("mean.word_fwd", &m.word_fwd, &mut out);
            push_lstm("mean.word_bwd", &m.word_bwd, &mut out);
            push_lstm("mean.sent_fwd", &m.sent_fwd, &mut out);
            push_lstm("mean.sent_bwd", &m.sent_bwd, &mut out);
        }
        out.push(("head.w".into(), self.head.w.clone()));
        out.push(("head.b".into(), self.head.b.clone()));
        if let Some(h) = &self.head_user {
            out.push(("head_user.w".into(), h.w.clone()));
            out.push(("head_user.b".into(), h.b.clone()));
        }
        if let Some(h) = &self.head_product {
            out.push(("head_product.w".into(), h.w.clone()));
            out.push(("head_product.b".into(), h.b.clone()));
        }
        out
    }

    /// Total scalar count over every tensor, frozen table included.
    pub fn param_count(&self) -> usize {
        self.all_tensors().iter().map(|(_, v)| v.len()).sum()
    }

    /// Deep copy of every buffer, aligned with `all_tensors` order.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        self.all_tensors().iter().map(|(_, v)| v.data().clone()).collect()
    }

    pub fn restore(&self, snapshot: &[Vec<f64>]) {
        let tensors = self.all_tensors();
        assert_eq!(tensors.len(), snapshot.len(), "snapshot does not match model layout");
        for ((_, v), buf) in tensors.iter().zip(snapshot) {
            v.set_data(buf);
        }
    }
}

/// Per-document attention record: one weight row per sentence (grid width,
/// zeros at padded positions) and one sentence-level weight vector per view.
/// Views that do not exist in the active variant stay empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionTrace {
    pub word_user: Vec<Vec<f64>>,
    pub sent_user: Vec<f64>,
    pub word_product: Vec<Vec<f64>>,
    pub sent_product: Vec<f64>,
}

/// Everything the forward pass produces for one document.
#[derive(Debug)]
pub struct ForwardOutput {
    /// Distribution from the combined head; prediction reads this only.
    pub p: Value,
    pub p_u: Option<Value>,
    pub p_p: Option<Value>,
    pub d_u: Option<Value>,
    pub d_p: Option<Value>,
    pub trace: AttentionTrace,
}

/// One hierarchical pass under a single view.
#[derive(Debug)]
pub struct ViewEncoding {
    pub doc_vec: Value,
    pub word_weights: Vec<Value>,
    pub sent_weights: Value,
}

/// Encode a document under one view: word BiLSTM + attention per sentence,
/// then sentence BiLSTM + attention across sentences. The same context
/// embedding conditions both attention levels.
pub fn encode_document_view(
    branch: &AttnBranch,
    word_emb: &Value,
    doc: &EncodedDoc,
    ctx: &Value,
) -> Result<ViewEncoding, ModelError> {
    let width = doc.width();
    let two_h = 2 * branch.enc.word_fwd.hidden;
    let pad_state = Value::zeros(&[two_h]);
    let mut sent_vecs = Vec::with_capacity(doc.n_sents());
    let mut word_weights = Vec::with_capacity(doc.n_sents());
    for i in 0..doc.n_sents() {
        let len = doc.sentence_len(i);
        let ids: Vec<usize> = doc.words[i][..len].iter().map(|&w| w as usize).collect();
        let rows = gather_rows(word_emb, &ids)?;
        let xs: Vec<Value> = (0..len).map(|j| rows.row(j)).collect::<Result<_, _>>()?;
        let mut states = bilstm_encode(&branch.enc.word_fwd, &branch.enc.word_bwd, &xs, len)?;
        states.resize(width, pad_state.clone());
        let (pooled, weights) =
            attention_pool(&branch.word_attn, &states, ctx, &doc.word_mask[i])?;
        sent_vecs.push(pooled);
        word_weights.push(weights);
    }
    let sent_states =
        bilstm_encode(&branch.enc.sent_fwd, &branch.enc.sent_bwd, &sent_vecs, sent_vecs.len())?;
    let (doc_vec, sent_weights) =
        attention_pool(&branch.sent_attn, &sent_states, ctx, &doc.sent_mask)?;
    Ok(ViewEncoding { doc_vec, word_weights, sent_weights })
}

/// Hierarchical encoding with mean pooling at both levels.
fn encode_document_mean(
    enc: &EncoderStack,
    word_emb: &Value,
    doc: &EncodedDoc,
) -> Result<Value, ModelError> {
    let width = doc.width();
    let two_h = 2 * enc.word_fwd.hidden;
    let pad_state = Value::zeros(&[two_h]);
    let mut sent_vecs = Vec::with_capacity(doc.n_sents());
    for i in 0..doc.n_sents() {
        let len = doc.sentence_len(i);
        let ids: Vec<usize> = doc.words[i][..len].iter().map(|&w| w as usize).collect();
        let rows = gather_rows(word_emb, &ids)?;
        let xs: Vec<Value> = (0..len).map(|j| rows.row(j)).collect::<Result<_, _>>()?;
        let mut states = bilstm_encode(&enc.word_fwd, &enc.word_bwd, &xs, len)?;
        states.resize(width, pad_state.clone());
        sent_vecs.push(mean_pool(&states, &doc.word_mask[i])?);
    }
    let sent_states = bilstm_encode(&enc.sent_fwd, &enc.sent_bwd, &sent_vecs, sent_vecs.len())?;
    mean_pool(&sent_states, &doc.sent_mask)
}

fn context_vector(table: &Value, id: u32) -> Result<Value, ModelError> {
    Ok(gather_rows(table, &[id as usize])?.row(0)?)
}

fn trace_of(view: &ViewEncoding) -> (Vec<Vec<f64>>, Vec<f64>) {
    let words = view.word_weights.iter().map(|w| w.data().clone()).collect();
    let sents = view.sent_weights.data().clone();
    (words, sents)
}

/// Full forward pass for the active variant.
pub fn forward_huapa(params: &HuapaParams, doc: &EncodedDoc) -> Result<ForwardOutput, ModelError> {
    match params.variant {
        Variant::MeanPool => {
            let d = encode_document_mean(params.mean_branch.as_ref().unwrap(), &params.word_emb, doc)?;
            let p = params.head.apply(&d)?;
            Ok(ForwardOutput {
                p,
                p_u: None,
                p_p: None,
                d_u: None,
                d_p: None,
                trace: AttentionTrace::default(),
            })
        }
        Variant::Hua => {
            let ctx = context_vector(params.user_emb.as_ref().unwrap(), doc.user)?;
            let view =
                encode_document_view(params.user_branch.as_ref().unwrap(), &params.word_emb, doc, &ctx)?;
            let p = params.head.apply(&view.doc_vec)?;
            let p_u = params.head_user.as_ref().unwrap().apply(&view.doc_vec)?;
            let (word_user, sent_user) = trace_of(&view);
            Ok(ForwardOutput {
                p,
                p_u: Some(p_u),
                p_p: None,
                d_u: Some(view.doc_vec),
                d_p: None,
                trace: AttentionTrace { word_user, sent_user, ..Default::default() },
            })
        }
        Variant::Hpa => {
            let ctx = context_vector(params.product_emb.as_ref().unwrap(), doc.product)?;
            let view = encode_document_view(
                params.product_branch.as_ref().unwrap(),
                &params.word_emb,
                doc,
                &ctx,
            )?;
            let p = params.head.apply(&view.doc_vec)?;
            let p_p = params.head_product.as_ref().unwrap().apply(&view.doc_vec)?;
            let (word_product, sent_product) = trace_of(&view);
            Ok(ForwardOutput {
                p,
                p_u: None,
                p_p: Some(p_p),
                d_u: None,
                d_p: Some(view.doc_vec),
                trace: AttentionTrace { word_product, sent_product, ..Default::default() },
            })
        }
        Variant::Huapa => {
            let user_ctx = context_vector(params.user_emb.as_ref().unwrap(), doc.user)?;
            let product_ctx = context_vector(params.product_emb.as_ref().unwrap(), doc.product)?;
            let user_view = encode_document_view(
                params.user_branch.as_ref().unwrap(),
                &params.word_emb,
                doc,
                &user_ctx,
            )?;
            let product_view = encode_document_view(
                params.product_branch.as_ref().unwrap(),
                &params.word_emb,
                doc,
                &product_ctx,
            )?;
            let d = concat_cols(&user_view.doc_vec, &product_view.doc_vec)?;
            let p = params.head.apply(&d)?;
            let p_u = params.head_user.as_ref().unwrap().apply(&user_view.doc_vec)?;
            let p_p = params.head_product.as_ref().unwrap().apply(&product_view.doc_vec)?;
            let (word_user, sent_user) = trace_of(&user_view);
            let (word_product, sent_product) = trace_of(&product_view);
            Ok(ForwardOutput {
                p,
                p_u: Some(p_u),
                p_p: Some(p_p),
                d_u: Some(user_view.doc_vec),
                d_p: Some(product_view.doc_vec),
                trace: AttentionTrace { word_user, sent_user, word_product, sent_product },
            })
        }
    }
}

/// Cross-entropy of each existing head, with the weighted total as a graph
/// node. Heads whose weight is zero are left out of the total, so their
/// parameters receive no gradient at all.
#[derive(Debug)]
pub struct LossParts {
    pub total: Value,
    pub main: f64,
    pub user: f64,
    pub product: f64,
}

pub fn combined_loss_parts(
    out: &ForwardOutput,
    gold: usize,
    lambda: [f64; 3],
) -> Result<LossParts, ModelError> {
    let ce_main = cross_entropy(&out.p, gold)?;
    let main = ce_main.item();
    let mut total = ce_main.scale(lambda[0]);
    let mut user = 0.0;
    let mut product = 0.0;
    if let Some(p_u) = &out.p_u {
        let ce = cross_entropy(p_u, gold)?;
        user = ce.item();
        if lambda[1] != 0.0 {
            total = elem_add(&total, &ce.scale(lambda[1]))?;
        }
    }
    if let Some(p_p) = &out.p_p {
        let ce = cross_entropy(p_p, gold)?;
        product = ce.item();
        if lambda[2] != 0.0 {
            total = elem_add(&total, &ce.scale(lambda[2]))?;
        }
    }
    Ok(LossParts { total, main, user, product })
}

/// `lambda1 * CE(p) + lambda2 * CE(p_u) + lambda3 * CE(p_p)` as a scalar
/// graph node. Missing heads contribute nothing.
pub fn combined_loss(out: &ForwardOutput, gold: usize, lambda: [f64; 3]) -> Result<Value, ModelError> {
    Ok(combined_loss_parts(out, gold, lambda)?.total)
}

/// Argmax of the combined head's distribution. Ties break toward the lowest
/// class index. The view heads are never consulted.
pub fn predict(out: &ForwardOutput) -> usize {
    let p = out.p.data();
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}
