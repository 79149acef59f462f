//! Attention export: JSON records and standalone heat-shaded pages.
//!
//! The JSON record carries the raw weights exactly as the forward pass
//! produced them. The HTML page rescales each sentence's weights to the
//! unit interval (min-max, for legibility only); a sentence whose weights
//! are all equal renders at full intensity.

use serde::{Deserialize, Serialize};

use crate::data::{EncodedDoc, Vocabulary};
use crate::model::{predict, ForwardOutput};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SentenceRecord {
    pub tokens: Vec<String>,
    /// Word weights under the user view, aligned with `tokens`. Empty when
    /// the active variant has no user view.
    pub alpha_user: Vec<f64>,
    pub alpha_product: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AttnRecord {
    pub schema: String,
    pub doc_index: usize,
    pub user: String,
    pub product: String,
    /// Labels in the on-disk 1-based rating scale.
    pub gold_rating: u32,
    pub predicted_rating: u32,
    pub sentences: Vec<SentenceRecord>,
    pub beta_user: Vec<f64>,
    pub beta_product: Vec<f64>,
}

pub(crate) fn build_record(
    doc_index: usize,
    doc: &EncodedDoc,
    out: &ForwardOutput,
    vocab: &Vocabulary,
) -> AttnRecord {
    let trim = |rows: &[Vec<f64>], i: usize, len: usize| -> Vec<f64> {
        rows.get(i).map_or_else(Vec::new, |r| r[..len].to_vec())
    };
    let sentences = (0..doc.n_sents())
        .map(|i| {
            let len = doc.sentence_len(i);
            SentenceRecord {
                tokens: doc.words[i][..len].iter().map(|&w| vocab.word(w).to_string()).collect(),
                alpha_user: trim(&out.trace.word_user, i, len),
                alpha_product: trim(&out.trace.word_product, i, len),
            }
        })
        .collect();
    AttnRecord {
        schema: "huapa.attn.v1".to_string(),
        doc_index,
        user: vocab.user(doc.user).to_string(),
        product: vocab.product(doc.product).to_string(),
        gold_rating: doc.label + 1,
        predicted_rating: predict(out) as u32 + 1,
        sentences,
        beta_user: out.trace.sent_user.clone(),
        beta_product: out.trace.sent_product.clone(),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Min-max rescale for display; a constant row maps to full intensity.
fn display_scale(weights: &[f64]) -> Vec<f64> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &w in weights {
        lo = lo.min(w);
        hi = hi.max(w);
    }
    weights
        .iter()
        .map(|&w| if hi > lo { (w - lo) / (hi - lo) } else { 1.0 })
        .collect()
}

fn render_view(
    html: &mut String,
    title: &str,
    sentences: &[SentenceRecord],
    alpha_of: impl Fn(&SentenceRecord) -> &[f64],
    beta: &[f64],
) {
    html.push_str(&format!("<section><h2>{title}</h2>\n"));
    let beta_scaled = display_scale(beta);
    for (i, sent) in sentences.iter().enumerate() {
        let alpha = alpha_of(sent);
        if alpha.is_empty() {
            continue;
        }
        let scaled = display_scale(alpha);
        let b = beta.get(i).copied().unwrap_or(0.0);
        let bs = beta_scaled.get(i).copied().unwrap_or(0.0);
        html.push_str(&format!(
            "<p class=\"sent\"><span class=\"beta\" style=\"opacity:{:.3}\" title=\"beta={b:.6}\">s{}</span> ",
            0.25 + 0.75 * bs,
            i + 1
        ));
        for (tok, (&raw, &shade)) in sent.tokens.iter().zip(alpha.iter().zip(&scaled)) {
            html.push_str(&format!(
                "<span class=\"tok\" style=\"background:rgba(203,68,40,{:.3})\" title=\"alpha={raw:.6}\">{}</span> ",
                shade, escape(tok)
            ));
        }
        html.push_str("</p>\n");
    }
    html.push_str("</section>\n");
}

pub(crate) fn render_html(record: &AttnRecord) -> String {
    let mut html = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">\n<style>\n\
         body{font-family:sans-serif;max-width:60em;margin:2em auto}\n\
         .tok{padding:0 0.15em;border-radius:3px}\n\
         .beta{display:inline-block;width:2em;background:#355f8d;color:#fff;\
         text-align:center;border-radius:3px;margin-right:0.5em}\n\
         </style>\n",
    );
    html.push_str(&format!(
        "<title>attention, document {}</title></head>\n<body>\n<h1>document {}</h1>\n\
         <p>user {} | product {} | gold rating {} | predicted {}</p>\n",
        record.doc_index,
        record.doc_index,
        escape(&record.user),
        escape(&record.product),
        record.gold_rating,
        record.predicted_rating
    ));
    if record.sentences.iter().any(|s| !s.alpha_user.is_empty()) {
        render_view(&mut html, "user view", &record.sentences, |s| &s.alpha_user, &record.beta_user);
    }
    if record.sentences.iter().any(|s| !s.alpha_product.is_empty()) {
        render_view(
            &mut html,
            "product view",
            &record.sentences,
            |s| &s.alpha_product,
            &record.beta_product,
        );
    }
    html.push_str("</body></html>\n");
    html
}
