use super::*;
use std::io::Cursor;

fn fmt5() -> CorpusFormat {
    CorpusFormat { classes: 5, ..Default::default() }
}

#[test]
fn parse_single_line() {
    let line = "u1\t\tp1\t\t3\t\tgood food <sssss> bad service\n";
    let docs = parse_corpus_reader(Cursor::new(line), &fmt5()).unwrap();
    assert_eq!(docs.len(), 1);
    let d = &docs[0];
    assert_eq!(d.user, "u1");
    assert_eq!(d.product, "p1");
    assert_eq!(d.label, 2);
    assert_eq!(
        d.sentences,
        vec![vec!["good".to_string(), "food".to_string()], vec!["bad".to_string(), "service".to_string()]]
    );
}

#[test]
fn parse_lowercases_by_default() {
    let line = "U1\t\tP1\t\t1\t\tGreat Stuff";
    let docs = parse_corpus_reader(Cursor::new(line), &fmt5()).unwrap();
    assert_eq!(docs[0].sentences[0], vec!["great", "stuff"]);
    // user/product ids are not case-folded
    assert_eq!(docs[0].user, "U1");
}

#[test]
fn parse_rejects_empty_text() {
    let text = "u1\t\tp1\t\t3\t\tfine\nu2\t\tp2\t\t2\t\t   \n";
    let err = parse_corpus_reader(Cursor::new(text), &fmt5()).unwrap_err();
    assert_eq!(err, DataError::EmptyText { line: 2 });
}

#[test]
fn parse_rejects_wrong_field_count() {
    let err = parse_corpus_reader(Cursor::new("u1\t\tp1\t\t3\n"), &fmt5()).unwrap_err();
    assert_eq!(err, DataError::WrongFieldCount { line: 1, got: 3 });
}

#[test]
fn parse_rejects_out_of_range_label() {
    let err = parse_corpus_reader(Cursor::new("u\t\tp\t\t6\t\tok\n"), &fmt5()).unwrap_err();
    assert!(matches!(err, DataError::BadLabel { line: 1, .. }));
    let err = parse_corpus_reader(Cursor::new("u\t\tp\t\tx\t\tok\n"), &fmt5()).unwrap_err();
    assert!(matches!(err, DataError::BadLabel { line: 1, .. }));
}

#[test]
fn parse_preserves_order_and_count() {
    let mut text = String::new();
    for i in 0..7 {
        text.push_str(&format!("u{i}\t\tp\t\t1\t\tword{i}\n"));
    }
    let docs = parse_corpus_reader(Cursor::new(text), &fmt5()).unwrap();
    assert_eq!(docs.len(), 7);
    for (i, d) in docs.iter().enumerate() {
        assert_eq!(d.user, format!("u{i}"));
    }
}

fn docs_from(text: &str) -> Vec<ReviewDoc> {
    parse_corpus_reader(Cursor::new(text), &fmt5()).unwrap()
}

#[test]
fn vocab_applies_frequency_cutoff() {
    let docs = docs_from("u\t\tp\t\t1\t\ta a b\n");
    let v = build_vocab(&docs, 2).unwrap();
    assert_ne!(v.word_id("a"), UNK);
    assert_eq!(v.word_id("b"), UNK);
    assert_eq!(v.word_frequency(v.word_id("a")), 2);
}

#[test]
fn vocab_min_freq_one_keeps_everything() {
    let docs = docs_from("u\t\tp\t\t1\t\tx y <sssss> z\n");
    let v = build_vocab(&docs, 1).unwrap();
    for w in ["x", "y", "z"] {
        assert_ne!(v.word_id(w), UNK, "{w} should be in vocabulary");
    }
    assert_eq!(v.n_words(), 5); // pad, unk, x, y, z
}

#[test]
fn vocab_build_is_deterministic() {
    let docs = docs_from("u1\t\tp1\t\t1\t\tc b a\nu2\t\tp1\t\t2\t\ta b\n");
    let v1 = build_vocab(&docs, 1).unwrap();
    let v2 = build_vocab(&docs, 1).unwrap();
    assert_eq!(v1, v2);
    assert_eq!(v1.hashes(), v2.hashes());
}

#[test]
fn vocab_rejects_empty_training_set() {
    assert_eq!(build_vocab(&[], 1).unwrap_err(), DataError::EmptyCorpus);
}

#[test]
fn vocab_round_trips_through_save_and_load() {
    let docs = docs_from("u1\t\tp1\t\t1\t\tred green blue\nu2\t\tp2\t\t2\t\tred\n");
    let v = build_vocab(&docs, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    v.save(&path).unwrap();
    let loaded = Vocabulary::load(&path).unwrap();
    assert_eq!(loaded.word_id("green"), v.word_id("green"));
    assert_eq!(loaded.user_id("u2"), v.user_id("u2"));
    assert_eq!(loaded.product_id("p2"), v.product_id("p2"));
    assert_eq!(loaded.hashes(), v.hashes());
}

#[test]
fn encode_truncates_sentences_and_counts() {
    let body = vec!["w w w"; 41].join(" <sssss> ");
    let docs = docs_from(&format!("u\t\tp\t\t1\t\t{body}\n"));
    let v = build_vocab(&docs, 1).unwrap();
    let (enc, stats) = encode(&docs, &v, 40, 50);
    assert_eq!(enc[0].n_sents(), 40);
    assert_eq!(stats.sents_truncated, 1);
    assert_eq!(stats.words_truncated, 0);
}

#[test]
fn encode_truncates_words_and_pads_short_rows() {
    let long: Vec<String> = (0..60).map(|i| format!("t{i}")).collect();
    let body = format!("{} <sssss> a b c", long.join(" "));
    let docs = docs_from(&format!("u\t\tp\t\t1\t\t{body}\n"));
    let v = build_vocab(&docs, 1).unwrap();
    let (enc, stats) = encode(&docs, &v, 40, 50);
    let d = &enc[0];
    assert_eq!(d.width(), 50);
    assert_eq!(stats.words_truncated, 1);
    assert_eq!(d.sentence_len(0), 50);
    assert_eq!(d.sentence_len(1), 3);
    let mut want = vec![true, true, true];
    want.extend(vec![false; 47]);
    assert_eq!(d.word_mask[1], want);
    // padded cells hold PAD, unpadded cells never do
    for (row, mask) in d.words.iter().zip(&d.word_mask) {
        for (id, m) in row.iter().zip(mask) {
            if *m {
                assert_ne!(*id, PAD);
            } else {
                assert_eq!(*id, PAD);
            }
        }
    }
}

#[test]
fn encode_maps_unseen_user_to_unk() {
    let train = docs_from("u1\t\tp1\t\t1\t\thello\n");
    let v = build_vocab(&train, 1).unwrap();
    let test = docs_from("stranger\t\tp1\t\t1\t\thello\n");
    let (enc, _) = encode(&test, &v, 40, 50);
    assert_eq!(enc[0].user, UNK_CTX);
    assert_ne!(enc[0].product, UNK_CTX);
}

#[test]
fn encode_masks_are_contiguous_prefixes() {
    let corpus = gen_synthetic(3, 5, 4, 60, 5);
    let v = build_vocab(&corpus.train, 1).unwrap();
    let (enc, _) = encode(&corpus.train, &v, 40, 50);
    for d in &enc {
        assert!(d.n_sents() <= 40 && d.width() <= 50);
        for mask in &d.word_mask {
            let n = mask.iter().take_while(|&&m| m).count();
            assert!(n >= 1);
            assert!(mask[n..].iter().all(|&m| !m));
        }
    }
}

#[test]
fn embeddings_from_full_file_have_no_random_rows() {
    let docs = docs_from("u\t\tp\t\t1\t\talpha beta\n");
    let v = build_vocab(&docs, 1).unwrap();
    let file = "alpha 0.1 0.2 0.3\nbeta -0.1 -0.2 -0.3\n<unk> 0 0 1\n";
    let t = load_embeddings_reader(Cursor::new(file), &v, 3, 9).unwrap();
    assert_eq!(t.random_rows, 0);
    let a = v.word_id("alpha") as usize;
    assert_eq!(&t.data[a * 3..a * 3 + 3], &[0.1, 0.2, 0.3]);
}

#[test]
fn embeddings_accept_count_dim_header() {
    let docs = docs_from("u\t\tp\t\t1\t\talpha\n");
    let v = build_vocab(&docs, 1).unwrap();
    let file = "2 3\nalpha 1 2 3\n";
    let t = load_embeddings_reader(Cursor::new(file), &v, 3, 9).unwrap();
    let a = v.word_id("alpha") as usize;
    assert_eq!(&t.data[a * 3..a * 3 + 3], &[1.0, 2.0, 3.0]);

    let err = load_embeddings_reader(Cursor::new("2 4\nalpha 1 2 3 4\n"), &v, 3, 9).unwrap_err();
    assert_eq!(err, DataError::EmbeddingDim { line: 1, got: 4, want: 3 });
}

#[test]
fn embeddings_empty_file_is_all_random_except_pad() {
    let docs = docs_from("u\t\tp\t\t1\t\talpha beta\n");
    let v = build_vocab(&docs, 1).unwrap();
    let t = load_embeddings_reader(Cursor::new(""), &v, 4, 9).unwrap();
    assert_eq!(t.random_rows, v.n_words() - 1);
    assert_eq!(&t.data[..4], &[0.0; 4]);
    for row in 1..v.n_words() {
        assert!(t.data[row * 4..(row + 1) * 4].iter().any(|&x| x != 0.0));
    }
}

#[test]
fn embeddings_pad_row_is_zero_even_if_file_sets_it() {
    let docs = docs_from("u\t\tp\t\t1\t\talpha\n");
    let v = build_vocab(&docs, 1).unwrap();
    let file = "<pad> 9 9\nalpha 1 2\n";
    let t = load_embeddings_reader(Cursor::new(file), &v, 2, 9).unwrap();
    assert_eq!(&t.data[..2], &[0.0, 0.0]);
}

#[test]
fn embeddings_reject_wrong_dimension_and_bad_floats() {
    let docs = docs_from("u\t\tp\t\t1\t\talpha\n");
    let v = build_vocab(&docs, 1).unwrap();
    let err = load_embeddings_reader(Cursor::new("alpha 1 2 3\n"), &v, 2, 9).unwrap_err();
    assert_eq!(err, DataError::EmbeddingDim { line: 1, got: 3, want: 2 });
    let err = load_embeddings_reader(Cursor::new("alpha 1 oops\n"), &v, 2, 9).unwrap_err();
    assert!(matches!(err, DataError::MalformedLine { line: 1, .. }));
}

#[test]
fn synthetic_is_deterministic() {
    let a = gen_synthetic(42, 6, 4, 50, 5);
    let b = gen_synthetic(42, 6, 4, 50, 5);
    assert_eq!(a, b);
    let c = gen_synthetic(43, 6, 4, 50, 5);
    assert_ne!(a, c);
}

/// Replay the generative rule from the latents; every label must be
/// recoverable exactly.
fn oracle_label(doc: &ReviewDoc, corpus: &SyntheticCorpus, classes: usize) -> u32 {
    let pools = sentiment_pools(classes);
    let mut base = None;
    for sent in &doc.sentences {
        for tok in sent {
            for (c, pool) in pools.iter().enumerate() {
                if pool.contains(tok) {
                    assert!(base.is_none() || base == Some(c as i64), "mixed pools in one doc");
                    base = Some(c as i64);
                }
            }
        }
    }
    let base = base.expect("no sentiment tokens in doc");
    let shift = corpus.user_bias[&doc.user] + corpus.product_quality[&doc.product];
    (base + shift).clamp(0, classes as i64 - 1) as u32
}

#[test]
fn synthetic_labels_follow_the_generative_rule() {
    let classes = 5;
    let corpus = gen_synthetic(7, 9, 6, 200, classes);
    assert!(corpus.user_bias.values().any(|&b| b != 0));
    assert!(corpus.product_quality.values().any(|&q| q != 0));
    for doc in corpus.all_docs() {
        assert_eq!(oracle_label(doc, &corpus, classes), doc.label);
    }
}

#[test]
fn synthetic_unbiased_labels_equal_base_levels() {
    let corpus = gen_synthetic_opts(7, 9, 6, 100, 5, false);
    assert!(corpus.user_bias.values().all(|&b| b == 0));
    for doc in corpus.all_docs() {
        // with zero latents the oracle reduces to the base level
        assert_eq!(oracle_label(doc, &corpus, 5), doc.label);
    }
}

#[test]
fn synthetic_covers_all_classes_at_contract_size() {
    let classes = 5;
    let corpus = gen_synthetic(11, 9, 9, 50 * classes, classes);
    let mut seen = vec![false; classes];
    for doc in corpus.all_docs() {
        seen[doc.label as usize] = true;
    }
    assert!(seen.iter().all(|&s| s), "labels seen: {seen:?}");
}

#[test]
fn corpus_write_parse_encode_round_trip_is_deterministic() {
    let corpus = gen_synthetic(5, 4, 3, 30, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.tsv");
    let fmt = fmt5();
    write_corpus(&path, &corpus.train, &fmt).unwrap();
    let parsed = parse_corpus(&path, &fmt).unwrap();
    assert_eq!(parsed, corpus.train);
    let v = build_vocab(&parsed, 1).unwrap();
    let (e1, s1) = encode(&parsed, &v, 40, 50);
    let (e2, s2) = encode(&parse_corpus(&path, &fmt).unwrap(), &v, 40, 50);
    assert_eq!(e1, e2);
    assert_eq!(s1, s2);
}
