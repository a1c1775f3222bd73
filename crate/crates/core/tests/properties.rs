use coattn::data::{encode_document, make_folds, tokenize, ScoreScale, Vocabulary, PAD_ID, UNK_ID};
use coattn::evaluation::{attention_report, qwk};
use coattn::model::{CoAttentionModel, ModelConfig, ModelParams};
use coattn::training::TrainedModel;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config() -> ModelConfig {
    ModelConfig {
        embed_dim: 4,
        conv_kernel: 2,
        conv_filters: 3,
        lstm_hidden: 3,
        modeling_hidden: 3,
        vocab_size: 30,
        max_sentences: 6,
        max_tokens: 8,
        ..Default::default()
    }
}

fn ratings() -> impl Strategy<Value = (Vec<i64>, Vec<i64>, i64, i64)> {
    (1i64..=5, -3i64..=3).prop_flat_map(|(r, min)| {
        let max = min + r;
        (1usize..=40).prop_flat_map(move |n| {
            (
                prop::collection::vec(min..=max, n),
                prop::collection::vec(min..=max, n),
                Just(min),
                Just(max),
            )
        })
    })
}

const WORDS: &[&str] = &[
    "water", "kids", "sick", "far", "the", "village", "hospital", "is", "Water", "2008", "malaria", "nets",
];

fn text() -> impl Strategy<Value = String> {
    let sentence = prop::collection::vec(prop::sample::select(WORDS), 1..12)
        .prop_map(|w| format!("{}{}", w.join(" "), [".", "!", "?"][w.len() % 3]));
    prop::collection::vec(sentence, 1..10).prop_map(|s| s.join(" "))
}

proptest! {
    #[test]
    fn qwk_is_symmetric((gold, pred, min, max) in ratings()) {
        let a = qwk(&gold, &pred, min, max).unwrap();
        let b = qwk(&pred, &gold, min, max).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&a));
    }

    #[test]
    fn qwk_ignores_a_common_shift((gold, pred, min, max) in ratings(), shift in -20i64..20) {
        let moved = |v: &[i64]| v.iter().map(|x| x + shift).collect::<Vec<_>>();
        let a = qwk(&gold, &pred, min, max).unwrap();
        let b = qwk(&moved(&gold), &moved(&pred), min + shift, max + shift).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn scale_round_trips(min in -10i64..10, span in 1i64..60) {
        let scale = ScoreScale::new(min, min + span).unwrap();
        for score in min..=min + span {
            let y = scale.scale(score).unwrap();
            prop_assert!((0.0..=1.0).contains(&y));
            prop_assert_eq!(scale.unscale(y).unwrap(), score);
        }
    }

    #[test]
    fn vocabulary_ignores_text_order(mut texts in prop::collection::vec(text(), 1..5), cap in 3usize..20) {
        let a = Vocabulary::build(texts.iter().map(String::as_str), cap).unwrap();
        texts.reverse();
        let b = Vocabulary::build(texts.iter().map(String::as_str), cap).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.len() <= cap);
    }

    #[test]
    fn encoding_is_total(train in text(), other in text()) {
        let c = config();
        let vocab = Vocabulary::build([train.as_str()], c.vocab_size).unwrap();
        let doc = encode_document(&other, &vocab, &c).unwrap();
        let mask = doc.token_mask();
        for (&id, &real) in doc.ids().iter().zip(&mask) {
            prop_assert!((id as usize) < c.vocab_size);
            prop_assert_eq!(real, id != PAD_ID);
        }
        // Words never seen in the training text map to UNK.
        for (s, tokens) in doc.decode(&vocab).iter().enumerate() {
            for (w, tok) in tokens.iter().enumerate() {
                let id = doc.row(s)[w];
                prop_assert!(id == UNK_ID || vocab.contains(tok));
            }
        }
        let train_tokens: Vec<String> = coattn::data::split_sentences(&train).iter().flat_map(|s| tokenize(s)).collect();
        for tok in vocab.tokens().iter().skip(2) {
            prop_assert!(train_tokens.contains(tok));
        }
    }

    #[test]
    fn folds_partition_every_record(n in 5usize..200, seed in any::<u64>()) {
        let folds = make_folds(n, 5, seed).unwrap();
        let mut seen = vec![0; n];
        for f in &folds {
            prop_assert_eq!(f.train.len() + f.dev.len() + f.test.len(), n);
            f.test.iter().for_each(|&i| seen[i] += 1);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert_eq!(make_folds(n, 5, seed).unwrap(), folds);
    }
}

#[test]
fn attention_rows_follow_sentence_order() {
    let c = config();
    let params = ModelParams::<f64>::init(&c, None, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    let sentences = ["Water is far away.", "Kids get sick.", "The hospital is far."];
    let trained = TrainedModel {
        model: CoAttentionModel::new(c, params).unwrap(),
        vocab: Vocabulary::build([sentences.join(" ").as_str()], 30).unwrap(),
        scale: ScoreScale::new(1, 4).unwrap(),
    };
    let article = "The village has no water. Kids get malaria.";
    for order in [[0, 1, 2], [2, 0, 1], [1, 2, 0]] {
        let essay: Vec<&str> = order.iter().map(|&i| sentences[i]).collect();
        let rows = attention_report(&trained, &essay.join(" "), article).unwrap();
        let texts: Vec<&str> = rows.iter().map(|r| r.sentence.as_str()).collect();
        assert_eq!(texts, essay);
        let total: f64 = rows.iter().map(|r| r.weight).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }
}
