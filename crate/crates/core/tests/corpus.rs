use perslm::corpus::{build_vocab, decode, encode, tokenize, Vocabulary};
use proptest::prelude::*;

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,4}"
}

proptest! {
    #[test]
    fn encode_decode_round_trips_known_words(words in prop::collection::vec(word(), 1..30)) {
        let vocab = build_vocab(std::slice::from_ref(&words), usize::MAX).unwrap();
        let seq = encode(&words, &vocab, true);
        prop_assert!(seq.is_terminated());
        let back = decode(seq.ids(), &vocab);
        prop_assert_eq!(&back[..words.len()], &words[..]);
        prop_assert_eq!(back.last().map(String::as_str), Some("<eos>"));
    }

    #[test]
    fn vocabulary_ignores_corpus_order(mut corpora in prop::collection::vec(prop::collection::vec(word(), 0..10), 1..6),
                                       max in 2usize..20) {
        let a = build_vocab(&corpora, max).unwrap();
        corpora.reverse();
        for c in corpora.iter_mut() {
            c.reverse();
        }
        let b = build_vocab(&corpora, max).unwrap();
        prop_assert_eq!(a.tokens(), b.tokens());
        prop_assert_eq!(a.fingerprint(), b.fingerprint());
        prop_assert!(a.len() <= max);
    }

    #[test]
    fn unknown_words_map_to_unk(words in prop::collection::vec(word(), 1..10)) {
        let vocab = build_vocab(&[vec!["zzzzz"]], 10).unwrap();
        let seq = encode(&words, &vocab, false);
        prop_assert!(seq.ids().iter().all(|&id| id == Vocabulary::UNK));
    }

    #[test]
    fn tokenization_is_stable_under_rejoining(text in "[A-Za-z ,.!?']{0,40}") {
        let once = tokenize(&text);
        let twice = tokenize(&once.join(" "));
        prop_assert_eq!(once, twice);
    }
}

#[test]
fn vocabulary_file_round_trip_preserves_fingerprint() {
    let vocab = build_vocab(&[tokenize("Hello there, hello again. Don't go!")], 100).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vocab.txt");
    std::fs::write(&path, vocab.to_file_string()).unwrap();
    let loaded = Vocabulary::load(&path).unwrap();
    assert_eq!(loaded, vocab);
    assert_eq!(loaded.fingerprint(), vocab.fingerprint());
}

#[test]
fn fingerprint_depends_on_token_order() {
    let a = Vocabulary::from_tokens(["<eos>", "<unk>", "x", "y"].map(String::from).to_vec()).unwrap();
    let b = Vocabulary::from_tokens(["<eos>", "<unk>", "y", "x"].map(String::from).to_vec()).unwrap();
    assert_ne!(a.fingerprint(), b.fingerprint());
}
