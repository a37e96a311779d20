mod common;

use common::*;
use perslm::config::{Precision, TrainConfig};
use perslm::corpus::{encode, TokenSequence};
use perslm::models::{
    batch_generate, complete_sentence, metrics_csv, perplexity, predict_reply, train, Dataset, DecodeConfig,
    LanguageModel, Task,
};
use perslm::netcore::{Architecture, InitConfig, ModelParams, TrainableMask};
use perslm::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn model(v: usize, task: Task, fp: perslm::corpus::Fingerprint, seed: u64) -> LanguageModel {
    let arch = Architecture::new(v, 16, 16, 2);
    let params = ModelParams::random(&arch, &InitConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
    LanguageModel::new(params, task, fp)
}

fn fit(model: &mut LanguageModel, data: &Dataset, cfg: &TrainConfig) -> Vec<perslm::models::EpochMetrics> {
    let mask = TrainableMask::all_trainable(&model.params);
    train(model, data, None, cfg, &mask).unwrap()
}

#[test]
fn memorises_a_repeated_sentence() {
    let vocab = fixture_vocab(&["ann"]);
    let sentence = encode(&["you", "ann1", "ann2", "and", "ann3"], &vocab, true);
    let data = Dataset::sentences(&vocab, vec![sentence.clone(); 20]);
    let mut m = model(vocab.len(), Task::SentenceCompletion, vocab.fingerprint(), 1);
    let cfg = TrainConfig {
        epochs: 40,
        decay_start: 40,
        batch_size: 1,
        ..TrainConfig::default()
    };
    fit(&mut m, &data, &cfg);
    assert!(perplexity(&m, &data).unwrap() < 1.3);
    let prefix = TokenSequence::new(sentence.ids()[..2].to_vec());
    assert_eq!(complete_sentence(&m, &prefix, &DecodeConfig::greedy(10)).unwrap(), sentence);
}

#[test]
fn training_lowers_held_out_perplexity() {
    let vocab = fixture_vocab(&["ann"]);
    let all = Dataset::sentences(&vocab, encode_all(&sentences(&persona("ann"), 300, 2), &vocab));
    let (train_set, valid) = all.split(0.2, 3).unwrap();
    let mut m = model(vocab.len(), Task::SentenceCompletion, vocab.fingerprint(), 4);
    let before = perplexity(&m, &valid).unwrap();
    let mask = TrainableMask::all_trainable(&m.params);
    let cfg = TrainConfig {
        epochs: 4,
        ..TrainConfig::default()
    };
    let trace = train(&mut m, &train_set, Some(&valid), &cfg, &mask).unwrap();
    let after = perplexity(&m, &valid).unwrap();
    assert!(after < 0.7 * before, "{before} -> {after}");
    assert_eq!(trace.last().unwrap().valid_perplexity(), Some(after));
    let csv = metrics_csv(&trace);
    assert!(csv.starts_with("epoch,split,nll,perplexity\n"));
    assert_eq!(csv.lines().count(), 1 + 2 * trace.len());
}

#[test]
fn single_precision_training_keeps_parameters_representable() {
    let vocab = fixture_vocab(&["ann"]);
    let data = Dataset::sentences(&vocab, encode_all(&sentences(&persona("ann"), 40, 5), &vocab));
    let mut m = model(vocab.len(), Task::SentenceCompletion, vocab.fingerprint(), 6);
    let cfg = TrainConfig {
        epochs: 2,
        precision: Precision::F32,
        ..TrainConfig::default()
    };
    fit(&mut m, &data, &cfg);
    assert!(m.params.flat_values().iter().all(|&x| (x as f32) as f64 == x));
}

#[test]
fn reply_decoding_respects_task_and_batching() {
    let names = ["ann"];
    let vocab = fixture_vocab(&names);
    let lines = script(&[persona("ann")], 0.5, 400, 7);
    let pairs = pairs_replied_by(&lines, "ann", &vocab);
    let data = Dataset::pairs(&vocab, pairs.clone());
    let mut m = model(vocab.len(), Task::MessageReply, vocab.fingerprint(), 8);
    fit(
        &mut m,
        &data,
        &TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        },
    );
    let reply = predict_reply(&m, &pairs[0].message, &DecodeConfig::greedy(15)).unwrap();
    assert!(!reply.is_empty() && reply.len() <= 15);
    assert!(matches!(
        complete_sentence(&m, &pairs[0].message, &DecodeConfig::greedy(5)),
        Err(Error::Input(_))
    ));
    let messages: Vec<TokenSequence> = pairs.iter().take(5).map(|p| p.message.clone()).collect();
    let batch = batch_generate(&m, &messages, &DecodeConfig::greedy(15)).unwrap();
    assert_eq!(batch[0], reply);
}

#[test]
fn task_and_vocabulary_mismatches_are_rejected() {
    let vocab = fixture_vocab(&["ann"]);
    let data = Dataset::sentences(&vocab, encode_all(&sentences(&persona("ann"), 5, 9), &vocab));
    let mut reply_model = model(vocab.len(), Task::MessageReply, vocab.fingerprint(), 10);
    let mask = TrainableMask::all_trainable(&reply_model.params);
    assert!(matches!(
        train(&mut reply_model, &data, None, &TrainConfig::default(), &mask),
        Err(Error::Data(_))
    ));
    let stranger = model(vocab.len(), Task::SentenceCompletion, perslm::corpus::Fingerprint(1), 11);
    assert!(matches!(perplexity(&stranger, &data), Err(Error::Data(_))));
}
