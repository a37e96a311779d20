use std::path::Path;

use anyhow::{bail, Context, Result};
use perslm::checkpoint::{Checkpoint, TrainingMeta};
use perslm::config::ExperimentConfig;
use perslm::corpus::{
    build_pairs, build_vocab, detokenize, encode, encode_pairs, encode_sentences, read_corpus, read_script, tokenize,
    TokenSequence, Vocabulary,
};
use perslm::eval::{corpus_distribution, similarity_matrix, style_convergence, style_cross_entropy, ConvergenceSetup};
use perslm::models::{
    batch_generate, mean_negative_log_likelihood, metrics_csv, train, Dataset, DecodeConfig, DecodeMode,
    LanguageModel, Task,
};
use perslm::netcore::{ModelParams, TrainableMask};
use perslm::ngram::{count_ngrams, estimate_kn, ArpaModel};
use perslm::transfer::{data_size_sweep, finetune, sweep_csv, SchemeSpec};
use perslm::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::output::OutputDir;
use crate::{Command, DataArgs, ModelArgs, SchemeArgs, SchemeName};

pub fn run(command: &Command, cfg: &ExperimentConfig, mut out: OutputDir, args: &[String]) -> Result<&'static str> {
    let name = match command {
        Command::BuildVocab { corpora, scripts } => {
            if corpora.is_empty() && scripts.is_empty() {
                bail!(Error::Config("build-vocab needs at least one --corpus or --script".into()));
            }
            let mut sources = Vec::new();
            for path in corpora {
                sources.extend(read_corpus(path)?);
            }
            for path in scripts {
                sources.extend(read_script(path)?.iter().map(|l| tokenize(&l.text)));
            }
            let vocab = build_vocab(&sources, cfg.vocab_size)?;
            out.write("vocab.txt", vocab.to_file_string().as_bytes())?;
            "build-vocab"
        }
        Command::Pretrain { vocab, data, task, name } => {
            let vocab = Vocabulary::load(vocab)?;
            let (train_set, valid) = train_valid(data, *task, &vocab, cfg.train.seed, cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
            let params = ModelParams::random(&cfg.model.architecture(vocab.len()), &cfg.model.init, &mut rng)?;
            let mut model = LanguageModel::new(params, *task, vocab.fingerprint());
            let mask = TrainableMask::all_trainable(&model.params);
            let trace = train(&mut model, &train_set, Some(&valid), &cfg.train, &mask)?;
            let meta = TrainingMeta {
                epochs_completed: trace.len(),
                lineage: vec!["pretrain".into()],
            };
            out.save_checkpoint(name, &Checkpoint::new(model, cfg.train.precision, meta))?;
            out.write("pretrain-metrics.csv", metrics_csv(&trace).as_bytes())?;
            "pretrain"
        }
        Command::Finetune {
            model,
            data,
            scheme,
            cast,
        } => {
            let (general, vocab) = load_model(model, cfg, *cast)?;
            let scheme = scheme_spec(scheme, cfg);
            let train_cfg = cfg.finetune_train();
            let (personal, valid) = train_valid(data, general.model.task, &vocab, train_cfg.seed, cfg)?;
            let (tuned, trace) = finetune(&general, &personal, Some(&valid), scheme, &train_cfg)?;
            let label = scheme.label();
            out.save_checkpoint(&format!("finetune-{label}.ckpt"), &tuned)?;
            out.write(&format!("curve-{label}.csv"), metrics_csv(&trace).as_bytes())?;
            "finetune"
        }
        Command::Generate {
            model,
            input,
            max_len,
            temperature,
        } => {
            let (ck, vocab) = load_model(model, cfg, false)?;
            let inputs = read_inputs(input, &vocab, ck.model.task)?;
            let decode = decode_config(cfg, *max_len, temperature.or(cfg.temperature));
            let outputs = batch_generate(&ck.model, &inputs, &decode)?;
            let text: String = outputs.iter().map(|o| detokenize(o.ids(), &vocab) + "\n").collect();
            out.write("generated.txt", text.as_bytes())?;
            "generate"
        }
        Command::EvalPpl { model, data } => {
            let (ck, vocab) = load_model(model, cfg, false)?;
            let dataset = load_dataset(&data.data, ck.model.task, &vocab, data.speaker.as_deref())?;
            let nll = mean_negative_log_likelihood(&ck.model, &dataset)?;
            let csv = format!(
                "data,examples,nll,perplexity\n{},{},{nll:?},{:?}\n",
                file_label(&data.data),
                dataset.len(),
                nll.exp()
            );
            out.write("perplexity.csv", csv.as_bytes())?;
            "eval-ppl"
        }
        Command::EvalStyle {
            vocab,
            generated,
            targets,
        } => {
            let vocab = Vocabulary::load(vocab)?;
            let produced = corpus_distribution(&encode_sentences(&read_corpus(generated)?, &vocab), &vocab)?;
            let mut csv = String::from("target,cross_entropy\n");
            for (label, path) in targets {
                let target = corpus_distribution(&encode_sentences(&read_corpus(path)?, &vocab), &vocab)?;
                let ce = style_cross_entropy(&produced, &target, cfg.smoothing)?;
                csv.push_str(&format!("{label},{ce:?}\n"));
            }
            out.write("style.csv", csv.as_bytes())?;
            "eval-style"
        }
        Command::SimilarityMatrix { vocab, corpora } => {
            let vocab = Vocabulary::load(vocab)?;
            let mut loaded = Vec::with_capacity(corpora.len());
            for (label, path) in corpora {
                loaded.push((label.clone(), encode_sentences(&read_corpus(path)?, &vocab)));
            }
            let matrix = similarity_matrix(&loaded, &vocab, cfg.smoothing, cfg.train.seed)?;
            out.write("similarity.csv", matrix.to_csv().as_bytes())?;
            "similarity-matrix"
        }
        Command::SizeSweep {
            model,
            data,
            scheme,
            sizes,
        } => {
            let (general, vocab) = load_model(model, cfg, false)?;
            let scheme = scheme_spec(scheme, cfg);
            let train_cfg = cfg.finetune_train();
            let (personal, valid) = train_valid(data, general.model.task, &vocab, train_cfg.seed, cfg)?;
            let rows = data_size_sweep(&general, &personal, &valid, sizes, scheme, &train_cfg)?;
            out.write(&format!("size-sweep-{}.csv", scheme.label()), sweep_csv(&rows).as_bytes())?;
            "size-sweep"
        }
        Command::StyleConvergence {
            model,
            data,
            scheme,
            inputs,
            targets,
            probe_epochs,
            temperature,
        } => {
            let (general, vocab) = load_model(model, cfg, false)?;
            let scheme = scheme_spec(scheme, cfg);
            let persona = load_dataset(&data.data, general.model.task, &vocab, data.speaker.as_deref())?;
            let test_inputs = read_inputs(inputs, &vocab, general.model.task)?;
            let mut dists = Vec::with_capacity(targets.len());
            for (label, path) in targets {
                let corpus = encode_sentences(&read_corpus(path)?, &vocab);
                dists.push((label.clone(), corpus_distribution(&corpus, &vocab)?));
            }
            let train_cfg = cfg.finetune_train();
            let decode = decode_config(cfg, None, temperature.or(cfg.temperature));
            let setup = ConvergenceSetup {
                general: &general,
                persona: &persona,
                vocab: &vocab,
                targets: &dists,
                probe_epochs,
                test_inputs: &test_inputs,
                train: &train_cfg,
                decode: &decode,
                epsilon: cfg.smoothing,
            };
            let table = style_convergence(&setup, scheme)?;
            out.write(&format!("style-convergence-{}.csv", scheme.label()), table.to_csv().as_bytes())?;
            "style-convergence"
        }
        Command::NgramTrain { vocab, data, order } => {
            let vocab = Vocabulary::load(vocab)?;
            let corpus = encode_sentences(&read_corpus(data)?, &vocab);
            let model = estimate_kn(&count_ngrams(&corpus, *order)?, &vocab)?;
            out.write(&format!("ngram-{order}.arpa"), model.to_arpa(&vocab)?.as_bytes())?;
            "ngram-train"
        }
        Command::NgramPpl { vocab, model, data } => {
            let vocab = Vocabulary::load(vocab)?;
            let text = std::fs::read_to_string(model).with_context(|| format!("reading {}", model.display()))?;
            let arpa = ArpaModel::parse(&text, &vocab)?;
            let dataset = Dataset::sentences(&vocab, encode_sentences(&read_corpus(data)?, &vocab));
            let ppl = arpa.perplexity(&dataset)?;
            let csv = format!("data,order,perplexity\n{},{},{ppl:?}\n", file_label(data), arpa.order());
            out.write("ngram-perplexity.csv", csv.as_bytes())?;
            "ngram-ppl"
        }
    };
    out.finish(name, args, cfg)?;
    Ok(name)
}

fn load_dataset(path: &Path, task: Task, vocab: &Vocabulary, speaker: Option<&str>) -> Result<Dataset> {
    let dataset = match task {
        Task::SentenceCompletion => {
            if speaker.is_some() {
                bail!(Error::Config("--speaker only applies to message-reply data".into()));
            }
            Dataset::sentences(vocab, encode_sentences(&read_corpus(path)?, vocab))
        }
        Task::MessageReply => {
            let mut pairs = build_pairs(&read_script(path)?);
            if let Some(who) = speaker {
                pairs.retain(|p| p.reply.speaker.eq_ignore_ascii_case(who));
            }
            Dataset::pairs(vocab, encode_pairs(&pairs, vocab))
        }
    };
    if dataset.is_empty() {
        bail!(Error::Data(format!("{} yields no {task} examples", path.display())));
    }
    Ok(dataset)
}

/// Training data and held-out data: `--valid` if given, else a seeded split.
fn train_valid(
    data: &DataArgs,
    task: Task,
    vocab: &Vocabulary,
    seed: u64,
    cfg: &ExperimentConfig,
) -> Result<(Dataset, Dataset)> {
    let speaker = data.speaker.as_deref();
    let all = load_dataset(&data.data, task, vocab, speaker)?;
    match &data.valid {
        Some(path) => Ok((all, load_dataset(path, task, vocab, speaker)?)),
        None => Ok(all.split(cfg.train.validation_fraction, seed)?),
    }
}

fn load_model(args: &ModelArgs, cfg: &ExperimentConfig, cast: bool) -> Result<(Checkpoint, Vocabulary)> {
    let vocab = Vocabulary::load(&args.vocab)?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    ck.verify_vocab(&vocab)?;
    Ok((ck.into_precision(cfg.train.precision, cast)?, vocab))
}

fn scheme_spec(args: &SchemeArgs, cfg: &ExperimentConfig) -> SchemeSpec {
    match args.scheme {
        SchemeName::Relearn => SchemeSpec::RelearnWhole,
        SchemeName::Surplus => SchemeSpec::SurplusLayer(args.surplus_kind.unwrap_or(cfg.surplus_kind)),
        SchemeName::FixedN => SchemeSpec::FixedFirstN(args.fixed_n.unwrap_or(cfg.fixed_n)),
    }
}

/// Prefixes or messages, one per line, without a terminating `<eos>`.
fn read_inputs(path: &Path, vocab: &Vocabulary, task: Task) -> Result<Vec<TokenSequence>> {
    let lines: Vec<Vec<String>> = match task {
        Task::SentenceCompletion => read_corpus(path)?,
        Task::MessageReply => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            // Scripts are accepted too; the speaker column is dropped.
            text.lines()
                .map(|l| l.split_once('\t').map_or(l, |(_, t)| t))
                .map(tokenize)
                .filter(|t| !t.is_empty())
                .collect()
        }
    };
    if lines.is_empty() {
        bail!(Error::Data(format!("{} holds no inputs", path.display())));
    }
    Ok(lines.iter().map(|l| encode(l, vocab, false)).collect())
}

fn decode_config(cfg: &ExperimentConfig, max_len: Option<usize>, temperature: Option<f64>) -> DecodeConfig {
    DecodeConfig {
        mode: temperature.map_or(DecodeMode::Greedy, |temperature| DecodeMode::Sample { temperature }),
        max_len: max_len.unwrap_or(cfg.max_len),
        seed: cfg.train.seed,
    }
}

fn file_label(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned())
}
