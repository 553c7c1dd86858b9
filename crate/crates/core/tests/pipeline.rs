use std::sync::OnceLock;

use hardgate::calibration::{bin_predictions, ece};
use hardgate::datagen::{detokenize, generate_corpus, ingest_parallel_text, ParallelCorpus, Tokenization, ToyGrammar};
use hardgate::evaluation::{evaluate_checkpoint, EvalOptions};
use hardgate::model::{special, Checkpoint, ModelParams};
use hardgate::training::{train, LossMode, TeacherHandle, TrainConfig, TrainOutcome};
use hardgate::Error;

fn echo_corpus() -> &'static ParallelCorpus {
    static CORPUS: OnceLock<ParallelCorpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let grammar = ToyGrammar::with_ambiguity(12, 1.0, 3, 8, 4).unwrap();
        generate_corpus(&grammar, 1500, 4).unwrap()
    })
}

fn small_corpus() -> &'static ParallelCorpus {
    static CORPUS: OnceLock<ParallelCorpus> = OnceLock::new();
    CORPUS.get_or_init(|| {
        let grammar = ToyGrammar::with_ambiguity(10, 0.7, 3, 6, 1).unwrap();
        generate_corpus(&grammar, 200, 1).unwrap()
    })
}

fn config(mode: LossMode, epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::new(mode, 7);
    c.epochs = epochs;
    c.optimizer.peak_lr = 1e-2;
    c.model.embed_dim = 16;
    c.model.ffn_dim = 32;
    c
}

/// CE model trained to convergence on the deterministic task.
fn echo_model() -> &'static TrainOutcome {
    static MODEL: OnceLock<TrainOutcome> = OnceLock::new();
    MODEL.get_or_init(|| {
        let mut c = config(LossMode::Ce, 20);
        c.model.embed_dim = 32;
        c.model.ffn_dim = 64;
        train(&c, echo_corpus(), None).unwrap()
    })
}

#[test]
fn ce_learns_the_deterministic_task() {
    let out = echo_model();
    let last = out.log.epochs.last().unwrap();
    assert!(last.valid_accuracy > 0.95, "accuracy {}", last.valid_accuracy);
    let first = &out.log.epochs[0];
    let best = &out.log.epochs[out.log.best_epoch - 1];
    assert!(best.valid_nll <= first.valid_nll);
}

#[test]
fn converged_echo_model_decodes_and_is_calibrated() {
    let corpus = echo_corpus();
    let mut ck = Checkpoint::new(echo_model().params.clone());
    ck.vocab_fingerprint = Some(corpus.vocab.fingerprint());
    let eval = evaluate_checkpoint(&ck, corpus, &EvalOptions::default()).unwrap();
    let r = &eval.report;
    assert!(r.is_finite());
    assert!(r.bleu > 0.95, "bleu {}", r.bleu);
    assert!(r.ece < 0.05, "ece {}", r.ece);
    // the report agrees with a recomputation from its own records
    let recount = ece(&bin_predictions(&eval.records, r.num_bins).unwrap());
    assert!((recount - r.ece).abs() < 1e-12);
    let positions: usize = corpus.valid.iter().map(|p| p.target.len() + 1).sum();
    assert_eq!(r.num_records, positions);
}

#[test]
fn evaluation_rejects_a_foreign_vocabulary() {
    let mut ck = Checkpoint::new(echo_model().params.clone());
    ck.vocab_fingerprint = Some(echo_corpus().vocab.fingerprint());
    let other = small_corpus();
    let err = evaluate_checkpoint(&ck, other, &EvalOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Incompatible(_)), "{err}");
}

#[test]
fn confident_teacher_reduces_hkd_to_ce_at_the_first_step() {
    let corpus = echo_corpus();
    let teacher = TeacherHandle::new(echo_model().params.clone(), 1.0).unwrap();
    let ce = train(&config(LossMode::Ce, 1), corpus, None).unwrap();
    for mode in [LossMode::HkdToken, LossMode::HkdSentence] {
        let hkd = train(&config(mode, 1), corpus, Some(&teacher)).unwrap();
        let (a, b) = (&ce.log.steps[0], &hkd.log.steps[0]);
        assert_eq!(b.alpha_token, Some(0.0), "{mode}");
        assert_eq!(a.loss.to_bits(), b.loss.to_bits(), "{mode}");
    }
}

#[test]
fn forced_zero_gates_reproduce_the_ce_trace() {
    let corpus = small_corpus();
    let ce = train(&config(LossMode::Ce, 2), corpus, None).unwrap();
    let teacher = TeacherHandle::new(ce.params.clone(), 1.3).unwrap();
    let mut c = config(LossMode::HkdToken, 2);
    c.gate_override = Some(0.0);
    let forced = train(&c, corpus, Some(&teacher)).unwrap();
    let losses = |o: &TrainOutcome| o.log.steps.iter().map(|s| s.loss.to_bits()).collect::<Vec<_>>();
    assert_eq!(losses(&ce), losses(&forced));
    assert_eq!(ce.params.checksum(), forced.params.checksum());
}

#[test]
fn runs_are_deterministic_and_leave_the_teacher_untouched() {
    let corpus = small_corpus();
    let teacher_params: ModelParams = train(&config(LossMode::LsUniform, 2), corpus, None).unwrap().params;
    let teacher = TeacherHandle::new(teacher_params, 1.0).unwrap();
    let before = teacher.params.checksum();
    let a = train(&config(LossMode::HkdSentence, 2), corpus, Some(&teacher)).unwrap();
    let b = train(&config(LossMode::HkdSentence, 2), corpus, Some(&teacher)).unwrap();
    assert_eq!(teacher.params.checksum(), before);
    assert_eq!(a.params.checksum(), b.params.checksum());
    assert_eq!(a.log.epochs_json(), b.log.epochs_json());
    let csv = |o: &TrainOutcome| {
        let mut buf = Vec::new();
        o.log.write_steps_csv(&mut buf).unwrap();
        buf
    };
    assert_eq!(csv(&a), csv(&b));
    assert!(a.log.steps.windows(2).all(|w| w[0].step < w[1].step));
    assert!(a.log.steps.iter().all(|s| s.alpha_token.is_some() && s.alpha_sentence.is_some()));
}

#[test]
fn kd_modes_require_a_teacher() {
    let err = train(&config(LossMode::HkdToken, 1), small_corpus(), None).unwrap_err();
    assert!(matches!(err, Error::Config(_)));
}

fn write_pair(dir: &std::path::Path, src: &str, tgt: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    let (s, t) = (dir.join("text.src"), dir.join("text.tgt"));
    std::fs::write(&s, src).unwrap();
    std::fs::write(&t, tgt).unwrap();
    (s, t)
}

#[test]
fn identical_three_line_files_give_three_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let text = "a b c\nb c\nc a a\n";
    let (s, t) = write_pair(dir.path(), text, text);
    let corpus = ingest_parallel_text(&s, &t, Tokenization::Whitespace, 100).unwrap();
    assert_eq!(corpus.train.len(), 3);
    for p in &corpus.train {
        assert_eq!(p.source, p.target);
    }
    // "a" appears four times, "c" three, "b" twice
    let expected = ["<pad>", "<s>", "</s>", "<unk>", "a", "c", "b"];
    assert_eq!(corpus.vocab.tokens(), expected.map(String::from).as_slice());
}

#[test]
fn tokens_beyond_max_vocab_become_unknown() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = write_pair(dir.path(), "x x x y\nx z\n", "p p q\np\n");
    let corpus = ingest_parallel_text(&s, &t, Tokenization::Whitespace, 2).unwrap();
    assert_eq!(corpus.vocab.len(), special::COUNT + 2);
    let ids = corpus.train[0].source_ids(&corpus.vocab);
    assert_eq!(ids[3], special::UNK);
    assert_ne!(ids[0], special::UNK);
    let target = corpus.train[0].target_ids(&corpus.vocab);
    assert_eq!(target.first(), Some(&special::BOS));
    assert_eq!(target.last(), Some(&special::EOS));
}

#[test]
fn ingested_lines_round_trip_through_ids() {
    let dir = tempfile::tempdir().unwrap();
    let src = "the  cat sat\non the mat\n";
    let tgt = "die Katze sass\nauf der Matte\n";
    let (s, t) = write_pair(dir.path(), src, tgt);
    for mode in [Tokenization::Whitespace, Tokenization::Char] {
        let corpus = ingest_parallel_text(&s, &t, mode, 1000).unwrap();
        for (pair, line) in corpus.train.iter().zip(tgt.lines()) {
            let ids = pair.target_ids(&corpus.vocab);
            let back = detokenize(&corpus.vocab.decode(&ids), mode);
            assert_eq!(back, detokenize(&hardgate::datagen::tokenize(line, mode), mode));
        }
        let first = &corpus.train[0];
        let back = detokenize(&corpus.vocab.decode(&first.source_ids(&corpus.vocab)), mode);
        let expected = if mode == Tokenization::Whitespace { "the cat sat" } else { "the  cat sat" };
        assert_eq!(back, expected);
    }
}

#[test]
fn misaligned_files_name_the_first_unmatched_line() {
    let dir = tempfile::tempdir().unwrap();
    let (s, t) = write_pair(dir.path(), "a\nb\nc\n", "a\nb\n");
    let err = ingest_parallel_text(&s, &t, Tokenization::Whitespace, 10).unwrap_err();
    match err {
        Error::Ingestion(msg) => {
            assert!(msg.contains("3 lines"), "{msg}");
            assert!(msg.contains("line is 3"), "{msg}");
        }
        other => panic!("unexpected {other}"),
    }
}
