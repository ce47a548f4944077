use std::fs;
use std::path::PathBuf;

use joint_ood::data::synthetic::{generate_synthetic, Grammar, SyntheticConfig};
use joint_ood::data::{load_checkpoint, read_word_vectors, save_checkpoint, Checkpoint, Dataset};
use joint_ood::evaluation::{evaluate as evaluate_at, find_threshold, score_all};
use joint_ood::training::{format_log, TrainConfig, Trainer};
use joint_ood::{Error, Result};

use crate::config::{lookup, merge};
use crate::{EvaluateArgs, GenDataArgs, TrainArgs};

pub enum Failure {
    /// Bad command line; exit 2.
    Usage(String),
    /// Anything that went wrong while running; exit 1.
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

type Pairs = Vec<(String, String)>;

fn required<'a>(pairs: &'a Pairs, key: &str) -> std::result::Result<&'a str, Failure> {
    lookup(pairs, key).ok_or_else(|| Failure::Usage(format!("missing required --{}", key.replace('_', "-"))))
}

fn number<T: std::str::FromStr>(pairs: &Pairs, key: &str, default: T) -> Result<T> {
    match lookup(pairs, key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}"))),
    }
}

fn print_resolved(pairs: &[(&str, String)]) {
    for (k, v) in pairs {
        eprintln!("{k} = {v}");
    }
}

const GEN_KEYS: [&str; 8] = [
    "out_dir",
    "num_domains",
    "train_size",
    "dev_size",
    "test_size",
    "ood_ratio",
    "seed",
    "grammar",
];

pub fn gen_data(a: GenDataArgs) -> std::result::Result<(), Failure> {
    let pairs = merge(
        a.config.as_deref(),
        vec![
            ("out_dir", a.out_dir),
            ("num_domains", a.num_domains),
            ("train_size", a.train_size),
            ("dev_size", a.dev_size),
            ("test_size", a.test_size),
            ("ood_ratio", a.ood_ratio),
            ("seed", a.seed),
            ("grammar", a.grammar),
        ],
        &GEN_KEYS,
    )?;
    let out_dir = PathBuf::from(required(&pairs, "out_dir")?);
    let cfg = SyntheticConfig {
        num_domains: number(&pairs, "num_domains", 10)?,
        train_size: number(&pairs, "train_size", 20_000)?,
        dev_size: number(&pairs, "dev_size", 2_000)?,
        test_size: number(&pairs, "test_size", 2_000)?,
        ood_ratio: number(&pairs, "ood_ratio", 0.25)?,
        seed: number(&pairs, "seed", 1)?,
    };
    let grammar_path = lookup(&pairs, "grammar");
    print_resolved(&[
        ("out_dir", out_dir.display().to_string()),
        ("num_domains", cfg.num_domains.to_string()),
        ("train_size", cfg.train_size.to_string()),
        ("dev_size", cfg.dev_size.to_string()),
        ("test_size", cfg.test_size.to_string()),
        ("ood_ratio", cfg.ood_ratio.to_string()),
        ("seed", cfg.seed.to_string()),
        ("grammar", grammar_path.unwrap_or("builtin").to_string()),
    ]);
    let grammar = match grammar_path {
        Some(p) => Grammar::load(p)?,
        None => Grammar::builtin()?,
    };
    let corpus = generate_synthetic(&grammar, &cfg)?;
    corpus.write(&out_dir)?;
    print!("{}", corpus.manifest());
    Ok(())
}

const TRAIN_PATH_KEYS: [&str; 5] = ["train", "dev", "out_model", "log", "embeddings"];

pub fn train(a: TrainArgs) -> std::result::Result<(), Failure> {
    let known: Vec<&str> = TRAIN_PATH_KEYS.iter().chain(TrainConfig::KEYS.iter()).copied().collect();
    let pairs = merge(
        a.config.as_deref(),
        vec![
            ("train", a.train),
            ("dev", a.dev),
            ("out_model", a.out_model),
            ("log", a.log),
            ("embeddings", a.embeddings),
            ("target_far", a.target_far),
            ("alpha", a.alpha),
            ("mode", a.mode),
            ("encoder", a.encoder),
            ("dcw", a.dcw),
            ("seed", a.seed),
            ("epochs", a.epochs),
            ("learning_rate", a.learning_rate),
            ("clip", a.clip),
            ("batch_size", a.batch_size),
            ("dropout", a.dropout),
            ("unk_rate", a.unk_rate),
            ("min_count", a.min_count),
            ("char_emb", a.char_emb),
            ("char_hidden", a.char_hidden),
            ("word_emb", a.word_emb),
            ("word_hidden", a.word_hidden),
            ("head_hidden", a.head_hidden),
            ("cnn_channels", a.cnn_channels),
        ],
        &known,
    )?;
    let train_path = required(&pairs, "train")?.to_string();
    let dev_path = required(&pairs, "dev")?.to_string();
    let out_model = required(&pairs, "out_model")?.to_string();
    let log_path = lookup(&pairs, "log").map_or_else(|| format!("{out_model}.log.csv"), String::from);
    let embeddings = lookup(&pairs, "embeddings");

    let mut config = TrainConfig::default();
    for (k, v) in &pairs {
        if !TRAIN_PATH_KEYS.contains(&k.as_str()) {
            config.set(k, v)?;
        }
    }
    config.validate()?;
    let mut resolved = vec![
        ("train", train_path.clone()),
        ("dev", dev_path.clone()),
        ("out_model", out_model.clone()),
        ("log", log_path.clone()),
        ("embeddings", embeddings.unwrap_or("none").to_string()),
    ];
    resolved.extend(config.to_pairs());
    print_resolved(&resolved);

    let train = Dataset::load(&train_path)?;
    let dev = Dataset::load_with_labels(&dev_path, &train.labels)?;
    let mut trainer = Trainer::new(config.clone(), &train, &dev)?;
    if let Some(p) = embeddings {
        let vectors = read_word_vectors(p, config.dims.word_emb)?;
        let found = trainer.init_word_vectors(&vectors)?;
        eprintln!("pretrained vectors cover {found} of {} words", trainer.vocab().num_words());
    }
    for _ in 0..config.epochs {
        let r = trainer.run_epoch()?;
        eprintln!(
            "epoch {:>3}  loss {:.4}  dev acc {:.4}  far {:.4}  frr {:.4}  lambda {:.4}",
            r.epoch, r.train_loss, r.dev_acc, r.dev_far, r.dev_frr, r.lambda
        );
    }
    let outcome = trainer.finish()?;
    fs::write(&log_path, format_log(&outcome.records)).map_err(Error::from)?;
    let best = outcome.records[outcome.best_epoch - 1];
    let checkpoint = Checkpoint {
        config,
        labels: outcome.labels,
        vocab: outcome.vocab,
        model: outcome.model,
    };
    save_checkpoint(&checkpoint, &out_model)?;
    println!("best_epoch={}", outcome.best_epoch);
    println!("dev_accuracy={:.6}", best.dev_acc);
    println!("dev_far={:.6}", best.dev_far);
    println!("dev_frr={:.6}", best.dev_frr);
    Ok(())
}

const EVAL_KEYS: [&str; 5] = ["model", "test", "target_far", "tune_on", "dev"];

pub fn evaluate(a: EvaluateArgs) -> std::result::Result<(), Failure> {
    let pairs = merge(
        a.config.as_deref(),
        vec![
            ("model", a.model),
            ("test", a.test),
            ("target_far", a.target_far),
            ("tune_on", a.tune_on),
            ("dev", a.dev),
        ],
        &EVAL_KEYS,
    )?;
    let model_path = required(&pairs, "model")?.to_string();
    let test_path = required(&pairs, "test")?.to_string();
    let tune_on = lookup(&pairs, "tune_on").unwrap_or("test");
    let dev_path = lookup(&pairs, "dev");
    let tune_path = match (tune_on, dev_path) {
        ("test", _) => test_path.clone(),
        ("dev", Some(d)) => d.to_string(),
        ("dev", None) => return Err(Failure::Usage("--tune-on dev requires --dev".into())),
        (other, _) => return Err(Error::Config(format!("invalid value {other:?} for tune_on (dev|test)")).into()),
    };

    let checkpoint = load_checkpoint(&model_path)?;
    let target: f64 = number(&pairs, "target_far", checkpoint.config.target_far)?;
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::Config(format!("target_far must lie in [0, 1], got {target}")).into());
    }
    print_resolved(&[
        ("model", model_path.clone()),
        ("test", test_path.clone()),
        ("target_far", target.to_string()),
        ("tune_on", tune_on.to_string()),
        ("dev", dev_path.unwrap_or("none").to_string()),
    ]);

    let labels = &checkpoint.labels;
    let score = |path: &str| -> Result<_> {
        let data = Dataset::load_with_labels(path, labels)?;
        if data.count_ood() == 0 {
            return Err(Error::Input(format!("{path} contains no OOD utterances")));
        }
        let encoded: Vec<_> = data.utterances.iter().map(|u| checkpoint.vocab.encode(u)).collect();
        score_all(&checkpoint.model, &encoded)
    };
    let test = score(&test_path)?;
    let tune = if tune_path == test_path { test.clone() } else { score(&tune_path)? };
    let ood_id = checkpoint.model.ood_id();
    let t = find_threshold(&tune, ood_id, target)?;
    let report = evaluate_at(&test, ood_id, t)?;
    print!("{report}");
    Ok(())
}
