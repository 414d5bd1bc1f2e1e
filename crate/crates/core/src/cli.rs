//! Command-line entry point.
//!
//! Every subcommand declares its keys once; each key is accepted both as a
//! `--key value` flag and as a `key = value` line in the file given by
//! `--config`. Flags override the file, which overrides the defaults.
//! Exit codes: 0 success, 1 usage or configuration error, 2 data or
//! contract error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};

use crate::baseline::{build_template_index, sample_question};
use crate::error::{Error, Result};
use crate::generation::{generate_corpus, Generator};
use crate::kb::{load_simplequestions, load_triples, tsv_lines, EntityNames, Fact, QAPair, Vocabulary};
use crate::metrics::{evaluate_corpus, read_questions, WordVectorStore};
use crate::model::{load_checkpoint, random_gradcheck, save_checkpoint, AtomIds, ModelDims, QGenParams, Specials};
use crate::placeholder::{build_category_map, placeholderize_corpus, Mode};
use crate::trainer::{encode_examples, train, AdamConfig, TrainConfig, ValidationExample};
use crate::transe::{train_transe, NegativeSampling, TransEConfig, TransEModel};

pub const THREADS_ENV: &str = "QGEN_THREADS";

struct Key {
    name: &'static str,
    default: Option<&'static str>,
    help: &'static str,
}

const fn key(name: &'static str, default: Option<&'static str>, help: &'static str) -> Key {
    Key { name, default, help }
}

struct Sub {
    name: &'static str,
    about: &'static str,
    keys: &'static [Key],
}

const SUBCOMMANDS: &[Sub] = &[
    Sub {
        name: "train-transe",
        about: "Train TransE embeddings on a triple file",
        keys: &[
            key("triples", None, "subject<TAB>relationship<TAB>object file"),
            key("simplequestions", None, "optional SimpleQuestions file whose facts are added"),
            key("dim", Some("200"), "embedding dimension"),
            key("margin", Some("1"), "ranking margin"),
            key("lr", Some("0.01"), "SGD learning rate"),
            key("epochs", Some("100"), "passes over the triples"),
            key("entities-out", None, "output file for entity embeddings"),
            key("relationships-out", None, "output file for relationship embeddings"),
            key("seed", Some("0"), "random seed"),
        ],
    },
    Sub {
        name: "train-qgen",
        about: "Train the question decoder",
        keys: &[
            key("train", None, "SimpleQuestions training file"),
            key("valid", None, "SimpleQuestions validation file"),
            key("entities", None, "TransE entity embeddings"),
            key("relationships", None, "TransE relationship embeddings"),
            key("names", None, "optional id<TAB>name file for subject strings"),
            key("mode", Some("sp"), "placeholder mode: sp or mp"),
            key("threshold", Some("0.5"), "minimum subject-span match ratio"),
            key("hidden", Some("600"), "decoder hidden size"),
            key("word-dim", Some("200"), "output word embedding size"),
            key("lr", Some("0.00025"), "Adam learning rate"),
            key("clip", Some("0.1"), "global gradient-norm clip"),
            key("batch-size", Some("32"), "examples per update"),
            key("patience", Some("5"), "evaluations without improvement before stopping"),
            key("eval-every", Some("0"), "updates between evaluations (0: once per epoch)"),
            key("max-epochs", Some("100"), "epoch limit"),
            key("max-steps", Some("0"), "update limit (0: none)"),
            key("max-len", Some("30"), "decoding length limit"),
            key("min-count", Some("1"), "minimum count for output words"),
            key("valid-limit", Some("0"), "validation pairs scored per evaluation (0: all)"),
            key("out-dir", None, "directory for checkpoint, vocabularies and log"),
            key("seed", Some("0"), "random seed"),
        ],
    },
    Sub {
        name: "generate",
        about: "Generate a question for every fact in a file",
        keys: &[
            key("model-dir", None, "output directory of train-qgen"),
            key("facts", None, "subject<TAB>relationship<TAB>object file"),
            key("out", None, "output corpus"),
            key("names", None, "optional id<TAB>name file for subject strings"),
            key("beam-width", Some("5"), "beam width (1: greedy)"),
            key("max-len", Some("30"), "decoding length limit"),
        ],
    },
    Sub {
        name: "evaluate",
        about: "Score candidate questions against references",
        keys: &[
            key("candidates", None, "one question per line (or corpus TSV)"),
            key("references", None, "one question per line (or corpus TSV)"),
            key("vectors", None, "optional word-vector text file for Emb. Greedy"),
            key("report", None, "optional path for the summary"),
            key("examples-out", None, "optional path for per-example scores"),
        ],
    },
    Sub {
        name: "baseline",
        about: "Generate questions with the template baseline",
        keys: &[
            key("train", None, "SimpleQuestions training file"),
            key("facts", None, "facts to generate questions for"),
            key("out", None, "output corpus"),
            key("names", None, "optional id<TAB>name file for subject strings"),
            key("threshold", Some("0.5"), "minimum subject-span match ratio"),
            key("seed", Some("0"), "random seed"),
        ],
    },
    Sub {
        name: "neighbors",
        about: "Nearest entities in a TransE embedding space",
        keys: &[
            key("entities", None, "TransE entity embeddings"),
            key("relationships", None, "TransE relationship embeddings"),
            key("entity", None, "query entity id"),
            key("k", Some("5"), "number of neighbours"),
        ],
    },
    Sub {
        name: "gradcheck",
        about: "Finite-difference check of the decoder gradients on a random model",
        keys: &[
            key("enc-dim", Some("4"), "input embedding size"),
            key("word-dim", Some("4"), "output word embedding size"),
            key("hidden", Some("6"), "decoder hidden size"),
            key("vocab", Some("8"), "output vocabulary size"),
            key("length", Some("5"), "question length"),
            key("eps", Some("1e-5"), "finite-difference step"),
            key("tolerance", Some("1e-4"), "maximum accepted relative error"),
            key("seed", Some("0"), "random seed"),
        ],
    },
];

fn command() -> Command {
    let mut cmd = Command::new("factqg")
        .about("Question generation from knowledge-base facts")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for sub in SUBCOMMANDS {
        let mut sc = Command::new(sub.name).about(sub.about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key = value file; flags take precedence"),
        );
        for k in sub.keys {
            let help = match k.default {
                Some(d) => format!("{} [default: {d}]", k.help),
                None => k.help.to_string(),
            };
            sc = sc.arg(Arg::new(k.name).long(k.name).value_name("VALUE").help(help));
        }
        cmd = cmd.subcommand(sc);
    }
    cmd
}

/// Effective key/value configuration of one subcommand.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{}:{}: expected `key = value`", path.display(), i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

impl RunConfig {
    fn resolve(sub: &Sub, matches: &ArgMatches) -> Result<Self> {
        let mut values = BTreeMap::new();
        for k in sub.keys {
            if let Some(d) = k.default {
                values.insert(k.name, d.to_string());
            }
        }
        if let Some(path) = matches.get_one::<String>("config") {
            for (k, v) in parse_config_file(Path::new(path))? {
                let known = sub
                    .keys
                    .iter()
                    .find(|key| key.name == k)
                    .ok_or_else(|| Error::Config(format!("unknown key `{k}` for {}", sub.name)))?;
                values.insert(known.name, v);
            }
        }
        for k in sub.keys {
            if let Some(v) = matches.get_one::<String>(k.name) {
                values.insert(k.name, v.clone());
            }
        }
        Ok(RunConfig { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required `{key}`")))
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        self.required(key).map(PathBuf::from)
    }

    fn opt_path(&self, key: &str) -> Option<PathBuf> {
        self.get(key).map(PathBuf::from)
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.required(key)?;
        raw.parse()
            .map_err(|_| Error::Config(format!("invalid value `{raw}` for `{key}`")))
    }

    /// `0` means "not set".
    fn nonzero(&self, key: &str) -> Result<Option<usize>> {
        Ok(Some(self.parse::<usize>(key)?).filter(|&v| v > 0))
    }

    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn names_from(cfg: &RunConfig) -> Result<EntityNames> {
    match cfg.opt_path("names") {
        Some(p) => EntityNames::load(p),
        None => Ok(EntityNames::default()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn cmd_train_transe(cfg: &RunConfig) -> Result<()> {
    let mut facts = load_triples(cfg.path("triples")?)?.facts;
    if let Some(sq) = cfg.opt_path("simplequestions") {
        let mut seen: std::collections::HashSet<Fact> = facts.iter().cloned().collect();
        for p in load_simplequestions(sq)?.pairs {
            if seen.insert(p.fact.clone()) {
                facts.push(p.fact);
            }
        }
    }
    let config = TransEConfig {
        dim: cfg.parse("dim")?,
        margin: cfg.parse("margin")?,
        learning_rate: cfg.parse("lr")?,
        epochs: cfg.parse("epochs")?,
        negative_sampling: NegativeSampling::UniformHeadOrTail,
        seed: cfg.parse("seed")?,
    };
    config.validate()?;
    let model = train_transe(&facts, &config)?;
    model.save(cfg.path("entities-out")?, cfg.path("relationships-out")?)?;
    println!(
        "trained TransE on {} triples: {} entities, {} relationships",
        facts.len(),
        model.entities.len(),
        model.relationships.len()
    );
    Ok(())
}

/// `<unk>` followed by every TransE entity and relationship, sorted.
fn input_vocab_from_transe(transe: &TransEModel) -> Vocabulary {
    let mut ids: Vec<&str> = transe
        .entities
        .ids()
        .iter()
        .chain(transe.relationships.ids())
        .map(String::as_str)
        .collect();
    ids.sort_unstable();
    ids.dedup();
    let mut v = Vocabulary::input_reserved();
    for id in ids {
        v.insert(id, 0);
    }
    v
}

fn validation_set(pairs: &[QAPair], input: &Vocabulary, names: &EntityNames, limit: Option<usize>) -> Vec<ValidationExample> {
    pairs
        .iter()
        .filter_map(|p| {
            AtomIds::resolve(&p.fact, input).ok().map(|atoms| ValidationExample {
                atoms,
                subject: names.subject_string(&p.fact.subject),
                reference: p.question_tokens.clone(),
            })
        })
        .take(limit.unwrap_or(usize::MAX))
        .collect()
}

fn cmd_train_qgen(cfg: &RunConfig) -> Result<()> {
    let out_dir = cfg.path("out-dir")?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let mode: Mode = cfg.required("mode")?.parse()?;
    let threshold: f64 = cfg.parse("threshold")?;
    let names = names_from(cfg)?;
    let train_pairs = load_simplequestions(cfg.path("train")?)?.pairs;
    let valid_pairs = load_simplequestions(cfg.path("valid")?)?.pairs;
    let transe = TransEModel::load(cfg.path("entities")?, cfg.path("relationships")?)?;

    let categories = (mode == Mode::Multi).then(|| build_category_map(&train_pairs));
    let corpus = placeholderize_corpus(&train_pairs, &names, mode, categories.as_ref(), threshold)?;
    log::info!(
        "placeholderized {} of {} training pairs",
        corpus.pairs.len(),
        train_pairs.len()
    );
    let (_, output_vocab) = crate::kb::build_vocabularies(&corpus.pairs, cfg.parse("min-count")?)?;
    let input_vocab = input_vocab_from_transe(&transe);
    let table = QGenParams::input_table_from_transe(&transe, &input_vocab)?;
    let dims = ModelDims {
        enc_dim: transe.dim(),
        word_dim: cfg.parse("word-dim")?,
        hidden: cfg.parse("hidden")?,
        vocab: output_vocab.len(),
    };
    let seed: u64 = cfg.parse("seed")?;
    let model = QGenParams::init(dims, table, seed)?;
    let (examples, dropped) = encode_examples(&corpus.pairs, &input_vocab, &output_vocab);
    if dropped > 0 {
        log::warn!("{dropped} training pairs have atoms without TransE embeddings");
    }
    let valid = validation_set(&valid_pairs, &input_vocab, &names, cfg.nonzero("valid-limit")?);
    let specials = Specials::from_vocab(&output_vocab)?;
    let config = TrainConfig {
        adam: AdamConfig {
            learning_rate: cfg.parse("lr")?,
            ..Default::default()
        },
        clip_norm: cfg.parse("clip")?,
        batch_size: cfg.parse("batch-size")?,
        eval_every: cfg.nonzero("eval-every")?,
        patience: cfg.parse("patience")?,
        max_epochs: cfg.parse("max-epochs")?,
        max_steps: cfg.nonzero("max-steps")?,
        max_len: cfg.parse("max-len")?,
        seed,
    };
    config.validate()?;

    let log_path = out_dir.join("train.log");
    let mut log_file = create(&log_path)?;
    let outcome = train(model, &examples, &valid, &output_vocab, specials, &config, Some(&mut log_file))?;
    log_file.flush().map_err(|e| Error::io(&log_path, e))?;

    let in_hash = input_vocab.content_hash();
    let out_hash = output_vocab.content_hash();
    save_checkpoint(out_dir.join("checkpoint.bin"), &outcome.model, in_hash, out_hash)?;
    input_vocab.write(out_dir.join("input.vocab"))?;
    output_vocab.write(out_dir.join("output.vocab"))?;
    if let Some(map) = &categories {
        map.write(out_dir.join("categories.tsv"))?;
    }
    let config_path = out_dir.join("config.txt");
    std::fs::write(&config_path, cfg.render()).map_err(|e| Error::io(&config_path, e))?;
    println!(
        "{} updates, best validation METEOR-lite {}",
        outcome.steps,
        outcome.best_meteor.map_or_else(|| "n/a".to_string(), |m| format!("{m:.4}"))
    );
    match outcome.divergence {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

struct LoadedModel {
    model: QGenParams,
    input_vocab: Vocabulary,
    output_vocab: Vocabulary,
}

fn load_model_dir(dir: &Path) -> Result<LoadedModel> {
    let input_vocab = Vocabulary::read(dir.join("input.vocab"))?;
    let output_vocab = Vocabulary::read(dir.join("output.vocab"))?;
    let model = load_checkpoint(
        dir.join("checkpoint.bin"),
        input_vocab.content_hash(),
        output_vocab.content_hash(),
    )?;
    Ok(LoadedModel {
        model,
        input_vocab,
        output_vocab,
    })
}

fn cmd_generate(cfg: &RunConfig) -> Result<()> {
    let loaded = load_model_dir(&cfg.path("model-dir")?)?;
    let names = names_from(cfg)?;
    let mut generator = Generator::new(&loaded.model, &loaded.input_vocab, &loaded.output_vocab, &names)?;
    generator.beam_width = cfg.parse("beam-width")?;
    generator.max_len = cfg.parse("max-len")?;
    if generator.beam_width == 0 || generator.max_len == 0 {
        return Err(Error::Config("beam-width and max-len must be >= 1".into()));
    }
    let stats = generate_corpus(cfg.path("facts")?, &generator, cfg.path("out")?)?;
    println!("wrote {} questions, skipped {} facts", stats.written, stats.skipped);
    Ok(())
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let candidates = read_questions(cfg.path("candidates")?)?;
    let references = read_questions(cfg.path("references")?)?;
    let store = cfg.opt_path("vectors").map(WordVectorStore::load).transpose()?;
    let report = evaluate_corpus(&candidates, &references, store.as_ref())?;
    print!("{}", report.summary());
    if let Some(p) = cfg.opt_path("report") {
        report.write_summary(p)?;
    }
    if let Some(p) = cfg.opt_path("examples-out") {
        report.write_examples(p)?;
    }
    Ok(())
}

fn cmd_baseline(cfg: &RunConfig) -> Result<()> {
    let names = names_from(cfg)?;
    let train_pairs = load_simplequestions(cfg.path("train")?)?.pairs;
    let corpus = placeholderize_corpus(&train_pairs, &names, Mode::Single, None, cfg.parse("threshold")?)?;
    let index = build_template_index(&corpus.pairs);
    let seed: u64 = cfg.parse("seed")?;
    let facts_path = cfg.path("facts")?;
    let out_path = cfg.path("out")?;
    let mut w = create(&out_path)?;
    let (mut written, mut skipped) = (0usize, 0usize);
    for (i, row) in tsv_lines(&facts_path)?.enumerate() {
        let (line, fields) = row?;
        if fields.len() < 3 {
            return Err(Error::parse(&facts_path, line, "expected at least 3 tab-separated fields"));
        }
        let fact = Fact::new(&fields[0], &fields[1], &fields[2])
            .map_err(|e| Error::parse(&facts_path, line, e.to_string()))?;
        let subject = names.subject_string(&fact.subject);
        match sample_question(&fact, &index, seed.wrapping_add(i as u64), &subject) {
            Ok(q) => {
                writeln!(w, "{}\t{}\t{}\t{}", fields[0], fields[1], fields[2], q.join(" "))
                    .map_err(|e| Error::io(&out_path, e))?;
                written += 1;
            }
            Err(Error::UnseenRelationship(_)) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    w.flush().map_err(|e| Error::io(&out_path, e))?;
    println!("wrote {written} questions, skipped {skipped} facts with unseen relationships");
    Ok(())
}

fn cmd_neighbors(cfg: &RunConfig) -> Result<()> {
    let model = TransEModel::load(cfg.path("entities")?, cfg.path("relationships")?)?;
    for (id, d) in model.nearest_neighbors(cfg.required("entity")?, cfg.parse("k")?)? {
        println!("{id}\t{d:.6}");
    }
    Ok(())
}

/// Returns whether the check passed.
fn cmd_gradcheck(cfg: &RunConfig) -> Result<bool> {
    let dims = ModelDims {
        enc_dim: cfg.parse("enc-dim")?,
        word_dim: cfg.parse("word-dim")?,
        hidden: cfg.parse("hidden")?,
        vocab: cfg.parse("vocab")?,
    };
    let tolerance: f64 = cfg.parse("tolerance")?;
    let report = random_gradcheck(dims, cfg.parse("length")?, cfg.parse("seed")?, cfg.parse("eps")?)?;
    println!("max relative error\t{:e}", report.max_rel_error);
    println!("coordinates\t{}", report.coordinates);
    if let Some((name, k)) = &report.worst {
        println!("worst\t{name}[{k}]");
    }
    Ok(report.max_rel_error <= tolerance)
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 && rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("thread pool already initialized");
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

/// Runs one subcommand. `args` excludes the program name.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv = std::iter::once(OsString::from("factqg")).chain(args.into_iter().map(Into::into));
    let matches = match command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    configure_threads();
    let (name, sub_matches) = matches.subcommand().expect("subcommand is required");
    let sub = SUBCOMMANDS.iter().find(|s| s.name == name).expect("declared subcommand");
    let cfg = match RunConfig::resolve(sub, sub_matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    log::info!("{name} with\n{}", cfg.render());
    let result = match name {
        "train-transe" => cmd_train_transe(&cfg),
        "train-qgen" => cmd_train_qgen(&cfg),
        "generate" => cmd_generate(&cfg),
        "evaluate" => cmd_evaluate(&cfg),
        "baseline" => cmd_baseline(&cfg),
        "neighbors" => cmd_neighbors(&cfg),
        "gradcheck" => match cmd_gradcheck(&cfg) {
            Ok(true) => Ok(()),
            Ok(false) => return 2,
            Err(e) => Err(e),
        },
        _ => unreachable!("declared subcommand"),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_definition_is_valid() {
        command().debug_assert();
    }

    #[test]
    fn unknown_subcommand_is_usage_error() {
        assert_eq!(run(["frobnicate"]), 1);
        assert_eq!(run(["gradcheck", "--no-such-flag", "1"]), 1);
        assert_eq!(run(Vec::<String>::new()), 1);
    }

    #[test]
    fn config_precedence() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("cfg.txt");
        std::fs::write(&file, "# comment\nhidden = 9\nvocab=12 # trailing\n").unwrap();
        let sub = SUBCOMMANDS.iter().find(|s| s.name == "gradcheck").unwrap();
        let m = command()
            .try_get_matches_from(["factqg", "gradcheck", "--config", file.to_str().unwrap(), "--vocab", "10"])
            .unwrap();
        let cfg = RunConfig::resolve(sub, m.subcommand().unwrap().1).unwrap();
        assert_eq!(cfg.get("hidden"), Some("9"));
        assert_eq!(cfg.get("vocab"), Some("10"));
        assert_eq!(cfg.get("length"), Some("5"));

        std::fs::write(&file, "bogus = 1\n").unwrap();
        assert_eq!(run(["gradcheck", "--config", file.to_str().unwrap()]), 1);
        assert_eq!(run(["gradcheck", "--hidden", "abc"]), 1);
    }

    #[test]
    fn gradcheck_passes() {
        assert_eq!(run(["gradcheck", "--seed", "7"]), 0);
    }

    #[test]
    fn evaluate_self_comparison_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("q.txt");
        std::fs::write(&f, "what is the capital of france?\nwho wrote hamlet?\n").unwrap();
        let report = dir.path().join("report.tsv");
        let fs = f.to_str().unwrap();
        assert_eq!(run(["evaluate", "--candidates", fs, "--references", fs, "--report", report.to_str().unwrap()]), 0);
        assert!(std::fs::read_to_string(&report).unwrap().contains("BLEU\t100.0000"));
        let missing = dir.path().join("nope.txt");
        assert_eq!(run(["evaluate", "--candidates", fs, "--references", missing.to_str().unwrap()]), 2);
        assert_eq!(run(["evaluate", "--candidates", fs]), 1);
    }
}
