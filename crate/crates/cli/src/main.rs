use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use transtok::alignment::{extract_counts, train_ibm1, AlignmentTable, ParallelCorpus};
use transtok::encoder::{build_model, EncoderConfig, EncoderModel};
use transtok::evaluation::{
    classify_eval, eval_mlm, ner_eval, parse_classification_tsv, parse_conll, parse_pairs_tsv, retrieval_eval, FinetuneConfig, MlmEvalConfig,
};
use transtok::pipeline::{mask_vocab, run_ablation, run_longcontext, split_held_out, token_stream, AblationConfig, PipelineError, StageContext};
use transtok::tokenizer::{fertility, train_bpe, BpeTrainer, Normalization, TokenizerModel};
use transtok::toy::{generate_toy, ToyConfig, ToyData};
use transtok::training::{sub_seed, train_stage, Checkpoint, TrainConfig};
use transtok::transtokenizer::{coverage_report, init_embeddings, EmbeddingMatrix, FallbackMap, Provenance};

#[derive(Parser)]
#[command(name = "transtok", version, about = "Tokenizer transfer, encoder pretraining and evaluation at desk scale")]
struct Cli {
    /// Root seed; every stage derives its own named sub-seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic bilingual toy data set.
    GenToy(GenToyArgs),
    /// Train a BPE tokenizer on a corpus with one document per line.
    TrainTokenizer(TrainTokenizerArgs),
    /// Run IBM Model 1 and write token alignment counts.
    Align(AlignArgs),
    /// Initialize target embeddings from alignment counts and a source matrix.
    Transtokenize(TranstokenizeArgs),
    /// Two-stage masked-language-model pretraining.
    Pretrain(PretrainArgs),
    /// Masked-language-model loss and perplexity on held-out text.
    EvalMlm(EvalMlmArgs),
    /// Dense retrieval Recall@k and MRR.
    EvalRetrieval(EvalRetrievalArgs),
    /// Sentence classification accuracy and macro-F1 with a trained head.
    EvalClassify(EvalClassifyArgs),
    /// Entity-level NER precision, recall and F1 averaged over seeds.
    EvalNer(EvalNerArgs),
    /// Initialization ablation: transtokenized vs re-initialized vs random.
    Ablation(AblationArgs),
    /// MLM at short and long context plus attention allocation accounting.
    Longcontext(LongcontextArgs),
}

#[derive(Args)]
struct GenToyArgs {
    #[arg(long)]
    out: PathBuf,
    /// JSON file with toy generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct TrainTokenizerArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    vocab_size: usize,
    #[arg(long)]
    out: PathBuf,
    /// Fold Arabic letter variants and strip diacritics before training.
    #[arg(long)]
    arabic_normalization: bool,
}

#[derive(Args)]
struct AlignArgs {
    /// TSV of `target<TAB>source` sentence pairs.
    #[arg(long)]
    parallel: PathBuf,
    #[arg(long)]
    tgt_tokenizer: PathBuf,
    #[arg(long)]
    src_tokenizer: PathBuf,
    #[arg(long, default_value_t = 5)]
    iterations: usize,
    /// Output counts TSV (`target_id<TAB>source_id<TAB>count`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TranstokenizeArgs {
    #[arg(long)]
    counts: PathBuf,
    #[arg(long)]
    tgt_tokenizer: PathBuf,
    #[arg(long)]
    src_tokenizer: PathBuf,
    /// Source embeddings: an EMB1 matrix or an ENC1 model checkpoint.
    #[arg(long)]
    source_emb: PathBuf,
    /// Fallback TSV (`target_token<TAB>source_token`); defaults to specials, digits and punctuation.
    #[arg(long)]
    fallback: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PretrainArgs {
    /// Encoder config JSON; `vocab_size` is taken from the tokenizer.
    #[arg(long)]
    config: PathBuf,
    /// Training config JSON; defaults apply when omitted.
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
    /// Initial embeddings (EMB1) or `none`.
    #[arg(long, default_value = "none")]
    init_emb: String,
    /// Continue from a training checkpoint instead of a fresh model.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ModelArgs {
    /// ENC1 model or training checkpoint.
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    tokenizer: PathBuf,
}

#[derive(Args)]
struct EvalMlmArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Plain text, one document per line.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 128)]
    context_len: usize,
    #[arg(long)]
    max_chunks: Option<usize>,
    /// Output stem; `.json` and `.tsv` are written.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalRetrievalArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Directory holding `queries.tsv`, `documents.tsv` and `qrels.tsv`.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
    ks: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalClassifyArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Test TSV (`label<TAB>text` or `label<TAB>text_a<TAB>text_b`).
    #[arg(long)]
    data: PathBuf,
    /// Training TSV for the classification head.
    #[arg(long)]
    train: PathBuf,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalNerArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Test file, CoNLL-style `token tag` lines.
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    #[arg(long, default_value_t = 3)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Ablation settings file: toy data parameters and the experiment itself.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct PipelineConfig {
    toy: ToyConfig,
    ablation: AblationConfig,
    /// Existing toy data directory (from `gen-toy`); generated when absent.
    data_dir: Option<PathBuf>,
}

#[derive(Args)]
struct AblationArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Toy data directory written by `gen-toy`; overrides the config.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct LongcontextArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 128)]
    short: usize,
    #[arg(long, default_value_t = 1024)]
    long: usize,
    #[arg(long)]
    max_chunks: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "256,512,1024,2048")]
    alloc: Vec<usize>,
    #[arg(long)]
    out: PathBuf,
}

fn require(paths: &[&Path]) -> Result<(), PipelineError> {
    for p in paths {
        if !p.exists() {
            return Err(PipelineError { stage: "validate-paths".into(), message: format!("{} does not exist", p.display()) });
        }
    }
    Ok(())
}

fn read_lines(path: &Path, stage: &str) -> Result<Vec<String>, PipelineError> {
    let text = fs::read_to_string(path).stage(stage)?;
    Ok(text.lines().filter(|l| !l.trim().is_empty()).map(str::to_string).collect())
}

fn load_json<T: serde::de::DeserializeOwned>(path: &Path, stage: &str) -> Result<T, PipelineError> {
    let text = fs::read_to_string(path).stage(stage)?;
    serde_json::from_str(&text).with_context(|| path.display().to_string()).stage(stage)
}

fn write(path: &Path, contents: impl AsRef<[u8]>, stage: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).stage(stage)?;
    }
    fs::write(path, contents).with_context(|| path.display().to_string()).stage(stage)
}

fn load_model(args: &ModelArgs) -> Result<(EncoderModel, TokenizerModel), PipelineError> {
    require(&[&args.model, &args.tokenizer])?;
    let tok = TokenizerModel::load(&args.tokenizer).stage("load-tokenizer")?;
    let model = EncoderModel::load(&args.model).stage("load-model")?;
    if model.config().vocab_size != tok.vocab_size() {
        return Err(PipelineError {
            stage: "load-model".into(),
            message: format!("model vocabulary {} does not match tokenizer vocabulary {}", model.config().vocab_size, tok.vocab_size()),
        });
    }
    Ok((model, tok))
}

/// Reads an EMB1 matrix, or the embedding table of an ENC1 model.
fn load_source_embeddings(path: &Path) -> Result<EmbeddingMatrix, PipelineError> {
    let bytes = fs::read(path).stage("load-source-embeddings")?;
    if bytes.starts_with(b"ENC1") {
        let model = EncoderModel::from_bytes(&bytes).stage("load-source-embeddings")?;
        EmbeddingMatrix::from_tensor(model.embeddings(), Provenance::RandomBackoff).stage("load-source-embeddings")
    } else {
        EmbeddingMatrix::from_bytes(&bytes).stage("load-source-embeddings")
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let seed = cli.seed;
    match cli.command {
        Command::GenToy(a) => {
            let mut cfg: ToyConfig = match &a.config {
                Some(p) => {
                    require(&[p])?;
                    load_json(p, "gen-toy")?
                }
                None => ToyConfig::default(),
            };
            cfg.seed = sub_seed(seed, 1, 0, 0);
            generate_toy(&cfg).save(&a.out).stage("gen-toy")?;
            log::info!("toy data written to {}", a.out.display());
        }
        Command::TrainTokenizer(a) => {
            require(&[&a.corpus])?;
            let docs = read_lines(&a.corpus, "train-tokenizer")?;
            let mut trainer = BpeTrainer::new(a.vocab_size);
            if a.arabic_normalization {
                trainer.normalization = Normalization::Arabic;
            }
            let trained = train_bpe(&docs, &trainer).stage("train-tokenizer")?;
            let fert = fertility(&trained.model, &docs).stage("train-tokenizer")?;
            log::info!("vocabulary {} tokens, fertility {:.3}", trained.model.vocab_size(), fert.ratio);
            trained.model.save(&a.out).stage("train-tokenizer")?;
        }
        Command::Align(a) => {
            require(&[&a.parallel, &a.tgt_tokenizer, &a.src_tokenizer])?;
            let corpus = ParallelCorpus::load(&a.parallel).stage("align")?;
            let tgt = TokenizerModel::load(&a.tgt_tokenizer).stage("align")?;
            let src = TokenizerModel::load(&a.src_tokenizer).stage("align")?;
            let ibm = train_ibm1(&corpus, &tgt, &src, a.iterations).stage("align")?;
            for (i, ll) in ibm.log_likelihood.iter().enumerate() {
                log::info!("EM iteration {i}: log-likelihood {ll:.6}");
            }
            let counts = extract_counts(&ibm.table, &corpus, &tgt, &src).stage("align")?;
            counts.save(&a.out).stage("align")?;
        }
        Command::Transtokenize(a) => {
            require(&[&a.counts, &a.tgt_tokenizer, &a.src_tokenizer, &a.source_emb])?;
            if let Some(f) = &a.fallback {
                require(&[f])?;
            }
            let tgt = TokenizerModel::load(&a.tgt_tokenizer).stage("transtokenize")?;
            let src = TokenizerModel::load(&a.src_tokenizer).stage("transtokenize")?;
            let counts = AlignmentTable::load(&a.counts, tgt.vocab_size(), src.vocab_size()).stage("transtokenize")?;
            let src_emb = load_source_embeddings(&a.source_emb)?;
            let fallback = match &a.fallback {
                Some(f) => FallbackMap::load(f).stage("transtokenize")?,
                None => FallbackMap::default_for(&tgt, &src),
            };
            let emb = init_embeddings(&counts, &src_emb, &fallback, &tgt, &src, sub_seed(seed, 3, 0, 0)).stage("transtokenize")?;
            let cov = coverage_report(&emb, Some(&tgt));
            log::info!("coverage: {:?}", cov.counts);
            emb.save(&a.out).stage("transtokenize")?;
            let report = serde_json::to_string_pretty(&cov).stage("transtokenize")?;
            write(&a.out.with_extension("coverage.json"), report, "transtokenize")?;
        }
        Command::Pretrain(a) => {
            let init = (a.init_emb != "none").then(|| PathBuf::from(&a.init_emb));
            let mut paths: Vec<&Path> = vec![&a.config, &a.corpus, &a.tokenizer];
            paths.extend(a.train_config.as_deref());
            paths.extend(init.as_deref());
            paths.extend(a.resume.as_deref());
            require(&paths)?;
            let tok = TokenizerModel::load(&a.tokenizer).stage("pretrain")?;
            let mut enc: EncoderConfig = load_json(&a.config, "pretrain")?;
            if enc.vocab_size != tok.vocab_size() {
                log::warn!("config vocab_size {} replaced by tokenizer size {}", enc.vocab_size, tok.vocab_size());
                enc.vocab_size = tok.vocab_size();
            }
            let mut train: TrainConfig = match &a.train_config {
                Some(p) => load_json(p, "pretrain")?,
                None => TrainConfig::default(),
            };
            train.seed = sub_seed(seed, 4, 0, 0);
            let docs = read_lines(&a.corpus, "pretrain")?;
            let stream = token_stream(&tok, &docs);
            let vocab = mask_vocab(&tok);
            let ckpt = match &a.resume {
                Some(p) => Checkpoint::load(p).stage("pretrain")?,
                None => {
                    let emb = init.as_deref().map(EmbeddingMatrix::load).transpose().stage("pretrain")?;
                    let model = build_model(&enc, emb.as_ref(), sub_seed(seed, 5, 0, 0)).stage("pretrain")?;
                    Checkpoint::new(model, &train)
                }
            };
            fs::create_dir_all(&a.out).stage("pretrain")?;
            let ckpt = train_stage(ckpt, &stream, &train, train.stage(1), &vocab).stage("pretrain-stage1")?;
            ckpt.save(&a.out.join("stage1.enc")).stage("pretrain")?;
            let ckpt = train_stage(ckpt, &stream, &train, train.stage(2), &vocab).stage("pretrain-stage2")?;
            ckpt.save(&a.out.join("model.enc")).stage("pretrain")?;
            write(&a.out.join("losses.tsv"), ckpt.losses_tsv(), "pretrain")?;
            log::info!("final loss {:?}", ckpt.losses.last().map(|r| r.loss));
        }
        Command::EvalMlm(a) => {
            require(&[&a.data])?;
            let (model, tok) = load_model(&a.model)?;
            let docs = read_lines(&a.data, "eval-mlm")?;
            let cfg = MlmEvalConfig { max_chunks: a.max_chunks, ..MlmEvalConfig::new(a.context_len, sub_seed(seed, 6, 0, 0)) };
            let ev = eval_mlm(&model, &token_stream(&tok, &docs), &mask_vocab(&tok), &cfg).stage("eval-mlm")?;
            ev.report(a.context_len, seed).save(&a.out).stage("eval-mlm")?;
            println!("loss {:.4} perplexity {:.2}", ev.loss, ev.perplexity);
        }
        Command::EvalRetrieval(a) => {
            let files = ["queries.tsv", "documents.tsv", "qrels.tsv"].map(|f| a.data.join(f));
            require(&[&files[0], &files[1], &files[2]])?;
            let (model, tok) = load_model(&a.model)?;
            let [q, d, r] = files.map(|f| fs::read_to_string(f).map_err(anyhow::Error::from).and_then(|t| Ok(parse_pairs_tsv(&t)?)));
            let report = retrieval_eval(&model, &tok, &q.stage("eval-retrieval")?, &d.stage("eval-retrieval")?, &r.stage("eval-retrieval")?, &a.ks)
                .stage("eval-retrieval")?;
            report.save(&a.out).stage("eval-retrieval")?;
            print!("{}", report.to_tsv());
        }
        Command::EvalClassify(a) => {
            require(&[&a.data, &a.train])?;
            let (model, tok) = load_model(&a.model)?;
            let parse = |p: &Path| fs::read_to_string(p).map_err(anyhow::Error::from).and_then(|t| Ok(parse_classification_tsv(&t)?));
            let train = parse(&a.train).stage("eval-classify")?;
            let test = parse(&a.data).stage("eval-classify")?;
            let ft = FinetuneConfig { epochs: a.epochs, learning_rate: a.lr, ..Default::default() };
            let report = classify_eval(&model, &tok, &train, &test, &ft, sub_seed(seed, 7, 0, 0)).stage("eval-classify")?;
            report.save(&a.out).stage("eval-classify")?;
            print!("{}", report.to_tsv());
        }
        Command::EvalNer(a) => {
            require(&[&a.data, &a.train])?;
            let (model, tok) = load_model(&a.model)?;
            let parse = |p: &Path| fs::read_to_string(p).map_err(anyhow::Error::from).and_then(|t| Ok(parse_conll(&t)?));
            let train = parse(&a.train).stage("eval-ner")?;
            let test = parse(&a.data).stage("eval-ner")?;
            let ft = FinetuneConfig { epochs: a.epochs, learning_rate: a.lr, ..Default::default() };
            let report = ner_eval(&model, &tok, &train, &test, &a.seeds, &ft).stage("eval-ner")?;
            report.save(&a.out).stage("eval-ner")?;
            print!("{}", report.to_tsv());
        }
        Command::Ablation(a) => {
            let mut cfg: PipelineConfig = match &a.config {
                Some(p) => {
                    require(&[p])?;
                    load_json(p, "ablation-config")?
                }
                None => PipelineConfig::default(),
            };
            if a.data.is_some() {
                cfg.data_dir = a.data.clone();
            }
            if let Some(d) = &cfg.data_dir {
                require(&[&d.join("source.txt"), &d.join("target.txt"), &d.join("parallel.tsv"), &d.join("dictionary.tsv")])?;
            }
            let data = match &cfg.data_dir {
                Some(d) => load_toy(d)?,
                None => {
                    cfg.toy.seed = sub_seed(seed, 1, 0, 0);
                    generate_toy(&cfg.toy)
                }
            };
            let mut ab = cfg.ablation.clone();
            ab.seed = sub_seed(seed, 8, 0, 0);
            ab.source_train.seed = sub_seed(seed, 9, 0, 0);
            ab.target_train.seed = sub_seed(seed, 10, 0, 0);
            let result = run_ablation(&data, &ab)?;
            fs::create_dir_all(&a.out).stage("ablation")?;
            write(&a.out.join("ablation.tsv"), result.table(), "ablation")?;
            for (r, name) in result.reports.iter().zip(["transtokenized", "reinit", "random"]) {
                r.save(&a.out.join(format!("mlm_{name}"))).stage("ablation")?;
            }
            result.target_tokenizer.save(&a.out.join("target_tokenizer.json")).stage("ablation")?;
            result.checkpoints[0].model.save(&a.out.join("transtokenized.enc")).stage("ablation")?;
            print!("{}", result.table());
        }
        Command::Longcontext(a) => {
            require(&[&a.data])?;
            let (model, tok) = load_model(&a.model)?;
            let docs = read_lines(&a.data, "longcontext")?;
            let (_, held) = split_held_out(&docs, 0.05);
            let stream = token_stream(&tok, &held);
            let result =
                run_longcontext(&model, &stream, &mask_vocab(&tok), a.short, a.long, a.max_chunks, &a.alloc, sub_seed(seed, 11, 0, 0))?;
            fs::create_dir_all(&a.out).stage("longcontext")?;
            write(&a.out.join("longcontext.tsv"), result.table(), "longcontext")?;
            for r in &result.reports {
                r.save(&a.out.join(format!("mlm_{}", r.context_len.unwrap_or(0)))).stage("longcontext")?;
            }
            print!("{}", result.table());
            println!("local allocation linearity ratio {:.4}", result.linearity);
        }
    }
    Ok(())
}

fn load_toy(dir: &Path) -> Result<ToyData, PipelineError> {
    let dict_text = fs::read_to_string(dir.join("dictionary.tsv")).stage("load-toy")?;
    let dictionary = parse_pairs_tsv(&dict_text).stage("load-toy")?;
    Ok(ToyData {
        source_corpus: read_lines(&dir.join("source.txt"), "load-toy")?,
        target_corpus: read_lines(&dir.join("target.txt"), "load-toy")?,
        parallel: ParallelCorpus::load(&dir.join("parallel.tsv")).stage("load-toy")?,
        dictionary,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
