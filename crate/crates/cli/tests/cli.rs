use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn transtok(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_transtok"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = transtok(args, dir);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

const ENCODER: &str = r#"{"hidden":16,"layers":3,"heads":2,"intermediate":24,"vocab_size":0,
 "max_context":256,"global_every":3,"local_window":8,"rope_theta_global":160000.0,
 "rope_theta_local":10000.0,"mask_rate":0.3}"#;
const TRAIN: &str = r#"{"batch_size":2,"stage1_steps":4,"stage2_steps":2,"stage1_context":16,"stage2_context":64}"#;
const TOY: &str = r#"{"dictionary_pairs":600,"source_bytes":20000,"target_bytes":20000}"#;

#[test]
fn full_stage_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("enc.json"), ENCODER).unwrap();
    fs::write(d.join("train.json"), TRAIN).unwrap();
    fs::write(d.join("toy.json"), TOY).unwrap();

    ok(&["gen-toy", "--out", "toy", "--config", "toy.json"], d);
    for f in ["source.txt", "target.txt", "parallel.tsv", "dictionary.tsv"] {
        assert!(d.join("toy").join(f).exists(), "{f}");
    }
    ok(&["train-tokenizer", "--corpus", "toy/source.txt", "--vocab-size", "2000", "--out", "src_tok.json"], d);
    ok(&["train-tokenizer", "--corpus", "toy/target.txt", "--vocab-size", "2000", "--out", "tgt_tok.json"], d);
    let tok: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("tgt_tok.json")).unwrap()).unwrap();
    assert!(tok["vocab"].is_object() && tok["merges"].is_array() && tok["special_tokens"].is_object());

    let src_pre = ["pretrain", "--config", "enc.json", "--train-config", "train.json", "--corpus", "toy/source.txt"];
    ok(&[&src_pre[..], &["--tokenizer", "src_tok.json", "--out", "src_model"]].concat(), d);
    let losses = fs::read_to_string(d.join("src_model/losses.tsv")).unwrap();
    assert_eq!(losses.lines().next(), Some("step\tstage\tloss"));
    assert_eq!(losses.lines().count(), 1 + 6);

    ok(&["align", "--parallel", "toy/parallel.tsv", "--tgt-tokenizer", "tgt_tok.json", "--src-tokenizer", "src_tok.json", "--out", "counts.tsv"], d);
    ok(
        &[
            "transtokenize", "--counts", "counts.tsv", "--tgt-tokenizer", "tgt_tok.json", "--src-tokenizer", "src_tok.json",
            "--source-emb", "src_model/model.enc", "--out", "tgt.emb",
        ],
        d,
    );
    let cov: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("tgt.coverage.json")).unwrap()).unwrap();
    assert!(cov["counts"]["aligned"].as_u64().unwrap() > 0);

    let tgt_pre = ["pretrain", "--config", "enc.json", "--train-config", "train.json", "--corpus", "toy/target.txt"];
    ok(&[&tgt_pre[..], &["--tokenizer", "tgt_tok.json", "--init-emb", "tgt.emb", "--out", "tgt_model"]].concat(), d);

    let model = ["--model", "tgt_model/model.enc", "--tokenizer", "tgt_tok.json"];
    let out = ok(&[&["eval-mlm"][..], &model, &["--data", "toy/target.txt", "--context-len", "32", "--max-chunks", "4", "--out", "mlm"]].concat(), d);
    assert!(out.starts_with("loss "));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("mlm.json")).unwrap()).unwrap();
    let (loss, ppl) = (report["metrics"]["loss"].as_f64().unwrap(), report["metrics"]["perplexity"].as_f64().unwrap());
    assert_eq!(ppl, loss.exp());

    let out = ok(
        &[&["longcontext"][..], &model, &["--data", "toy/target.txt", "--short", "16", "--long", "128", "--max-chunks", "2", "--alloc", "64,128,256", "--out", "lc"]]
            .concat(),
        d,
    );
    assert!(out.contains("16 tokens") && out.contains("128 tokens"));

    // downstream formats over target-language words
    let words: Vec<String> = fs::read_to_string(d.join("toy/dictionary.tsv")).unwrap().lines().map(|l| l.split('\t').next().unwrap().to_string()).collect();
    let cls: String = (0..24).map(|i| format!("{}\t{} {}\n", i % 2, words[i % 2], words[10 + i])).collect();
    fs::write(d.join("cls.tsv"), &cls).unwrap();
    let out = ok(&[&["eval-classify"][..], &model, &["--data", "cls.tsv", "--train", "cls.tsv", "--out", "cls"]].concat(), d);
    assert!(out.contains("accuracy") && out.contains("macro_f1"));

    let ner: String = (0..6).map(|i| format!("{} B-PER\n{} O\n{} B-LOC\n\n", words[20 + i], words[i], words[30 + i])).collect();
    fs::write(d.join("ner.txt"), &ner).unwrap();
    let out = ok(&[&["eval-ner"][..], &model, &["--data", "ner.txt", "--train", "ner.txt", "--seeds", "1,2", "--out", "ner"]].concat(), d);
    assert!(out.contains("\tf1\t"));

    fs::create_dir_all(d.join("ret")).unwrap();
    fs::write(d.join("ret/queries.tsv"), format!("q1\t{}\nq2\t{}\n", words[40], words[41])).unwrap();
    fs::write(d.join("ret/documents.tsv"), format!("d1\t{} {}\nd2\t{} {}\n", words[40], words[50], words[41], words[51])).unwrap();
    fs::write(d.join("ret/qrels.tsv"), "q1\td1\nq2\td2\n").unwrap();
    let out = ok(&[&["eval-retrieval"][..], &model, &["--data", "ret", "--ks", "1,5", "--out", "ret_report"]].concat(), d);
    assert!(out.contains("recall@1") && out.contains("mrr"));
}

#[test]
fn failures_exit_nonzero_and_name_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = transtok(&["train-tokenizer", "--corpus", "missing.txt", "--vocab-size", "50", "--out", "t.json"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage validate-paths failed"));

    fs::write(d.join("c.txt"), "abc abd\n").unwrap();
    let out = transtok(&["train-tokenizer", "--corpus", "c.txt", "--vocab-size", "3", "--out", "t.json"], d);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("stage train-tokenizer failed"));
}

#[test]
fn help_lists_every_stage() {
    let out = ok(&["--help"], Path::new("."));
    for cmd in ["gen-toy", "train-tokenizer", "align", "transtokenize", "pretrain", "eval-mlm", "eval-retrieval", "eval-classify", "eval-ner", "ablation", "longcontext"] {
        assert!(out.contains(cmd), "{cmd}");
    }
}
