//! End-to-end tests of the `ember` binary: the quickstart chain, exit codes,
//! determinism and the machine-readable artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn ember() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ember"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawning the ember binary")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

struct Workspace {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        Workspace { dir, root }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn synth(&self, n: usize, seed: u64) -> PathBuf {
        let data = self.path("data");
        let out = run(ember()
            .args([
                "synth",
                "--n",
                &n.to_string(),
                "--seed",
                &seed.to_string(),
                "--out",
            ])
            .arg(&data));
        assert_success(&out, "synth");
        data
    }

    fn write_tiny_config(&self) -> PathBuf {
        let path = self.path("tiny.conf");
        fs::write(
            &path,
            "h = 6\nk = 4\nlr = 0.002\nbatch_size = 8\nmax_epochs = 3\nseed = 7\n",
        )
        .unwrap();
        path
    }

    fn train(&self, data: &Path, out_name: &str, config: &Path, extra: &[&str]) -> PathBuf {
        let out_dir = self.path(out_name);
        let output = run(ember()
            .args(["train", "--corpus"])
            .arg(data.join("corpus.jsonl"))
            .arg("--embeddings")
            .arg(data.join("embeddings.txt"))
            .arg("--features")
            .arg(data.join("features.tsv"))
            .arg("--config")
            .arg(config)
            .arg("--out")
            .arg(&out_dir)
            .args(extra));
        assert_success(&output, "train");
        out_dir
    }
}

#[test]
fn quickstart_chain_runs_end_to_end() {
    let ws = Workspace::new();
    let data = ws.synth(60, 7);
    for artifact in [
        "corpus.jsonl",
        "embeddings.txt",
        "features.tsv",
        "synth.manifest.json",
    ] {
        assert!(data.join(artifact).exists(), "missing {artifact}");
    }

    let config = ws.write_tiny_config();
    let run_dir = ws.train(&data, "run", &config, &[]);
    assert!(run_dir.join("checkpoint.ember").exists());
    assert!(run_dir.join("train_log.jsonl").exists());
    assert!(run_dir.join("train.manifest.json").exists());

    // The training log is one JSON record per epoch.
    let log = fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    let epochs = log.lines().count();
    assert_eq!(epochs, 3);
    for line in log.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(record["epoch"].is_u64());
        assert!(record["train_loss"].is_f64());
        assert!(record["val_loss"].is_f64());
        assert!(record["val_acc"].is_f64());
    }

    // Evaluate on the validation split and dump attention diagnostics.
    let report_path = ws.path("report.json");
    let attn_path = ws.path("attn.jsonl");
    let out = run(ember()
        .args(["eval", "--checkpoint"])
        .arg(run_dir.join("checkpoint.ember"))
        .arg("--corpus")
        .arg(data.join("corpus.jsonl"))
        .arg("--embeddings")
        .arg(data.join("embeddings.txt"))
        .arg("--features")
        .arg(data.join("features.tsv"))
        .args(["--split", "val", "--out"])
        .arg(&report_path)
        .arg("--dump-attention")
        .arg(&attn_path));
    assert_success(&out, "eval");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&report_path).unwrap()).unwrap();
    assert!(report["accuracy"].is_f64());
    assert_eq!(report["averaging"], "weighted");
    assert!(ws.path("report.manifest.json").exists());

    let attn = fs::read_to_string(&attn_path).unwrap();
    assert_eq!(attn.lines().count(), 6, "one dump line per val item");
    let first: serde_json::Value = serde_json::from_str(attn.lines().next().unwrap()).unwrap();
    assert_eq!(
        first["pairs"].as_array().unwrap().len(),
        6,
        "six pairs per item"
    );
    assert!(first["pairs"][0]["affinity"].is_array());

    // Export: one row per item, id + label + aggregated vector.
    let export_path = ws.path("embeddings_out.tsv");
    let out = run(ember()
        .args(["export-embeddings", "--checkpoint"])
        .arg(run_dir.join("checkpoint.ember"))
        .arg("--corpus")
        .arg(data.join("corpus.jsonl"))
        .arg("--embeddings")
        .arg(data.join("embeddings.txt"))
        .arg("--features")
        .arg(data.join("features.tsv"))
        .arg("--out")
        .arg(&export_path));
    assert_success(&out, "export-embeddings");
    let exported = fs::read_to_string(&export_path).unwrap();
    assert_eq!(exported.lines().count(), 60);
    let fields = exported.lines().next().unwrap().split('\t').count();
    // h = 6 so the aggregated vector is 4h = 24 wide.
    assert_eq!(fields, 24 + 2, "row width is |vector| + id + label");

    // Recomputation oracle: exported rows match an in-process forward pass
    // to 32-bit precision.
    let (header, store) =
        ember_core::model::load_checkpoint(run_dir.join("checkpoint.ember")).unwrap();
    let table = ember_core::data::load_embeddings(data.join("embeddings.txt"), 32).unwrap();
    let items = ember_core::data::load_corpus(data.join("corpus.jsonl")).unwrap();
    let features = ember_core::forensics::load_image_features(data.join("features.tsv")).unwrap();
    let prepared = ember_core::model::prepare_corpus(&items, &table, header.config.seed).unwrap();
    for line in exported.lines().take(5) {
        let mut parts = line.split('\t');
        let id = parts.next().unwrap();
        let _label = parts.next().unwrap();
        let values: Vec<f64> = parts.map(|v| v.parse().unwrap()).collect();
        let item = prepared.encoded.iter().find(|i| i.id == id).unwrap();
        let fresh = ember_core::model::run_item(
            &header.architecture,
            &store,
            item,
            &table,
            &features,
            false,
        )
        .unwrap();
        for (exported_v, live_v) in values.iter().zip(&fresh.fea_gru) {
            assert!(
                (exported_v - live_v).abs() < 1e-6,
                "exported {exported_v} vs live {live_v} for {id}"
            );
        }
    }
}

#[test]
fn ablate_reproduces_the_standard_variant_rows() {
    let ws = Workspace::new();
    let data = ws.synth(40, 17);
    let config = ws.write_tiny_config();

    // The eight standard variants: one per dropped component, the ELA and
    // aggregator substitutions.
    let eight = [
        "drop_component:H",
        "drop_component:I",
        "drop_component:C",
        "drop_component:B",
        "drop_ela",
        "drop_gru",
        "agg_attention",
        "agg_bigru",
    ];
    let variants = ws.path("variants8.txt");
    fs::write(&variants, eight.join("\n") + "\n").unwrap();
    let out_dir = ws.path("ablation8");
    let out = run(ember()
        .args(["ablate", "--corpus"])
        .arg(data.join("corpus.jsonl"))
        .arg("--embeddings")
        .arg(data.join("embeddings.txt"))
        .arg("--features")
        .arg(data.join("features.tsv"))
        .arg("--variants")
        .arg(&variants)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir));
    assert_success(&out, "ablate eight variants");
    let table = fs::read_to_string(out_dir.join("ablation.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 10, "header + full + eight variant rows");
    assert!(rows[1].starts_with("full\t"));
    for (row, tag) in rows[2..].iter().zip(eight) {
        assert!(
            row.starts_with(&format!("{tag}\t")),
            "row {row} vs tag {tag}"
        );
    }

    // Four-component reorderings: the on-model order plus four alternatives
    // keeps five rows, in the listed order.
    let reorders = [
        "reorder:HB,IB,CB,HI,HC,IC",
        "reorder:IC,HI,HC,HB,IB,CB",
        "reorder:HI,HC,IC,CB,IB,HB",
        "reorder:HI,HC,IC,IB,HB,CB",
    ];
    let variants = ws.path("variants_order.txt");
    fs::write(&variants, reorders.join("\n") + "\n").unwrap();
    let out_dir = ws.path("ablation_order");
    let out = run(ember()
        .args(["ablate", "--corpus"])
        .arg(data.join("corpus.jsonl"))
        .arg("--embeddings")
        .arg(data.join("embeddings.txt"))
        .arg("--features")
        .arg(data.join("features.tsv"))
        .arg("--variants")
        .arg(&variants)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir));
    assert_success(&out, "ablate reorders");
    let table = fs::read_to_string(out_dir.join("ablation.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 6, "header + full + four reorder rows");
    for (row, tag) in rows[2..].iter().zip(reorders) {
        assert!(
            row.starts_with(&format!("{tag}\t")),
            "row {row} vs tag {tag}"
        );
    }
}

#[test]
fn same_seed_produces_identical_checkpoints() {
    let ws = Workspace::new();
    let data = ws.synth(40, 3);
    let config = ws.write_tiny_config();
    let a = ws.train(&data, "a", &config, &["--seed", "7"]);
    let b = ws.train(&data, "b", &config, &["--seed", "7"]);
    let bytes_a = fs::read(a.join("checkpoint.ember")).unwrap();
    let bytes_b = fs::read(b.join("checkpoint.ember")).unwrap();
    assert_eq!(bytes_a, bytes_b, "same seed, same checkpoint bytes");

    let c = ws.train(&data, "c", &config, &["--seed", "8"]);
    let bytes_c = fs::read(c.join("checkpoint.ember")).unwrap();
    assert_ne!(bytes_a, bytes_c, "different seed, different parameters");
}

#[test]
fn thread_cap_does_not_change_results() {
    let ws = Workspace::new();
    let data = ws.synth(40, 9);
    let config = ws.write_tiny_config();
    let run_dir = ws.train(&data, "run", &config, &[]);

    let mut reports = Vec::new();
    for threads in ["1", "3"] {
        let report_path = ws.path(&format!("report_{threads}.json"));
        let out = run(ember()
            .env("EMBER_THREADS", threads)
            .args(["eval", "--checkpoint"])
            .arg(run_dir.join("checkpoint.ember"))
            .arg("--corpus")
            .arg(data.join("corpus.jsonl"))
            .arg("--embeddings")
            .arg(data.join("embeddings.txt"))
            .arg("--features")
            .arg(data.join("features.tsv"))
            .args(["--split", "test", "--out"])
            .arg(&report_path));
        assert_success(&out, "eval under EMBER_THREADS");
        reports.push(fs::read(&report_path).unwrap());
    }
    assert_eq!(
        reports[0], reports[1],
        "worker count must not leak into results"
    );
}

#[test]
fn missing_embeddings_file_exits_two_and_names_it() {
    let ws = Workspace::new();
    let data = ws.synth(40, 5);
    let out = run(ember()
        .args(["train", "--corpus"])
        .arg(data.join("corpus.jsonl"))
        .args(["--embeddings", "no_such_embeddings.txt"])
        .arg("--features")
        .arg(data.join("features.tsv"))
        .arg("--out")
        .arg(ws.path("x")));
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(
        stderr.contains("no_such_embeddings.txt"),
        "stderr: {stderr}"
    );
    assert!(
        stderr.lines().count() == 1,
        "single-line machine-parsable error"
    );
}

#[test]
fn gradcheck_zero_samples_is_a_usage_error() {
    let out = run(ember().args(["gradcheck", "--samples", "0"]));
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_fault_injection_fails_with_the_path() {
    let out = run(ember().args(["gradcheck", "--samples", "8", "--seed", "3"]));
    assert_success(&out, "gradcheck");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("gradcheck: PASS"));
    assert_eq!(
        stdout.matches("PASS").count(),
        13,
        "12 module lines plus the summary"
    );

    let out = run(ember()
        .env("EMBER_GRADCHECK_CORRUPT", "aggregator.gru.w_xz")
        .args(["gradcheck", "--samples", "64", "--seed", "3"]));
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("FAIL"), "stdout: {stdout}");
    assert!(
        stdout.contains("aggregator.gru.w_xz"),
        "failing path must be named"
    );
}

#[test]
fn ablate_with_empty_variants_file_reports_only_the_full_row() {
    let ws = Workspace::new();
    let data = ws.synth(40, 13);
    let config = ws.write_tiny_config();
    let variants = ws.path("variants.txt");
    fs::write(&variants, "# nothing here\n").unwrap();
    let out_dir = ws.path("ablation");
    let out = run(ember()
        .args(["ablate", "--corpus"])
        .arg(data.join("corpus.jsonl"))
        .arg("--embeddings")
        .arg(data.join("embeddings.txt"))
        .arg("--features")
        .arg(data.join("features.tsv"))
        .arg("--variants")
        .arg(&variants)
        .arg("--config")
        .arg(&config)
        .arg("--out")
        .arg(&out_dir));
    assert_success(&out, "ablate");
    let table = fs::read_to_string(out_dir.join("ablation.tsv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 2, "header plus the full row only");
    assert!(rows[1].starts_with("full\t"));
}

#[test]
fn ela_writes_heatmap_report_and_feature_row() {
    use image::codecs::jpeg::JpegEncoder;

    let ws = Workspace::new();
    // A small textured JPEG fixture.
    let img = image::RgbImage::from_fn(64, 64, |x, y| {
        image::Rgb([
            ((x * 3 + y) % 251) as u8,
            ((x * 7) % 213) as u8,
            ((y * 11) % 241) as u8,
        ])
    });
    let input = ws.path("fixture.jpg");
    let mut bytes = Vec::new();
    let encoder = JpegEncoder::new_with_quality(&mut bytes, 90);
    img.write_with_encoder(encoder).unwrap();
    fs::write(&input, bytes).unwrap();

    let output = ws.path("heatmap.png");
    let features = ws.path("img_features.tsv");
    let out = run(ember()
        .arg("ela")
        .arg(&input)
        .arg(&output)
        .args([
            "--r",
            "0.3",
            "--feature-width",
            "16",
            "--feature-id",
            "fix1",
            "--append-features",
        ])
        .arg(&features));
    assert_success(&out, "ela");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("mean magnitude"), "stdout: {stdout}");
    assert!(output.exists());
    assert!(ws.path("heatmap.manifest.json").exists());

    let table = fs::read_to_string(&features).unwrap();
    assert!(table.starts_with("width 16\ncount 1\n"));
    assert!(table.contains("fix1 "));

    // The heatmap is a decodable grayscale image of the same size.
    let heatmap = image::open(&output).unwrap();
    assert_eq!(heatmap.width(), 64);
    assert_eq!(heatmap.height(), 64);
}
