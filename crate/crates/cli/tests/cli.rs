use std::collections::BTreeSet;
use std::path::Path;
use std::process::{Command, Output};

use relgraph::checkpoint::load_checkpoint;
use relgraph::scene::load_scene;
use relgraph::train::{build_structure, Mode};
use tempfile::TempDir;

fn relgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_relgraph"))
        .args(args)
        .env("RELGRAPH_THREADS", "2")
        .output()
        .expect("spawn relgraph")
}

fn ok(args: &[&str]) -> Output {
    let out = relgraph(args);
    assert!(
        out.status.success(),
        "relgraph {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

const SMALL: &[&str] = &["--clusters-per-class", "2", "--regions-per-cluster", "4", "--feature-dim", "8"];

fn generate(dir: &Path, scenes: &str, seed: &str) {
    let mut args = vec!["generate", "--out", p(dir), "--scenes", scenes, "--seed", seed];
    args.extend_from_slice(SMALL);
    ok(&args);
}

fn quick_train(train: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec![
        "train", "--train", p(train), "--out", p(out), "--k", "4", "--iterations", "30", "--batch-size", "4",
        "--log-every", "10",
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn generate_writes_named_files_and_manifest() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("s");
    generate(&dir, "10", "7");
    let names: BTreeSet<String> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    let mut expected: BTreeSet<String> = (7..17).map(|s| format!("scene_{s}.jsonl")).collect();
    expected.insert("manifest.json".into());
    assert_eq!(names, expected);
    let m: serde_json::Value = serde_json::from_slice(&read(&dir.join("manifest.json"))).unwrap();
    assert_eq!(m["command"], "generate");
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seeds"].as_array().unwrap().len(), 10);
    assert_eq!(load_scene(dir.join("scene_9.jsonl")).unwrap().seed, 9);
}

#[test]
fn generate_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    generate(&a, "4", "3");
    generate(&b, "4", "3");
    for s in 3..7 {
        let name = format!("scene_{s}.jsonl");
        assert_eq!(read(&a.join(&name)), read(&b.join(&name)), "{name}");
    }
}

#[test]
fn unwritable_output_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    let blocker = tmp.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let target = blocker.join("sub");
    let out = relgraph(&["generate", "--out", p(&target), "--scenes", "3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!target.exists());
}

#[test]
fn missing_scenes_and_bad_flags_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let out = relgraph(&["train", "--train", p(&empty), "--out", p(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(2));
    let out = relgraph(&["train", "--train", p(&empty), "--out", "x", "--mode", "bogus"]);
    assert_eq!(out.status.code(), Some(2));
    let out = Command::new(env!("CARGO_BIN_EXE_relgraph"))
        .args(["generate", "--out", p(&tmp.path().join("g")), "--scenes", "1"])
        .env("RELGRAPH_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_with_one() {
    let tmp = TempDir::new().unwrap();
    let scenes = tmp.path().join("s");
    generate(&scenes, "4", "0");
    let out = relgraph(&[
        "train", "--train", p(&scenes), "--out", p(&tmp.path().join("o")), "--k", "4", "--iterations", "50",
        "--batch-size", "4", "--lr", "1e200",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_outputs_and_grad_check() {
    let tmp = TempDir::new().unwrap();
    let scenes = tmp.path().join("s");
    generate(&scenes, "6", "0");
    let out = tmp.path().join("run");
    quick_train(&scenes, &out, &["--grad-check", "--grad-check-regions", "12"]);
    let csv = String::from_utf8(read(&out.join("metrics.csv"))).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(
        lines[0],
        "mode,seed,iter,loss,acc_overall,acc_ambiguous,acc_class_0,acc_class_1,acc_class_2,acc_class_3"
    );
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("full,0,0,"));
    let summary: serde_json::Value = serde_json::from_slice(&read(&out.join("summary.json"))).unwrap();
    assert_eq!(summary["grad_check"]["passed"], true);
    assert!(summary["train"]["acc_overall"].as_f64().unwrap() >= 0.25);
    let (params, model) = load_checkpoint(out.join("checkpoint.json")).unwrap();
    assert_eq!(model.graph.k, 4);
    assert_eq!(params.feature_dim(), 8);
}

#[test]
fn frozen_zero_gcn_matches_baseline_through_the_cli() {
    let tmp = TempDir::new().unwrap();
    let scenes = tmp.path().join("s");
    generate(&scenes, "6", "0");
    let (base, full) = (tmp.path().join("base"), tmp.path().join("full"));
    quick_train(&scenes, &base, &["--mode", "baseline", "--freeze-gcn", "--zero-gcn"]);
    quick_train(&scenes, &full, &["--mode", "full", "--freeze-gcn", "--zero-gcn"]);
    let strip = |dir: &Path| -> Vec<String> {
        String::from_utf8(read(&dir.join("metrics.csv")))
            .unwrap()
            .lines()
            .skip(1)
            .map(|l| l.split_once(',').unwrap().1.to_string())
            .collect()
    };
    assert_eq!(strip(&base), strip(&full));
    let metrics = |dir: &Path| {
        let v: serde_json::Value = serde_json::from_slice(&read(&dir.join("summary.json"))).unwrap();
        v["train"].clone()
    };
    assert_eq!(metrics(&base), metrics(&full));
}

#[test]
fn replay_reproduces_train_outputs() {
    let tmp = TempDir::new().unwrap();
    let scenes = tmp.path().join("s");
    generate(&scenes, "5", "0");
    let first = tmp.path().join("first");
    quick_train(&scenes, &first, &[]);
    let again = tmp.path().join("again");
    ok(&["replay", "--manifest", p(&first.join("manifest.json")), "--out", p(&again)]);
    for f in ["metrics.csv", "checkpoint.json", "summary.json"] {
        assert_eq!(read(&first.join(f)), read(&again.join(f)), "{f}");
    }
}

#[test]
fn ablate_smoke_run() {
    let tmp = TempDir::new().unwrap();
    let (tr, ev) = (tmp.path().join("tr"), tmp.path().join("ev"));
    generate(&tr, "4", "0");
    generate(&ev, "2", "100");
    let out = tmp.path().join("abl");
    ok(&[
        "ablate", "--train", p(&tr), "--eval", p(&ev), "--out", p(&out), "--seeds", "1", "--k", "4",
        "--iterations", "10", "--batch-size", "2",
    ]);
    let mut rdr = csv::Reader::from_path(out.join("ablation.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 8);
    let modes: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(&modes[..4], ["baseline", "sem", "spa", "full"]);
    assert!(rows[..4].iter().all(|r| &r[1] == "0"));
    assert!(rows[4..].iter().all(|r| &r[1] == "mean"));
    // one seed: the mean rows repeat the data rows
    for i in 0..4 {
        assert_eq!(&rows[i].iter().skip(2).collect::<Vec<_>>(), &rows[i + 4].iter().skip(2).collect::<Vec<_>>());
    }
}

#[test]
fn sweep_k_writes_one_row_per_k_even_when_a_later_k_fails() {
    let tmp = TempDir::new().unwrap();
    let (tr, ev) = (tmp.path().join("tr"), tmp.path().join("ev"));
    generate(&tr, "3", "0");
    generate(&ev, "2", "100");
    let out = tmp.path().join("sweep");
    // 500 exceeds the 32 regions per scene and selects everything
    let status = relgraph(&[
        "sweep-k", "--train", p(&tr), "--eval", p(&ev), "--out", p(&out), "--ks", "4,500,0", "--iterations", "5",
        "--batch-size", "2",
    ]);
    assert_eq!(status.status.code(), Some(2));
    let mut rdr = csv::Reader::from_path(out.join("sweep_k.csv")).unwrap();
    let ks: Vec<String> = rdr.records().map(|r| r.unwrap()[0].to_string()).collect();
    assert_eq!(ks, ["4", "500"]);
    let m: serde_json::Value = serde_json::from_slice(&read(&out.join("manifest.json"))).unwrap();
    assert!(m["status"].as_str().unwrap().starts_with("failed"));
}

/// Minimal parser for the undirected DOT subset the exporter emits:
/// `graph ID { stmt; ... }` with node and edge statements carrying
/// `[key=value, ...]` attribute lists.
mod dot {
    #[derive(Debug, PartialEq)]
    pub enum Stmt {
        Node(String, Vec<(String, String)>),
        Edge(String, String, Vec<(String, String)>),
        Default(String, Vec<(String, String)>),
    }

    fn tokens(src: &str) -> Result<Vec<String>, String> {
        let mut out = Vec::new();
        let mut chars = src.chars().peekable();
        while let Some(&c) = chars.peek() {
            if c.is_whitespace() {
                chars.next();
            } else if c == '"' {
                chars.next();
                let mut s = String::from("\"");
                loop {
                    match chars.next() {
                        Some('\\') => {
                            s.push('\\');
                            s.push(chars.next().ok_or("dangling escape")?);
                        }
                        Some('"') => break,
                        Some(ch) => s.push(ch),
                        None => return Err("unterminated string".into()),
                    }
                }
                s.push('"');
                out.push(s);
            } else if "{}[],;=".contains(c) {
                out.push(c.to_string());
                chars.next();
            } else if c == '-' {
                chars.next();
                if chars.next_if_eq(&'-').is_none() {
                    return Err("bare `-` outside a quoted id".into());
                }
                out.push("--".into());
            } else if c.is_alphanumeric() || c == '_' || c == '.' {
                let mut s = String::new();
                while let Some(&ch) = chars.peek() {
                    if ch.is_alphanumeric() || ch == '_' || ch == '.' {
                        s.push(ch);
                        chars.next();
                    } else {
                        break;
                    }
                }
                out.push(s);
            } else {
                return Err(format!("unexpected character {c:?}"));
            }
        }
        Ok(out)
    }

    fn is_id(t: &str) -> bool {
        t.starts_with('"')
            || t.chars().all(|c| c.is_alphanumeric() || c == '_')
            || t.parse::<f64>().is_ok()
    }

    fn attrs(t: &[String], i: &mut usize) -> Result<Vec<(String, String)>, String> {
        let mut out = Vec::new();
        if t.get(*i).map(String::as_str) != Some("[") {
            return Ok(out);
        }
        *i += 1;
        loop {
            match t.get(*i).map(String::as_str) {
                Some("]") => {
                    *i += 1;
                    return Ok(out);
                }
                Some(",") => *i += 1,
                Some(k) if is_id(k) => {
                    if t.get(*i + 1).map(String::as_str) != Some("=") {
                        return Err(format!("expected = after {k}"));
                    }
                    let v = t.get(*i + 2).ok_or("missing value")?;
                    if !is_id(v) {
                        return Err(format!("bad value {v}"));
                    }
                    out.push((k.to_string(), v.trim_matches('"').to_string()));
                    *i += 3;
                }
                other => return Err(format!("unexpected {other:?} in attribute list")),
            }
        }
    }

    pub fn parse(src: &str) -> Result<Vec<Stmt>, String> {
        let t = tokens(src)?;
        let mut i = 0;
        if t.first().map(String::as_str) != Some("graph") {
            return Err("expected `graph`".into());
        }
        i += 1;
        if t.get(i).is_some_and(|s| is_id(s)) && t[i] != "{" {
            i += 1;
        }
        if t.get(i).map(String::as_str) != Some("{") {
            return Err("expected {".into());
        }
        i += 1;
        let mut out = Vec::new();
        loop {
            let head = t.get(i).ok_or("unexpected end of input")?.clone();
            if head == "}" {
                i += 1;
                break;
            }
            if !is_id(&head) {
                return Err(format!("bad statement start {head}"));
            }
            i += 1;
            if t.get(i).map(String::as_str) == Some("--") {
                let other = t.get(i + 1).ok_or("edge without target")?.clone();
                if !is_id(&other) {
                    return Err(format!("bad edge target {other}"));
                }
                i += 2;
                out.push(Stmt::Edge(head, other, attrs(&t, &mut i)?));
            } else if ["node", "edge", "graph"].contains(&head.as_str()) {
                out.push(Stmt::Default(head, attrs(&t, &mut i)?));
            } else {
                out.push(Stmt::Node(head, attrs(&t, &mut i)?));
            }
            if t.get(i).map(String::as_str) == Some(";") {
                i += 1;
            }
        }
        if i != t.len() {
            return Err("trailing tokens".into());
        }
        Ok(out)
    }
}

#[test]
fn dot_parser_rejects_garbage() {
    assert!(dot::parse("graph g { a -- ; }").is_err());
    assert!(dot::parse("digraph g { }").is_err());
    assert!(dot::parse("graph g { a [x=] }").is_err());
    assert!(dot::parse("graph g { a -- b").is_err());
    assert_eq!(dot::parse("graph { }").unwrap(), vec![]);
}

#[test]
fn export_graph_is_valid_dot_matching_the_fused_graph() {
    let tmp = TempDir::new().unwrap();
    let scenes = tmp.path().join("s");
    generate(&scenes, "3", "0");
    let run = tmp.path().join("run");
    quick_train(&scenes, &run, &[]);
    let scene_path = scenes.join("scene_1.jsonl");
    let out = tmp.path().join("g");
    ok(&[
        "export-graph", "--scene", p(&scene_path), "--checkpoint", p(&run.join("checkpoint.json")), "--out", p(&out),
    ]);
    let text = String::from_utf8(read(&out.join("graph.dot"))).unwrap();
    let stmts = dot::parse(&text).unwrap();

    let scene = load_scene(&scene_path).unwrap();
    let (params, mut model) = load_checkpoint(run.join("checkpoint.json")).unwrap();
    model.mode = Mode::Full;
    let s = build_structure(&scene, &params, &model).unwrap();
    let sem = s.semantic.unwrap();
    let spa = s.spatial.unwrap();

    let nodes: Vec<_> = stmts.iter().filter(|s| matches!(s, dot::Stmt::Node(..))).collect();
    assert_eq!(nodes.len(), scene.len());
    for st in &nodes {
        let dot::Stmt::Node(id, attrs) = st else { unreachable!() };
        let i: usize = id[1..].parse().unwrap();
        let class = &attrs.iter().find(|(k, _)| k == "class").unwrap().1;
        assert_eq!(class.parse::<usize>().unwrap(), scene.regions[i].label);
        let color = &attrs.iter().find(|(k, _)| k == "fillcolor").unwrap().1;
        assert_eq!(color, relgraph_cli::dot::class_color(scene.regions[i].label));
    }
    let edges: Vec<(usize, usize, String)> = stmts
        .iter()
        .filter_map(|s| match s {
            dot::Stmt::Edge(a, b, attrs) => Some((
                a[1..].parse().unwrap(),
                b[1..].parse().unwrap(),
                attrs.iter().find(|(k, _)| k == "style").unwrap().1.clone(),
            )),
            _ => None,
        })
        .collect();
    assert_eq!(edges.len(), s.fused.nnz() / 2);
    for (i, j, style) in edges {
        assert!(s.fused.contains(i, j));
        let both = sem.contains(i, j) && spa.contains(i, j);
        assert_eq!(style, if both { "solid" } else { "dashed" });
    }
}

#[test]
fn export_of_an_edgeless_scene_has_nodes_only() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("s");
    // a single region per scene has no pairs to link
    ok(&[
        "generate", "--out", p(&dir), "--scenes", "1", "--num-classes", "1", "--clusters-per-class", "1",
        "--regions-per-cluster", "1", "--ambiguity-fraction", "0",
    ]);
    let out = tmp.path().join("g");
    ok(&["export-graph", "--scene", p(&dir.join("scene_0.jsonl")), "--untrained", "--out", p(&out)]);
    let stmts = dot::parse(&String::from_utf8(read(&out.join("graph.dot"))).unwrap()).unwrap();
    assert_eq!(stmts.iter().filter(|s| matches!(s, dot::Stmt::Node(..))).count(), 1);
    assert!(!stmts.iter().any(|s| matches!(s, dot::Stmt::Edge(..))));
}
