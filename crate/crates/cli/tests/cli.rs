mod common;

use std::fs;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use rbon_cli::{EXIT_DATA, EXIT_OK, EXIT_USAGE};
use rbon_core::io::{file_digest, save_sets};

use common::{fixture, golden, random_set, rbon};

fn path(p: &std::path::Path) -> String {
    p.display().to_string()
}

fn json_lines(p: &std::path::Path) -> Vec<Value> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn select_bon_picks_highest_proxy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s.jsonl");
    let code = rbon(&[
        "select",
        "--input",
        &path(&fixture("three.jsonl")),
        "--output",
        &path(&out),
        "--method",
        "bon",
        "--proxy",
        "proxy",
    ]);
    assert_eq!(code, EXIT_OK);
    assert_eq!(json_lines(&out)[0]["chosen_id"], 1);
    assert_eq!(fs::read(&out).unwrap(), fs::read(golden("select_bon.jsonl")).unwrap());
}

#[test]
fn mbr_bon_at_zero_matches_bon_except_method() {
    let dir = tempfile::tempdir().unwrap();
    let input = path(&fixture("eval.jsonl"));
    let bon = dir.path().join("bon.jsonl");
    let zero = dir.path().join("zero.jsonl");
    assert_eq!(
        rbon(&["select", "--input", &input, "--output", &path(&bon), "--method", "bon"]),
        EXIT_OK
    );
    assert_eq!(
        rbon(&[
            "select",
            "--input",
            &input,
            "--output",
            &path(&zero),
            "--method",
            "mbr-bon",
            "--beta",
            "0"
        ]),
        EXIT_OK
    );
    let zero = fs::read_to_string(zero)
        .unwrap()
        .replace("\"method\":\"mbr-bon\"", "\"method\":\"bon\"");
    assert_eq!(zero, fs::read_to_string(bon).unwrap());
}

#[test]
fn infinite_beta_matches_mbr() {
    let dir = tempfile::tempdir().unwrap();
    let input = path(&fixture("eval.jsonl"));
    let mbr = dir.path().join("mbr.jsonl");
    let inf = dir.path().join("inf.jsonl");
    assert_eq!(
        rbon(&["select", "--input", &input, "--output", &path(&mbr), "--method", "mbr"]),
        EXIT_OK
    );
    assert_eq!(
        rbon(&[
            "select",
            "--input",
            &input,
            "--output",
            &path(&inf),
            "--method",
            "mbr-bon",
            "--beta",
            "inf"
        ]),
        EXIT_OK
    );
    let ids = |p| json_lines(p).iter().map(|v| v["chosen_id"].clone()).collect::<Vec<_>>();
    assert_eq!(ids(&mbr), ids(&inf));
    assert_eq!(json_lines(&inf)[0]["beta"], "inf");
}

#[test]
fn kl_rbon_requires_logprobs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("kl.jsonl");
    let code = rbon(&[
        "select",
        "--input",
        &path(&fixture("collision.jsonl")),
        "--output",
        &path(&out),
        "--method",
        "kl-rbon",
        "--beta",
        "1",
    ]);
    assert_eq!(code, EXIT_DATA);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(&dir.path().join("x"));
    let input = path(&fixture("three.jsonl"));
    assert_eq!(
        rbon(&["select", "--input", &input, "--output", &out, "--method", "greedy"]),
        EXIT_USAGE
    );
    assert_eq!(
        rbon(&["select", "--input", &input, "--output", &out, "--method", "bon", "--beta", "-1"]),
        EXIT_USAGE
    );
    assert_eq!(
        rbon(&["sweep", "--input", &input, "--output", &out, "--grid", "0,x"]),
        EXIT_USAGE
    );
    assert_eq!(rbon(&["frobnicate"]), EXIT_USAGE);
    assert_eq!(rbon(&["select", "--input", &input]), EXIT_USAGE);
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    let good = fs::read_to_string(fixture("three.jsonl")).unwrap();
    fs::write(&bad, format!("{}{{broken\n", good)).unwrap();
    let out = path(&dir.path().join("o.jsonl"));
    assert_eq!(
        rbon(&["select", "--input", &path(&bad), "--output", &out, "--method", "bon"]),
        EXIT_DATA
    );
    assert_eq!(
        rbon(&[
            "select",
            "--input",
            &path(&dir.path().join("absent.jsonl")),
            "--output",
            &out,
            "--method",
            "bon"
        ]),
        EXIT_DATA
    );
    assert_eq!(
        rbon(&[
            "select",
            "--input",
            &path(&fixture("three.jsonl")),
            "--output",
            &out,
            "--method",
            "bon",
            "--proxy",
            "nope"
        ]),
        EXIT_DATA
    );
}

#[test]
fn empty_input_is_not_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = dir.path().join("o.jsonl");
    assert_eq!(
        rbon(&[
            "select",
            "--input",
            &path(&empty),
            "--output",
            &path(&out),
            "--method",
            "bon"
        ]),
        EXIT_OK
    );
    assert_eq!(fs::read_to_string(out).unwrap(), "");
}

#[test]
fn manifest_records_config_and_input_digest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sel.jsonl");
    let input = fixture("eval.jsonl");
    let code = rbon(&[
        "select",
        "--input",
        &path(&input),
        "--output",
        &path(&out),
        "--method",
        "mbr-bon",
        "--beta",
        "0.5",
    ]);
    assert_eq!(code, EXIT_OK);
    let m: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("sel.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "select");
    assert_eq!(m["config"]["method"], "mbr-bon");
    assert_eq!(m["config"]["beta"], 0.5);
    assert_eq!(m["inputs"][0]["sha256"], file_digest(&input).unwrap());
    assert_eq!(m["outputs"][0], "sel.jsonl");
}

#[test]
fn cache_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let input = path(&fixture("eval.jsonl"));
    let cache = path(&dir.path().join("cache"));
    let plain = dir.path().join("plain.jsonl");
    let cold = dir.path().join("cold.jsonl");
    let warm = dir.path().join("warm.jsonl");
    assert_eq!(
        rbon(&[
            "select",
            "--input",
            &input,
            "--output",
            &path(&plain),
            "--method",
            "mbr"
        ]),
        EXIT_OK
    );
    for out in [&cold, &warm] {
        assert_eq!(
            rbon(&[
                "--cache-dir",
                &cache,
                "select",
                "--input",
                &input,
                "--output",
                &path(out),
                "--method",
                "mbr"
            ]),
            EXIT_OK
        );
    }
    assert_eq!(fs::read_dir(dir.path().join("cache")).unwrap().count(), 12);
    assert_eq!(fs::read(&plain).unwrap(), fs::read(&cold).unwrap());
    assert_eq!(fs::read(&plain).unwrap(), fs::read(&warm).unwrap());
}

#[test]
fn verify_wd_passes_on_random_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sets: Vec<_> = (0..200)
        .map(|i| {
            let n = 2 + i % 15;
            let d = 2 + i % 7;
            random_set(&mut rng, i, n, d)
        })
        .collect();
    let input = dir.path().join("random.jsonl");
    save_sets(&input, &sets).unwrap();
    let out = dir.path().join("verify.csv");
    assert_eq!(
        rbon(&["verify-wd", "--input", &path(&input), "--output", &path(&out)]),
        EXIT_OK
    );
    let csv = fs::read_to_string(out).unwrap();
    assert_eq!(csv.lines().count(), 201);
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",true")));
}

#[test]
fn verify_wd_rejects_oversized_support() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let input = dir.path().join("big.jsonl");
    save_sets(&input, &[random_set(&mut rng, 0, 65, 3)]).unwrap();
    let out = path(&dir.path().join("v.csv"));
    assert_eq!(
        rbon(&["verify-wd", "--input", &path(&input), "--output", &out]),
        EXIT_DATA
    );
}

#[test]
fn sweep_writes_grid_and_anchor() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sweep.csv");
    let code = rbon(&[
        "sweep",
        "--input",
        &path(&fixture("dev.jsonl")),
        "--output",
        &path(&out),
        "--grid",
        "1,0,inf",
    ]);
    assert_eq!(code, EXIT_OK);
    let csv = fs::read_to_string(out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "beta,mean_proxy,mean_gold,mean_mbr,n_instructions");
    assert!(lines[1].starts_with("0.0,"));
    assert!(lines[2].starts_with("1.0,"));
    assert!(lines[3].starts_with("inf,"));
}

#[test]
fn pairgen_goldens() {
    let dir = tempfile::tempdir().unwrap();
    for (chooser, beta, gold) in [
        ("mbr-bon", "inf", "pairgen_mbr_bon_inf.jsonl"),
        ("bon", "0", "pairgen_bon.jsonl"),
    ] {
        let out = dir.path().join(gold);
        let code = rbon(&[
            "pairgen",
            "--input",
            &path(&fixture("collision.jsonl")),
            "--output",
            &path(&out),
            "--chooser",
            chooser,
            "--beta",
            beta,
        ]);
        assert_eq!(code, EXIT_OK);
        assert_eq!(fs::read(&out).unwrap(), fs::read(golden(gold)).unwrap());
        for pair in json_lines(&out) {
            assert_ne!(pair["chosen_id"], pair["rejected_id"]);
        }
    }
}

#[test]
fn proximity_writes_both_tables() {
    let dir = tempfile::tempdir().unwrap();
    let code = rbon(&[
        "analyze-proximity",
        "--input",
        &path(&fixture("eval.jsonl")),
        "--out-dir",
        &path(dir.path()),
    ]);
    assert_eq!(code, EXIT_OK);
    let rho = fs::read_to_string(dir.path().join("proximity_rho.csv")).unwrap();
    let points = fs::read_to_string(dir.path().join("proximity_points.csv")).unwrap();
    assert_eq!(rho.lines().next(), Some("instruction_id,rho"));
    assert_eq!(rho.lines().count(), 13);
    assert_eq!(
        points.lines().next(),
        Some("instruction_id,candidate_id,pc1,pc2,normalized_mbr")
    );
    assert_eq!(points.lines().count(), 1 + 12 * 8);
}

#[test]
fn ablation_rejects_oversized_subsample() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(&dir.path().join("a.csv"));
    let (dev, eval) = (path(&fixture("dev.jsonl")), path(&fixture("eval.jsonl")));
    assert_eq!(
        rbon(&[
            "ablate-dev",
            "--dev",
            &dev,
            "--eval",
            &eval,
            "--sizes",
            "13",
            "--output",
            &out
        ]),
        EXIT_DATA
    );
    assert_eq!(
        rbon(&[
            "ablate-dev",
            "--dev",
            &dev,
            "--eval",
            &eval,
            "--sizes",
            "4,12",
            "--output",
            &out
        ]),
        EXIT_OK
    );
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 3);
}

#[test]
fn bench_emits_loadable_sets_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let code = rbon(&[
        "bench",
        "--out-dir",
        &path(dir.path()),
        "--n-instructions",
        "6",
        "--n-candidates",
        "8",
        "--embed-dim",
        "4",
        "--noise-scale",
        "1.5",
        "--emit-sets",
    ]);
    assert_eq!(code, EXIT_OK);
    let sets = rbon_core::io::load_sets(dir.path().join("eval_sets.jsonl")).unwrap();
    assert_eq!(sets.len(), 6);
    let curve = fs::read_to_string(dir.path().join("curve_bon.csv")).unwrap();
    let ns: Vec<&str> = curve.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ns, ["1", "2", "4", "8"]);
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["noise_scale"], 1.5);
}
