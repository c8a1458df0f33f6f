mod common;

use std::f64::consts::{LN_2, PI};

use cdii_core::field::{lp_norm, Norm, ScalarField};
use common::{cdii, grid, json, same_artifacts, stable_manifest};
use tempfile::TempDir;

fn linf_vs(u: &ScalarField, exact: impl Fn(f64, f64) -> f64) -> f64 {
    (0..u.grid().len())
        .map(|k| {
            let [x, y] = u.grid().point(k);
            (u.values()[k] - exact(x, y)).abs()
        })
        .fold(0.0, f64::max)
}

fn rel_l1_vs(u: &ScalarField, exact: impl Fn(f64, f64) -> f64) -> f64 {
    let truth = ScalarField::from_fn(*u.grid(), exact).unwrap();
    lp_norm(&u.zip_map(&truth, |a, b| a - b).unwrap(), Norm::L1) / lp_norm(&truth, Norm::L1)
}

#[test]
fn forward_unit_conductivity_gives_linear_potential() {
    let tmp = TempDir::new().unwrap();
    let r = cdii(tmp.path(), "f", &["forward", "--sigma", "1", "--f", "linear", "--n", "65"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let u = grid(r.dir.join("u.grid"));
    assert_eq!(u.grid().nx(), 65);
    assert!(linf_vs(&u, |x, _| x) <= 1e-10);
    for name in ["jx.grid", "jy.grid", "a.grid", "sigma.grid", "trace.csv", "forward.json", "manifest.json"] {
        assert!(r.dir.join(name).exists(), "{name} missing");
    }
    let meta = json(r.dir.join("forward.json"));
    assert_eq!(meta["admissibility"]["passed"], true);
    assert!(meta["residual_norm"].as_f64().unwrap() <= 1e-10);
}

#[test]
fn forward_layered_matches_one_dimensional_profile() {
    let tmp = TempDir::new().unwrap();
    let r = cdii(tmp.path(), "f", &["forward", "--sigma", "1+x", "--f", "layered", "--n", "129"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let u = grid(r.dir.join("u.grid"));
    assert!(linf_vs(&u, |x, _| (1.0 + x).ln() / LN_2) <= 1e-3);
}

#[test]
fn zero_conductivity_is_invalid_input_naming_sigma0() {
    let tmp = TempDir::new().unwrap();
    let r = cdii(tmp.path(), "f", &["forward", "--sigma", "0"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("sigma0"), "{}", r.stderr);
    assert_eq!(json(r.dir.join("manifest.json"))["exit_code"], 2);
}

#[test]
fn bad_expression_is_invalid_input() {
    let tmp = TempDir::new().unwrap();
    let r = cdii(tmp.path(), "f", &["forward", "--sigma", "1 + * x"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("column"), "{}", r.stderr);
    let r = cdii(tmp.path(), "g", &["forward", "--sigma", "ln(x - 2)"]);
    assert_eq!(r.code, 2, "non-finite values on the grid");
}

#[test]
fn reconstruct_round_trip_of_unit_conductivity() {
    let tmp = TempDir::new().unwrap();
    let f = cdii(tmp.path(), "f", &["forward", "--sigma", "1", "--n", "65"]);
    assert_eq!(f.code, 0);
    let path = |n: &str| f.dir.join(n).to_string_lossy().into_owned();
    let r = cdii(
        tmp.path(),
        "r",
        &["reconstruct", "--a", &path("a.grid"), "--trace", &path("trace.csv"), "--truth", &path("sigma.grid")],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let s = grid(r.dir.join("sigma_hat.grid"));
    let one = ScalarField::constant(*s.grid(), 1.0);
    assert!(lp_norm(&s.zip_map(&one, |a, b| a - b).unwrap(), Norm::L1) <= 1e-3);
    let meta = json(r.dir.join("reconstruct.json"));
    assert_eq!(meta["converged"], true);
    assert!(meta["errors"]["sigma_rel_l1"].as_f64().unwrap() <= 1e-3);
    assert!(meta["certificates"]["max_excess"].as_f64().unwrap() <= 1e-8);
}

#[test]
fn reconstruct_round_trip_of_layered_conductivity() {
    let tmp = TempDir::new().unwrap();
    let r = cdii(tmp.path(), "r", &["reconstruct", "--sigma", "1+x", "--f", "layered", "--n", "129"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let s = grid(r.dir.join("sigma_hat.grid"));
    assert!(rel_l1_vs(&s, |x, _| 1.0 + x) <= 0.05);
    assert!(r.dir.join("u_hat.grid").exists() && r.dir.join("a.grid").exists());
}

#[test]
fn malformed_grid_file_names_the_line() {
    let tmp = TempDir::new().unwrap();
    let bad = tmp.path().join("bad.grid");
    std::fs::write(&bad, "3 3 0.5 0.5 0 0\n1 1 1\n1 oops 1\n1 1 1\n").unwrap();
    let bad = bad.to_string_lossy().into_owned();
    let r = cdii(tmp.path(), "r", &["reconstruct", "--a", &bad]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("line 3"), "{}", r.stderr);
    let r = cdii(tmp.path(), "l", &["levelsets", "--u", &bad]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("line 3"), "{}", r.stderr);
}

#[test]
fn lgp_iteration_cap_keeps_best_iterate() {
    let tmp = TempDir::new().unwrap();
    let args = ["lgp", "--a-expr", "1 + 0.5*sin(3*x)*cos(2*y)", "--f", "x^2 - y", "--n", "33"];
    let r = cdii(tmp.path(), "capped", &[&args[..], &["--max-iter", "20", "--check-every", "10"]].concat());
    assert_eq!(r.code, 3, "{}", r.stderr);
    let meta = json(r.dir.join("lgp.json"));
    assert_eq!(meta["converged"], false);
    assert_eq!(meta["iterations"], 20);
    assert!(r.dir.join("u.grid").exists() && r.dir.join("phix.grid").exists());
    let full = cdii(tmp.path(), "full", &args);
    assert_eq!(full.code, 0, "{}", full.stderr);
    assert_eq!(json(full.dir.join("lgp.json"))["converged"], true);
}

#[test]
fn sweep_constant_family_from_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("constant.toml");
    std::fs::write(&cfg, "sigma = \"1\"\neta = \"1\"\nepsilons = \"dyadic:6\"\nn = 33\n\n[bounds]\nsigma1 = 10.0\n")
        .unwrap();
    let r = cdii(tmp.path(), "s", &["sweep", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    let rep = json(r.dir.join("sweep.json"));
    assert_eq!(rep["pass"], true);
    let e_sigma =
        rep["inequalities"].as_array().unwrap().iter().find(|c| c["name"] == "e_sigma_vs_delta_jmag").unwrap();
    assert!((e_sigma["fit"]["slope"].as_f64().unwrap() - 1.0).abs() <= 0.05);
    assert!(r.dir.join("sweep.csv").exists());
}

#[test]
fn sweep_bump_family_meets_exponents() {
    let tmp = TempDir::new().unwrap();
    let r = cdii(tmp.path(), "s", &["sweep", "--n", "65"]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    let rep = json(r.dir.join("sweep.json"));
    for (name, min) in [
        ("e_j_vs_delta_a", 0.4),
        ("e_u_vs_delta_jmag", 0.4),
        ("e_grad_vs_delta_jmag", 0.15),
        ("e_sigma_vs_delta_jmag", 0.15),
    ] {
        let c = rep["inequalities"].as_array().unwrap().iter().find(|c| c["name"] == name).unwrap();
        assert!(c["fit"]["slope"].as_f64().unwrap() >= min, "{name}: {c}");
    }
    let csv = std::fs::read_to_string(r.dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 9);
}

#[test]
fn sweep_names_the_excluded_member() {
    let tmp = TempDir::new().unwrap();
    let ladder = "12,0.5,0.25,0.125,0.0625,0.03125,0.015625,0.0078125";
    let r = cdii(tmp.path(), "s", &["sweep", "--n", "33", "--epsilons", ladder]);
    assert_eq!(r.code, 0, "{}{}", r.stdout, r.stderr);
    let rep = json(r.dir.join("sweep.json"));
    let ex = rep["exclusions"].as_array().unwrap();
    assert_eq!(ex.len(), 1);
    assert_eq!(ex[0]["epsilon"], 12.0);
    assert!(ex[0]["reason"].as_str().unwrap().contains("sigma1"));
    assert!(r.stdout.contains("excluded eps=1.2000e1"));
}

#[test]
fn sweep_with_too_many_exclusions_is_partial() {
    let tmp = TempDir::new().unwrap();
    let r = cdii(tmp.path(), "few", &["sweep", "--n", "33", "--epsilons", "12,8,0.5,0.25,0.125"]);
    assert_eq!(r.code, 3);
    assert_eq!(json(r.dir.join("sweep.json"))["exclusions"].as_array().unwrap().len(), 2);
    let r = cdii(tmp.path(), "many", &["sweep", "--n", "33", "--epsilons", "12,8,0.5,0.25,0.125,0.0625"]);
    assert_eq!(r.code, 3, "2 of 6 excluded is above 25%");
}

#[test]
fn unknown_check_and_config_key_are_invalid_input() {
    let tmp = TempDir::new().unwrap();
    let r = cdii(tmp.path(), "s", &["sweep", "--n", "33", "--checks", "nope"]);
    assert_eq!(r.code, 2);
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "sigma = \"1\"\nbogus = 3\n").unwrap();
    let r = cdii(tmp.path(), "f", &["forward", "--config", cfg.to_str().unwrap()]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("bogus"), "{}", r.stderr);
}

#[test]
fn flags_override_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("f.toml");
    std::fs::write(&cfg, "sigma = \"2\"\nn = 17\n").unwrap();
    let r = cdii(tmp.path(), "f", &["forward", "--config", cfg.to_str().unwrap(), "--n", "21"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let m = json(r.dir.join("manifest.json"));
    assert_eq!(m["config"]["grid"]["n"], 21);
    assert_eq!(m["config"]["sigma"], "2");
    assert_eq!(grid(r.dir.join("sigma.grid")).values()[0], 2.0);
}

#[test]
fn levelsets_of_linear_field() {
    let tmp = TempDir::new().unwrap();
    let f = cdii(tmp.path(), "f", &["forward", "--n", "65"]);
    let u = f.dir.join("u.grid").to_string_lossy().into_owned();
    let r = cdii(tmp.path(), "l", &["levelsets", "--u", &u, "--levels", "32"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let stats = &json(r.dir.join("levelsets.json"))["stats"];
    assert!((stats["l_m_hat"].as_f64().unwrap() - 1.0).abs() <= 1e-3);
    assert_eq!(stats["level_count"], 32);
    let csv = std::fs::read_to_string(r.dir.join("contours.csv")).unwrap();
    assert!(csv.starts_with("t,component_id,s,x,y"));
}

#[test]
fn levelsets_circle_arclength() {
    let tmp = TempDir::new().unwrap();
    let r = cdii(
        tmp.path(),
        "l",
        &["levelsets", "--expr", "x^2 + y^2", "--lo", "-1", "--hi", "1", "--n", "256", "--at", "0.25"],
    );
    assert_eq!(r.code, 0, "{}", r.stderr);
    let level = &json(r.dir.join("levelsets.json"))["levels"][0];
    assert_eq!(level["closed"], 1);
    assert!((level["length"].as_f64().unwrap() / PI - 1.0).abs() <= 0.01);
}

#[test]
fn levelsets_well_structured_on_layered_solution() {
    let tmp = TempDir::new().unwrap();
    let f = cdii(tmp.path(), "f", &["forward", "--sigma", "1+x", "--f", "layered", "--n", "129"]);
    let u = f.dir.join("u.grid").to_string_lossy().into_owned();
    let r = cdii(tmp.path(), "l", &["levelsets", "--u", &u, "--well-structured"]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let est = &json(r.dir.join("wellstructured.json"))["estimate"];
    assert!(est["k_hat"].as_f64().unwrap() <= 1e-3, "{est}");
    assert!(est["samples_used"].as_u64().unwrap() > 0);
}

#[test]
fn levelsets_of_constant_field_is_invalid() {
    let tmp = TempDir::new().unwrap();
    let r = cdii(tmp.path(), "l", &["levelsets", "--expr", "3"]);
    assert_eq!(r.code, 2);
    assert!(r.stderr.contains("constant"));
}

#[test]
fn reruns_are_identical_apart_from_timestamps() {
    let tmp = TempDir::new().unwrap();
    for (name, args) in [
        ("forward", vec!["forward", "--sigma", "1 + 0.5*exp(-50*((x-0.5)^2 + (y-0.5)^2))", "--n", "33"]),
        ("sweep", vec!["sweep", "--n", "33", "--epsilons", "dyadic:5"]),
        ("levelsets", vec!["levelsets", "--expr", "x^2 + 2*y^2", "--n", "48", "--well-structured"]),
        ("reconstruct", vec!["reconstruct", "--sigma", "1+x", "--f", "layered", "--n", "33"]),
    ] {
        let a = cdii(tmp.path(), &format!("{name}-a"), &args);
        let b = cdii(tmp.path(), &format!("{name}-b"), &args);
        assert_eq!(a.code, 0, "{name}: {}", a.stderr);
        assert_eq!(b.code, 0, "{name}: {}", b.stderr);
        same_artifacts(&a.dir, &b.dir).unwrap_or_else(|e| panic!("{name}: {e}"));
    }
}

#[test]
fn output_root_from_environment_gets_timestamped_run_dirs() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path().join("runs");
    for _ in 0..2 {
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_cdii"))
            .args(["forward", "--n", "9"])
            .env("CDII_OUT", &root)
            .output()
            .unwrap();
        assert!(out.status.success());
    }
    let dirs: Vec<_> = std::fs::read_dir(&root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(dirs.len(), 2);
    for d in &dirs {
        assert!(d.file_name().unwrap().to_string_lossy().starts_with("forward-"));
        let m = stable_manifest(d);
        assert_eq!(m["command"], "forward");
        assert!(m["files"].as_array().unwrap().iter().any(|f| f == "u.grid"));
    }
}

/// Option entries of a help text: (flag, full description).
fn help_entries(help: &str) -> Vec<(String, String)> {
    let mut out: Vec<(String, String)> = Vec::new();
    for line in help.lines() {
        let t = line.trim_start();
        if t.starts_with("--") || t.starts_with("-h") || t.starts_with("-V") {
            let flag =
                t.split_whitespace().find(|w| w.starts_with("--")).unwrap_or(t).trim_end_matches(',').to_string();
            out.push((flag, t.to_string()));
        } else if let Some(last) = out.last_mut() {
            last.1.push(' ');
            last.1.push_str(t);
        }
    }
    out
}

#[test]
fn help_lists_every_flag_with_its_default() {
    // Options that are genuinely optional inputs have no default.
    let optional = [
        "--config",
        "--run-dir",
        "--help",
        "--version",
        "--a",
        "--a-expr",
        "--trace",
        "--sigma",
        "--truth",
        "--u",
        "--expr",
        "--at",
        "--checks",
        "--well-structured",
    ];
    for sub in ["forward", "lgp", "reconstruct", "sweep", "levelsets", "verify"] {
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_cdii")).args([sub, "--help"]).output().unwrap();
        assert!(out.status.success());
        let help = String::from_utf8(out.stdout).unwrap();
        let entries = help_entries(&help);
        assert!(entries.iter().any(|(f, _)| f == "--out"), "{sub}");
        for (flag, text) in entries {
            let needs_default =
                !optional.contains(&flag.as_str()) || (sub != "lgp" && sub != "reconstruct" && flag == "--sigma");
            if needs_default {
                assert!(text.contains("[default:"), "{sub} {flag}: {text}");
            }
        }
    }
}
