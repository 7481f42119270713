use std::fs;
use std::path::Path;
use std::process::Command;

use mqmix::panel_data::{load_csv, write_csv, ColumnSchema, Observation, PanelDataset, UnitRecord};

fn run(args: &[&str]) -> i32 {
    let mut full = vec!["mqmix"];
    full.extend_from_slice(args);
    mqmix::cli::run(full)
}

fn bin(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_mqmix")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records().map(|rec| rec.unwrap().iter().map(str::to_string).collect()).collect()
}

fn simulate_demo(dir: &Path, seed: &str) {
    let cfg = dir.join("sim.toml");
    fs::write(&cfg, "[simulate]\npreset = \"small_demo\"\n").unwrap();
    assert_eq!(run(&["simulate", "--config", p(&cfg), "--seed", seed, "--out", p(&dir.join("sim"))]), 0);
}

#[test]
fn simulate_writes_reloadable_reproducible_files() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(run(&["simulate", "--seed", "11", "--out", p(&a)]), 0);
    assert_eq!(run(&["simulate", "--seed", "11", "--out", p(&b)]), 0);
    for f in ["panel.csv", "truth.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert!(a.join("manifest.json").exists());
    let data = load_csv(a.join("panel.csv"), &ColumnSchema::default()).unwrap();
    assert_eq!(data.n_units(), 500);
    let ids: std::collections::HashSet<_> = data.units().iter().map(|u| u.unit_id.clone()).collect();
    assert_eq!(ids.len(), 500);
}

#[test]
fn fit_single_level_single_k() {
    let dir = tempfile::tempdir().unwrap();
    simulate_demo(dir.path(), "3");
    let cfg = dir.path().join("fit.toml");
    fs::write(&cfg, "[data]\npath = \"sim/panel.csv\"\n\n[roles]\nw = \"decomposed\"\n\n[model]\nq = [0.5]\nk_min = 1\nk_max = 1\n")
        .unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["fit", "--config", p(&cfg), "--out", p(&out)]), 0);
    let coef = csv_rows(&out.join("coefficients_q0.50.csv"));
    let fixed_dim = 3;
    assert_eq!(coef.iter().filter(|r| r[1] != "sigma").count(), fixed_dim * 2);
    assert_eq!(coef.iter().filter(|r| r[1] == "sigma").count(), 2);
    assert!(coef.iter().all(|r| r[2].parse::<f64>().is_ok()));
    assert_eq!(csv_rows(&out.join("mixing_q0.50.csv")).len(), 2);
    assert_eq!(csv_rows(&out.join("classification_q0.50.csv")).len(), 80);
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert!(summary.contains("w_within") && summary.contains("sigma"));
}

#[test]
fn three_levels_give_three_reports() {
    let dir = tempfile::tempdir().unwrap();
    simulate_demo(dir.path(), "4");
    let out = dir.path().join("out");
    let data = dir.path().join("sim/panel.csv");
    let code = run(&["fit", "--data", p(&data), "--q", "0.5,0.75,0.9", "--k-min", "1", "--k-max", "5", "--seed", "2", "--out", p(&out)]);
    assert_eq!(code, 0);
    for q in ["0.50", "0.75", "0.90"] {
        let sel = csv_rows(&out.join(format!("selection_q{q}.csv")));
        assert_eq!(sel.len(), 5);
        assert_eq!(sel.iter().filter(|r| r[8] == "true").count(), 1);
        let chosen: usize = sel.iter().find(|r| r[8] == "true").unwrap()[0].parse().unwrap();
        let mixing = csv_rows(&out.join(format!("mixing_q{q}.csv")));
        assert_eq!(mixing.len(), chosen * 2);
        assert!(out.join(format!("classification_q{q}.csv")).exists());
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["run"]["levels"].as_array().unwrap().len(), 3);
    assert_eq!(manifest["seed"], 2);
}

#[test]
fn application_layout_table_has_sixteen_rows_plus_scale() {
    use rand::{Rng, SeedableRng};
    let names = ["age", "age2", "ale", "sed", "kessm", "imd", "edu_mid", "edu_high", "minority", "female", "stratum_2", "stratum_3"];
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
    let mut units = Vec::new();
    for i in 0..150 {
        let fixed: Vec<f64> = (0..6).map(|_| f64::from(rng.random_range(0..2u8))).collect();
        let level: f64 = rng.random_range(-2.0..2.0);
        let mut obs = Vec::new();
        for t in 0..3 {
            let age = 3.0 + 2.0 * t as f64;
            let mut x = vec![age, age * age / 10.0];
            x.extend((0..4).map(|_| rng.random::<f64>()));
            x.extend(&fixed);
            for h in 0..2 {
                let y = level + 0.1 * age + x[2] - x[8] + rng.random::<f64>();
                obs.push(Observation { occasion: t as f64 + 1.0, outcome: h, y, x: x.clone() });
            }
        }
        units.push(UnitRecord { unit_id: format!("c{i}"), observations: obs });
    }
    let data = PanelDataset::new(units, vec!["isdq".into(), "esdq".into()], names.iter().map(|s| s.to_string()).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_csv(&data, dir.path().join("mcs.csv")).unwrap();
    let roles: String = names[2..6]
        .iter()
        .map(|n| format!("{n} = \"decomposed\"\n"))
        .chain(names[6..].iter().map(|n| format!("{n} = \"time_constant\"\n")))
        .collect();
    let cfg = dir.path().join("mcs.toml");
    fs::write(&cfg, format!("[data]\npath = \"mcs.csv\"\n\n[roles]\n{roles}\n[model]\nq = [0.5]\nk_min = 1\nk_max = 2\n")).unwrap();
    let out = dir.path().join("out");
    assert_eq!(run(&["fit", "--config", p(&cfg), "--out", p(&out)]), 0);
    let coef = csv_rows(&out.join("coefficients_q0.50.csv"));
    let isdq: Vec<&Vec<String>> = coef.iter().filter(|r| r[0] == "isdq").collect();
    assert_eq!(isdq.len(), 17);
    assert_eq!(isdq[16][1], "sigma");
}

#[test]
fn coverage_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cov.toml");
    fs::write(&cfg, "[simulate]\npreset = \"small_demo\"\nn = 60\n").unwrap();
    let out = dir.path().join("cov");
    assert_eq!(run(&["coverage", "--config", p(&cfg), "--replicates", "2", "--out", p(&out)]), 0);
    assert_eq!(csv_rows(&out.join("coverage_replicates.csv")).len(), 2);
    let summary = csv_rows(&out.join("coverage_summary.csv"));
    assert!(summary.iter().any(|r| r[0] == "y1:x"));
}

#[test]
fn summarize_describes_the_panel() {
    let dir = tempfile::tempdir().unwrap();
    simulate_demo(dir.path(), "5");
    let out = dir.path().join("s");
    let (code, _) = bin(&["summarize", "--data", p(&dir.path().join("sim/panel.csv")), "--out", p(&out)]);
    assert_eq!(code, 0);
    let s: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["n_units"], 80);
}

#[test]
fn exit_codes_and_error_lines() {
    let dir = tempfile::tempdir().unwrap();
    let (code, err) = bin(&["fit", "--bogus"]);
    assert_eq!(code, 2);
    assert!(err.starts_with("error[config]:"), "{err}");

    let (code, err) = bin(&["fit", "--q", "1.5", "--data", "nowhere.csv"]);
    assert_eq!(code, 2, "{err}");

    let (code, err) = bin(&["fit", "--data", p(&dir.path().join("missing.csv"))]);
    assert_eq!(code, 3, "{err}");
    assert!(err.starts_with("error[data]:"));

    let dup = dir.path().join("dup.csv");
    fs::write(&dup, "unit,occasion,outcome,y,x\n1,1,a,0.5,1\n1,1,a,0.7,2\n").unwrap();
    assert_eq!(bin(&["fit", "--data", p(&dup)]).0, 3);

    let zero = dir.path().join("zero.csv");
    let mut text = String::from("unit,occasion,outcome,y,x,z\n");
    for i in 0..20 {
        for t in 1..=2 {
            text.push_str(&format!("{i},{t},a,{},{},0\n", (i * t) as f64 * 0.37 % 3.0, (i + t) as f64 * 0.11));
        }
    }
    fs::write(&zero, text).unwrap();
    let (code, err) = bin(&["fit", "--data", p(&zero), "--k-max", "1", "--out", p(&dir.path().join("z"))]);
    assert_eq!(code, 4, "{err}");
    assert!(err.starts_with("error[numerical]:") && err.contains("z"), "{err}");

    simulate_demo(dir.path(), "6");
    let cfg = dir.path().join("strict.toml");
    fs::write(&cfg, "[data]\npath = \"sim/panel.csv\"\n[model]\nk_min = 2\nk_max = 2\n[em]\nmin_mass = 0.49\n").unwrap();
    let (code, err) = bin(&["fit", "--config", p(&cfg), "--out", p(&dir.path().join("n"))]);
    assert_eq!(code, 5, "{err}");
    assert!(err.starts_with("error[no_admissible_model]:"));
}
