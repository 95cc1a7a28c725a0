use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use dsteer_cli::bundle::{CONTROL_MOMENTS, ENSEMBLE, MANIFEST, STATE_MOMENTS};
use dsteer_cli::report::{read_manifest, read_table, HISTOGRAM_PLOT, MOMENT_PLOT, PLOT_DIR};
use dsteer_cli::{emit_plot_data, load_config, run_scenario, CliError, Overrides, ScenarioConfig};
use dsteer_core::planner::CostSpec;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn config(name: &str, output: &Path, ensemble: bool) -> ScenarioConfig {
    let o = Overrides {
        output: Some(output.to_path_buf()),
        ensemble: Some(ensemble),
        ..Overrides::default()
    };
    o.apply(load_config(&scenario(name)).unwrap()).unwrap()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

/// Every tag opened is closed and the document is one `svg` element.
fn assert_svg(path: &Path) {
    let text = fs::read_to_string(path).unwrap();
    assert!(
        text.starts_with("<svg ") && text.trim_end().ends_with("</svg>"),
        "{}",
        path.display()
    );
    let opened = text.matches("<svg").count();
    assert_eq!(opened, 1);
    for line in text.lines().skip(1) {
        assert!(line.starts_with('<') && line.ends_with('>'), "{line}");
        assert!(
            line.ends_with("/>") || line.ends_with("</text>") || line == "</svg>",
            "{line}"
        );
    }
}

#[test]
fn state_csv_ends_on_the_target_moments() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    run_scenario(&config("bimodal_laplace.toml", &out, false)).unwrap();
    let t = read_table(&out.join(STATE_MOMENTS)).unwrap();
    assert_eq!(t.header, ["k", "m1", "m2", "m3", "m4"]);
    let last = t.rows.last().unwrap();
    assert_eq!(last[0], 4.0);
    for (got, want) in last[1..].iter().zip([-0.5, 8.5, -12.5, 150.5]) {
        assert!((got - want).abs() <= 1e-10 * want.abs(), "{got} {want}");
    }
    assert!(!out.join(ENSEMBLE).exists());
}

#[test]
fn manifest_energy_matches_the_control_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    run_scenario(&config("gaussian_pair.toml", &out, false)).unwrap();
    let m = read_manifest(&out).unwrap();
    let u = read_table(&out.join(CONTROL_MOMENTS)).unwrap();
    assert_eq!(u.rows.len(), m.horizon);
    let sum: f64 = u.column("m2").unwrap().iter().sum();
    assert!(
        (sum - m.total_energy).abs() <= 1e-12 * m.total_energy,
        "{sum} {}",
        m.total_energy
    );
    assert!(m.control_certificates.iter().all(|c| *c > 0.0));
    assert_eq!(m.system_seed, Some(0));
    assert!(m.sensitivity.unwrap().cosine_similarity.is_some());
}

#[test]
fn costs_order_the_total_energy() {
    let tmp = tempfile::tempdir().unwrap();
    let energy_of = |name: &str, cost: Option<CostSpec>| {
        let out = tmp
            .path()
            .join(format!("{name}-{}", cost.as_ref().map_or("file", |c| c.name())));
        let mut cfg = config(name, &out, false);
        if let Some(c) = cost {
            cfg.cost = c;
        }
        run_scenario(&cfg).unwrap().manifest.total_energy
    };
    let energy = energy_of("bimodal_laplace.toml", Some(CostSpec::Energy));
    let smooth = energy_of("bimodal_laplace.toml", None);
    let weighted = energy_of("bimodal_laplace_weighted.toml", None);
    assert!(energy < smooth);
    assert!(energy <= weighted && weighted <= smooth, "{energy} {weighted} {smooth}");
}

#[test]
fn identical_configs_give_identical_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    run_scenario(&config("bimodal_laplace.toml", &a, true)).unwrap();
    run_scenario(&config("bimodal_laplace.toml", &b, true)).unwrap();
    let (fa, fb) = (csv_files(&a), csv_files(&b));
    assert!(fa.iter().any(|(n, _)| n == ENSEMBLE));
    assert_eq!(fa, fb);
    assert_eq!(fs::read(a.join(MANIFEST)).unwrap(), fs::read(b.join(MANIFEST)).unwrap());
}

#[test]
fn report_writes_parseable_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    run_scenario(&config("bimodal_laplace.toml", &out, true)).unwrap();
    let files = emit_plot_data(&out).unwrap();
    let plots = out.join(PLOT_DIR);
    assert!(files.contains(&plots.join(MOMENT_PLOT)));
    assert!(files.contains(&plots.join(HISTOGRAM_PLOT)));
    for k in 0..4 {
        assert!(files.contains(&plots.join(format!("density_k{k}.svg"))));
    }
    for f in files.iter().filter(|f| f.extension().is_some_and(|e| e == "svg")) {
        assert_svg(f);
    }
    // one panel per moment order
    let moments = fs::read_to_string(plots.join(MOMENT_PLOT)).unwrap();
    assert_eq!(moments.matches("<rect").count(), 4);
}

#[test]
fn report_without_ensemble_has_no_histogram() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    run_scenario(&config("bimodal_laplace.toml", &out, false)).unwrap();
    emit_plot_data(&out).unwrap();
    let plots = out.join(PLOT_DIR);
    assert!(plots.join(MOMENT_PLOT).is_file());
    assert!(plots.join("density_k3.svg").is_file());
    assert!(!plots.join(HISTOGRAM_PLOT).exists());
}

#[test]
fn report_rejects_incomplete_bundles() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    run_scenario(&config("bimodal_laplace.toml", &out, false)).unwrap();
    fs::remove_file(out.join("density_k2.csv")).unwrap();
    assert!(matches!(emit_plot_data(&out), Err(CliError::MissingFile(_))));
    assert!(matches!(emit_plot_data(tmp.path()), Err(CliError::MissingFile(_))));
}

#[test]
fn report_rejects_unnormalized_densities() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    run_scenario(&config("bimodal_laplace.toml", &out, false)).unwrap();
    let path = out.join("density_k1.csv");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    let mut scaled = format!("{}\n", lines.next().unwrap());
    for line in lines {
        let (u, p) = line.split_once(',').unwrap();
        scaled.push_str(&format!("{u},{:.16e}\n", 1.001 * p.parse::<f64>().unwrap()));
    }
    fs::write(&path, scaled).unwrap();
    assert!(matches!(emit_plot_data(&out), Err(CliError::Normalization { .. })));
}

const INFEASIBLE: &str = r#"
[system]
horizon = 1
order = 2
coefficients = [0.4]

[initial]
family = "gaussian"
mean = 0.0
variance = 1.0

[terminal]
family = "gaussian"
mean = 0.0
variance = 0.01
"#;

#[test]
fn failed_runs_leave_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    let mut cfg = dsteer_cli::parse_config(INFEASIBLE).unwrap();
    cfg.output = out.clone();
    let e = run_scenario(&cfg).unwrap_err();
    assert_eq!(e.exit_code(), 2, "{e}");
    assert_eq!(fs::read_dir(tmp.path()).unwrap().count(), 0);
}

#[test]
fn non_bundle_outputs_are_not_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("keep.txt"), "x").unwrap();
    let e = run_scenario(&config("bimodal_laplace.toml", tmp.path(), false)).unwrap_err();
    assert!(matches!(e, CliError::OutputExists(_)));
    assert!(tmp.path().join("keep.txt").is_file());
}

fn dsteer(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_dsteer")).args(args).output().unwrap()
}

#[test]
fn binary_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("b");
    let ok = dsteer(&[
        "steer-ensemble",
        scenario("bimodal_laplace.toml").to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
        "--agents",
        "200",
        "--report",
    ]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert_eq!(read_manifest(&out).unwrap().ensemble.unwrap().agents, 200);
    assert!(out.join(PLOT_DIR).join(HISTOGRAM_PLOT).is_file());

    let cfg = tmp.path().join("infeasible.toml");
    fs::write(&cfg, INFEASIBLE).unwrap();
    let bad = tmp.path().join("nope");
    let infeasible = dsteer(&["plan", cfg.to_str().unwrap(), "--output", bad.to_str().unwrap()]);
    assert_eq!(infeasible.status.code(), Some(2));
    assert!(!bad.exists());

    assert_eq!(dsteer(&["plan"]).status.code(), Some(1));
    assert_eq!(dsteer(&["frobnicate"]).status.code(), Some(1));
    fs::write(&cfg, INFEASIBLE.replace("order = 2", "order = 2\nbogus = 1")).unwrap();
    let usage = dsteer(&["plan", cfg.to_str().unwrap()]);
    assert_eq!(usage.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&usage.stderr).contains("line 5"));
    assert_eq!(dsteer(&["report", tmp.path().to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn realize_subcommand_writes_a_normalized_density() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("r");
    let run = dsteer(&[
        "realize",
        "--moments",
        "-0.5,8.5,-12.5,150.5",
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let t = read_table(&out.join("density.csv")).unwrap();
    let integral = dsteer_cli::report::trapezoid(&t.column("u").unwrap(), &t.column("density").unwrap());
    assert!((integral - 1.0).abs() <= 1e-4, "{integral}");

    let cauchy = tmp.path().join("c");
    let run = dsteer(&[
        "realize",
        "--moments",
        "0,2,0,10",
        "--family",
        "cauchy",
        "--output",
        cauchy.to_str().unwrap(),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));

    let bad = dsteer(&[
        "realize",
        "--moments",
        "0,-1,0,1",
        "--output",
        tmp.path().join("x").to_str().unwrap(),
    ]);
    assert_eq!(bad.status.code(), Some(2));
    let odd = dsteer(&[
        "realize",
        "--moments",
        "0,1,0",
        "--output",
        tmp.path().join("y").to_str().unwrap(),
    ]);
    assert_eq!(odd.status.code(), Some(1));
}
