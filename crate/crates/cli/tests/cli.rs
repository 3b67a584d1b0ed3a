use std::collections::BTreeSet;
use std::fs;
use std::process::Command;

use rbdgen::batch::{read_csv, Mode};
use rbdgen::kernel::text;
use rbdgen::models;
use rbdgen::schedule::Algorithm;
use rbdgen_cli::*;

fn bench(model: &str, algs: &[Algorithm], ns: &[usize], reps: usize) -> BenchConfig {
    let mut cfg = BenchConfig::new(models::by_name(model).unwrap());
    cfg.algorithms = algs.to_vec();
    cfg.ns = ns.to_vec();
    cfg.reps = reps;
    cfg.warmup = 1;
    cfg.workers = 2;
    cfg.seed = 7;
    cfg
}

fn floating_urdf() -> String {
    models::chain7_urdf().replacen("type=\"revolute\"", "type=\"floating\"", 1)
}

#[test]
fn bench_csv_has_one_row_per_mode_and_n() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bench("chain7", &[Algorithm::GradFd], &[16, 256], 2);
    cfg.out = Some(dir.path().join("lat.csv"));
    cmd_bench(&cfg).unwrap();
    let rows = read_csv(&fs::read_to_string(dir.path().join("lat.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    let keys: BTreeSet<_> = rows.iter().map(|r| (r.n, r.mode.name())).collect();
    assert_eq!(keys.len(), 4);
    assert!(rows.iter().all(|r| r.algorithm == "gradFD" && r.model == "chain7" && r.io_us.is_none()));
}

#[test]
fn speedup_is_serial_mean_over_parallel_mean() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bench("planar2", &[Algorithm::Id, Algorithm::Fd], &[8, 32], 3);
    cfg.out = Some(dir.path().join("lat.csv"));
    cmd_bench(&cfg).unwrap();
    let rows = read_csv(&fs::read_to_string(cfg.out.as_ref().unwrap()).unwrap()).unwrap();
    for p in rows.iter().filter(|r| r.mode == Mode::Parallel) {
        let s = rows.iter().find(|r| r.mode == Mode::Serial && r.n == p.n && r.algorithm == p.algorithm).unwrap();
        let expected = s.mean_us / p.mean_us;
        // means are written with 3 decimals, the speedup with 4
        let slack = 5e-5 + expected * (5e-4 / s.mean_us + 5e-4 / p.mean_us);
        assert!((p.speedup.unwrap() - expected).abs() <= slack, "{p:?} vs {s:?}");
    }
    assert!(rows.iter().filter(|r| r.mode == Mode::Serial).all(|r| r.speedup.is_none()));
}

#[test]
fn io_sim_adds_a_nonzero_io_column() {
    let mut cfg = bench("chain7", &[Algorithm::Fd], &[16, 64], 2);
    cfg.io_sim = true;
    let rows = cmd_bench(&cfg).unwrap();
    assert!(rows.iter().all(|r| r.io_us.is_some_and(|x| x > 0.0)));
    let mut buf = Vec::new();
    rbdgen::batch::write_csv(&rows, &mut buf).unwrap();
    assert!(String::from_utf8(buf).unwrap().lines().next().unwrap().ends_with(",io_us"));
}

#[test]
fn same_seed_gives_identical_csv_apart_from_timings() {
    let strip = |cfg: &BenchConfig| -> Vec<_> {
        cmd_bench(cfg).unwrap().into_iter().map(|r| (r.algorithm, r.model, r.n, r.mode, r.workers, r.reps)).collect()
    };
    let cfg = bench("planar2", &[Algorithm::Minv], &[4, 8], 2);
    assert_eq!(strip(&cfg), strip(&cfg));
}

#[test]
fn bench_rejects_bad_configs_and_unwritable_paths() {
    let mut cfg = bench("link1", &[Algorithm::Id], &[], 1);
    assert!(matches!(cmd_bench(&cfg), Err(CliError::Usage(_))));
    cfg.ns = vec![4];
    cfg.reps = 0;
    assert!(matches!(cmd_bench(&cfg), Err(CliError::Usage(_))));
    cfg.reps = 1;
    cfg.out = Some("/nonexistent-dir/x/lat.csv".into());
    assert!(matches!(cmd_bench(&cfg), Err(CliError::Io { .. })));
}

#[test]
fn report_writes_one_series_per_algorithm_and_a_scaling_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bench("planar2", &[Algorithm::Id, Algorithm::GradId], &[4, 16], 2);
    cfg.out = Some(dir.path().join("lat.csv"));
    cmd_bench(&cfg).unwrap();
    let out = dir.path().join("report");
    let files = cmd_report(cfg.out.as_ref().unwrap(), &out).unwrap();
    assert_eq!(files.series.len(), 2);
    assert_eq!(fs::read_dir(&out).unwrap().count(), 3);
    for f in &files.series {
        let text = fs::read_to_string(f).unwrap();
        assert_eq!(text.lines().next().unwrap(), "model,mode,N,workers,mean_us,std_us,speedup");
        assert_eq!(text.lines().count(), 1 + 4);
    }
    // a single robot compared with itself
    let mut rdr = csv::Reader::from_path(&files.scaling).unwrap();
    let ratios: Vec<f64> = rdr.records().map(|r| r.unwrap()[7].parse().unwrap()).collect();
    assert_eq!(ratios.len(), 2 * 2 * 2);
    assert!(ratios.iter().all(|&r| r == 1.0));
}

#[test]
fn scaling_table_pairs_every_model() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("two.csv");
    fs::write(
        &csv_path,
        "algorithm,model,N,mode,workers,mean_us,std_us,reps\n\
         ID,a,16,serial,1,30.000,1.000,5\n\
         ID,b,16,serial,1,10.000,1.000,5\n",
    )
    .unwrap();
    let files = cmd_report(&csv_path, &dir.path().join("r")).unwrap();
    let text = fs::read_to_string(files.scaling).unwrap();
    let ratios: Vec<(String, String, f64)> = text
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[3].to_string(), f[4].to_string(), f[7].parse().unwrap())
        })
        .collect();
    let expected = [("a", "a", 1.0), ("a", "b", 3.0), ("b", "a", 0.3333), ("b", "b", 1.0)];
    assert_eq!(ratios.len(), expected.len());
    for ((a, b, r), (ea, eb, er)) in ratios.iter().zip(expected) {
        assert_eq!((a.as_str(), b.as_str()), (ea, eb));
        assert_eq!(*r, er);
    }
}

#[test]
fn report_rejects_malformed_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    for text in ["", "algorithm,model\nID,x\n", "algorithm,model,N,mode,workers,mean_us,std_us,reps\nID,x,zero,serial,1,1,1,1\n"] {
        fs::write(&p, text).unwrap();
        assert!(cmd_report(&p, &dir.path().join("out")).is_err(), "{text:?}");
    }
}

#[test]
fn serial_series_grows_with_batch_size() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = bench("chain7", &[Algorithm::GradId], &[8, 32, 128], 5);
    cfg.out = Some(dir.path().join("lat.csv"));
    cmd_bench(&cfg).unwrap();
    let files = cmd_report(cfg.out.as_ref().unwrap(), &dir.path().join("r")).unwrap();
    let text = fs::read_to_string(&files.series[0]).unwrap();
    let serial: Vec<(usize, f64)> = text
        .lines()
        .skip(1)
        .filter(|l| l.contains(",serial,"))
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[2].parse().unwrap(), f[4].parse().unwrap())
        })
        .collect();
    assert_eq!(serial.iter().map(|s| s.0).collect::<Vec<_>>(), [8, 32, 128]);
    assert!(serial.windows(2).all(|w| w[1].1 > w[0].1), "{serial:?}");
}

#[test]
fn validate_chain_passes_with_small_gradient_deviation() {
    let mut cfg = ValidateConfig::new(vec![models::chain7()]);
    cfg.states = 10;
    let report = cmd_validate(&cfg).unwrap();
    assert!(report.passed(), "{}", report.table());
    assert_eq!(report.checks.len(), 5);
    for c in &report.checks {
        assert!(c.max_abs <= 1e-12, "{c:?}");
        if c.algorithm.starts_with("grad") {
            assert!(c.fd_max_abs.unwrap() < 1e-5 && c.fd_ratio.unwrap() <= 1.0, "{c:?}");
        } else {
            assert!(c.fd_ratio.is_none());
        }
    }
}

#[test]
fn validate_floating_joint_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("float.urdf");
    fs::write(&p, floating_urdf()).unwrap();
    let err = resolve_models(Some(p.to_str().unwrap())).unwrap_err();
    assert!(matches!(err, CliError::Urdf(rbdgen::urdf::UrdfError::Unsupported { .. })), "{err}");
    assert!(err.to_string().contains("floating"), "{err}");
}

#[test]
fn cross_limb_gradient_blocks_are_exactly_zero() {
    let mut cfg = ValidateConfig::new(vec![models::quad12()]);
    cfg.algorithms = vec![Algorithm::GradId, Algorithm::GradFd];
    cfg.states = 5;
    cfg.fd_states = 1;
    let report = cmd_validate(&cfg).unwrap();
    for c in &report.checks {
        // four legs: 12·12 − 4·3·3 cross entries per matrix, two matrices
        assert_eq!(c.cross_limb_entries, Some(5 * 2 * (144 - 36)));
        assert_eq!(c.cross_limb_max, Some(0.0));
        assert!(c.passed);
    }
}

#[test]
fn coverage_manifest_lists_every_algorithm_and_bundled_model() {
    let mut cfg = ValidateConfig::new(resolve_models(None).unwrap());
    cfg.states = 2;
    cfg.fd_states = 1;
    let report = cmd_validate(&cfg).unwrap();
    assert!(report.passed(), "{}", report.table());
    let manifest = report.manifest();
    let entries = manifest["entries"].as_array().unwrap();
    let covered: BTreeSet<(String, String)> = entries
        .iter()
        .map(|e| (e["model"].as_str().unwrap().to_string(), e["algorithm"].as_str().unwrap().to_string()))
        .collect();
    let expected: BTreeSet<(String, String)> = models::BUNDLED
        .iter()
        .flat_map(|m| Algorithm::ALL.iter().map(move |a| (m.to_string(), a.name().to_string())))
        .collect();
    assert_eq!(covered, expected);
    for e in entries {
        let grad = e["algorithm"].as_str().unwrap().starts_with("grad");
        assert_eq!(e["finite_difference"], grad);
        assert_eq!(e["oracle_states"], 2);
    }
    assert_eq!(manifest["passed"], true);
}

#[test]
fn dump_kernel_text_loads_back() {
    let m = models::quad12();
    let dumped = cmd_dump_kernel(&m, Algorithm::GradId, rbdgen::schedule::DEFAULT_BUDGET, KernelFormat::Text).unwrap();
    let program = text::load(&dumped).unwrap();
    assert_eq!(text::dump(&program), dumped);
    let c = cmd_dump_kernel(&m, Algorithm::Id, 1 << 20, "c".parse().unwrap()).unwrap();
    assert!(c.contains("RBD_FMA"));
    assert!("svg".parse::<KernelFormat>().is_err());
}

#[test]
fn dump_schedule_reports_infeasible_budget() {
    let m = models::humanoid30();
    let json = cmd_dump_schedule(&m, Algorithm::GradFd, rbdgen::schedule::DEFAULT_BUDGET, true).unwrap();
    assert!(json.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
    assert!(matches!(cmd_dump_schedule(&m, Algorithm::GradFd, 10, false), Err(CliError::Schedule(_))));
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_rbdgen");
    let ok = Command::new(bin).args(["validate", "--urdf", "builtin:planar2", "--states", "3"]).output().unwrap();
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    assert_eq!(String::from_utf8_lossy(&ok.stdout).matches("PASS").count(), 5);

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("float.urdf");
    fs::write(&p, floating_urdf()).unwrap();
    let bad = Command::new(bin).args(["validate", "--urdf", p.to_str().unwrap()]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unsupported"));

    let unknown = Command::new(bin).args(["dump-kernel", "--urdf", "builtin:nope", "--alg", "ID"]).output().unwrap();
    assert_eq!(unknown.status.code(), Some(2));
}
