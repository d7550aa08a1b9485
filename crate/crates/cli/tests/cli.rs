//! Runs the `btd` binary end to end in temporary directories.

use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

use btd::io::{read_factors, read_tensor, write_tensor};
use btd::metrics::nmse_blocks;
use btd::synth::{add_noise_snr, gen_btd};
use btd::DenseTensor3;

fn btd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_btd")).args(args).output().expect("spawn btd")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn meta(dir: &Path) -> HashMap<String, String> {
    std::fs::read_to_string(dir.join("run.meta"))
        .unwrap()
        .lines()
        .map(|l| {
            let (k, v) = l.split_once(" = ").unwrap();
            (k.to_string(), v.to_string())
        })
        .collect()
}

fn csv_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rd = csv::Reader::from_path(path).unwrap();
    let header = rd.headers().unwrap().iter().map(String::from).collect();
    let rows = rd.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect();
    (header, rows)
}

#[test]
fn synth_then_decompose_recovers_structure() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = btd(&["synth", "--dims", "12,12,10", "--ranks", "2,3", "--seed", "4", "--out", p(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(meta(&data)["ranks"], "2,3");
    assert!(!data.join("noisy.t3").exists());

    let res = tmp.path().join("res");
    let out = btd(&[
        "decompose",
        p(&data.join("clean.t3")),
        "--lambda",
        "10",
        "--r-ini",
        "4",
        "--l-ini",
        "4",
        "--restarts",
        "3",
        "--max-iters",
        "2000",
        "--out",
        p(&res),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("R_est = 2"), "{stdout}");

    let truth = read_factors(&data.join("truth")).unwrap();
    let est = read_factors(&res.join("factors")).unwrap();
    let mut l = est.ranks();
    l.sort_unstable();
    assert_eq!(l, vec![2, 3]);
    assert!(nmse_blocks(&truth, &est).unwrap().0 < 1e-2);

    let m = meta(&res);
    assert_eq!(m["command"], "decompose");
    assert_eq!(m["algo"], "hirls");
    assert_eq!(m["lambda"], "10");
    assert_eq!(m["restarts"], "3");
    assert_eq!(m["weighting"], "product");
    assert_eq!(m["converged"], "true");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(res.join("ranks.json")).unwrap()).unwrap();
    assert_eq!(json["r_est"], 2);
    let (header, rows) = csv_table(&res.join("trace.csv"));
    assert_eq!(header, ["iter", "objective", "data_fit", "reg", "rel_diff", "active_R", "active_L_json", "wall_ms"]);
    assert_eq!(rows.len().to_string(), m["iterations"]);
}

#[test]
fn one_entry_tensor() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("one.txt");
    std::fs::write(&input, "# dims 1 1 1\n0 0 0 2.5\n").unwrap();
    let res = tmp.path().join("res");
    let out = btd(&["decompose", p(&input), "--r-ini", "2", "--l-ini", "2", "--out", p(&res)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(std::fs::read_to_string(res.join("ranks.txt")).unwrap(), "R_est = 1\nL_est = 1\n");
}

#[test]
fn als_baseline_writes_fixed_ranks() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("x.t3");
    let (_, x) = gen_btd((5, 4, 3), &[1], 1).unwrap();
    write_tensor(&input, &x).unwrap();
    let res = tmp.path().join("res");
    let out =
        btd(&["decompose", p(&input), "--algo", "als", "--R", "1", "--L", "1", "--rel-tol", "1e-12", "--out", p(&res)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(read_factors(&res.join("factors")).unwrap().ranks(), vec![1]);
    assert_eq!(meta(&res)["algo"], "als");

    let out = btd(&["decompose", p(&input), "--algo", "als", "--R", "2", "--L", "1,2,3", "--out", p(&res)]);
    assert_eq!(code(&out), 2);
}

#[test]
fn iteration_cap_exits_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("x.t3");
    let (_, x) = gen_btd((6, 6, 5), &[2, 2], 2).unwrap();
    write_tensor(&input, &x).unwrap();
    let res = tmp.path().join("res");
    let out =
        btd(&["decompose", p(&input), "--lambda", "1", "--max-iters", "2", "--rel-tol", "1e-15", "--out", p(&res)]);
    assert_eq!(code(&out), 3);
    assert_eq!(meta(&res)["converged"], "false");
    assert!(res.join("factors").join("C.mat").exists());
}

#[test]
fn usage_and_input_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("x.t3");
    write_tensor(&input, &DenseTensor3::zeros((2, 2, 2))).unwrap();
    let res = tmp.path().join("res");
    let (i, r) = (p(&input), p(&res));

    assert_eq!(code(&btd(&["decompose", i, "--lambda", "1", "--sigma-hat", "0.1", "--out", r])), 2);
    assert_eq!(code(&btd(&["decompose", i, "--r-ini", "0", "--out", r])), 2);
    assert_eq!(code(&btd(&["decompose", i])), 2);
    assert_eq!(code(&btd(&["decompose", i, "--R", "2", "--out", r])), 2);
    assert_eq!(code(&btd(&["no-such-command"])), 2);
    assert_eq!(code(&btd(&["synth", "--dims", "3,3", "--ranks", "1", "--out", r])), 2);

    let bad = tmp.path().join("bad.t3");
    std::fs::write(&bad, b"T3 2 2\n").unwrap();
    let out = btd(&["decompose", p(&bad), "--out", r]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("parse error at byte"), "{}", stderr(&out));

    let missing = tmp.path().join("missing.t3");
    assert_eq!(code(&btd(&["decompose", p(&missing), "--out", r])), 1);
}

#[test]
fn config_file_sits_between_flags_and_defaults() {
    let tmp = tempfile::tempdir().unwrap();
    let input = tmp.path().join("x.t3");
    let (_, x) = gen_btd((5, 5, 4), &[1], 3).unwrap();
    write_tensor(&input, &x).unwrap();
    let cfg = tmp.path().join("run.cfg");
    std::fs::write(&cfg, "# shared settings\nlambda = 3\nr_ini = 2\nl-ini = 2\nmax_iters = 4\nweighting = majorizer\n")
        .unwrap();
    let res = tmp.path().join("res");
    let out =
        btd(&["decompose", p(&input), "--config", p(&cfg), "--max-iters", "3", "--sigma-hat", "0.5", "--out", p(&res)]);
    assert!(matches!(code(&out), 0 | 3), "{}", stderr(&out));
    let m = meta(&res);
    assert_eq!(m["max_iters"], "3");
    assert_eq!(m["r_ini"], "2");
    assert_eq!(m["l_ini"], "2");
    assert_eq!(m["weighting"], "majorizer");
    assert_eq!(m["sigma_hat"], "0.5");
    assert!(!m.contains_key("lambda"));
    assert_eq!(m["eta"], "0.00000001");

    std::fs::write(&cfg, "lambda = 1\nnot_a_flag = 2\n").unwrap();
    let out = btd(&["decompose", p(&input), "--config", p(&cfg), "--out", p(&res)]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("not_a_flag"), "{}", stderr(&out));

    std::fs::write(&cfg, "lambda 1\n").unwrap();
    assert_eq!(code(&btd(&["decompose", p(&input), "--config", p(&cfg), "--out", p(&res)])), 1);
}

#[test]
fn synth_with_noise_records_sigma() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = btd(&["synth", "--dims", "6,5,4", "--r", "3", "--l-range", "1,2", "--snr", "10", "--out", p(&data)]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let m = meta(&data);
    let sigma: f64 = m["sigma"].parse().unwrap();
    let clean = read_tensor(&data.join("clean.t3")).unwrap();
    let noisy = read_tensor(&data.join("noisy.t3")).unwrap();
    let snr = 10.0 * (clean.frobenius_norm_sq() / clean.distance_sq(&noisy).unwrap()).log10();
    assert!((snr - 10.0).abs() < 1e-9);
    assert!(sigma > 0.0);
    assert_eq!(m["ranks"].split(',').count(), 3);
}

#[test]
fn bench_snr_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let res = tmp.path().join("res");
    let out = btd(&[
        "bench-snr",
        "--dims",
        "8,7,6",
        "--r",
        "2",
        "--l-range",
        "1,2",
        "--snrs",
        "10,inf",
        "--trials",
        "1",
        "--als-l",
        "2",
        "--r-ini",
        "3",
        "--l-ini",
        "3",
        "--max-iters",
        "30",
        "--out",
        p(&res),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = csv_table(&res.join("results.csv"));
    assert_eq!(header, ["snr_db", "trial", "algo", "nmse", "wall_s", "iterations", "r_est"]);
    assert_eq!(rows.len(), 4);
    let (header, rows) = csv_table(&res.join("summary.csv"));
    assert_eq!(header, ["snr_db", "algo", "median_nmse", "mean_wall_s", "trials"]);
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| r[1] == "hirls" || r[1] == "als"));
    assert_eq!(code(&btd(&["bench-snr", "--sigma-hat", "1", "--out", p(&res)])), 2);
}

#[test]
fn bench_rank_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let res = tmp.path().join("res");
    let out = btd(&[
        "bench-rank",
        "--ranks",
        "2,1",
        "--dims",
        "7,7,5",
        "--trials",
        "2",
        "--r-ini",
        "3",
        "--l-ini",
        "3",
        "--max-iters",
        "30",
        "--out",
        p(&res),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = csv_table(&res.join("trials.csv"));
    assert_eq!(header, ["trial", "r_est", "nmse", "L_1", "L_2"]);
    assert_eq!(rows.len(), 2);
    let (header, _) = csv_table(&res.join("frequencies.csv"));
    assert_eq!(header, ["block", "true_L", "est_L", "frequency"]);
    let (header, rows) = csv_table(&res.join("summary.csv"));
    assert_eq!(header, ["true_L", "trials", "r_success", "modal_L"]);
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0][0].as_str(), rows[0][1].as_str()), ("2 1", "2"));
    assert!(res.join("r_frequencies.csv").exists());
    assert_eq!(code(&btd(&["bench-rank", "--scenario", "3", "--out", p(&res)])), 2);
}

#[test]
fn trace_smoke() {
    let tmp = tempfile::tempdir().unwrap();
    let res = tmp.path().join("res");
    let out = btd(&[
        "trace",
        "--dims",
        "8,7,6",
        "--r",
        "2",
        "--l-range",
        "1,2",
        "--realizations",
        "2",
        "--r-ini",
        "3",
        "--l-ini",
        "3",
        "--max-iters",
        "15",
        "--out",
        p(&res),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let (header, rows) = csv_table(&res.join("trace.csv"));
    assert_eq!(header, ["realization", "iter", "nmse", "objective", "data_fit", "rel_diff", "active_R"]);
    assert!(!rows.is_empty() && rows.len() <= 30);
    let (header, rows) = csv_table(&res.join("stops.csv"));
    assert_eq!(header, ["realization", "iterations", "stop_iteration", "final_nmse"]);
    assert_eq!(rows.len(), 2);
    assert_eq!(code(&btd(&["trace", "--restarts", "2", "--out", p(&res)])), 2);
}

#[test]
fn denoise_improves_ssim_on_most_bands() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, clean) = gen_btd((24, 24, 10), &[2, 3], 5).unwrap();
    let (noisy, _) = add_noise_snr(&clean, 5.0, 6).unwrap();
    let (c, n) = (tmp.path().join("clean.t3"), tmp.path().join("noisy.t3"));
    write_tensor(&c, &clean).unwrap();
    write_tensor(&n, &noisy).unwrap();
    let res = tmp.path().join("res");
    let out = btd(&[
        "denoise",
        p(&n),
        "--reference",
        p(&c),
        "--ssim",
        "--r-ini",
        "4",
        "--l-ini",
        "4",
        "--max-iters",
        "500",
        "--out",
        p(&res),
    ]);
    assert!(matches!(code(&out), 0 | 3), "{}", stderr(&out));
    let (header, rows) = csv_table(&res.join("ssim.csv"));
    assert_eq!(header, ["band", "ssim_noisy", "ssim_denoised"]);
    assert_eq!(rows.len(), 10);
    let improved = rows.iter().filter(|r| r[2].parse::<f64>().unwrap() > r[1].parse::<f64>().unwrap()).count();
    assert!(improved * 10 >= rows.len() * 9, "improved on {improved}/10 bands");
    assert_eq!(read_tensor(&res.join("denoised.t3")).unwrap().dims(), (24, 24, 10));
    assert_eq!(meta(&res)["sigma_hat_source"], "estimated");

    assert_eq!(code(&btd(&["denoise", p(&n), "--ssim", "--out", p(&res)])), 2);
}
