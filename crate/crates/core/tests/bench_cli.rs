//! Trial-runner contracts and the command-line surface.

use scanbench::bench::{
    cli_main, compute_stats, run_trials, samples_from_csv, BenchConfig, LatencyStats, Mode,
    Outcome, Protocol, Report, RunError, StatsDoc, TrialKind,
};

fn sim_cfg(protocol: Protocol, kind: TrialKind, trials: u64) -> BenchConfig {
    BenchConfig {
        protocol,
        kind,
        trials,
        warmup: 10,
        seed: 7,
        pipelined: false,
        ..Default::default()
    }
}

fn tmp_path(name: &str) -> std::path::PathBuf {
    let mut p = std::env::temp_dir();
    p.push(format!("scanbench_test_{}_{name}", std::process::id()));
    p
}

#[test]
fn udp_cycle_samples_stay_in_the_echo_window() {
    let out = run_trials(&sim_cfg(Protocol::Udp, TrialKind::Cycle, 10)).unwrap();
    assert_eq!(out.samples.len(), 10);
    for s in &out.samples {
        assert_eq!(s.outcome, Outcome::Ok);
        let us = s.latency_us.unwrap();
        assert!((3_000..=4_000).contains(&us), "{us}us outside [3ms, 4ms]");
    }
}

#[test]
fn single_trial_no_warmup_works() {
    let mut cfg = sim_cfg(Protocol::Fins, TrialKind::Read, 1);
    cfg.warmup = 0;
    let out = run_trials(&cfg).unwrap();
    assert_eq!(out.samples.len(), 1);
    assert_eq!(out.samples[0].outcome, Outcome::Ok);
}

#[test]
fn trials_never_overlap() {
    let out = run_trials(&sim_cfg(Protocol::Fins, TrialKind::Cycle, 200)).unwrap();
    for pair in out.intervals.windows(2) {
        assert!(
            pair[0].1 <= pair[1].0,
            "trial intervals overlap: {:?} then {:?}",
            pair[0],
            pair[1]
        );
    }
}

#[test]
fn write_and_cycle_nonces_are_unique_per_run() {
    let mut seq = scanbench::bench::NonceSeq::new(123);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..100_000 {
        assert!(seen.insert(seq.next_value().to_bits()), "nonce repeated");
    }
}

#[test]
fn dead_loopback_target_aborts_with_timeouts() {
    struct AlwaysTimeout;
    impl scanbench::bench::TrialExec for AlwaysTimeout {
        fn run_once(&mut self, _nonce: f64) -> Result<u64, scanbench::bench::TrialFailure> {
            Err(scanbench::bench::TrialFailure {
                outcome: Outcome::Timeout,
                detail: "nothing listening".into(),
            })
        }
        fn now(&self) -> u64 {
            0
        }
    }
    let cfg = sim_cfg(Protocol::Udp, TrialKind::Cycle, 1000);
    match scanbench::bench::run_with_exec(&cfg, &mut AlwaysTimeout) {
        Err(RunError::Aborted {
            non_ok, threshold, ..
        }) => {
            assert_eq!(threshold, 10); // 1% of 1010
            assert_eq!(non_ok, threshold + 1);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn simulated_runs_reproduce_identical_sample_sets() {
    let cfg = sim_cfg(Protocol::Fins, TrialKind::Cycle, 500);
    let a = run_trials(&cfg).unwrap();
    let b = run_trials(&cfg).unwrap();
    assert_eq!(a.samples, b.samples);
    let opc = sim_cfg(Protocol::Opc, TrialKind::Cycle, 50);
    let a = run_trials(&opc).unwrap();
    let b = run_trials(&opc).unwrap();
    assert_eq!(a.samples, b.samples);
}

#[test]
fn pipelined_flag_lowers_the_fins_cycle_mean() {
    let mut cfg = sim_cfg(Protocol::Fins, TrialKind::Cycle, 500);
    cfg.pipelined = false;
    let sync_stats = compute_stats(&run_trials(&cfg).unwrap().samples).unwrap();
    cfg.pipelined = true;
    let pipe_stats = compute_stats(&run_trials(&cfg).unwrap().samples).unwrap();
    assert!(
        pipe_stats.mean_us < sync_stats.mean_us,
        "pipelined {} >= sync {}",
        pipe_stats.mean_us,
        sync_stats.mean_us
    );
}

#[test]
fn cli_bench_writes_samples_and_stats_then_replay_matches() {
    let samples_path = tmp_path("samples.csv");
    let stats_path = tmp_path("stats.json");
    let replay_path = tmp_path("replay.json");
    let code = cli_main([
        "scanbench",
        "bench",
        "--protocol",
        "fins",
        "--kind",
        "cycle",
        "--pipelined",
        "--mode",
        "sim",
        "--trials",
        "200",
        "--warmup",
        "20",
        "--out-samples",
        samples_path.to_str().unwrap(),
        "--out-stats",
        stats_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let doc: StatsDoc =
        serde_json::from_str(&std::fs::read_to_string(&stats_path).unwrap()).unwrap();
    assert_eq!(doc.stats.count, 200);

    let csv = std::fs::read_to_string(&samples_path).unwrap();
    let samples = samples_from_csv(&csv).unwrap();
    assert_eq!(samples.len(), 200);

    let code = cli_main([
        "scanbench",
        "replay",
        samples_path.to_str().unwrap(),
        "--out-stats",
        replay_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let replayed: LatencyStats =
        serde_json::from_str(&std::fs::read_to_string(&replay_path).unwrap()).unwrap();
    assert_eq!(replayed, doc.stats);

    for p in [samples_path, stats_path, replay_path] {
        let _ = std::fs::remove_file(p);
    }
}

#[test]
fn cli_compare_sim_emits_full_matrix() {
    let out_path = tmp_path("report.md");
    let json_path = tmp_path("report.json");
    let code = cli_main([
        "scanbench",
        "compare",
        "--mode",
        "sim",
        "--trials",
        "50",
        "--warmup",
        "5",
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let md = std::fs::read_to_string(&out_path).unwrap();
    assert!(md.starts_with("| Protocol | Read, ms | Write, ms | Write/Read Cycle, ms |"));
    for proto in ["FINS", "CIP", "UDP", "OPC"] {
        assert!(md.contains(&format!("| {proto} |")), "missing row {proto}");
    }

    let code = cli_main([
        "scanbench",
        "compare",
        "--mode",
        "sim",
        "--trials",
        "50",
        "--warmup",
        "5",
        "--format",
        "json",
        "--out",
        json_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let report: Report =
        serde_json::from_str(&std::fs::read_to_string(&json_path).unwrap()).unwrap();
    assert_eq!(report.cells.len(), 12);

    let _ = std::fs::remove_file(out_path);
    let _ = std::fs::remove_file(json_path);
}

#[test]
fn cli_usage_errors_exit_2() {
    assert_eq!(cli_main(["scanbench", "definitely-not-a-command"]), 2);
    assert_eq!(cli_main(["scanbench", "bench", "--protocol", "fins"]), 2); // missing --kind
    assert_eq!(
        cli_main([
            "scanbench",
            "bench",
            "--protocol",
            "nope",
            "--kind",
            "read",
            "--trials",
            "1"
        ]),
        1 // parses, fails at validation
    );
}

#[test]
fn cli_replay_missing_file_exits_1() {
    assert_eq!(
        cli_main(["scanbench", "replay", "/nonexistent/samples.csv"]),
        1
    );
}

#[test]
fn cli_zero_trials_is_rejected() {
    assert_eq!(
        cli_main([
            "scanbench",
            "bench",
            "--protocol",
            "udp",
            "--kind",
            "cycle",
            "--trials",
            "0"
        ]),
        1
    );
}

#[test]
fn config_file_drives_the_sim() {
    let cfg_path = tmp_path("fixture.conf");
    std::fs::write(
        &cfg_path,
        "task_period_us = 1000\none_way_delay_us = 1000\nvar = CIn,0,input\nvar = COut,4,output\ncopy = CIn,COut\n",
    )
    .unwrap();
    let stats_path = tmp_path("cfgstats.json");
    let code = cli_main([
        "scanbench",
        "bench",
        "--protocol",
        "udp",
        "--kind",
        "cycle",
        "--mode",
        "sim",
        "--trials",
        "20",
        "--warmup",
        "2",
        "--config",
        cfg_path.to_str().unwrap(),
        "--out-stats",
        stats_path.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let doc: StatsDoc =
        serde_json::from_str(&std::fs::read_to_string(&stats_path).unwrap()).unwrap();
    assert!(doc.stats.min_us >= 3_000 && doc.stats.max_us <= 4_000);
    let _ = std::fs::remove_file(cfg_path);
    let _ = std::fs::remove_file(stats_path);
}

#[test]
fn compare_report_is_deterministic_for_a_fixed_seed() {
    let cfg = BenchConfig {
        mode: Mode::Simulated,
        trials: 40,
        warmup: 4,
        seed: 99,
        ..Default::default()
    };
    let mut a = scanbench::bench::run_compare(&cfg);
    let mut b = scanbench::bench::run_compare(&cfg);
    a.emitted_unix_s = 0;
    b.emitted_unix_s = 0;
    a.clock_resolution_ns = 0;
    b.clock_resolution_ns = 0;
    assert_eq!(a, b);
}
