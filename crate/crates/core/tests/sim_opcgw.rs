//! Gateway behavior in simulated mode: item auto-creation, poll cadence,
//! sync-read freshness, writes bypassing the schedule, async tokens, and
//! the layered-latency character.

use scanbench::ciplite::CipClient;
use scanbench::clock::millis;
use scanbench::opcgw::{OpcError, Quality};
use scanbench::plcsim::{reference_fixture, ProtocolId, SimChannel, SimHarness};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn harness(seed: u64) -> SimHarness {
    SimHarness::new(&reference_fixture(), SimChannel::default(), seed).unwrap()
}

#[test]
fn items_auto_create_for_published_variables() {
    let h = harness(1);
    let client = h.opc_connect(millis(10), millis(500)).unwrap();
    let mut names = client.item_names();
    names.sort();
    assert_eq!(names, vec!["CIn".to_string(), "COut".to_string()]);
    assert_eq!(client.item_quality("CIn"), Some(Quality::Bad));
}

#[test]
fn zero_published_variables_yield_no_items() {
    use scanbench::plcsim::{EmulatorConfig, Publish, ScanConfig, VariableSpec};
    let cfg = EmulatorConfig {
        variables: vec![VariableSpec::new("Hidden", 0, Publish::None)],
        scan: ScanConfig::default(),
    };
    let h = SimHarness::new(&cfg, SimChannel::default(), 2).unwrap();
    let client = h.opc_connect(millis(10), millis(500)).unwrap();
    assert!(client.item_names().is_empty());
}

#[test]
fn poll_completions_are_spaced_exactly_one_scan_rate_apart() {
    let h = harness(3);
    let client = h.opc_connect(millis(10), millis(500)).unwrap();
    h.run_for(millis(100));
    let reports = client.poll_reports();
    assert!(
        reports.len() >= 8,
        "expected several polls, got {}",
        reports.len()
    );
    for pair in reports.windows(2) {
        assert_eq!(
            pair[1].completed - pair[0].completed,
            millis(10),
            "poll cadence drifted"
        );
        assert_eq!(pair[1].epoch, pair[0].epoch + 1);
    }
}

#[test]
fn read_sync_returns_fresh_post_call_data() {
    let h = harness(4);
    let mut client = h.opc_connect(millis(10), millis(500)).unwrap();
    // Change the PLC state, then read: the value must reflect a poll that
    // started after the call, hence the new state.
    for round in 0..20 {
        let v = 100.0 + round as f64;
        h.set_variable("CIn", v);
        let got = client.read_sync("COut").unwrap();
        assert_eq!(got, v, "read returned a stale epoch");
    }
}

#[test]
fn read_latency_spans_poll_wait_plus_round_trip() {
    let h = harness(5);
    let scan_rate = millis(10);
    let mut client = h.opc_connect(scan_rate, millis(500)).unwrap();
    // Uniformly random call phases relative to the poll grid.
    let mut rng = StdRng::seed_from_u64(17);
    let trials = 10_000u64;
    let mut total = 0u64;
    let rtt = millis(2); // poll reads align with the scan grid here
    for _ in 0..trials {
        h.run_for(rng.random_range(0..scan_rate));
        let _ = client.read_sync("COut").unwrap();
        let lat = client.last_latency().unwrap();
        assert!(
            lat > rtt && lat <= scan_rate + rtt,
            "latency {lat}ns outside ({rtt}, {}]",
            scan_rate + rtt
        );
        total += lat;
    }
    let mean = total as f64 / trials as f64;
    let expected = scan_rate as f64 / 2.0 + rtt as f64;
    let err = (mean - expected).abs() / expected;
    assert!(
        err < 0.05,
        "mean {mean}ns deviates {err:.3} from scan_rate/2 + RTT = {expected}ns"
    );
}

#[test]
fn worst_case_phase_waits_nearly_a_full_scan_rate() {
    let h = harness(6);
    let scan_rate = millis(10);
    let mut client = h.opc_connect(scan_rate, millis(500)).unwrap();
    client.read_sync("COut").unwrap();
    // Immediately after a completion the next poll is almost a full period
    // away.
    client.read_sync("COut").unwrap();
    let lat = client.last_latency().unwrap();
    assert!(
        lat >= scan_rate - millis(1),
        "expected a near-full poll wait, got {lat}ns"
    );
}

#[test]
fn write_sync_bypasses_the_poll_schedule() {
    let h = harness(7);
    let mut client = h.opc_connect(millis(10), millis(500)).unwrap();
    client.write_sync("CIn", 5.0).unwrap();
    let wlat = client.last_latency().unwrap();
    assert!(
        wlat <= millis(3),
        "write waited on the poll wheel: {wlat}ns"
    );
    let got = client.read_sync("COut").unwrap();
    assert_eq!(got, 5.0);
}

#[test]
fn write_async_consumes_no_simulated_time() {
    let h = harness(8);
    let mut client = h.opc_connect(millis(10), millis(500)).unwrap();
    let before = h.now();
    let token = client.write_async("CIn", 6.5);
    assert_eq!(h.now(), before, "async write advanced the clock");
    assert!(token.poll().is_none(), "completion cannot precede the RTT");
    assert_eq!(token.wait(millis(500)), Ok(()));
}

#[test]
fn async_token_reports_unknown_item() {
    let h = harness(9);
    let mut client = h.opc_connect(millis(10), millis(500)).unwrap();
    let token = client.write_async("NoSuchItem", 1.0);
    match token.poll() {
        Some(Err(OpcError::UnknownItem(_))) => {}
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn unknown_item_read_is_a_name_error() {
    let h = harness(10);
    let mut client = h.opc_connect(millis(10), millis(500)).unwrap();
    assert!(matches!(
        client.read_sync("Nope"),
        Err(OpcError::UnknownItem(_))
    ));
}

#[test]
fn cycle_completes_with_the_nonce_value() {
    let h = harness(11);
    let mut client = h.opc_connect(millis(10), millis(500)).unwrap();
    for i in 0..20 {
        let v = 11.0 + i as f64;
        assert_eq!(client.cycle("CIn", "COut", v).unwrap(), v);
    }
}

#[test]
fn gateway_read_dominates_underlying_explicit_read() {
    let h = harness(12);
    let mut explicit = CipClient::new(h.transport(ProtocolId::Cip), millis(500));
    let mut client = h.opc_connect(millis(10), millis(500)).unwrap();
    let trials = 500;
    let mut explicit_total = 0u64;
    let mut opc_total = 0u64;
    for _ in 0..trials {
        explicit.read_tag("COut").unwrap();
        explicit_total += explicit.last_latency().unwrap();
        client.read_sync("COut").unwrap();
        opc_total += client.last_latency().unwrap();
    }
    assert!(
        opc_total >= explicit_total,
        "the gateway cannot be faster than its driver"
    );
}

#[test]
fn poll_reports_export_as_csv() {
    let h = harness(13);
    let client = h.opc_connect(millis(10), millis(500)).unwrap();
    h.run_for(millis(50));
    let reports = client.poll_reports();
    assert!(!reports.is_empty());
    // Epochs increase 1 per completed poll.
    for (i, r) in reports.iter().enumerate() {
        assert_eq!(r.epoch, i as u64 + 1);
        assert_eq!(r.ok, 2);
    }
    let csv = client.poll_reports_csv();
    assert!(csv.starts_with("epoch,started_us,completed_us,ok,failed\n"));
    assert_eq!(csv.lines().count(), reports.len() + 1);
}
