//! Explicit and implicit CIP behavior against the simulated emulator.

use scanbench::ciplite::{
    CipClient, CipClientError, LinkCycleApi, LinkNode, LinkReadError, TagLink,
};
use scanbench::clock::millis;
use scanbench::plcsim::{reference_fixture, LinkEnds, ProtocolId, SimChannel, SimHarness};

fn harness(seed: u64) -> SimHarness {
    SimHarness::new(&reference_fixture(), SimChannel::default(), seed).unwrap()
}

fn client(h: &SimHarness) -> CipClient<scanbench::plcsim::SimTransport> {
    CipClient::new(h.transport(ProtocolId::Cip), millis(500))
}

#[test]
fn fresh_tag_reads_zero() {
    let h = harness(1);
    let mut c = client(&h);
    assert_eq!(c.read_tag("COut").unwrap(), 0.0);
}

#[test]
fn write_propagates_through_scan_copy() {
    let h = harness(2);
    let mut c = client(&h);
    c.write_tag("CIn", 2.5).unwrap();
    assert_eq!(c.read_tag("COut").unwrap(), 2.5);
}

#[test]
fn unknown_tag_is_a_name_error() {
    let h = harness(3);
    let mut c = client(&h);
    assert!(matches!(
        c.read_tag("NoSuchTag"),
        Err(CipClientError::UnknownTag(_))
    ));
}

#[test]
fn writes_to_output_publish_tags_are_refused() {
    let h = harness(4);
    let mut c = client(&h);
    assert!(matches!(
        c.write_tag("COut", 1.0),
        Err(CipClientError::Direction(_))
    ));
}

#[test]
fn duplicate_connection_id_is_rejected() {
    let h = harness(5);
    h.link_pc_to_plc(9, "CIn", millis(1)).unwrap();
    assert!(h.link_plc_to_pc(9, "COut", millis(1)).is_err());
}

#[test]
fn linked_read_before_any_message_is_not_ready() {
    let h = harness(6);
    // Consumer only; no producer traffic has flowed yet at t=0.
    let consumer = h.link_plc_to_pc(2, "COut", millis(1)).unwrap();
    assert!(consumer.read().is_none());
}

#[test]
fn linked_cycle_round_trips_nonces() {
    let h = harness(7);
    let mut pair = h
        .linked_pair(1, 2, "CIn", "COut", millis(1), millis(500))
        .unwrap();
    for i in 0..100 {
        let v = 50_000.0 + i as f64;
        assert_eq!(pair.linked_cycle(v).unwrap(), v);
        let lat = pair.last_latency().unwrap();
        assert!(lat <= millis(4), "cycle latency {lat}ns above 4ms");
    }
}

#[test]
fn staleness_never_exceeds_rpi_plus_scan_plus_delay() {
    let h = harness(8);
    let mut pair = h
        .linked_pair(1, 2, "CIn", "COut", millis(1), millis(500))
        .unwrap();
    // Prime: one cycle guarantees traffic has flowed.
    pair.linked_cycle(123.25).unwrap();
    let bound = millis(1) + millis(1) + millis(1);
    for step in 0..500 {
        h.run_for(137_000 + (step % 7) * 61_000);
        let (_, staleness) = pair.linked_read().unwrap();
        assert!(
            staleness <= bound,
            "staleness {staleness}ns exceeds bound {bound}ns"
        );
    }
}

#[test]
fn staleness_grows_with_the_clock_between_arrivals() {
    let h = harness(9);
    let mut pair = h
        .linked_pair(1, 2, "CIn", "COut", millis(1), millis(500))
        .unwrap();
    pair.linked_cycle(9.5).unwrap();
    // The cycle completed on an arrival; the next arrival is a full RPI
    // away, so a 0.2 ms advance adds exactly 0.2 ms of staleness.
    let (_, s1) = pair.linked_read().unwrap();
    h.run_for(200_000);
    let (_, s2) = pair.linked_read().unwrap();
    assert_eq!(s2, s1 + 200_000);
}

#[test]
fn two_consumers_on_one_link_converge() {
    let h = harness(10);
    let link = TagLink::new(
        2,
        (LinkNode::Plc, "COut"),
        &[(LinkNode::Pc, "COut_a"), (LinkNode::Pc, "COut_b")],
        millis(1),
    );
    let LinkEnds::PlcToPc(consumers) = h.create_link(&link).unwrap() else {
        panic!("expected consumer ends");
    };
    assert_eq!(consumers.len(), 2);
    h.set_variable("CIn", 4.0);
    h.run_for(millis(6));
    for c in &consumers {
        let (v, _) = c.read().unwrap();
        assert_eq!(v, 4.0);
    }
}

#[test]
fn explicit_cycle_is_costlier_than_linked_cycle() {
    let h = harness(11);
    let mut explicit = client(&h);
    let mut pair = h
        .linked_pair(1, 2, "CIn", "COut", millis(1), millis(500))
        .unwrap();
    let trials = 300;
    let mut explicit_total = 0u64;
    let mut linked_total = 0u64;
    for i in 0..trials {
        explicit
            .cycle_sync("CIn", "COut", 1_000.0 + i as f64)
            .unwrap();
        explicit_total += explicit.last_latency().unwrap();
    }
    for i in 0..trials {
        pair.linked_cycle(9_000.0 + i as f64).unwrap();
        linked_total += pair.last_latency().unwrap();
    }
    assert!(
        linked_total <= explicit_total,
        "linked {linked_total} > explicit {explicit_total}"
    );
}

#[test]
fn linked_read_never_blocks() {
    let h = harness(12);
    let mut pair = h
        .linked_pair(1, 2, "CIn", "COut", millis(1), millis(500))
        .unwrap();
    pair.linked_cycle(77.0).unwrap();
    let before = h.now();
    for _ in 0..100 {
        pair.linked_read().unwrap();
    }
    assert_eq!(h.now(), before, "linked_read advanced simulated time");
}

#[test]
fn not_ready_error_type_is_distinct() {
    let h = harness(13);
    let consumer = h.link_plc_to_pc(2, "COut", millis(1)).unwrap();
    let r = consumer.read().ok_or(LinkReadError::NotReady);
    assert_eq!(r.err(), Some(LinkReadError::NotReady));
}
