//! Real-socket behavior: every protocol endpoint over loopback UDP, plus
//! the gateway against a live emulator. No latency-value assertions here;
//! wall-clock numbers are hardware-dependent.

use std::time::Instant;

use scanbench::ciplite::wire::{self, CipMessage, LinkMessage};
use scanbench::ciplite::{CipClient, LinkCycleApi};
use scanbench::clock::millis;
use scanbench::fins::FinsClient;
use scanbench::opcgw::{OpcApi, OpcError, OpcLoopClient, OpcToken};
use scanbench::plcsim::{reference_fixture, LoopbackConsumer, LoopbackPorts, LoopbackServer};
use scanbench::transport::UdpTransport;
use scanbench::udplink::UdpLinkClient;

fn server() -> LoopbackServer {
    LoopbackServer::start(
        &reference_fixture(),
        LoopbackPorts::AUTO,
        &[],
        &[],
        Instant::now(),
        false,
    )
    .unwrap()
}

#[test]
fn fins_round_trip_over_real_sockets() {
    let s = server();
    let mut c = FinsClient::new(
        UdpTransport::connect(s.fins_addr, s.epoch()).unwrap(),
        millis(500),
    );
    c.write_f64(0, 3.25).unwrap();
    assert_eq!(c.read_f64(4).unwrap(), 3.25);
    assert_eq!(c.cycle_pipelined(0, 4, 6.5).unwrap(), 6.5);
}

#[test]
fn cip_round_trip_over_real_sockets() {
    let s = server();
    let mut c = CipClient::new(
        UdpTransport::connect(s.cip_addr, s.epoch()).unwrap(),
        millis(500),
    );
    c.write_tag("CIn", 9.75).unwrap();
    assert_eq!(c.read_tag("COut").unwrap(), 9.75);
    let tags = c.list_tags().unwrap();
    assert_eq!(tags.len(), 2);
}

#[test]
fn udp_echo_over_real_sockets() {
    let s = server();
    let mut c = UdpLinkClient::new(
        UdpTransport::connect(s.raw_addr, s.epoch()).unwrap(),
        millis(500),
    );
    assert_eq!(c.cycle(12.125).unwrap(), 12.125);
}

#[test]
fn port_conflict_is_a_startup_error() {
    let first = server();
    let busy = LoopbackPorts {
        fins: first.fins_addr.port(),
        cip: 0,
        raw: 0,
    };
    let second = LoopbackServer::start(&reference_fixture(), busy, &[], &[], Instant::now(), false);
    assert!(second.is_err(), "expected a bind failure");
}

#[test]
fn consumer_drops_stale_and_foreign_link_data() {
    let epoch = Instant::now();
    let consumer = LoopbackConsumer::bind(2, epoch).unwrap();
    let target = consumer.addr();
    let socket = std::net::UdpSocket::bind("127.0.0.1:0").unwrap();
    let send = |conn: u32, seq: u32, value: f64| {
        let msg = CipMessage::LinkData(LinkMessage {
            connection_id: conn,
            sequence: seq,
            value,
            produce_timestamp: 0,
        });
        socket
            .send_to(&wire::encode(&msg).unwrap(), target)
            .unwrap();
    };
    // An idle producer aimed at a blackhole port, just to assemble the pair.
    let producer = scanbench::plcsim::LoopbackProducer::start(
        1,
        "127.0.0.1:9".parse().unwrap(),
        millis(60_000),
        epoch,
    )
    .unwrap();
    let mut pair = scanbench::plcsim::LinkedPairLoop::new(producer, consumer, millis(100), epoch);
    send(2, 5, 1.0);
    send(2, 4, 2.0); // stale: must not apply
    send(9, 77, 3.0); // foreign connection: must not apply
    send(2, 6, 4.0);
    let deadline = Instant::now() + std::time::Duration::from_secs(2);
    loop {
        if let Ok((v, _)) = pair.linked_read() {
            assert_ne!(v, 2.0, "stale message applied");
            assert_ne!(v, 3.0, "foreign connection applied");
            if v == 4.0 {
                break;
            }
        }
        assert!(Instant::now() < deadline, "consumer never reached seq 6");
        std::thread::sleep(std::time::Duration::from_millis(10));
    }
}

#[test]
fn gateway_runs_against_a_live_emulator() {
    let s = server();
    let channel = scanbench::opcgw::ChannelConfig::default();
    let device = scanbench::opcgw::DeviceConfig::new(&s.cip_addr.to_string(), millis(10));
    let mut gw = OpcLoopClient::connect_device(&channel, &device, millis(500), s.epoch()).unwrap();
    let mut names = gw.item_names();
    names.sort();
    assert_eq!(names, vec!["CIn".to_string(), "COut".to_string()]);
    gw.write_sync("CIn", 4.5).unwrap();
    assert_eq!(gw.read_sync("COut").unwrap(), 4.5);
    let mut token = gw.write_async("CIn", 5.5);
    token.wait(millis(500)).unwrap();
    assert_eq!(gw.cycle("CIn", "COut", 7.25).unwrap(), 7.25);
    assert!(!gw.poll_reports().is_empty());
    assert!(gw
        .poll_reports_csv()
        .starts_with("epoch,started_us,completed_us,ok,failed\n"));
}

#[test]
fn gateway_connect_fails_against_a_dead_port() {
    // Port 1 on loopback: nothing is listening.
    let dead: std::net::SocketAddr = "127.0.0.1:1".parse().unwrap();
    match OpcLoopClient::connect(dead, millis(10), millis(50), Instant::now()) {
        Err(OpcError::Connection(_)) => {}
        other => panic!("unexpected {:?}", other.map(|_| "client")),
    }
}

#[test]
fn linked_pair_cycles_over_real_sockets() {
    let cfg = scanbench::bench::BenchConfig {
        mode: scanbench::bench::Mode::Loopback,
        ..Default::default()
    };
    let mut fixture = scanbench::bench::LoopbackFixture::start(&cfg).unwrap();
    let mut exec_cfg = cfg.clone();
    exec_cfg.protocol = scanbench::bench::Protocol::CipLinked;
    exec_cfg.kind = scanbench::bench::TrialKind::Cycle;
    let mut exec = fixture.build_exec(&exec_cfg).unwrap();
    for i in 0..20 {
        exec.run_once(2_000.5 + i as f64).unwrap();
    }
}
