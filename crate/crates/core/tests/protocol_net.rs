use std::net::UdpSocket;
use std::thread;
use std::time::Duration;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use opgd::harness::{effector_corpus, random_command, random_frame};
use opgd::protocol::{
    encode_effectors, encode_sensors, error_line, parse_effectors, parse_error_line, parse_groups,
    parse_sensors, Client, ProtocolError, ServeStats, Server,
};
use opgd::sim::{EffectorCommand, SimConfig, Simulator, Track};

fn server(max_requests: Option<u64>) -> Server {
    let sim = Simulator::new(Track::default_oval(), SimConfig::default(), 0).unwrap();
    let s = Server::bind("127.0.0.1:0", sim, 0, Some(Duration::from_secs(2))).unwrap();
    match max_requests {
        Some(n) => s.with_max_requests(n),
        None => s,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn sensor_frames_roundtrip_bit_exactly(seed in any::<u64>(), bits in any::<u64>()) {
        let mut frame = random_frame(&mut ChaCha8Rng::seed_from_u64(seed));
        // arbitrary finite doubles in an unconstrained field
        let odd = f64::from_bits(bits);
        if odd.is_finite() {
            frame.speed_z = odd;
        }
        let back = parse_sensors(&encode_sensors(&frame)).unwrap();
        prop_assert_eq!(back.speed_z.to_bits(), frame.speed_z.to_bits());
        prop_assert_eq!(back, frame);
    }

    #[test]
    fn effector_commands_roundtrip(seed in any::<u64>()) {
        let cmd = random_command(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(parse_effectors(&encode_effectors(&cmd)).unwrap(), cmd);
    }

    #[test]
    fn whitespace_between_groups_is_ignored(seed in any::<u64>(), pad in "[ \t]{0,3}") {
        let cmd = random_command(&mut ChaCha8Rng::seed_from_u64(seed));
        let line = encode_effectors(&cmd).replace(")(", &format!("){pad}("));
        prop_assert_eq!(parse_effectors(&line).unwrap(), cmd);
    }

    #[test]
    fn parsing_arbitrary_text_never_panics(line in "\\PC{0,80}") {
        let _ = parse_groups(&line);
        let _ = parse_effectors(&line);
        let _ = parse_sensors(&line);
    }

    #[test]
    fn error_lines_carry_their_reason(reason in "[a-z (),]{0,40}") {
        let line = error_line(&reason);
        prop_assert_eq!(line.matches('(').count(), 1);
        prop_assert_eq!(line.matches(')').count(), 1);
        let back = parse_error_line(&line).unwrap();
        let cleaned = reason.replace('(', "[").replace(')', "]");
        prop_assert_eq!(back, cleaned.as_str());
        prop_assert!(parse_effectors(&line).is_err());
    }
}

#[test]
fn effector_corpus_outcomes() {
    for (expected, line) in effector_corpus() {
        let got = match parse_effectors(line) {
            Ok(_) => "ok",
            Err(ProtocolError::Range { .. }) => "range",
            Err(ProtocolError::UnknownField(_)) => "unknown",
            Err(_) => "parse",
        };
        assert_eq!(got, expected, "{line:?}");
    }
}

#[test]
fn omitted_effectors_take_defaults() {
    let cmd = parse_effectors("(accel 1)").unwrap();
    assert_eq!(cmd.accel(), 1.0);
    assert_eq!(cmd.gear(), EffectorCommand::default().gear());
    assert_eq!(cmd.meta(), 0);
}

#[test]
fn handle_counts_errors_and_resets() {
    let mut s = server(None);
    let mut stats = ServeStats::default();
    assert!(parse_sensors(&s.handle("(accel 1)(gear 1)", &mut stats)).is_ok());
    assert!(parse_error_line(&s.handle("(accel 7)", &mut stats)).is_some());
    assert!(parse_error_line(&s.handle("(bogus 1)", &mut stats)).is_some());
    let after_reset = parse_sensors(&s.handle("(meta 1)", &mut stats)).unwrap();
    assert_eq!(after_reset.dist_raced, 0.0);
    assert_eq!((stats.requests, stats.errors, stats.resets), (4, 2, 1));
}

#[test]
fn server_stops_after_the_request_limit() {
    let mut s = server(Some(3));
    let addr = s.local_addr().unwrap();
    let worker = thread::spawn(move || s.run());
    let client = Client::connect(addr, Duration::from_secs(2)).unwrap();
    let cmd = EffectorCommand::drive(0.0, 1.0, 0.0, 1).unwrap();
    for _ in 0..3 {
        client.request(&cmd).unwrap();
    }
    let stats = worker.join().unwrap().unwrap();
    assert_eq!(stats.requests, 3);
}

#[test]
fn server_answers_invalid_utf8() {
    let mut s = server(Some(2));
    let addr = s.local_addr().unwrap();
    let worker = thread::spawn(move || s.run());
    let client = Client::connect(addr, Duration::from_secs(2)).unwrap();
    let reply = client.request_raw(&[0xff, 0xfe, b'(']).unwrap();
    assert!(parse_error_line(&reply).is_some(), "{reply}");
    assert!(client.request(&EffectorCommand::default()).is_ok());
    let stats = worker.join().unwrap().unwrap();
    assert_eq!(stats.errors, 1);
}

#[test]
fn binding_a_taken_port_fails_cleanly() {
    let taken = UdpSocket::bind("127.0.0.1:0").unwrap();
    let addr = taken.local_addr().unwrap();
    let sim = Simulator::new(Track::default_oval(), SimConfig::default(), 0).unwrap();
    match Server::bind(addr, sim, 0, None) {
        Err(ProtocolError::BindFailure { .. }) => {}
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("bound a port that is in use"),
    }
}
