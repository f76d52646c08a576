//! Network probe around a full benchmark run. Kept in its own test binary
//! because it flips a process-wide environment variable.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use bmbe::eval::{run_cohort, ResponderKind};
use bmbe::fixtures;
use bmbe::kb::Feature;
use bmbe::patient::{generate_cohort, Archetype, Persona};
use bmbe::sensor::external::{connection_attempts, DISABLE_ENV};
use bmbe::sensor::{CompletionClient, ExternalClientConfig, ExternalError, HttpCompletionClient, Sensor};
use bmbe::SessionConfig;

/// Accepts connections forever, counting them and answering every request
/// with a fixed plain-text body.
fn recording_server(body: &'static str) -> (String, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let accepted = Arc::new(AtomicUsize::new(0));
    let counter = accepted.clone();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            counter.fetch_add(1, Ordering::SeqCst);
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut content_length = 0usize;
            loop {
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 || line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    content_length = v.trim().parse().unwrap_or(0);
                }
            }
            let mut sink = vec![0u8; content_length];
            let _ = reader.read_exact(&mut sink);
            let _ = write!(
                stream,
                "HTTP/1.1 200 OK\r\nContent-Type: text/plain\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
        }
    });
    (format!("http://{addr}/complete"), accepted)
}

#[test]
fn disabled_external_client_never_touches_the_network() {
    let (endpoint, accepted) = recording_server("yes|likely");
    let cfg = ExternalClientConfig {
        endpoint,
        enabled: true,
        ..ExternalClientConfig::default()
    };
    let kb = Arc::new(fixtures::separable_kb());
    let profiles = generate_cohort(&kb, 2, 11).unwrap();
    let kind = ResponderKind::Patient {
        persona: Persona::preset(Archetype::Verbose),
    };
    let session_cfg = SessionConfig {
        t_min: 3,
        t_max: 6,
        ..SessionConfig::default()
    };

    // Enabled: the probe sees traffic, which shows it is wired correctly.
    std::env::remove_var(DISABLE_ENV);
    let sensor = Sensor::from_config(&cfg).unwrap();
    assert!(sensor.has_external());
    run_cohort(&kb, &sensor, &profiles[..1], &kind, &session_cfg).unwrap();
    let seen = accepted.load(Ordering::SeqCst);
    assert!(seen > 0);
    assert!(connection_attempts() > 0);

    // Disabled: the same config and a full benchmark run produce nothing.
    std::env::set_var(DISABLE_ENV, "1");
    let attempts_before = connection_attempts();
    let sensor = Sensor::from_config(&cfg).unwrap();
    assert!(!sensor.has_external());
    assert!(HttpCompletionClient::from_config(&cfg).is_none());
    let rs = run_cohort(&kb, &sensor, &profiles, &kind, &session_cfg).unwrap();
    assert_eq!(rs.len(), profiles.len());

    // A client built before the veto refuses at call time.
    std::env::remove_var(DISABLE_ENV);
    let early = HttpCompletionClient::from_config(&cfg).unwrap();
    std::env::set_var(DISABLE_ENV, "1");
    let slots = Default::default();
    assert!(matches!(early.complete("parsing", &slots), Err(ExternalError::Disabled)));
    let vetoed = Sensor::airgapped().with_external(Arc::new(early));
    assert!(!vetoed.has_external());
    let f = Feature::binary("f_x", "x", "X?");
    vetoed.parse_response("something unrelated", &f);

    std::thread::sleep(std::time::Duration::from_millis(50));
    assert_eq!(connection_attempts(), attempts_before);
    assert_eq!(accepted.load(Ordering::SeqCst), seen);
    std::env::remove_var(DISABLE_ENV);
}
