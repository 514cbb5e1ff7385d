use std::io;
use std::net::{IpAddr, SocketAddr, TcpStream, ToSocketAddrs};
use std::process::Command;

use super::exec::{run_process, ProcessError, Spawner};
use super::{ExecutionPolicy, PostprocessError, SideEffect, SideEffectKind, Transformed};

const PROBE_PORTS: [u16; 2] = [443, 80];

fn is_hostname(s: &str) -> bool {
    if s.len() > 253 || !s.contains('.') {
        return false;
    }
    let labels: Vec<&str> = s.split('.').collect();
    let label_ok = |l: &&str| {
        !l.is_empty()
            && l.len() <= 63
            && !l.starts_with('-')
            && !l.ends_with('-')
            && l.chars().all(|c| c.is_ascii_alphanumeric() || c == '-')
    };
    let tld = labels.last().copied().unwrap_or("");
    labels.iter().all(label_ok) && tld.len() >= 2 && tld.chars().all(|c| c.is_ascii_alphabetic())
}

/// First token of `raw` that is an IP address or a dotted hostname.
pub fn extract_target(raw: &str) -> Option<String> {
    raw.split(|c: char| c.is_whitespace() || c == ',' || c == ';')
        .map(|t| {
            t.trim_matches(|c: char| !(c.is_ascii_alphanumeric() || matches!(c, '.' | ':' | '-' | '[' | ']')))
                .trim_end_matches('.')
                .trim_start_matches('[')
                .trim_end_matches(']')
        })
        .find(|t| !t.is_empty() && (t.parse::<IpAddr>().is_ok() || is_hostname(t)))
        .map(str::to_owned)
}

enum Probe {
    Up(String),
    Down(String),
}

fn tcp_probe(target: &str, policy: &ExecutionPolicy, effects: &mut Vec<SideEffect>) -> Probe {
    let mut last = String::from("no probe attempted");
    for port in PROBE_PORTS {
        let addrs: Vec<SocketAddr> = match target.parse::<IpAddr>() {
            Ok(ip) => vec![SocketAddr::new(ip, port)],
            Err(_) => match (target, port).to_socket_addrs() {
                Ok(a) => a.collect(),
                Err(e) => {
                    effects.push(SideEffect::new(SideEffectKind::Network, format!("resolve {target}: {e}")));
                    return Probe::Down(format!("cannot resolve {target}: {e}"));
                }
            },
        };
        for addr in addrs {
            let result = TcpStream::connect_timeout(&addr, policy.probe_timeout());
            let summary = match &result {
                Ok(_) => "connected".to_owned(),
                Err(e) => e.to_string(),
            };
            effects.push(SideEffect::new(SideEffectKind::Network, format!("tcp connect {addr}: {summary}")));
            match result {
                Ok(_) => return Probe::Up(format!("tcp/{port} accepted")),
                // A refusal means the host answered.
                Err(e) if e.kind() == io::ErrorKind::ConnectionRefused => {
                    return Probe::Up(format!("tcp/{port} refused, host responded"))
                }
                Err(e) => last = format!("tcp/{port}: {e}"),
            }
        }
    }
    Probe::Down(last)
}

fn system_ping(target: &str, policy: &ExecutionPolicy, spawner: &dyn Spawner, effects: &mut Vec<SideEffect>) -> Option<Probe> {
    let wait = policy.probe_timeout().as_secs().max(1).to_string();
    let mut cmd = Command::new("ping");
    cmd.args(["-c", "1", "-W", &wait, target]);
    let outcome = run_process(&mut cmd, None, policy.probe_timeout() + std::time::Duration::from_secs(1), spawner);
    match outcome {
        Err(ProcessError::NotFound) => None,
        Err(ProcessError::Timeout) => {
            effects.push(SideEffect::new(SideEffectKind::Process, format!("ping {target}: timed out")));
            Some(Probe::Down("ping timed out".into()))
        }
        Err(ProcessError::Io(e)) => {
            effects.push(SideEffect::new(SideEffectKind::Process, format!("ping {target}: {e}")));
            None
        }
        Ok(out) => {
            let ok = out.status.success();
            effects.push(SideEffect::new(
                SideEffectKind::Process,
                format!("ping -c 1 {target}: exit {}", out.status.code().unwrap_or(-1)),
            ));
            Some(if ok {
                Probe::Up("icmp echo replied".into())
            } else {
                Probe::Down("no icmp reply".into())
            })
        }
    }
}

pub(crate) fn ping_server(raw: &str, policy: &ExecutionPolicy, spawner: &dyn Spawner) -> Result<Transformed, PostprocessError> {
    let target = extract_target(raw).ok_or(PostprocessError::NoTarget)?;
    if !policy.allow_network_probe {
        return Err(PostprocessError::ProbeDisallowed);
    }
    let mut effects = Vec::new();
    let mut probe = tcp_probe(&target, policy, &mut effects);
    if let Probe::Down(_) = probe {
        if policy.ping_fallback {
            if let Some(p) = system_ping(&target, policy, spawner, &mut effects) {
                probe = p;
            }
        }
    }
    let line = match probe {
        Probe::Up(how) => format!("{target} is reachable ({how})"),
        Probe::Down(why) => format!("{target} is unreachable ({why})"),
    };
    Ok(Transformed {
        output: Some(line),
        side_effects: effects,
    })
}

#[cfg(test)]
mod tests {
    use std::time::{Duration, Instant};

    use super::super::{Registry, SystemSpawner};
    use super::*;

    #[test]
    fn extracts_targets() {
        assert_eq!(extract_target("127.0.0.1").as_deref(), Some("127.0.0.1"));
        assert_eq!(extract_target("The IP is 13.107.42.14.").as_deref(), Some("13.107.42.14"));
        assert_eq!(extract_target("Try www.linkedin.com now").as_deref(), Some("www.linkedin.com"));
        assert_eq!(extract_target("addr [::1]").as_deref(), Some("::1"));
        assert_eq!(extract_target("no address here"), None);
        assert_eq!(extract_target("version 1.2.3"), None);
    }

    #[test]
    fn no_target_is_an_error() {
        let r = Registry::with_builtins();
        assert_eq!(
            r.apply("pingserver", "no address here", &ExecutionPolicy::default()),
            Err(PostprocessError::NoTarget)
        );
    }

    #[test]
    fn disallowed_by_policy() {
        let policy = ExecutionPolicy {
            allow_network_probe: false,
            ..ExecutionPolicy::default()
        };
        assert_eq!(
            ping_server("127.0.0.1", &policy, &SystemSpawner).unwrap_err(),
            PostprocessError::ProbeDisallowed
        );
    }

    #[test]
    fn loopback_is_reachable() {
        let out = Registry::with_builtins()
            .apply("pingserver", "127.0.0.1", &ExecutionPolicy::default())
            .unwrap();
        let line = out.output.unwrap();
        assert!(line.starts_with("127.0.0.1 is reachable"), "{line}");
        assert!(out.side_effects.iter().any(|e| e.kind == SideEffectKind::Network));
    }

    #[test]
    fn unresolvable_host_is_unreachable() {
        let policy = ExecutionPolicy {
            probe_timeout_s: 1.0,
            ..ExecutionPolicy::default()
        };
        let started = Instant::now();
        let out = Registry::with_builtins()
            .apply("pingserver", "LinkedIn is at nothing.invalid", &policy)
            .unwrap();
        let line = out.output.unwrap();
        assert!(line.starts_with("nothing.invalid is unreachable"), "{line}");
        assert!(started.elapsed() < Duration::from_secs(6));
    }
}
