//! Flat key-value configuration file shared by the emulator and the bench
//! harness. `#` starts a comment; keys may repeat where noted.
//!
//! ```text
//! task_period_us = 1000
//! one_way_delay_us = 1000
//! jitter_us = 0
//! fins_overhead_us = 0
//! cip_overhead_us = 0
//! raw_overhead_us = 0
//! fins_port = 9600
//! cip_port = 44818
//! raw_port = 9601
//! scan_rate_us = 10000
//! rpi_us = 1000
//! timeout_us = 500000
//! var = CIn,0,input        # repeatable: name,dm_address,publish
//! var = COut,4,output
//! copy = CIn,COut          # repeatable: source,destination
//! link_in = 1,CIn          # PC->PLC link: connection_id,input tag
//! link_out = 2,COut,127.0.0.1:5000   # PLC->PC link: id,tag,consumer addr
//! ```

use thiserror::Error;

use crate::clock::{micros, millis, Nanos};
use crate::plcsim::{EmulatorConfig, LoopbackPorts, Publish, ScanConfig, SimChannel, VariableSpec};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigParseError {
    #[error("line {0}: expected `key = value`")]
    Syntax(usize),
    #[error("line {line}: bad number {text:?}")]
    BadNumber { line: usize, text: String },
    #[error("line {line}: bad variable definition {text:?} (want name,dm_address,publish)")]
    BadVariable { line: usize, text: String },
    #[error("line {line}: bad copy rule {text:?} (want source,destination)")]
    BadCopy { line: usize, text: String },
    #[error("line {line}: bad link definition {text:?}")]
    BadLink { line: usize, text: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
}

/// Parsed configuration with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct FileConfig {
    pub emulator: EmulatorConfig,
    pub channel: SimChannel,
    pub ports: LoopbackPorts,
    pub scan_rate: Nanos,
    pub rpi: Nanos,
    pub timeout: Nanos,
    /// PC->PLC links served by `serve`: (connection id, Input tag).
    pub links_in: Vec<(u32, String)>,
    /// PLC->PC links served by `serve`: (connection id, Output tag, consumer).
    pub links_out: Vec<(u32, String, std::net::SocketAddr)>,
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            emulator: crate::plcsim::reference_fixture(),
            channel: SimChannel::default(),
            ports: LoopbackPorts::default(),
            scan_rate: millis(10),
            rpi: millis(1),
            timeout: millis(500),
            links_in: Vec::new(),
            links_out: Vec::new(),
        }
    }
}

pub fn parse_config(text: &str) -> Result<FileConfig, ConfigParseError> {
    let mut cfg = FileConfig::default();
    let mut vars: Vec<VariableSpec> = Vec::new();
    let mut copies: Vec<(String, String)> = Vec::new();
    let mut task_period = cfg.emulator.scan.task_period;

    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigParseError::Syntax(i + 1));
        };
        let key = key.trim();
        let value = value.trim();
        let num = |value: &str| -> Result<u64, ConfigParseError> {
            value.parse().map_err(|_| ConfigParseError::BadNumber {
                line: i + 1,
                text: value.to_string(),
            })
        };
        match key {
            "task_period_us" => task_period = micros(num(value)?),
            "one_way_delay_us" => cfg.channel.one_way_delay = micros(num(value)?),
            "jitter_us" => cfg.channel.jitter = micros(num(value)?),
            "fins_overhead_us" => cfg.channel.server_overhead[0] = micros(num(value)?),
            "cip_overhead_us" => cfg.channel.server_overhead[1] = micros(num(value)?),
            "raw_overhead_us" => cfg.channel.server_overhead[2] = micros(num(value)?),
            "fins_port" => cfg.ports.fins = num(value)? as u16,
            "cip_port" => cfg.ports.cip = num(value)? as u16,
            "raw_port" => cfg.ports.raw = num(value)? as u16,
            "scan_rate_us" => cfg.scan_rate = micros(num(value)?),
            "rpi_us" => cfg.rpi = micros(num(value)?),
            "timeout_us" => cfg.timeout = micros(num(value)?),
            "var" | "variable" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                let bad = || ConfigParseError::BadVariable {
                    line: i + 1,
                    text: value.to_string(),
                };
                if parts.len() != 3 {
                    return Err(bad());
                }
                let dm: u16 = parts[1].parse().map_err(|_| bad())?;
                let publish = Publish::parse(parts[2]).ok_or_else(bad)?;
                vars.push(VariableSpec::new(parts[0], dm, publish));
            }
            "copy" => {
                let bad = || ConfigParseError::BadCopy {
                    line: i + 1,
                    text: value.to_string(),
                };
                let (src, dst) = value.split_once(',').ok_or_else(bad)?;
                copies.push((src.trim().to_string(), dst.trim().to_string()));
            }
            "link_in" => {
                let bad = || ConfigParseError::BadLink {
                    line: i + 1,
                    text: value.to_string(),
                };
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(bad());
                }
                let conn: u32 = parts[0].parse().map_err(|_| bad())?;
                cfg.links_in.push((conn, parts[1].to_string()));
            }
            "link_out" => {
                let bad = || ConfigParseError::BadLink {
                    line: i + 1,
                    text: value.to_string(),
                };
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 3 {
                    return Err(bad());
                }
                let conn: u32 = parts[0].parse().map_err(|_| bad())?;
                let addr: std::net::SocketAddr = parts[2].parse().map_err(|_| bad())?;
                cfg.links_out.push((conn, parts[1].to_string(), addr));
            }
            other => {
                return Err(ConfigParseError::UnknownKey {
                    line: i + 1,
                    key: other.to_string(),
                })
            }
        }
    }

    if !vars.is_empty() {
        cfg.emulator = EmulatorConfig {
            variables: vars,
            scan: ScanConfig {
                task_period,
                copy_rules: copies,
            },
        };
    } else {
        cfg.emulator.scan.task_period = task_period;
        if !copies.is_empty() {
            cfg.emulator.scan.copy_rules = copies;
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_fixture() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, FileConfig::default());
        assert_eq!(cfg.emulator.scan.task_period, millis(1));
        assert_eq!(cfg.emulator.variables.len(), 2);
    }

    #[test]
    fn full_file_parses() {
        let text = "\
# fixture
task_period_us = 2000
one_way_delay_us = 500
jitter_us = 10
fins_port = 0
scan_rate_us = 20000
var = A,0,input
var = B,8,output
copy = A,B
";
        let cfg = parse_config(text).unwrap();
        assert_eq!(cfg.emulator.scan.task_period, micros(2000));
        assert_eq!(cfg.channel.one_way_delay, micros(500));
        assert_eq!(cfg.channel.jitter, micros(10));
        assert_eq!(cfg.ports.fins, 0);
        assert_eq!(cfg.scan_rate, micros(20000));
        assert_eq!(cfg.emulator.variables[1].name, "B");
        assert_eq!(cfg.emulator.scan.copy_rules, vec![("A".into(), "B".into())]);
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(
            parse_config("bogus = 1"),
            Err(ConfigParseError::UnknownKey { .. })
        ));
    }

    #[test]
    fn bad_variable_is_rejected() {
        assert!(matches!(
            parse_config("var = onlyname"),
            Err(ConfigParseError::BadVariable { .. })
        ));
    }
}
