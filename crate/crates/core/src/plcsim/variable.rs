//! PLC variable table: named LREAL (f64) variables exposed to the network
//! both by name (tag access) and as 16-bit words in the DM memory image.
//!
//! Each variable occupies exactly four consecutive DM words starting at its
//! `dm_address`, stored big-endian with the most significant word first, so
//! a DM read of 4 words reproduces the IEEE-754 bit pattern exactly.

use std::collections::HashMap;

use thiserror::Error;

use crate::clock::Nanos;

pub const WORDS_PER_VARIABLE: u16 = 4;

/// Network publish attribute of a PLC global variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Publish {
    /// Receives data from the network (writable by peers).
    Input,
    /// Sends data to the network (readable / linkable by peers).
    Output,
    /// Not published.
    None,
}

impl Publish {
    pub fn parse(s: &str) -> Option<Publish> {
        match s.trim().to_ascii_lowercase().as_str() {
            "input" | "in" => Some(Publish::Input),
            "output" | "out" => Some(Publish::Output),
            "none" => Some(Publish::None),
            _ => None,
        }
    }
}

/// Declaration of one variable in the emulator configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct VariableSpec {
    pub name: String,
    pub dm_address: u16,
    pub publish: Publish,
}

impl VariableSpec {
    pub fn new(name: &str, dm_address: u16, publish: Publish) -> Self {
        Self {
            name: name.to_string(),
            dm_address,
            publish,
        }
    }
}

/// A live variable inside the emulator.
#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub value: f64,
    pub publish: Publish,
    pub dm_address: u16,
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("duplicate variable name {0:?}")]
    DuplicateName(String),
    #[error("DM ranges of {a:?} and {b:?} overlap")]
    DmOverlap { a: String, b: String },
    #[error("copy rule references unknown variable {0:?}")]
    UnknownVariable(String),
    #[error("task period must be positive")]
    ZeroTaskPeriod,
    #[error("variable {0:?} DM range exceeds the 16-bit address space")]
    DmRangeOverflow(String),
}

/// Scan scheduling parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    /// Task period in nanoseconds. Defaults to 1 ms.
    pub task_period: Nanos,
    /// Ordered (source, destination) variable copies executed each scan.
    pub copy_rules: Vec<(String, String)>,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            task_period: crate::clock::millis(1),
            copy_rules: Vec::new(),
        }
    }
}

/// The emulator's variable state plus the DM word image over it.
#[derive(Debug, Clone)]
pub struct VariableTable {
    vars: Vec<Variable>,
    by_name: HashMap<String, usize>,
    /// DM word offset -> (variable index, word index within the variable).
    dm_map: HashMap<u16, (usize, u16)>,
}

impl VariableTable {
    pub fn new(specs: &[VariableSpec]) -> Result<Self, ConfigError> {
        let mut vars: Vec<Variable> = Vec::with_capacity(specs.len());
        let mut by_name = HashMap::new();
        let mut dm_map: HashMap<u16, (usize, u16)> = HashMap::new();
        for (idx, spec) in specs.iter().enumerate() {
            if by_name.insert(spec.name.clone(), idx).is_some() {
                return Err(ConfigError::DuplicateName(spec.name.clone()));
            }
            if spec
                .dm_address
                .checked_add(WORDS_PER_VARIABLE - 1)
                .is_none()
            {
                return Err(ConfigError::DmRangeOverflow(spec.name.clone()));
            }
            for w in 0..WORDS_PER_VARIABLE {
                let addr = spec.dm_address + w;
                if let Some((other, _)) = dm_map.insert(addr, (idx, w)) {
                    return Err(ConfigError::DmOverlap {
                        a: vars[other].name.clone(),
                        b: spec.name.clone(),
                    });
                }
            }
            vars.push(Variable {
                name: spec.name.clone(),
                value: 0.0,
                publish: spec.publish,
                dm_address: spec.dm_address,
            });
        }
        Ok(Self {
            vars,
            by_name,
            dm_map,
        })
    }

    pub fn len(&self) -> usize {
        self.vars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vars.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn get(&self, idx: usize) -> &Variable {
        &self.vars[idx]
    }

    pub fn by_name(&self, name: &str) -> Option<&Variable> {
        self.index_of(name).map(|i| &self.vars[i])
    }

    pub fn set_value(&mut self, idx: usize, value: f64) {
        self.vars[idx].value = value;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Variable> {
        self.vars.iter()
    }

    /// First Output-publish variable, used to answer raw read queries.
    pub fn first_output(&self) -> Option<usize> {
        self.vars.iter().position(|v| v.publish == Publish::Output)
    }

    /// Read `count` DM words starting at `addr`. Fails unless every word in
    /// the range is covered by some variable.
    pub fn read_dm(&self, addr: u16, count: u16) -> Result<Vec<u16>, DmFault> {
        let mut out = Vec::with_capacity(count as usize);
        for i in 0..count {
            let a = addr.checked_add(i).ok_or(DmFault::Unmapped)?;
            let (idx, word) = *self.dm_map.get(&a).ok_or(DmFault::Unmapped)?;
            out.push(value_word(self.vars[idx].value, word));
        }
        Ok(out)
    }

    /// Write words into the DM image. Validates the whole range before
    /// mutating anything, so a faulting write changes no state.
    pub fn write_dm(&mut self, addr: u16, words: &[u16]) -> Result<(), DmFault> {
        let mut targets = Vec::with_capacity(words.len());
        for i in 0..words.len() {
            let a = addr.checked_add(i as u16).ok_or(DmFault::Unmapped)?;
            targets.push(*self.dm_map.get(&a).ok_or(DmFault::Unmapped)?);
        }
        for (&(idx, word), &w) in targets.iter().zip(words) {
            let bits = patch_word(self.vars[idx].value, word, w);
            self.vars[idx].value = f64::from_bits(bits);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DmFault {
    /// Some word in the range is not backed by any variable.
    Unmapped,
}

/// Extract word `word` (0 = most significant) of the value's bit pattern.
pub fn value_word(value: f64, word: u16) -> u16 {
    let bits = value.to_bits();
    (bits >> (48 - 16 * word as u64)) as u16
}

fn patch_word(value: f64, word: u16, new: u16) -> u64 {
    let shift = 48 - 16 * word as u64;
    let mask = 0xFFFFu64 << shift;
    (value.to_bits() & !mask) | ((new as u64) << shift)
}

/// Pack an f64 into its four-word DM image.
pub fn value_to_words(value: f64) -> [u16; 4] {
    [
        value_word(value, 0),
        value_word(value, 1),
        value_word(value, 2),
        value_word(value, 3),
    ]
}

/// Rebuild an f64 from its four-word DM image.
pub fn words_to_value(words: &[u16]) -> Option<f64> {
    if words.len() != 4 {
        return None;
    }
    let bits = ((words[0] as u64) << 48)
        | ((words[1] as u64) << 32)
        | ((words[2] as u64) << 16)
        | (words[3] as u64);
    Some(f64::from_bits(bits))
}
