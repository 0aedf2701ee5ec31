//! Binary FINS frame codec for memory-area read/write.
//!
//! Frame layout: a 10-byte header (icf, rsv, gct, dna, da1, da2, sna, sa1,
//! sa2, sid), a 2-byte command code, then the command body. All multi-byte
//! integers are big-endian. Only MemoryAreaRead (0x0101) and MemoryAreaWrite
//! (0x0102) are supported; requests and responses are told apart by the
//! response bit (0x40) in `icf`.

use thiserror::Error;

pub const HEADER_LEN: usize = 10;
pub const CMD_MEMORY_AREA_READ: u16 = 0x0101;
pub const CMD_MEMORY_AREA_WRITE: u16 = 0x0102;

/// DM area, word contents. The only memory area this crate speaks.
pub const AREA_DM_WORD: u8 = 0x82;

/// ICF for a command that requires a response.
pub const ICF_COMMAND: u8 = 0x80;
/// ICF for a response frame.
pub const ICF_RESPONSE: u8 = 0xC0;
/// Default gateway count.
pub const GCT_DEFAULT: u8 = 0x02;

pub mod end_codes {
    /// Normal completion.
    pub const NORMAL: u16 = 0x0000;
    /// Command format error (bad body, unsupported command).
    pub const COMMAND_FORMAT: u16 = 0x1001;
    /// Address range exceeded / not mapped.
    pub const ADDRESS_RANGE: u16 = 0x1103;
}

/// The 10-byte FINS header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FinsHeader {
    pub icf: u8,
    pub rsv: u8,
    pub gct: u8,
    pub dna: u8,
    pub da1: u8,
    pub da2: u8,
    pub sna: u8,
    pub sa1: u8,
    pub sa2: u8,
    pub sid: u8,
}

impl FinsHeader {
    /// Command header from source node `sa1` to destination node `da1`,
    /// local network (dna/sna 0).
    pub fn command(sa1: u8, da1: u8, sid: u8) -> Self {
        Self {
            icf: ICF_COMMAND,
            rsv: 0,
            gct: GCT_DEFAULT,
            dna: 0,
            da1,
            da2: 0,
            sna: 0,
            sa1,
            sa2: 0,
            sid,
        }
    }

    /// Response header: source/destination swapped, same sid.
    pub fn reply_to(req: &FinsHeader) -> Self {
        Self {
            icf: ICF_RESPONSE,
            rsv: 0,
            gct: req.gct,
            dna: req.sna,
            da1: req.sa1,
            da2: req.sa2,
            sna: req.dna,
            sa1: req.da1,
            sa2: req.da2,
            sid: req.sid,
        }
    }

    pub fn is_response(&self) -> bool {
        self.icf & 0x40 != 0
    }

    fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&[
            self.icf, self.rsv, self.gct, self.dna, self.da1, self.da2, self.sna, self.sa1,
            self.sa2, self.sid,
        ]);
    }

    fn read(bytes: &[u8]) -> Self {
        Self {
            icf: bytes[0],
            rsv: bytes[1],
            gct: bytes[2],
            dna: bytes[3],
            da1: bytes[4],
            da2: bytes[5],
            sna: bytes[6],
            sa1: bytes[7],
            sa2: bytes[8],
            sid: bytes[9],
        }
    }
}

/// Memory-area command carried by a request frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FinsCommand {
    MemoryAreaRead {
        area_code: u8,
        address: u16,
        bit: u8,
        count: u16,
    },
    MemoryAreaWrite {
        area_code: u8,
        address: u16,
        bit: u8,
        count: u16,
        words: Vec<u16>,
    },
}

impl FinsCommand {
    pub fn code(&self) -> u16 {
        match self {
            FinsCommand::MemoryAreaRead { .. } => CMD_MEMORY_AREA_READ,
            FinsCommand::MemoryAreaWrite { .. } => CMD_MEMORY_AREA_WRITE,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinsRequest {
    pub header: FinsHeader,
    pub command: FinsCommand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinsResponse {
    pub header: FinsHeader,
    pub command_code: u16,
    pub end_code: u16,
    /// Read payload; empty for writes and for any nonzero end code.
    pub payload: Vec<u16>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FinsFrame {
    Request(FinsRequest),
    Response(FinsResponse),
}

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("write count {count} does not match {words} words supplied")]
    CountMismatch { count: u16, words: usize },
    #[error("nonzero end code {end_code:#06x} must carry an empty payload")]
    PayloadOnError { end_code: u16 },
    #[error("read count must be at least 1")]
    ZeroCount,
}

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("truncated header: frame is {len} bytes, need {HEADER_LEN}")]
    TruncatedHeader { len: usize },
    #[error("truncated frame at offset {offset}: need {need} more bytes")]
    Truncated { offset: usize, need: usize },
    #[error("unsupported command {code:#06x} at offset 10")]
    UnsupportedCommand { code: u16 },
    #[error("{got} trailing bytes after offset {offset}")]
    TrailingBytes { offset: usize, got: usize },
    #[error("write body word count {got} does not match declared count {count}")]
    WordCountMismatch { count: u16, got: usize },
    #[error("read count of zero at offset {offset}")]
    ZeroCount { offset: usize },
}

pub fn encode_request(req: &FinsRequest) -> Result<Vec<u8>, EncodeError> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8);
    req.header.write(&mut out);
    out.extend_from_slice(&req.command.code().to_be_bytes());
    match &req.command {
        FinsCommand::MemoryAreaRead {
            area_code,
            address,
            bit,
            count,
        } => {
            if *count == 0 {
                return Err(EncodeError::ZeroCount);
            }
            out.push(*area_code);
            out.extend_from_slice(&address.to_be_bytes());
            out.push(*bit);
            out.extend_from_slice(&count.to_be_bytes());
        }
        FinsCommand::MemoryAreaWrite {
            area_code,
            address,
            bit,
            count,
            words,
        } => {
            if *count as usize != words.len() || *count == 0 {
                return Err(EncodeError::CountMismatch {
                    count: *count,
                    words: words.len(),
                });
            }
            out.push(*area_code);
            out.extend_from_slice(&address.to_be_bytes());
            out.push(*bit);
            out.extend_from_slice(&count.to_be_bytes());
            for w in words {
                out.extend_from_slice(&w.to_be_bytes());
            }
        }
    }
    Ok(out)
}

pub fn encode_response(resp: &FinsResponse) -> Result<Vec<u8>, EncodeError> {
    if resp.end_code != end_codes::NORMAL && !resp.payload.is_empty() {
        return Err(EncodeError::PayloadOnError {
            end_code: resp.end_code,
        });
    }
    let mut out = Vec::with_capacity(HEADER_LEN + 4 + resp.payload.len() * 2);
    resp.header.write(&mut out);
    out.extend_from_slice(&resp.command_code.to_be_bytes());
    out.extend_from_slice(&resp.end_code.to_be_bytes());
    for w in &resp.payload {
        out.extend_from_slice(&w.to_be_bytes());
    }
    Ok(out)
}

pub fn encode_frame(frame: &FinsFrame) -> Result<Vec<u8>, EncodeError> {
    match frame {
        FinsFrame::Request(r) => encode_request(r),
        FinsFrame::Response(r) => encode_response(r),
    }
}

fn be16(bytes: &[u8], offset: usize) -> Result<u16, DecodeError> {
    if bytes.len() < offset + 2 {
        return Err(DecodeError::Truncated {
            offset,
            need: offset + 2 - bytes.len(),
        });
    }
    Ok(u16::from_be_bytes([bytes[offset], bytes[offset + 1]]))
}

fn be8(bytes: &[u8], offset: usize) -> Result<u8, DecodeError> {
    bytes
        .get(offset)
        .copied()
        .ok_or(DecodeError::Truncated { offset, need: 1 })
}

/// Inverse of `encode_frame` on valid frames; classifies by the icf
/// response bit.
pub fn decode_frame(bytes: &[u8]) -> Result<FinsFrame, DecodeError> {
    if bytes.len() < HEADER_LEN {
        return Err(DecodeError::TruncatedHeader { len: bytes.len() });
    }
    let header = FinsHeader::read(bytes);
    let code = be16(bytes, HEADER_LEN)?;
    if header.is_response() {
        // The command code in a response is an echo of the request's; the
        // frame is already classified by the icf bit, so any echoed code
        // decodes (a server refusing an unknown command echoes that code).
        let end_code = be16(bytes, HEADER_LEN + 2)?;
        let body = &bytes[HEADER_LEN + 4..];
        if !body.len().is_multiple_of(2) {
            return Err(DecodeError::TrailingBytes {
                offset: bytes.len() - 1,
                got: 1,
            });
        }
        let payload: Vec<u16> = body
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        if end_code != end_codes::NORMAL && !payload.is_empty() {
            return Err(DecodeError::TrailingBytes {
                offset: HEADER_LEN + 4,
                got: payload.len() * 2,
            });
        }
        if code == CMD_MEMORY_AREA_WRITE && !payload.is_empty() {
            return Err(DecodeError::TrailingBytes {
                offset: HEADER_LEN + 4,
                got: payload.len() * 2,
            });
        }
        return Ok(FinsFrame::Response(FinsResponse {
            header,
            command_code: code,
            end_code,
            payload,
        }));
    }
    let command = match code {
        CMD_MEMORY_AREA_READ => {
            let area_code = be8(bytes, 12)?;
            let address = be16(bytes, 13)?;
            let bit = be8(bytes, 15)?;
            let count = be16(bytes, 16)?;
            if count == 0 {
                return Err(DecodeError::ZeroCount { offset: 16 });
            }
            if bytes.len() > 18 {
                return Err(DecodeError::TrailingBytes {
                    offset: 18,
                    got: bytes.len() - 18,
                });
            }
            FinsCommand::MemoryAreaRead {
                area_code,
                address,
                bit,
                count,
            }
        }
        CMD_MEMORY_AREA_WRITE => {
            let area_code = be8(bytes, 12)?;
            let address = be16(bytes, 13)?;
            let bit = be8(bytes, 15)?;
            let count = be16(bytes, 16)?;
            if count == 0 {
                return Err(DecodeError::ZeroCount { offset: 16 });
            }
            let body = &bytes[18..];
            let expected = count as usize * 2;
            if body.len() < expected {
                return Err(DecodeError::Truncated {
                    offset: 18 + body.len(),
                    need: expected - body.len(),
                });
            }
            if body.len() > expected {
                return Err(DecodeError::TrailingBytes {
                    offset: 18 + expected,
                    got: body.len() - expected,
                });
            }
            let words: Vec<u16> = body
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect();
            if words.len() != count as usize {
                return Err(DecodeError::WordCountMismatch {
                    count,
                    got: words.len(),
                });
            }
            FinsCommand::MemoryAreaWrite {
                area_code,
                address,
                bit,
                count,
                words,
            }
        }
        other => return Err(DecodeError::UnsupportedCommand { code: other }),
    };
    Ok(FinsFrame::Request(FinsRequest { header, command }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn read_request_layout_is_frozen() {
        let req = FinsRequest {
            header: FinsHeader::command(1, 0, 1),
            command: FinsCommand::MemoryAreaRead {
                area_code: AREA_DM_WORD,
                address: 0,
                bit: 0,
                count: 4,
            },
        };
        let bytes = encode_request(&req).unwrap();
        assert_eq!(bytes.len(), 18);
        assert_eq!(&bytes[12..], &[0x82, 0x00, 0x00, 0x00, 0x00, 0x04]);
        assert_eq!(
            bytes,
            vec![
                0x80, 0x00, 0x02, 0x00, 0x00, 0x00, 0x00, 0x01, 0x00, 0x01, // header
                0x01, 0x01, // command code
                0x82, 0x00, 0x00, 0x00, 0x00, 0x04, // area, addr, bit, count
            ]
        );
    }

    #[test]
    fn write_ack_is_fourteen_bytes() {
        let resp = FinsResponse {
            header: FinsHeader::reply_to(&FinsHeader::command(1, 0, 7)),
            command_code: CMD_MEMORY_AREA_WRITE,
            end_code: end_codes::NORMAL,
            payload: vec![],
        };
        let bytes = encode_response(&resp).unwrap();
        assert_eq!(bytes.len(), 14);
        assert_eq!(bytes[0], ICF_RESPONSE);
        assert_eq!(bytes[9], 7); // sid preserved
    }

    #[test]
    fn write_count_mismatch_is_an_encode_error() {
        let req = FinsRequest {
            header: FinsHeader::command(1, 0, 2),
            command: FinsCommand::MemoryAreaWrite {
                area_code: AREA_DM_WORD,
                address: 0,
                bit: 0,
                count: 2,
                words: vec![1, 2, 3],
            },
        };
        assert_eq!(
            encode_request(&req),
            Err(EncodeError::CountMismatch { count: 2, words: 3 })
        );
    }

    #[test]
    fn short_frame_names_truncated_header() {
        assert_eq!(
            decode_frame(&[0u8; 9]),
            Err(DecodeError::TruncatedHeader { len: 9 })
        );
    }

    #[test]
    fn unknown_command_code_is_rejected() {
        let mut bytes = encode_request(&FinsRequest {
            header: FinsHeader::command(1, 0, 1),
            command: FinsCommand::MemoryAreaRead {
                area_code: AREA_DM_WORD,
                address: 0,
                bit: 0,
                count: 1,
            },
        })
        .unwrap();
        bytes[10] = 0x01;
        bytes[11] = 0x99;
        assert_eq!(
            decode_frame(&bytes),
            Err(DecodeError::UnsupportedCommand { code: 0x0199 })
        );
    }

    fn arb_header() -> impl Strategy<Value = FinsHeader> {
        (any::<u8>(), any::<u8>(), any::<u8>(), any::<u8>()).prop_map(|(da1, sa1, sa2, sid)| {
            FinsHeader {
                icf: ICF_COMMAND,
                rsv: 0,
                gct: GCT_DEFAULT,
                dna: 0,
                da1,
                da2: 0,
                sna: 0,
                sa1,
                sa2,
                sid,
            }
        })
    }

    fn arb_frame() -> impl Strategy<Value = FinsFrame> {
        let read = (arb_header(), any::<u8>(), any::<u16>(), 1u16..64).prop_map(
            |(header, area_code, address, count)| {
                FinsFrame::Request(FinsRequest {
                    header,
                    command: FinsCommand::MemoryAreaRead {
                        area_code,
                        address,
                        bit: 0,
                        count,
                    },
                })
            },
        );
        let write = (
            arb_header(),
            any::<u8>(),
            any::<u16>(),
            proptest::collection::vec(any::<u16>(), 1..64),
        )
            .prop_map(|(header, area_code, address, words)| {
                FinsFrame::Request(FinsRequest {
                    header,
                    command: FinsCommand::MemoryAreaWrite {
                        area_code,
                        address,
                        bit: 0,
                        count: words.len() as u16,
                        words,
                    },
                })
            });
        let resp = (
            arb_header(),
            prop_oneof![Just(CMD_MEMORY_AREA_READ), Just(CMD_MEMORY_AREA_WRITE)],
            prop_oneof![
                (proptest::collection::vec(any::<u16>(), 0..64)).prop_map(|p| (0u16, p)),
                (1u16..0xFFFF).prop_map(|e| (e, vec![])),
            ],
        )
            .prop_map(|(h, code, (end_code, payload))| {
                let payload = if code == CMD_MEMORY_AREA_WRITE {
                    vec![]
                } else {
                    payload
                };
                let mut header = h;
                header.icf = ICF_RESPONSE;
                FinsFrame::Response(FinsResponse {
                    header,
                    command_code: code,
                    end_code,
                    payload,
                })
            });
        prop_oneof![read, write, resp]
    }

    proptest! {
        #[test]
        fn round_trip_identity(frame in arb_frame()) {
            let bytes = encode_frame(&frame).unwrap();
            let back = decode_frame(&bytes).unwrap();
            prop_assert_eq!(back, frame);
        }

        #[test]
        fn truncation_always_errors(frame in arb_frame(), cut in 1usize..8) {
            let bytes = encode_frame(&frame).unwrap();
            // A response payload shrinks by whole words and stays decodable,
            // so force an odd cut there; requests break under any cut.
            let cut = match frame {
                FinsFrame::Request(_) => cut,
                FinsFrame::Response(_) => cut | 1,
            }
            .min(bytes.len());
            let short = &bytes[..bytes.len() - cut];
            prop_assert!(decode_frame(short).is_err(), "cut {cut} of {}", bytes.len());
        }

        #[test]
        fn extension_always_errors(frame in arb_frame(), extra in any::<u8>()) {
            let mut bytes = encode_frame(&frame).unwrap();
            bytes.push(extra);
            prop_assert!(decode_frame(&bytes).is_err());
        }

        #[test]
        fn random_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..96)) {
            let _ = decode_frame(&bytes);
        }
    }
}
