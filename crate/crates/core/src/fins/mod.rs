//! FINS memory-area access: binary frame codec and client.

pub mod client;
pub mod frame;

pub use client::{FinsClient, FinsClientError, DEFAULT_TIMEOUT};
pub use frame::{
    decode_frame, encode_frame, FinsCommand, FinsFrame, FinsHeader, FinsRequest, FinsResponse,
};
