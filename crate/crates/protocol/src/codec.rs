//! UTF-8 JSON framing: one message per frame.

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("malformed message at byte {position}: {detail}")]
pub struct Malformed {
    /// Byte offset into the frame where decoding failed. Schema errors inside
    /// a tagged message are reported against the whole frame (offset 0),
    /// since the tag has to be read before the body can be checked.
    pub position: usize,
    pub detail: String,
}

pub fn encode<M: Serialize>(msg: &M) -> String {
    serde_json::to_string(msg).expect("message types always serialize")
}

pub fn encode_bytes<M: Serialize>(msg: &M) -> Vec<u8> {
    encode(msg).into_bytes()
}

pub fn decode<M: DeserializeOwned>(bytes: &[u8]) -> Result<M, Malformed> {
    serde_json::from_slice(bytes).map_err(|e| Malformed {
        position: byte_offset(bytes, e.line(), e.column()),
        detail: e.to_string(),
    })
}

pub fn decode_str<M: DeserializeOwned>(s: &str) -> Result<M, Malformed> {
    decode(s.as_bytes())
}

fn byte_offset(bytes: &[u8], line: usize, column: usize) -> usize {
    if line == 0 {
        return 0;
    }
    let line_start: usize = bytes
        .split(|b| *b == b'\n')
        .take(line - 1)
        .map(|l| l.len() + 1)
        .sum();
    (line_start + column.saturating_sub(1)).min(bytes.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::msg::ClientMsg;
    use blocks_core::{CellPos, Color, SizeClass};

    #[test]
    fn decodes_add_block_fixture_line() {
        let m: ClientMsg =
            decode_str(r#"{"t":"AddBlock","op":7,"pos":[0,0,0],"size":"S","rgb":[200,30,30]}"#).unwrap();
        assert_eq!(
            m,
            ClientMsg::AddBlock {
                op: 7,
                pos: CellPos::new(0, 0, 0),
                size: SizeClass::Small,
                rgb: Color::new(200, 30, 30)
            }
        );
    }

    #[test]
    fn unknown_variant_is_malformed() {
        let err = decode_str::<ClientMsg>(r#"{"t":"Nope"}"#).unwrap_err();
        assert!(err.detail.contains("Nope"), "{err}");
    }

    #[test]
    fn position_points_into_the_frame() {
        let frame = r#"{"t":"AddBlock","op":7,"pos":[0,0,0],"size":"S","rgb":[1,2,3],}"#;
        let err = decode_str::<ClientMsg>(frame).unwrap_err();
        assert!(err.position >= frame.find(",}").unwrap(), "{err:?}");
        let err = decode_str::<ClientMsg>(r#"{"t":"AddBlock","op":7,"pos":[0,0,0],"size":"Q","rgb":[1,2,3]}"#).unwrap_err();
        assert!(err.detail.contains("`Q`"), "{err:?}");
        assert!(decode_str::<ClientMsg>("").is_err());
        assert!(decode::<ClientMsg>(&[0xff, 0xfe]).is_err());
    }
}
