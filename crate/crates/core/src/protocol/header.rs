//! Source-route header wire format (big-endian).
//!
//! ```text
//! byte 0      hop count n
//! byte 1      sequence number
//! byte 2      packet type (0 data, 1 route reply, 2 route error)
//! byte 3      reserved
//! bytes 4..   n + 1 addresses, 16 bits each
//! ```

use thiserror::Error;

use crate::NodeId;

pub const FIXED_LEN: usize = 4;
pub const ADDRESS_LEN: usize = 2;
pub const MAX_ADDRESSES: usize = 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeaderError {
    #[error("header truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("unknown packet type {0}")]
    UnknownType(u8),
    #[error("address list must hold 1 to 256 entries, got {0}")]
    BadAddressCount(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PacketType {
    Data = 0,
    RouteReply = 1,
    RouteError = 2,
}

impl TryFrom<u8> for PacketType {
    type Error = HeaderError;

    fn try_from(v: u8) -> Result<Self, HeaderError> {
        match v {
            0 => Ok(PacketType::Data),
            1 => Ok(PacketType::RouteReply),
            2 => Ok(PacketType::RouteError),
            other => Err(HeaderError::UnknownType(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RouteHeader {
    pub seq: u8,
    pub ptype: PacketType,
    pub reserved: u8,
    /// Full path, origin first.
    pub addresses: Vec<NodeId>,
}

impl RouteHeader {
    pub fn new(ptype: PacketType, seq: u8, addresses: Vec<NodeId>) -> Self {
        Self { seq, ptype, reserved: 0, addresses }
    }

    pub fn hop_count(&self) -> usize {
        self.addresses.len().saturating_sub(1)
    }

    pub fn encoded_len(&self) -> usize {
        FIXED_LEN + ADDRESS_LEN * self.addresses.len()
    }

    /// Position of `node` on the path.
    pub fn index_of(&self, node: NodeId) -> Option<usize> {
        self.addresses.iter().position(|&a| a == node)
    }

    pub fn encode(&self) -> Result<Vec<u8>, HeaderError> {
        let n = self.addresses.len();
        if n == 0 || n > MAX_ADDRESSES {
            return Err(HeaderError::BadAddressCount(n));
        }
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(&[(n - 1) as u8, self.seq, self.ptype as u8, self.reserved]);
        for a in &self.addresses {
            out.extend_from_slice(&a.0.to_be_bytes());
        }
        Ok(out)
    }

    /// Decodes a header from the front of `bytes`; returns it with the
    /// number of bytes consumed.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), HeaderError> {
        if bytes.len() < FIXED_LEN {
            return Err(HeaderError::Truncated { needed: FIXED_LEN, have: bytes.len() });
        }
        let count = bytes[0] as usize + 1;
        let ptype = PacketType::try_from(bytes[2])?;
        let len = FIXED_LEN + ADDRESS_LEN * count;
        if bytes.len() < len {
            return Err(HeaderError::Truncated { needed: len, have: bytes.len() });
        }
        let addresses = bytes[FIXED_LEN..len]
            .chunks_exact(ADDRESS_LEN)
            .map(|c| NodeId(u16::from_be_bytes([c[0], c[1]])))
            .collect();
        Ok((Self { seq: bytes[1], ptype, reserved: bytes[3], addresses }, len))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[u16]) -> Vec<NodeId> {
        v.iter().map(|&x| NodeId(x)).collect()
    }

    #[test]
    fn single_address_is_six_bytes() {
        let h = RouteHeader::new(PacketType::Data, 9, ids(&[7]));
        assert_eq!(h.encode().unwrap(), vec![0, 9, 0, 0, 0, 7]);
    }

    #[test]
    fn hand_packed_route_error() {
        let h = RouteHeader::new(PacketType::RouteError, 0xfe, ids(&[0x0102, 3, 0xa0b0]));
        let bytes = vec![2, 0xfe, 2, 0, 0x01, 0x02, 0x00, 0x03, 0xa0, 0xb0];
        assert_eq!(h.encode().unwrap(), bytes);
        assert_eq!(RouteHeader::decode(&bytes).unwrap(), (h, 10));
    }

    #[test]
    fn decode_leaves_payload() {
        let mut bytes = RouteHeader::new(PacketType::RouteReply, 1, ids(&[1, 2])).encode().unwrap();
        bytes.extend_from_slice(&[0xaa; 5]);
        let (_, used) = RouteHeader::decode(&bytes).unwrap();
        assert_eq!(used, 8);
    }

    #[test]
    fn malformed_inputs() {
        assert_eq!(RouteHeader::decode(&[0, 1]), Err(HeaderError::Truncated { needed: 4, have: 2 }));
        assert_eq!(RouteHeader::decode(&[1, 0, 0, 0, 0, 1]), Err(HeaderError::Truncated { needed: 8, have: 6 }));
        assert_eq!(RouteHeader::decode(&[0, 0, 3, 0, 0, 1]), Err(HeaderError::UnknownType(3)));
    }

    #[test]
    fn address_count_limits() {
        let empty = RouteHeader::new(PacketType::Data, 0, vec![]);
        assert_eq!(empty.encode(), Err(HeaderError::BadAddressCount(0)));
        let full = RouteHeader::new(PacketType::Data, 0, (0..256).map(NodeId).collect());
        let bytes = full.encode().unwrap();
        assert_eq!(bytes[0], 255);
        assert_eq!(RouteHeader::decode(&bytes).unwrap().0, full);
        let over = RouteHeader::new(PacketType::Data, 0, (0..257).map(NodeId).collect());
        assert!(over.encode().is_err());
    }
}
