//! 32-bit packed flash addresses.
//!
//! Bits `[31..3]` hold the page, bits `[2..0]` the start chunk inside the page.
//! The two highest words are reserved as link sentinels.

use crate::error::{Error, Result};

pub const CHUNK_BITS: u32 = 3;
pub const CHUNKS_PER_PAGE: u32 = 1 << CHUNK_BITS;
/// Exclusive upper bound for page numbers that can be encoded.
pub const MAX_PAGE: u32 = (1 << 29) - 1;

/// Link word meaning "no link".
pub const NULL_LOC: u32 = 0xFFFF_FFFF;
/// Link word meaning "older versions may exist; search the hash chain".
pub const UNKNOWN_PRIOR: u32 = 0xFFFF_FFFE;

/// The position of a record on flash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlashLocation(u32);

impl FlashLocation {
    pub fn new(page: u32, chunk: u32) -> Result<Self> {
        encode_location(page, chunk).map(FlashLocation)
    }

    pub fn page(self) -> u32 {
        self.0 >> CHUNK_BITS
    }

    pub fn chunk(self) -> u32 {
        self.0 & (CHUNKS_PER_PAGE - 1)
    }

    pub fn word(self) -> u32 {
        self.0
    }
}

impl std::fmt::Display for FlashLocation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}.{}", self.page(), self.chunk())
    }
}

pub fn encode_location(page: u32, chunk: u32) -> Result<u32> {
    if page >= MAX_PAGE {
        return Err(Error::Address(format!("page {page} does not fit in 29 bits")));
    }
    if chunk >= CHUNKS_PER_PAGE {
        return Err(Error::Address(format!("chunk {chunk} out of range")));
    }
    Ok((page << CHUNK_BITS) | chunk)
}

/// A link field as stored on flash.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Link {
    Null,
    UnknownPrior,
    At(FlashLocation),
}

impl Link {
    pub fn word(self) -> u32 {
        match self {
            Link::Null => NULL_LOC,
            Link::UnknownPrior => UNKNOWN_PRIOR,
            Link::At(loc) => loc.word(),
        }
    }

    pub fn location(self) -> Option<FlashLocation> {
        match self {
            Link::At(loc) => Some(loc),
            _ => None,
        }
    }
}

impl From<FlashLocation> for Link {
    fn from(loc: FlashLocation) -> Self {
        Link::At(loc)
    }
}

/// Decodes a link word; sentinels come back as their own variants.
pub fn decode_location(word: u32) -> Link {
    match word {
        NULL_LOC => Link::Null,
        UNKNOWN_PRIOR => Link::UnknownPrior,
        w => Link::At(FlashLocation(w)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_encodings() {
        assert_eq!(encode_location(0, 0).unwrap(), 0x0000_0000);
        assert_eq!(encode_location(1, 3).unwrap(), 0x0000_000B);
        assert_eq!(decode_location(0xFFFF_FFFF), Link::Null);
        assert_eq!(decode_location(0xFFFF_FFFE), Link::UnknownPrior);
    }

    #[test]
    fn range_violations() {
        assert!(encode_location(MAX_PAGE, 0).is_err());
        assert!(encode_location(0, 8).is_err());
        // The largest real location stays below both sentinels.
        let top = encode_location(MAX_PAGE - 1, 7).unwrap();
        assert!(top < UNKNOWN_PRIOR);
    }

    proptest! {
        #[test]
        fn location_round_trip(page in 0..MAX_PAGE, chunk in 0..CHUNKS_PER_PAGE) {
            let word = encode_location(page, chunk).unwrap();
            let loc = decode_location(word).location().unwrap();
            prop_assert_eq!((loc.page(), loc.chunk()), (page, chunk));
        }
    }
}
