//! On-flash record format.
//!
//! ```text
//! offset size field
//!      0    1 magic (0x5F)
//!      1    1 flags (bit 0 = tombstone)
//!      2    2 key length, LE (always 16)
//!      4    2 value length, LE
//!      6    8 version timestamp, LE
//!     14    4 prior-version link, LE
//!     18    4 hash-next link, LE
//!     22   16 key
//!     38    n value, then zero padding up to a chunk multiple
//! ```

use crate::error::{Error, Result};
use crate::ftl::location::{decode_location, Link};

pub const MAGIC: u8 = 0x5F;
pub const KEY_LEN: usize = 16;
pub const HEADER_LEN: usize = 22;
/// Header plus key: the fixed cost of every record.
pub const RECORD_OVERHEAD: usize = HEADER_LEN + KEY_LEN;
const FLAG_TOMBSTONE: u8 = 0x01;

pub type Timestamp = u64;

/// A fixed-width 16-byte key.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Key(pub [u8; KEY_LEN]);

impl Key {
    /// Builds a key from an integer id; the remaining bytes are a fixed tag.
    pub fn from_u64(id: u64) -> Self {
        let mut k = [0u8; KEY_LEN];
        k[..8].copy_from_slice(&id.to_le_bytes());
        k[8..].copy_from_slice(b"flashkv\0");
        Key(k)
    }
}

impl std::fmt::Debug for Key {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Key(")?;
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KvRecord {
    pub key: Key,
    pub value: Vec<u8>,
    pub version: Timestamp,
    pub tombstone: bool,
    pub prior: Link,
    pub hash_next: Link,
}

impl KvRecord {
    pub fn new(key: Key, value: Vec<u8>, version: Timestamp) -> Self {
        KvRecord { key, value, version, tombstone: false, prior: Link::Null, hash_next: Link::Null }
    }
}

/// Geometry used to size records: a page split into fixed chunks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecordLayout {
    pub page_size: usize,
    pub chunk_size: usize,
}

impl RecordLayout {
    pub fn for_page(page_size: usize) -> Self {
        RecordLayout { page_size, chunk_size: page_size / super::location::CHUNKS_PER_PAGE as usize }
    }

    pub fn max_value_len(&self) -> usize {
        self.page_size - RECORD_OVERHEAD
    }

    /// Value length that makes a record fill exactly one chunk.
    pub fn one_chunk_value_len(&self) -> usize {
        self.chunk_size - RECORD_OVERHEAD
    }

    pub fn chunks_for(&self, value_len: usize) -> usize {
        (RECORD_OVERHEAD + value_len).div_ceil(self.chunk_size)
    }

    pub fn encoded_len(&self, value_len: usize) -> usize {
        self.chunks_for(value_len) * self.chunk_size
    }
}

pub fn encode_record(rec: &KvRecord, layout: RecordLayout) -> Result<Vec<u8>> {
    let max = layout.max_value_len().min(u16::MAX as usize);
    if rec.value.len() > max {
        return Err(Error::Capacity { len: rec.value.len(), max });
    }
    let mut out = Vec::with_capacity(layout.encoded_len(rec.value.len()));
    out.push(MAGIC);
    out.push(if rec.tombstone { FLAG_TOMBSTONE } else { 0 });
    out.extend_from_slice(&(KEY_LEN as u16).to_le_bytes());
    out.extend_from_slice(&(rec.value.len() as u16).to_le_bytes());
    out.extend_from_slice(&rec.version.to_le_bytes());
    out.extend_from_slice(&rec.prior.word().to_le_bytes());
    out.extend_from_slice(&rec.hash_next.word().to_le_bytes());
    out.extend_from_slice(&rec.key.0);
    out.extend_from_slice(&rec.value);
    out.resize(layout.encoded_len(rec.value.len()), 0);
    Ok(out)
}

fn le_u16(b: &[u8]) -> u16 {
    u16::from_le_bytes([b[0], b[1]])
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b[..4].try_into().expect("4 bytes"))
}

/// Decodes the record starting at `chunk` of a page image.
pub fn decode_record(page: &[u8], chunk: usize, layout: RecordLayout) -> Result<KvRecord> {
    let off = chunk * layout.chunk_size;
    if off + RECORD_OVERHEAD > page.len() {
        return Err(Error::Corruption(format!("chunk {chunk} outside page")));
    }
    let b = &page[off..];
    if b[0] != MAGIC {
        return Err(Error::Corruption(format!("bad magic {:#04x} at chunk {chunk}", b[0])));
    }
    let key_len = le_u16(&b[2..]) as usize;
    if key_len != KEY_LEN {
        return Err(Error::Corruption(format!("key length {key_len}")));
    }
    let value_len = le_u16(&b[4..]) as usize;
    if off + RECORD_OVERHEAD + value_len > page.len() {
        return Err(Error::Corruption(format!("value length {value_len} straddles the page")));
    }
    let version = u64::from_le_bytes(b[6..14].try_into().expect("8 bytes"));
    let mut key = [0u8; KEY_LEN];
    key.copy_from_slice(&b[HEADER_LEN..RECORD_OVERHEAD]);
    Ok(KvRecord {
        key: Key(key),
        value: b[RECORD_OVERHEAD..RECORD_OVERHEAD + value_len].to_vec(),
        version,
        tombstone: b[1] & FLAG_TOMBSTONE != 0,
        prior: decode_location(le_u32(&b[14..])),
        hash_next: decode_location(le_u32(&b[18..])),
    })
}

/// Decodes every record packed in a page image, with its start chunk.
/// Stops at the first chunk that does not begin with the magic byte.
pub fn decode_page(page: &[u8], layout: RecordLayout) -> Vec<(usize, KvRecord)> {
    let chunks = page.len() / layout.chunk_size;
    let mut out = Vec::new();
    let mut c = 0;
    while c < chunks {
        match decode_record(page, c, layout) {
            Ok(rec) => {
                let n = layout.chunks_for(rec.value.len());
                out.push((c, rec));
                c += n;
            }
            Err(_) => break,
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ftl::location::FlashLocation;
    use proptest::prelude::*;

    const LAYOUT: RecordLayout = RecordLayout { page_size: 4096, chunk_size: 512 };

    #[test]
    fn full_size_value_fills_one_chunk() {
        let rec = KvRecord::new(Key::from_u64(1), vec![7; 474], 9);
        assert_eq!(encode_record(&rec, LAYOUT).unwrap().len(), 512);
        let rec = KvRecord::new(Key::from_u64(1), vec![7; 475], 9);
        assert_eq!(encode_record(&rec, LAYOUT).unwrap().len(), 1024);
    }

    #[test]
    fn golden_bytes() {
        let rec = KvRecord {
            key: Key(*b"0123456789abcdef"),
            value: b"hi".to_vec(),
            version: 0x0102030405060708,
            tombstone: true,
            prior: Link::UnknownPrior,
            hash_next: Link::At(FlashLocation::new(1, 3).unwrap()),
        };
        let bytes = encode_record(&rec, LAYOUT).unwrap();
        let expected_head: [u8; 40] = [
            0x5F, 0x01, 0x10, 0x00, 0x02, 0x00, // magic, flags, key_len, value_len
            0x08, 0x07, 0x06, 0x05, 0x04, 0x03, 0x02, 0x01, // version
            0xFE, 0xFF, 0xFF, 0xFF, // prior = UNKNOWN_PRIOR
            0x0B, 0x00, 0x00, 0x00, // hash_next = page 1, chunk 3
            b'0', b'1', b'2', b'3', b'4', b'5', b'6', b'7', b'8', b'9', b'a', b'b', b'c', b'd',
            b'e', b'f', b'h', b'i',
        ];
        assert_eq!(&bytes[..40], &expected_head);
        assert!(bytes[40..].iter().all(|&b| b == 0));
        assert_eq!(bytes.len(), 512);
    }

    #[test]
    fn oversized_value_is_a_capacity_error() {
        let rec = KvRecord::new(Key::from_u64(1), vec![0; 4096 - 38 + 1], 1);
        assert!(matches!(encode_record(&rec, LAYOUT), Err(Error::Capacity { .. })));
        let rec = KvRecord::new(Key::from_u64(1), vec![0; 4096 - 38], 1);
        assert_eq!(encode_record(&rec, LAYOUT).unwrap().len(), 4096);
    }

    #[test]
    fn bad_magic_is_corruption() {
        let page = vec![0u8; 4096];
        assert!(matches!(decode_record(&page, 0, LAYOUT), Err(Error::Corruption(_))));
        let erased = vec![0xFFu8; 4096];
        assert!(matches!(decode_record(&erased, 3, LAYOUT), Err(Error::Corruption(_))));
    }

    #[test]
    fn decode_page_walks_packed_records() {
        let mut page = Vec::new();
        for (i, len) in [10usize, 600, 474].into_iter().enumerate() {
            let rec = KvRecord::new(Key::from_u64(i as u64), vec![i as u8; len], i as u64);
            page.extend(encode_record(&rec, LAYOUT).unwrap());
        }
        page.resize(4096, 0);
        let recs = decode_page(&page, LAYOUT);
        let starts: Vec<usize> = recs.iter().map(|(c, _)| *c).collect();
        assert_eq!(starts, vec![0, 1, 3]);
    }

    fn link() -> impl Strategy<Value = Link> {
        prop_oneof![
            Just(Link::Null),
            Just(Link::UnknownPrior),
            (0..crate::ftl::location::MAX_PAGE, 0u32..8)
                .prop_map(|(p, c)| Link::At(FlashLocation::new(p, c).unwrap())),
        ]
    }

    proptest! {
        #[test]
        fn record_round_trip(
            key in any::<[u8; 16]>(),
            value in proptest::collection::vec(any::<u8>(), 0..=4058),
            version in any::<u64>(),
            tombstone in any::<bool>(),
            prior in link(),
            hash_next in link(),
        ) {
            let rec = KvRecord { key: Key(key), value, version, tombstone, prior, hash_next };
            let bytes = encode_record(&rec, LAYOUT).unwrap();
            prop_assert_eq!(bytes.len() % 512, 0);
            prop_assert_eq!(bytes.len(), 512 * (38 + rec.value.len()).div_ceil(512));
            let mut page = bytes.clone();
            page.resize(4096, 0);
            prop_assert_eq!(decode_record(&page, 0, LAYOUT).unwrap(), rec);
        }
    }
}
