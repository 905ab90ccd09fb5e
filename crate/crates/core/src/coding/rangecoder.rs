//! 32-bit range coder with carry propagation.
//!
//! The encoder keeps 33 bits of `low` (bit 32 is the pending carry) and
//! resolves carries through a cache byte plus a run of pending 0xFF bytes.
//! Termination rounds `low` up to the next multiple of 2^16 inside the
//! final interval, which always exists because the range never drops below
//! 2^24; only the two nonzero bytes of that value are emitted, so an empty
//! symbol stream costs exactly the 2-byte terminator.
//!
//! The decoder mirrors the renormalization schedule exactly and therefore
//! consumes `len + 2` virtual bytes, the final two being the zero padding
//! implied by the terminator construction. Reading past that is a decode
//! error (corrupt or truncated stream).

use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;

/// Cumulative-frequency range encoder. `total` must stay below 2^16.
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    pending: u64,
    first: bool,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            pending: 0,
            first: true,
            out: Vec::new(),
        }
    }

    /// Encode a symbol occupying [cum_lo, cum_hi) of total mass.
    pub fn encode(&mut self, cum_lo: u32, cum_hi: u32, total: u32) {
        debug_assert!(cum_lo < cum_hi && cum_hi <= total);
        debug_assert!(total < (1 << 16));
        let r = self.range / total;
        self.low += (r as u64) * (cum_lo as u64);
        self.range = if cum_hi == total {
            // top symbol absorbs the division remainder
            self.range - r * cum_lo
        } else {
            r * (cum_hi - cum_lo)
        };
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            if self.first {
                self.first = false;
            } else {
                self.out.push(self.cache.wrapping_add(carry));
            }
            while self.pending > 0 {
                self.out.push(0xFFu8.wrapping_add(carry));
                self.pending -= 1;
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        } else {
            self.pending += 1;
        }
        self.low = (self.low << 8) & 0xFFFF_FFFF;
    }

    /// Bytes already written out; later symbols can no longer change them.
    pub fn flushed_len(&self) -> usize {
        self.out.len()
    }

    /// Flush: emits the 2-byte terminator and returns the stream.
    pub fn finish(mut self) -> Vec<u8> {
        // Round low up to a multiple of 2^16; range >= 2^24 guarantees the
        // result stays inside [low, low + range).
        self.low = (self.low + 0xFFFF) & !0xFFFFu64;
        self.shift_low();
        self.shift_low();
        if !self.first {
            self.out.push(self.cache);
        }
        // Terminator bytes of 0xFF can still sit in the pending counter; no
        // later carry exists to resolve them, so they flush as-is.
        while self.pending > 0 {
            self.out.push(0xFF);
            self.pending -= 1;
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    code: u32,
    range: u32,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(buf: &'a [u8]) -> Result<Self> {
        let mut d = RangeDecoder {
            code: 0,
            range: u32::MAX,
            buf,
            pos: 0,
        };
        for _ in 0..4 {
            d.code = (d.code << 8) | d.next_byte()? as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        // Two zero bytes past the buffer are the implied terminator tail.
        if self.pos >= self.buf.len() + 2 {
            return Err(Error::decode("range coder read past end of stream"));
        }
        let b = if self.pos < self.buf.len() {
            self.buf[self.pos]
        } else {
            0
        };
        self.pos += 1;
        Ok(b)
    }

    /// Position of the pending value within total mass; the caller locates
    /// the symbol whose [cum_lo, cum_hi) contains it, then calls `advance`.
    pub fn decode_target(&self, total: u32) -> u32 {
        let r = self.range / total;
        (self.code / r).min(total - 1)
    }

    pub fn advance(&mut self, cum_lo: u32, cum_hi: u32, total: u32) -> Result<()> {
        let r = self.range / total;
        self.code -= r * cum_lo;
        self.range = if cum_hi == total {
            self.range - r * cum_lo
        } else {
            r * (cum_hi - cum_lo)
        };
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte()? as u32;
            self.range <<= 8;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_stream_is_two_bytes() {
        let enc = RangeEncoder::new();
        let bytes = enc.finish();
        assert_eq!(bytes.len(), 2);
    }

    #[test]
    fn uniform_symbols_round_trip() {
        let symbols: Vec<u32> = (0..2000).map(|i| (i * 7 + 3) % 5).collect();
        let mut enc = RangeEncoder::new();
        for &s in &symbols {
            enc.encode(s, s + 1, 5);
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &s in &symbols {
            let t = dec.decode_target(5);
            assert_eq!(t, s);
            dec.advance(s, s + 1, 5).unwrap();
        }
    }

    #[test]
    fn skewed_binary_round_trip_with_carry_pressure() {
        // Heavily skewed splits exercise long carry chains.
        let bits: Vec<u32> = (0..5000).map(|i| u32::from(i % 97 == 0)).collect();
        let mut enc = RangeEncoder::new();
        for &b in &bits {
            // P(0) = 990/1000
            if b == 0 {
                enc.encode(0, 990, 1000);
            } else {
                enc.encode(990, 1000, 1000);
            }
        }
        let bytes = enc.finish();
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for &b in &bits {
            let t = dec.decode_target(1000);
            let got = u32::from(t >= 990);
            assert_eq!(got, b);
            if got == 0 {
                dec.advance(0, 990, 1000).unwrap();
            } else {
                dec.advance(990, 1000, 1000).unwrap();
            }
        }
    }
}
