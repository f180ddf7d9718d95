//! Accelerated rANS range coder, byte-compatible with the reference coder
//! shipped in the `duocodec` Python package.
//!
//! Stream format (normative): 32-bit state, 16-bit renormalization, 16-bit
//! frequency precision. Symbols are encoded in reverse so the decoder reads
//! the stream forward. The serialized stream is the final state as 4
//! little-endian bytes followed by 16-bit little-endian words in the order
//! the decoder consumes them; an empty stream is exactly the 4-byte flush.
//!
//! CDF rows cross the language boundary as a flat buffer: 512 u16 cumulative
//! starts per coded element (the top value 65536 is implicit), row `i`
//! governing element `i`. Symbols cover the closed range -256..=255.
//!
//! The C entry points never panic across the FFI boundary; every failure is
//! reported as a negative status code.

pub const SYMBOL_MIN: i32 = -256;
pub const SYMBOL_MAX: i32 = 255;
pub const NUM_SYMBOLS: usize = 512;
pub const CDF_TOTAL: u32 = 1 << 16;
const RANS_L: u32 = 1 << 16;
const MASK16: u32 = 0xFFFF;

/// Status codes returned across the C ABI. Zero and positive values signal
/// success; each failure mode gets its own negative code.
pub const FC_OK: i64 = 0;
pub const FC_ERR_NULL_POINTER: i64 = -1;
pub const FC_ERR_SYMBOL_RANGE: i64 = -2;
pub const FC_ERR_OUTPUT_TOO_SMALL: i64 = -3;
pub const FC_ERR_TRUNCATED: i64 = -4;
pub const FC_ERR_CORRUPT: i64 = -5;
pub const FC_ERR_BAD_CDF: i64 = -6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoderError {
    /// A symbol lies outside -256..=255.
    SymbolRange,
    /// The caller's output buffer cannot hold the encoded stream.
    OutputTooSmall,
    /// The stream ended before the decoder was finished.
    Truncated,
    /// The stream is internally inconsistent (bad flush state or trailing
    /// bytes).
    Corrupt,
    /// A CDF row is not usable at the accessed entry (zero or negative
    /// frequency, or a first start above the queried cumulative value).
    BadCdf,
}

impl CoderError {
    pub fn code(self) -> i64 {
        match self {
            CoderError::SymbolRange => FC_ERR_SYMBOL_RANGE,
            CoderError::OutputTooSmall => FC_ERR_OUTPUT_TOO_SMALL,
            CoderError::Truncated => FC_ERR_TRUNCATED,
            CoderError::Corrupt => FC_ERR_CORRUPT,
            CoderError::BadCdf => FC_ERR_BAD_CDF,
        }
    }
}

/// Worst-case encoded size for `n` symbols: one 16-bit renormalization word
/// per symbol plus the 4-byte state flush.
pub const fn encode_bound(n: usize) -> usize {
    4 + 2 * n
}

#[inline]
fn start_and_freq(row: &[u16], s: usize) -> Result<(u32, u32), CoderError> {
    let start = row[s] as u32;
    let top = if s + 1 == NUM_SYMBOLS {
        CDF_TOTAL
    } else {
        row[s + 1] as u32
    };
    match top.checked_sub(start) {
        Some(freq) if freq > 0 => Ok((start, freq)),
        _ => Err(CoderError::BadCdf),
    }
}

/// Largest index `s` with `row[s] <= cf`, or an error when even `row[0]`
/// exceeds `cf` (only possible for a malformed row; valid rows start at 0).
#[inline]
fn find_symbol(row: &[u16], cf: u16) -> Result<usize, CoderError> {
    // partition_point returns the count of leading entries <= cf
    let count = row.partition_point(|&start| start <= cf);
    if count == 0 {
        return Err(CoderError::BadCdf);
    }
    Ok(count - 1)
}

/// Encode `symbols` against per-element CDF rows (`cdf` holds
/// `symbols.len() * 512` u16 starts). Returns the serialized stream.
pub fn encode(symbols: &[i16], cdf: &[u16]) -> Result<Vec<u8>, CoderError> {
    assert_eq!(cdf.len(), symbols.len() * NUM_SYMBOLS, "one cdf row per symbol");
    let mut state: u32 = RANS_L;
    let mut words: Vec<u16> = Vec::new();
    for i in (0..symbols.len()).rev() {
        let sym = symbols[i] as i32;
        if !(SYMBOL_MIN..=SYMBOL_MAX).contains(&sym) {
            return Err(CoderError::SymbolRange);
        }
        let s = (sym - SYMBOL_MIN) as usize;
        let row = &cdf[i * NUM_SYMBOLS..(i + 1) * NUM_SYMBOLS];
        let (start, freq) = start_and_freq(row, s)?;
        let x_max = (freq as u64) << 16;
        while (state as u64) >= x_max {
            words.push((state & MASK16) as u16);
            state >>= 16;
        }
        // state < freq << 16 here, so the quotient fits in 16 bits and the
        // recombined value fits in u32 (start + freq <= 65536)
        state = ((state / freq) << 16) + (state % freq) + start;
    }
    let mut out = Vec::with_capacity(4 + 2 * words.len());
    out.extend_from_slice(&state.to_le_bytes());
    for w in words.iter().rev() {
        out.extend_from_slice(&w.to_le_bytes());
    }
    Ok(out)
}

/// Decode `count` symbols from `data` against per-element CDF rows. The
/// whole stream must be consumed and the state must return to its initial
/// value, otherwise the stream is rejected.
pub fn decode(data: &[u8], count: usize, cdf: &[u16]) -> Result<Vec<i16>, CoderError> {
    assert_eq!(cdf.len(), count * NUM_SYMBOLS, "one cdf row per symbol");
    if data.len() < 4 {
        return Err(CoderError::Truncated);
    }
    let mut state = u32::from_le_bytes([data[0], data[1], data[2], data[3]]);
    let mut pos = 4usize;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let row = &cdf[i * NUM_SYMBOLS..(i + 1) * NUM_SYMBOLS];
        let cf = (state & MASK16) as u16;
        let s = find_symbol(row, cf)?;
        let (start, freq) = start_and_freq(row, s)?;
        out.push((s as i32 + SYMBOL_MIN) as i16);
        // freq * (state >> 16) <= (65536 - start) * 65535 and the added
        // offset is cf - start < freq, so the sum stays below 2^32
        state = freq * (state >> 16) + cf as u32 - start;
        while state < RANS_L {
            if pos + 2 > data.len() {
                return Err(CoderError::Truncated);
            }
            state = (state << 16) | u16::from_le_bytes([data[pos], data[pos + 1]]) as u32;
            pos += 2;
        }
    }
    if state != RANS_L || pos != data.len() {
        return Err(CoderError::Corrupt);
    }
    Ok(out)
}

/// C ABI: encode `n` symbols into `out`.
///
/// `symbols` points at `n` i16 values, `cdf_starts` at `n * 512` u16
/// cumulative starts (row-major, top value implicit), `out` at a buffer of
/// `out_cap` bytes; `encode_bound(n)` bytes always suffice. Returns the
/// number of bytes written (>= 4) or a negative `FC_ERR_*` code.
///
/// # Safety
/// The three pointers must be valid for the lengths stated above whenever
/// the corresponding length is nonzero.
#[no_mangle]
pub unsafe extern "C" fn fc_encode(
    symbols: *const i16,
    n: usize,
    cdf_starts: *const u16,
    out: *mut u8,
    out_cap: usize,
) -> i64 {
    if (n > 0 && (symbols.is_null() || cdf_starts.is_null())) || out.is_null() {
        return FC_ERR_NULL_POINTER;
    }
    let symbols = if n == 0 {
        &[][..]
    } else {
        std::slice::from_raw_parts(symbols, n)
    };
    let cdf = if n == 0 {
        &[][..]
    } else {
        std::slice::from_raw_parts(cdf_starts, n * NUM_SYMBOLS)
    };
    match encode(symbols, cdf) {
        Ok(stream) => {
            if stream.len() > out_cap {
                return FC_ERR_OUTPUT_TOO_SMALL;
            }
            std::ptr::copy_nonoverlapping(stream.as_ptr(), out, stream.len());
            stream.len() as i64
        }
        Err(e) => e.code(),
    }
}

/// C ABI: decode `n` symbols from `data` into `out_symbols`.
///
/// `data` points at `data_len` stream bytes, `cdf_starts` at `n * 512` u16
/// cumulative starts, `out_symbols` at `n` i16 slots. Returns `FC_OK` or a
/// negative `FC_ERR_*` code; on error nothing useful is in `out_symbols`.
///
/// # Safety
/// The three pointers must be valid for the lengths stated above whenever
/// the corresponding length is nonzero.
#[no_mangle]
pub unsafe extern "C" fn fc_decode(
    data: *const u8,
    data_len: usize,
    cdf_starts: *const u16,
    n: usize,
    out_symbols: *mut i16,
) -> i64 {
    if (data_len > 0 && data.is_null())
        || (n > 0 && (cdf_starts.is_null() || out_symbols.is_null()))
    {
        return FC_ERR_NULL_POINTER;
    }
    let data = if data_len == 0 {
        &[][..]
    } else {
        std::slice::from_raw_parts(data, data_len)
    };
    let cdf = if n == 0 {
        &[][..]
    } else {
        std::slice::from_raw_parts(cdf_starts, n * NUM_SYMBOLS)
    };
    match decode(data, n, cdf) {
        Ok(decoded) => {
            if n > 0 {
                std::ptr::copy_nonoverlapping(decoded.as_ptr(), out_symbols, n);
            }
            FC_OK
        }
        Err(e) => e.code(),
    }
}

/// C ABI: worst-case encoded size for `n` symbols.
#[no_mangle]
pub extern "C" fn fc_encode_bound(n: usize) -> usize {
    encode_bound(n)
}
