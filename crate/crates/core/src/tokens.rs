//! Word-count token estimate shared by compression and cost accounting.

/// `ceil(words * 1.3)` over whitespace-delimited words.
pub fn estimate_tokens(text: &str) -> u64 {
    let words = text.split_whitespace().count() as u64;
    (words * 13).div_ceil(10)
}
