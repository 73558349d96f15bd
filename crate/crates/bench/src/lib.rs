//! Inputs shared by the benchmarks.

use std::path::PathBuf;

pub fn personas_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/personas")
}

/// A mix of easy, hard and unmatched utterances.
pub const UTTERANCES: [&str; 8] = [
    "Hi, I want to report a claim",
    "My display is cracked",
    "It's a Pixel 8",
    "+49 170 1234567",
    "490154203237518",
    "last Tuesday",
    "my phone fell into the bathtub three days ago, it was an iPhone 13",
    "asdf qwer zxcv",
];
