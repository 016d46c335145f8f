pub mod embedding;
pub mod eval;
pub mod gateway;
pub mod hashing;
pub mod http;
pub mod jsonl;
pub mod prep;
pub mod seeds;
pub mod synth;
pub mod taxonomy;
pub mod text;
