//! File formats: the `.bgrid` binary grid, JSON-lines records and PGM export.

mod bgrid;
mod jsonl;
mod pgm;

pub use bgrid::{decode_bgrid, encode_bgrid, read_bgrid, write_bgrid, BGRID_MAGIC, BGRID_VERSION};
pub use jsonl::{read_json, read_jsonl, write_json, write_jsonl};
pub use pgm::{encode_pgm, write_pgm};
