//! Compiles the book chapters as rustdoc so `cargo test` runs every listing.
//! One module per chapter, so a failing doc-test names its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/learning.md")]
pub mod learning {}
#[doc = include_str!("../../../book/src/properties.md")]
pub mod properties {}
#[doc = include_str!("../../../book/src/checking.md")]
pub mod checking {}
#[doc = include_str!("../../../book/src/monitoring.md")]
pub mod monitoring {}
#[doc = include_str!("../../../book/src/replay.md")]
pub mod replay {}
#[doc = include_str!("../../../book/src/api.md")]
pub mod api {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
