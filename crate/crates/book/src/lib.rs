//! The guide in `book/` is written for mdbook, which cannot build listings
//! against workspace crates. Each chapter is included here as the docs of an
//! empty module, so `cargo test` runs every listing as a doctest.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/trails.md")]
pub mod trails {}
#[doc = include_str!("../../../book/src/forces.md")]
pub mod forces {}
#[doc = include_str!("../../../book/src/sessions.md")]
pub mod sessions {}
#[doc = include_str!("../../../book/src/logs.md")]
pub mod logs {}
#[doc = include_str!("../../../book/src/analysis.md")]
pub mod analysis {}
#[doc = include_str!("../../../book/src/service.md")]
pub mod service {}
#[doc = include_str!("../../../book/src/command-line.md")]
pub mod command_line {}
