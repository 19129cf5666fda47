//! Every chapter of the mdbook guide is included here as a doc comment, so
//! `cargo test` runs the book's code blocks as doc-tests and the book can't
//! drift from the API. One module per chapter keeps failures attributable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/guest-memory.md")]
pub mod guest_memory {}

#[doc = include_str!("../../../book/src/page-guards.md")]
pub mod page_guards {}

#[doc = include_str!("../../../book/src/introspection.md")]
pub mod introspection {}

#[doc = include_str!("../../../book/src/input-injection.md")]
pub mod input_injection {}

#[doc = include_str!("../../../book/src/toy-game.md")]
pub mod toy_game {}

#[doc = include_str!("../../../book/src/cheats.md")]
pub mod cheats {}

#[doc = include_str!("../../../book/src/anticheat.md")]
pub mod anticheat {}

#[doc = include_str!("../../../book/src/benchmarking.md")]
pub mod benchmarking {}
