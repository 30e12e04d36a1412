//! The guide in `book/`, compiled as documentation so every snippet is
//! tested with `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/corpus.md")]
pub mod corpus {}

#[doc = include_str!("../../../book/src/topics.md")]
pub mod topics {}

#[doc = include_str!("../../../book/src/usefulness.md")]
pub mod usefulness {}

#[doc = include_str!("../../../book/src/vectorstore.md")]
pub mod vectorstore {}

#[doc = include_str!("../../../book/src/rag.md")]
pub mod rag {}

#[doc = include_str!("../../../book/src/metrics.md")]
pub mod metrics {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/server.md")]
pub mod server {}

#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}
