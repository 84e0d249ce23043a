pub mod decoder;
pub mod encoding;
pub mod data;
pub mod error;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod probe;
pub mod syntax;
pub mod train;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/paths.md")]
    mod paths {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/evaluation.md")]
    mod evaluation {}
    #[doc = include_str!("../../../book/src/probing.md")]
    mod probing {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
