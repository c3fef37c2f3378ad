//! Runs every code snippet in the guide as a doc-test, keeping the book in
//! sync with the library. One module per chapter so a failing snippet names
//! its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
mod introduction {}

#[doc = include_str!("../../../book/src/recombination.md")]
mod recombination {}

#[doc = include_str!("../../../book/src/greedy-loop.md")]
mod greedy_loop {}

#[doc = include_str!("../../../book/src/geim.md")]
mod geim {}

#[doc = include_str!("../../../book/src/kernel-quadrature.md")]
mod kernel_quadrature {}

#[doc = include_str!("../../../book/src/cubature.md")]
mod cubature {}

#[doc = include_str!("../../../book/src/diagnostics.md")]
mod diagnostics {}

#[doc = include_str!("../../../book/src/formats.md")]
mod formats {}
