//! Numerical solver for linearly constrained optimization over probability
//! measures — optimal transport and its variants — via an adversarial
//! generator/discriminator game, together with a discrete linear-programming
//! oracle for certification.

pub mod autodiff;
pub mod evaluation;
pub mod nets;
pub mod objective;
pub mod oracle;
pub mod problems;
pub mod rng;
pub mod trainer;
