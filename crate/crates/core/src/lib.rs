//! Exact and floating computations on tree metrics, H-trees, Laakso graphs,
//! Markov p-convexity functionals and tree-embedding extraction.

pub mod banach;
pub mod embeddings;
pub mod error;
pub mod laakso;
pub mod markov;
pub mod numeric;
pub mod metric;
pub mod quotients;
pub mod rational;
pub mod trees;

pub use error::{Error, Result};
pub use laakso::LaaksoGraph;
pub use markov::{ChainSpec, ConvexityReport};
pub use metric::{Distortion, FiniteMetricSpace, Metric, PointMap};
pub use rational::Rational;
pub use trees::{EpsilonSequence, HTreeSpace, TreeVertex};
