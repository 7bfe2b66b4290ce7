//! Path boosting, vertical faithfulness, configuration classifiers in H-trees,
//! the `B_4` contraction check, and the Ramsey extraction pipeline.

pub mod b4;
pub mod classify;
pub mod generators;
pub mod paths;
pub mod ramsey;
pub mod vertical;

pub use b4::{b4_bound_check, b4_search, distortion_gap_experiment, B4Check, GapReport};
pub use classify::{classify_3path, classify_fork, classify_midpoint, ForkClass, MidpointClass, ThreePathClass};
pub use paths::{path_boost, submultiplicative_split, t_functional, Boost, PathMap};
pub use ramsey::{extract_vertically_faithful, ramsey_search, Extraction, RamseyReport};
pub use vertical::{vertical_report, VerticalReport};
