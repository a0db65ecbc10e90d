//! Building blocks for a human-in-the-loop annotation pipeline that grows a
//! labeled hate-speech corpus out of a large unlabeled pool.

pub mod checkpoint;
pub mod classify;
pub mod collector;
pub mod corpus;
pub mod ensemble;
pub mod evaluation;
pub mod oracle;
pub mod preprocess;
pub mod qc;
pub mod sampling;
