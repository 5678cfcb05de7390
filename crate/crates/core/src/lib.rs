pub mod belief;
pub mod bench;
pub mod contraction;
pub mod dist;
pub mod env;
pub mod error;
pub mod features;
pub mod optimizer;
pub mod oracle;
pub mod policy;
pub mod search;
pub mod tutor;
