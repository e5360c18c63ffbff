#![allow(dead_code)]

pub mod gradcheck;
pub mod reference;
pub mod op_suite;
pub mod model_suite;
pub mod metric_oracle;
pub mod scenarios;
