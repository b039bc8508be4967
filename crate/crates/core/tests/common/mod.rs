#![allow(dead_code)]

pub mod gradient_checks;
pub mod metric_checks;
