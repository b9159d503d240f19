#![no_std]
extern crate alloc;

pub mod access;
pub mod auditlog;
pub mod egress;
pub mod governance;
pub mod seqio;
pub mod taxonomy;
pub mod time;
pub mod watermark;
