// SPDX-License-Identifier: Apache-2.0

use std::fmt;

/// Bad flags or configuration. Exit status 2, like argument-parsing errors.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A computation produced non-finite or otherwise unusable numbers.
#[derive(Debug)]
pub struct NumericalError(pub String);

impl fmt::Display for NumericalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for NumericalError {}

pub const USAGE: i32 = 2;
pub const DATA: i32 = 3;
pub const NUMERICAL: i32 = 4;

pub fn code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return USAGE;
        }
        if cause.is::<NumericalError>() {
            return NUMERICAL;
        }
        if let Some(freb::Error::Evaluation { .. }) = cause.downcast_ref::<freb::Error>() {
            return NUMERICAL;
        }
    }
    DATA
}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}
