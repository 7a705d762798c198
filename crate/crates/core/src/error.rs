use thiserror::Error;

/// Errors raised by the valuation, mechanism and experiment layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("price {price} lies outside the admissible domain [{lower}, {upper}]")]
    Domain { price: f64, lower: f64, upper: f64 },

    #[error("value is not invertible in cost: conversion rate is zero at price {price}")]
    NonInvertible { price: f64 },

    #[error("reverse hazard rate is singular at cost {cost}")]
    Singularity { cost: f64 },

    #[error("target {target} is outside the attained range [{low}, {high}]")]
    Range { target: f64, low: f64, high: f64 },

    #[error("non-regular cost distribution: {0}")]
    Regularity(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),
}

pub type Result<T> = std::result::Result<T, Error>;
