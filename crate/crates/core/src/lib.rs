//! Factual-consistency curation toolkit for summarization corpora.
//!
//! Pipeline: load a [`corpus`], score every pair with the three
//! [`scorers`] through a [`backend`], keep the pairs that clear the
//! per-scorer percentile cut of every scorer ([`filtration`]), then evaluate
//! and compare selections ([`metrics`], [`experiments`], [`stats`]).
//! [`frankval`] validates scorers against human factuality annotations.

pub mod backend;
pub mod cli;
pub mod corpus;
pub mod experiments;
pub mod filtration;
pub mod frankval;
pub mod metrics;
pub mod scorers;
pub mod stats;
