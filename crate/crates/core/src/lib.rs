//! Chapter-first ICD-9 coding.
//!
//! Discharge summaries are ingested and labeled one-vs-rest
//! ([`corpus`]), cut down to four clinical sections ([`sectioner`]),
//! scored against weighted entity sets ([`entities`], [`categorizer`]),
//! and classified per code by attention models ([`nn`]) evaluated with
//! [`metrics`].

pub mod categorizer;
pub mod corpus;
pub mod entities;
pub mod metrics;
pub mod nn;
pub mod pipeline;
pub mod review;
pub mod sectioner;
pub mod weight;
