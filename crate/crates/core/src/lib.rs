//! Persuasion detection over bilingual (English/Russian) article corpora.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`corpus`] loads labeled datasets and paired article corpora and owns the
//!   canonical word tokenizer every metric is computed with.
//! * [`gateway`] renders prompts from the bundled catalog and talks to a chat
//!   model (remote or mock) through a content-addressed response cache.
//! * [`hlq`] generates, parses and deduplicates high-level questions (HLQs).
//! * [`align`] answers HLQs over labeled data and selects the questions best
//!   aligned with human labels (ANOVA F and random-forest Gini importance).
//! * [`detect`] runs identify-then-extract over unlabeled corpora and builds
//!   persuasive text sets.
//! * [`metrics`] and [`analysis`] turn persuasive text sets into PC/PF/NPF
//!   scores, rankings, topic aggregates, disagreement lists and RBO scores.

pub mod align;
pub mod analysis;
pub mod corpus;
pub mod detect;
pub mod gateway;
pub mod hlq;
pub mod io;
pub mod metrics;
pub mod technique;

pub use corpus::{word_count, Article, ArticlePair, Language, LabeledContext, Paragraph, Setting};
pub use technique::Technique;
