//! Text classification with generated privileged images.
//!
//! A text-to-image generator renders one image per text sample. A multimodal
//! teacher is trained on (text, image) pairs and then distilled into a
//! text-only student through soft labels and pre-classifier embeddings. The
//! student needs no images at inference time.

pub mod architectures;
pub mod corpus;
pub mod distill;
pub mod genimage;
pub mod harness;
pub mod nn;
pub mod trainer;
