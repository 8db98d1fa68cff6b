//! Variational-autoencoder-aided multi-task rumor classification.
//!
//! An LSTM text VAE is pretrained on tweets, then co-trained with one of four
//! BiLSTM classification heads (detection, tracking, stance, veracity) so the
//! head loss shapes the latent code. A frozen two-stage variant, where only
//! the head trains, is provided for comparison.

pub mod tensor;
pub mod layers;
pub mod seq;
pub mod labels;
pub mod text;
pub mod vae;
pub mod heads;
pub mod eval;
pub mod par;
pub mod cotrain;
pub mod gradsuite;
pub mod synth;
