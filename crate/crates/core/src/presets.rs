//! Ready-made configurations.
//!
//! [`FederationConfig::default`] carries the reference training recipe,
//! which assumes a pretrained backbone that only needs fine-tuning. Trained
//! from scratch on the synthetic suite, that recipe barely moves the
//! embedding in 100 epochs, and every method ends up close to its random
//! initialisation. The benchmark preset keeps the protocol defaults (clients,
//! fraction, noise, local steps, temperature, epochs, batch size, optimiser)
//! and changes only what from-scratch training needs: a linear embedding, a
//! larger embedding learning rate and momentum kept across epochs.

use crate::data::SyntheticSuite;
use crate::federation::FederationConfig;

pub fn benchmark_config() -> FederationConfig {
    let mut c = FederationConfig::default();
    c.model.embed_hidden = Vec::new();
    c.model.embed_dim = 64;
    c.model.head_hidden = 64;
    c.lr_embed.base = 0.1;
    c.reset_optimizer = false;
    c
}

/// Four training domains and one unseen domain. Every training domain sees
/// half of the identity coordinates and three of eight context coordinates
/// that are perfectly consistent within an identity; in the unseen domain
/// context carries no identity information.
pub fn benchmark_suite() -> SyntheticSuite {
    SyntheticSuite {
        train_domains: 4,
        train_identities: 64,
        train_images: 4,
        test_identities: 200,
        test_images: 5,
        feature_dim: 32,
        signal_dim: 12,
        train_signal_active: 6,
        identity_spread: 0.5,
        context_dims: 8,
        context_active: 3,
        context_scale: 1.5,
        train_context_consistency: 1.0,
        test_context_consistency: 0.0,
        rotation: 0.05,
        translation: 0.5,
        noise: 0.1,
        nuisance_dims: 0,
        nuisance_scale: 2.0,
    }
}
