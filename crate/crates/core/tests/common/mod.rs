#![allow(dead_code)]

use cabp_core::dsp::FilterSpec;
use cabp_core::model::{BlockSpec, ModelConfig};
use cabp_core::synth::{gen_cohort, SynthConfig, SynthTruth};
use cabp_core::train::{prepare_subject, PreparedSubject};

/// `n` synthetic subjects at 25 Hz, 30 s each, already preprocessed.
pub fn cohort(n: usize, seed: u64) -> (Vec<PreparedSubject>, Vec<SynthTruth>) {
    let config = SynthConfig {
        n_subjects: n,
        fs: 25.0,
        duration_s: 30.0,
        seed,
        ..Default::default()
    };
    gen_cohort(&config)
        .unwrap()
        .into_iter()
        .map(|(r, t)| (prepare_subject(&r, 30.0, &FilterSpec::default()).unwrap(), t))
        .unzip()
}

/// A model small enough to train or differentiate in milliseconds.
pub fn tiny_config(num_subjects: usize, channels: &[u32]) -> ModelConfig {
    ModelConfig {
        channels_used: channels.to_vec(),
        feature_dim: 4,
        blocks: vec![
            BlockSpec { kernel: 5, channels: 3, pool: 4 },
            BlockSpec { kernel: 3, channels: 4, pool: 4 },
        ],
        attention_dim: 3,
        reg_hidden: 4,
        cls_hidden: 3,
        disc_hidden: 5,
        num_subjects,
        enable_cls: true,
        enable_adv: true,
    }
}
