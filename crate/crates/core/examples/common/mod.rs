//! Shared setup for the model examples: the desk dataset and quickly
//! trained models.

#![allow(dead_code)]

use grnp::corpus::{ingest, synth, DatasetBundle, IngestConfig};
use grnp::generator::{gen_examples, Generator, GeneratorConfig, ModelSize};
use grnp::lm::{adam_for, fit, FitConfig};
use grnp::prompter::{prompter_config, prompter_examples, Prompter};

pub fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args().nth(i).and_then(|s| s.parse().ok()).unwrap_or(default)
}

pub fn desk_bundle() -> grnp::Result<DatasetBundle> {
    let records = synth::desk_corpus(&synth::DeskCorpusConfig::default())?;
    DatasetBundle::from_ingested(&ingest(&records, &synth::desk_rhymer(), &IngestConfig::default())?)
}

fn fit_cfg(epochs: usize, seed: u64) -> FitConfig {
    FitConfig {
        epochs,
        seed,
        ..FitConfig::default()
    }
}

pub fn train_generator(b: &DatasetBundle, size: ModelSize, epochs: usize, seed: u64) -> grnp::Result<Generator> {
    let cfg = GeneratorConfig::new(size).with_tables(&b.vocab, b.authors.len(), b.schemes.len());
    let mut gen = Generator::new(cfg, &b.vocab, seed)?;
    let mut adam = adam_for(&gen.store, 1e-3);
    fit(&mut gen, &mut adam, &gen_examples(&b.train), &gen_examples(&b.val), &fit_cfg(epochs, seed), |m| {
        println!("  gen epoch {} train_nll {:.3} val_ppl {:.2}", m.epoch, m.train_nll, m.val_ppl.unwrap_or(f64::NAN))
    })?;
    gen.steps = adam.step_count();
    Ok(gen)
}

pub fn train_prompter(b: &DatasetBundle, size: ModelSize, epochs: usize, seed: u64) -> grnp::Result<Prompter> {
    let mut pro = Prompter::new(prompter_config(size, &b.vocab, b.authors.len(), b.schemes.len()), seed)?;
    let mut adam = adam_for(&pro.store, 1e-3);
    fit(&mut pro, &mut adam, &prompter_examples(&b.train), &prompter_examples(&b.val), &fit_cfg(epochs, seed), |m| {
        println!("  pro epoch {} train_nll {:.3} val_ppl {:.2}", m.epoch, m.train_nll, m.val_ppl.unwrap_or(f64::NAN))
    })?;
    pro.steps = adam.step_count();
    Ok(pro)
}
